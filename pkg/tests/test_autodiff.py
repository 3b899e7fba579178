import numpy as np
import pytest

from molr import autodiff as ad
from molr.autodiff import AdamState, Tape, adam_step, glorot_init
from molr.checks import numerical_gradient, relative_error
from molr.errors import EmptySegment, NonScalarLoss, SegmentOutOfRange, ShapeMismatch


def grad_check(build, values, tol=1e-6):
    """Compare tape gradients with central differences for ``build(tape, params) -> scalar Var``."""

    def f(vals):
        t = Tape(record=False)
        return float(build(t, {k: t.param(k, v) for k, v in vals.items()}).value[0, 0])

    tape = Tape()
    loss = build(tape, {k: tape.param(k, v) for k, v in values.items()})
    analytic = tape.backward(loss)
    numeric = numerical_gradient(f, values)
    for name in values:
        assert relative_error(analytic[name], numeric[name]) < tol, name


@pytest.fixture
def r():
    return np.random.default_rng(7)


# ---------------------------------------------------------------- forward values

def test_matmul_values():
    t = Tape()
    a = t.constant([[1.0, 2.0], [3.0, 4.0]])
    assert (a @ t.constant([[1.0], [1.0]])).value.tolist() == [[3.0], [7.0]]
    assert np.array_equal((t.constant(np.eye(2)) @ a).value, a.value)


def test_matmul_shape_mismatch():
    t = Tape()
    with pytest.raises(ShapeMismatch):
        t.constant(np.ones((2, 3))) @ t.constant(np.ones((2, 3)))


def test_relu_and_leaky():
    t = Tape()
    x = t.constant([[-1.0, 2.0]])
    assert ad.relu(x).value.tolist() == [[0.0, 2.0]]
    assert ad.leaky_relu(x).value.tolist() == [[-0.2, 2.0]]


def test_concat_cols_shapes():
    t = Tape()
    out = ad.concat_cols(t.constant(np.ones((2, 3))), t.constant(np.zeros((2, 4))))
    assert out.shape == (2, 7)
    with pytest.raises(ShapeMismatch):
        ad.concat_cols(t.constant(np.ones((2, 3))), t.constant(np.zeros((3, 4))))


def test_segment_sum_values():
    t = Tape()
    x = t.constant(np.arange(6.0).reshape(3, 2))
    assert ad.segment_sum(x, [0, 0, 0], 1).value.tolist() == [[6.0, 9.0]]
    assert np.array_equal(ad.segment_sum(x, [0, 1, 2], 3).value, x.value)
    assert ad.segment_sum(x, [0, 0, 0], 2).value[1].tolist() == [0.0, 0.0]
    with pytest.raises(SegmentOutOfRange):
        ad.segment_sum(x, [0, 3, 0], 2)


def test_segment_sum_permutation_equivariant(r):
    t = Tape()
    x, seg = r.normal(size=(9, 3)), r.integers(0, 4, 9)
    p = r.permutation(9)
    a = ad.segment_sum(t.constant(x), seg, 4).value
    b = ad.segment_sum(t.constant(x[p]), seg[p], 4).value
    np.testing.assert_allclose(a, b, atol=1e-14)


def test_segment_softmax_values():
    t = Tape()
    assert ad.segment_softmax(t.constant([3.0]), [0], 1).value.tolist() == [[1.0]]
    assert ad.segment_softmax(t.constant([0.0, 0.0]), [0, 0], 1).value.ravel().tolist() == [0.5, 0.5]
    big = ad.segment_softmax(t.constant([1000.0, 1000.0]), [0, 0], 1).value.ravel()
    assert big.tolist() == [0.5, 0.5]
    with pytest.raises(EmptySegment):
        ad.segment_softmax(t.constant([1.0]), [0], 2)


def test_segment_max_values_and_tie_gradient():
    t = Tape()
    x = t.param("x", [[1.0, 5.0], [3.0, 2.0]])
    assert ad.segment_max(x, [0, 0], 1).value.tolist() == [[3.0, 5.0]]
    tie = t.param("tie", [[2.0, 2.0], [2.0, 2.0]])
    g = t.backward(ad.total(ad.segment_max(tie, [0, 0], 1)))
    assert g["tie"].tolist() == [[1.0, 1.0], [0.0, 0.0]]
    with pytest.raises(EmptySegment):
        ad.segment_max(Tape().constant([[1.0]]), [0], 2)


# ---------------------------------------------------------------- backward

def test_sum_gradient_is_ones(r):
    t = Tape()
    w = t.param("w", r.normal(size=(3, 4)))
    assert np.array_equal(t.backward(ad.total(w))["w"], np.ones((3, 4)))


def test_square_norm_gradient(r):
    t = Tape()
    value = r.normal(size=(3, 2))
    w = t.param("w", value)
    np.testing.assert_allclose(t.backward(ad.total(w * w))["w"], 2 * value)


def test_non_scalar_loss():
    t = Tape()
    w = t.param("w", np.ones((2, 2)))
    with pytest.raises(NonScalarLoss):
        t.backward(w * w)


def test_tape_cleared_after_backward(r):
    t = Tape()
    w = t.param("w", r.normal(size=(2, 2)))
    t.backward(ad.total(w @ w))
    assert len(t) == 0


def test_gradient_accumulates_over_reuse(r):
    t = Tape()
    w = t.param("w", r.normal(size=(2, 2)))
    g = t.backward(ad.total(w + w + w))
    assert np.array_equal(g["w"], 3 * np.ones((2, 2)))


def test_matmul_gradient(r):
    grad_check(lambda t, p: ad.total(p["a"] @ p["b"]), {"a": r.normal(size=(3, 4)), "b": r.normal(size=(4, 2))})


def test_elementwise_gradients(r):
    vals = {"a": r.normal(size=(4, 3)), "b": r.normal(size=(4, 3)), "bias": r.normal(size=(1, 3))}

    def build(t, p):
        h = ad.relu(p["a"] * p["b"] + p["bias"])
        h = ad.leaky_relu(ad.sub(h, ad.scale(p["a"], 0.3)))
        return ad.total(ad.add_scalar(h, 0.5) * p["b"])

    grad_check(build, vals)


def test_concat_and_gather_gradients(r):
    vals = {"a": r.normal(size=(4, 2)), "b": r.normal(size=(4, 3)), "w": r.normal(size=(5, 1))}

    def build(t, p):
        h = ad.concat_cols(p["a"], p["b"]) @ p["w"]
        return ad.total(ad.gather_rows(h, [0, 3, 3, 1]) * ad.gather_rows(h, [2, 2, 0, 1]))

    grad_check(build, vals)


def test_segment_op_gradients(r):
    seg = np.array([0, 0, 1, 2, 2, 2])
    vals = {"x": r.normal(size=(6, 3)), "e": r.normal(size=(6, 1)), "w": r.normal(size=(3, 3))}

    def build(t, p):
        att = ad.segment_softmax(p["e"], seg, 3)
        pooled = ad.segment_max(p["x"] @ p["w"], seg, 3)
        summed = ad.segment_sum(ad.row_scale(p["x"], att), seg, 3)
        return ad.total(pooled * summed)

    grad_check(build, vals)


def test_propagate_and_distance_gradients(r):
    src, dst = np.array([0, 1, 1, 2, 3]), np.array([1, 0, 2, 1, 3])
    weight = r.uniform(0.1, 1.0, size=5)
    vals = {"x": r.normal(size=(4, 3)), "y": r.normal(size=(3, 3))}

    def build(t, p):
        h = ad.propagate(p["x"], src, dst, weight, 4)
        d = ad.pairwise_distances(h, p["y"])
        return ad.total(ad.relu(ad.add_scalar(ad.scale(d, -1.0), 3.0)) + d)

    grad_check(build, vals)


def test_gcn_style_composite_gradient(r):
    src, dst = np.array([0, 1, 1, 2]), np.array([1, 0, 2, 1])
    vals = {"W1": r.normal(size=(4, 5)), "b1": r.normal(size=(1, 5)), "W2": r.normal(size=(5, 3)),
            "b2": r.normal(size=(1, 3))}
    x = r.normal(size=(3, 4))

    def build(t, p):
        h = t.constant(x)
        h = ad.relu(ad.propagate(h, src, dst, np.full(4, 0.5), 3) @ p["W1"] + p["b1"])
        h = ad.propagate(h, src, dst, np.full(4, 0.5), 3) @ p["W2"] + p["b2"]
        out = ad.segment_sum(h, [0, 0, 0], 1)
        return ad.total(out * out)

    grad_check(build, vals, tol=1e-5)


# ---------------------------------------------------------------- Adam

def test_adam_zero_gradient_keeps_params_and_decays_moments(r):
    p = {"w": r.normal(size=(2, 2))}
    state = AdamState(lr=0.1, m={"w": np.ones((2, 2))}, v={"w": np.ones((2, 2))}, step=3)
    new, s2 = adam_step(p, {"w": np.zeros((2, 2))}, state)
    # moments decay; the bias-corrected update is tiny but nonzero because m was nonzero
    np.testing.assert_allclose(s2.m["w"], 0.9 * np.ones((2, 2)))
    np.testing.assert_allclose(s2.v["w"], 0.999 * np.ones((2, 2)))
    assert s2.step == 4
    fresh, _ = adam_step(p, {"w": np.zeros((2, 2))}, AdamState(lr=0.1))
    assert np.array_equal(fresh["w"], p["w"])


def test_adam_first_step_magnitude_is_lr():
    g = np.full((3, 3), 0.37)
    new, state = adam_step({"w": np.zeros((3, 3))}, {"w": g}, AdamState(lr=1e-3))
    # m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps)
    np.testing.assert_allclose(new["w"], -1e-3 * 0.37 / (0.37 + 1e-8), rtol=1e-15)
    assert state.step == 1


def test_adam_deterministic(r):
    p = {"a": r.normal(size=(2, 3)), "b": r.normal(size=(1, 3))}
    grads = [{k: r.normal(size=v.shape) for k, v in p.items()} for _ in range(5)]

    def run():
        params, state = dict(p), AdamState(lr=0.01)
        for g in grads:
            params, state = adam_step(params, g, state)
        return params

    a, b = run(), run()
    for k in p:
        assert np.array_equal(a[k], b[k])


def test_adam_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        adam_step({"w": np.zeros((2, 2))}, {"w": np.zeros((2, 3))}, AdamState())


# ---------------------------------------------------------------- init

def test_glorot_bounds_and_seeding():
    w = glorot_init(40, 25, 3)
    assert np.abs(w).max() <= np.sqrt(6 / 65)
    assert w.size == 1000
    assert np.array_equal(w, glorot_init(40, 25, 3))
    assert not np.array_equal(w, glorot_init(40, 25, 4))
