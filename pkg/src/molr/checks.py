"""Executable invariant suites: gradients, permutation invariance, locality, equivalence.

Each check returns a :class:`CheckResult`; the ``check`` CLI command and the
acceptance tests both run them.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from .autodiff import Tape
from .datagen import TEMPLATES, build_instance, generate_alkyl_tree, random_molecule
from .encoders import EncoderConfig, encode_molecules, encode_side, init_weights, required_attachment_distance
from .graph import FeatureVocab, MolecularGraph, Reaction, build_vocab, distances_from, disjoint_union, permute_atoms
from .trainer import TrainConfig, batch_loss


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    tolerance: float
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        extra = f" ({self.detail})" if self.detail else ""
        return f"[{status}] {self.name}: {self.value:.3e} vs tol {self.tolerance:.1e}{extra}"


def numerical_gradient(f: Callable[[dict], float], weights: Mapping[str, np.ndarray], h: float = 1e-5) -> dict:
    """Central differences of ``f`` for every entry of every weight matrix."""
    grads = {}
    for name, w in weights.items():
        g = np.zeros_like(w)
        for idx in np.ndindex(w.shape):
            plus = {k: v.copy() for k, v in weights.items()}
            minus = {k: v.copy() for k, v in weights.items()}
            plus[name][idx] += h
            minus[name][idx] -= h
            g[idx] = (f(plus) - f(minus)) / (2 * h)
        grads[name] = g
    return grads


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    return 0.0 if scale == 0 else float(np.linalg.norm(a - b) / scale)


def random_weights(config: EncoderConfig, in_dim: int, seed: int, bias_scale: float = 0.1) -> dict:
    """Glorot weights with small random (non-zero) biases so bias paths get exercised."""
    w = init_weights(config, in_dim, seed)
    rng = np.random.default_rng(seed + 10_000)
    return {k: (rng.normal(scale=bias_scale, size=v.shape) if not v.any() else v) for k, v in w.items()}


def gradient_check(gnn: str, n_graphs: int = 5, max_atoms: int = 6, dim: int = 8, seed: int = 0,
                   tol: float = 1e-5) -> CheckResult:
    """Analytic vs central-difference gradients of the batch loss, every parameter."""
    rng = np.random.default_rng(seed)
    graphs = [random_molecule(int(rng.integers(1, max_atoms + 1)), rng) for _ in range(n_graphs)]
    batch = [Reaction(str(i), (graphs[i],), (graphs[(i + 1) % n_graphs],)) for i in range(n_graphs)]
    vocab = build_vocab(graphs)
    enc = EncoderConfig.uniform(gnn, 2, dim, heads=2, tag_l=2)
    weights = random_weights(enc, vocab.total_dim, seed)

    # margin near the median negative distance keeps both hinge regimes in play
    emb = encode_molecules(graphs, vocab, enc, weights)
    d = [np.linalg.norm(emb[i] - emb[(j + 1) % n_graphs]) for i in range(n_graphs) for j in range(n_graphs) if i != j]
    config = TrainConfig(margin=float(np.median(d)) + 1e-3, batch_size=n_graphs, encoder=enc)

    tape = Tape()
    loss = batch_loss(batch, vocab, config, weights, tape)
    analytic = tape.backward(loss)
    numeric = numerical_gradient(lambda w: batch_loss(batch, vocab, config, w), weights)
    errors = {name: relative_error(analytic[name], numeric[name]) for name in weights}
    worst = max(errors, key=errors.get)
    return CheckResult(f"gradient[{gnn}]", errors[worst] <= tol, errors[worst], tol, f"worst {worst}")


def permutation_check(gnn: str, n_pairs: int = 100, max_atoms: int = 10, dim: int = 16, seed: int = 0,
                      tol: float = 1e-9) -> CheckResult:
    rng = np.random.default_rng(seed)
    graphs = [random_molecule(int(rng.integers(1, max_atoms + 1)), rng) for _ in range(n_pairs)]
    permuted = [permute_atoms(g, rng.permutation(g.n_atoms)) for g in graphs]
    vocab = build_vocab(graphs)
    enc = EncoderConfig.uniform(gnn, 2, dim, heads=4, tag_l=2)
    weights = random_weights(enc, vocab.total_dim, seed)
    a = encode_molecules(graphs, vocab, enc, weights)
    b = encode_molecules(permuted, vocab, enc, weights)
    worst = max(relative_error(x, y) for x, y in zip(a, b))
    return CheckResult(f"permutation[{gnn}]", worst <= tol, worst, tol, f"{n_pairs} pairs")


def residual(reaction: Reaction, vocab: FeatureVocab, config: EncoderConfig, weights) -> np.ndarray:
    return encode_side(reaction.reactants, vocab, config, weights) - encode_side(reaction.products, vocab, config, weights)


def locality_check(
    config: EncoderConfig,
    distance: int | None = None,
    seeds: Sequence[int] = (0, 1, 2),
    n_substituents: int = 10,
    templates: Sequence[str] = TEMPLATES,
    invariance_tol: float = 1e-8,
    change_tol: float = 1e-6,
) -> list[CheckResult]:
    """Far substituents leave the residual unchanged; a near mutation changes it.

    Substituents hang off atoms ``distance`` hops from the center (default:
    the encoder's required distance). The mutation turns a carbon one hop
    from the center into nitrogen.
    """
    if config.readout != "sum":
        raise ValueError("locality only holds with sum readout")
    distance = required_attachment_distance(config) if distance is None else distance
    rng = np.random.default_rng(1234)
    subs = [(generate_alkyl_tree(int(rng.integers(1, 7)), int(rng.integers(2**31))),
             generate_alkyl_tree(int(rng.integers(1, 7)), int(rng.integers(2**31))))
            for _ in range(n_substituents)]
    results = []
    for template in templates:
        instances = [build_instance(template, r1, r2, distance) for r1, r2 in subs]
        base = instances[0]
        reactants = disjoint_union(base.reaction.reactants)
        dist = distances_from(reactants, base.center)
        near = min(a for a, d in dist.items() if d == 1 and reactants.atoms[a].element == "C")
        mutated = build_instance(template, *subs[0], distance, mutate={near: "N"})
        vocab = build_vocab([m for inst in instances + [mutated]
                             for side in (inst.reaction.reactants, inst.reaction.products) for m in side])
        spread, change = 0.0, np.inf
        for seed in seeds:
            w = random_weights(config, vocab.total_dim, seed)
            res = [residual(inst.reaction, vocab, config, w) for inst in instances]
            spread = max(spread, max(float(np.abs(r - res[0]).max()) for r in res))
            change = min(change, float(np.abs(residual(mutated.reaction, vocab, config, w) - res[0]).max()))
        results.append(CheckResult(f"locality-invariance[{config.gnn},{template},d={distance}]",
                                   spread <= invariance_tol, spread, invariance_tol))
        results.append(CheckResult(f"locality-sensitivity[{config.gnn},{template},d=1]",
                                   change > change_tol, change, change_tol, "must exceed tolerance"))
    return results


def equivalence_check(gnn: str, seed: int = 0, tol: float = 1e-12) -> list[CheckResult]:
    """Reflexivity, symmetry and transitivity of the embedding-level relation."""
    rng = np.random.default_rng(seed)
    mols = [random_molecule(int(rng.integers(1, 8)), rng) for _ in range(6)]
    a, b, c = (mols[0], mols[1]), (mols[2], mols[3]), (mols[4], mols[5])
    vocab = build_vocab(mols)
    enc = EncoderConfig.uniform(gnn, 2, 16, heads=4)
    w = random_weights(enc, vocab.total_dim, seed)
    side = {k: encode_side(v, vocab, enc, w) for k, v in (("a", a), ("b", b), ("c", c))}
    refl = float(np.abs(side["a"] - side["a"]).max())
    r_ab = residual(Reaction("ab", a, b), vocab, enc, w)
    r_ba = residual(Reaction("ba", b, a), vocab, enc, w)
    sym = float(np.abs(r_ab + r_ba).max())
    lhs = float(np.linalg.norm(side["a"] - side["c"]))
    rhs = float(np.linalg.norm(side["a"] - side["b"]) + np.linalg.norm(side["b"] - side["c"]))
    return [
        CheckResult(f"reflexivity[{gnn}]", refl <= tol, refl, tol),
        CheckResult(f"symmetry[{gnn}]", sym <= tol, sym, tol),
        CheckResult(f"transitivity[{gnn}]", lhs <= rhs + 1e-9, max(0.0, lhs - rhs), 1e-9),
    ]


def zero_weight_loss_check(margin: float = 4.0, sizes: Sequence[int] = range(2, 9), tol: float = 1e-12) -> CheckResult:
    """All-zero weights give zero embeddings, so the loss is exactly the margin."""
    rng = np.random.default_rng(0)
    mols = [random_molecule(int(rng.integers(1, 6)), rng) for _ in range(max(sizes) + 1)]
    vocab = build_vocab(mols)
    enc = EncoderConfig.uniform("gcn", 2, 8)
    zeros = {k: np.zeros_like(v) for k, v in init_weights(enc, vocab.total_dim).items()}
    worst = 0.0
    for n in sizes:
        batch = [Reaction(str(i), (mols[i],), (mols[i + 1],)) for i in range(n)]
        loss = batch_loss(batch, vocab, TrainConfig(margin=margin, batch_size=n, encoder=enc), zeros)
        worst = max(worst, abs(loss - margin))
    return CheckResult("zero-weight-loss", worst <= tol, worst, tol)


def run_all(gnns: Sequence[str] = ("gcn", "gat", "sage", "tag"), seed: int = 0, quick: bool = False) -> list[CheckResult]:
    results = [zero_weight_loss_check()]
    for gnn in gnns:
        results.append(gradient_check(gnn, n_graphs=3 if quick else 5, seed=seed))
        results.append(permutation_check(gnn, n_pairs=20 if quick else 100, seed=seed))
        enc = EncoderConfig.uniform(gnn, 2, 8, heads=2, tag_l=2)
        results.extend(locality_check(enc, seeds=(seed, seed + 1, seed + 2)))
        results.extend(equivalence_check(gnn, seed))
    return results
