import json

import numpy as np
import pytest

from molr.datagen import generate_corpus, random_molecule
from molr.encoders import EncoderConfig, encode_molecules, encode_side, init_weights
from molr.errors import BatchTooSmall, ConfigError, CorruptWeights, VersionMismatch
from molr.graph import Reaction, build_vocab
from molr.smiles import parse_molecule
from molr.trainer import (
    ModelCheckpoint,
    TrainConfig,
    batch_loss,
    load_checkpoint,
    margin_for_dim,
    minibatches,
    save_checkpoint,
    train,
    vocab_for,
)

KINDS = ("gcn", "gat", "sage", "tag")


def tiny_batch(n, seed=0):
    rng = np.random.default_rng(seed)
    mols = [random_molecule(int(rng.integers(1, 7)), rng) for _ in range(2 * n)]
    return [Reaction(str(i), (mols[2 * i],), (mols[2 * i + 1],)) for i in range(n)]


def loss_oracle(batch, vocab, config, w):
    hr = np.array([encode_side(r.reactants, vocab, config.encoder, w) for r in batch])
    hp = np.array([encode_side(r.products, vocab, config.encoder, w) for r in batch])
    n = len(batch)
    pos = sum(np.linalg.norm(hr[i] - hp[i]) for i in range(n)) / n
    neg = sum(max(config.margin - np.linalg.norm(hr[i] - hp[j]), 0.0)
              for i in range(n) for j in range(n) if i != j)
    return pos + neg / (n * (n - 1))


@pytest.mark.parametrize("kind", KINDS)
@pytest.mark.parametrize("seed", range(3))
def test_batch_loss_matches_oracle(kind, seed):
    batch = tiny_batch(5, seed)
    vocab = vocab_for(batch)
    enc = EncoderConfig.uniform(kind, 2, 8, heads=2)
    w = init_weights(enc, vocab.total_dim, seed)
    emb = encode_molecules([m for r in batch for m in r.reactants], vocab, enc, w)
    margin = float(np.median(np.linalg.norm(emb[:, None] - emb[None], axis=-1)))
    config = TrainConfig(margin=margin, batch_size=5, encoder=enc)
    assert abs(batch_loss(batch, vocab, config, w) - loss_oracle(batch, vocab, config, w)) < 1e-10


@pytest.mark.parametrize("n", range(2, 9))
def test_zero_weights_loss_equals_margin(n):
    batch = tiny_batch(n, n)
    vocab = vocab_for(batch)
    enc = EncoderConfig.uniform("gcn", 2, 8)
    w = {k: np.zeros_like(v) for k, v in init_weights(enc, vocab.total_dim).items()}
    assert abs(batch_loss(batch, vocab, TrainConfig(margin=4.0, batch_size=n, encoder=enc), w) - 4.0) <= 1e-12


def test_identical_reactions_pathology():
    r = Reaction("a", (parse_molecule("CC"),), (parse_molecule("CC"),))
    vocab = vocab_for([r])
    enc = EncoderConfig.uniform("gcn", 2, 4)
    w = init_weights(enc, vocab.total_dim, 0)
    # positives coincide, the two negatives are also at distance 0 and each pays the full margin
    assert batch_loss([r, r], vocab, TrainConfig(margin=2.5, batch_size=2, encoder=enc), w) == 2.5


def test_loss_order_invariant_and_nonnegative():
    batch = tiny_batch(6, 4)
    vocab = vocab_for(batch)
    enc = EncoderConfig.uniform("gat", 2, 8, heads=2)
    w = init_weights(enc, vocab.total_dim, 3)
    config = TrainConfig(margin=1.0, batch_size=6, encoder=enc)
    a = batch_loss(batch, vocab, config, w)
    b = batch_loss(batch[::-1], vocab, config, w)
    assert a >= 0 and abs(a - b) < 1e-12


def test_batch_too_small():
    batch = tiny_batch(2)
    vocab = vocab_for(batch)
    enc = EncoderConfig.uniform("gcn", 1, 4)
    with pytest.raises(BatchTooSmall):
        batch_loss(batch[:1], vocab, TrainConfig(batch_size=2, encoder=enc), init_weights(enc, vocab.total_dim))


@pytest.mark.parametrize("kw", [dict(margin=0.0), dict(margin=-1.0), dict(batch_size=1), dict(epochs=-1),
                                dict(learning_rate=-1e-3)])
def test_train_config_violations(kw):
    with pytest.raises(ConfigError):
        TrainConfig(**kw)


def test_train_config_defaults_and_json():
    c = TrainConfig()
    assert (c.margin, c.batch_size, c.epochs, c.learning_rate) == (4.0, 4096, 20, 1e-4)
    assert c.encoder.dims == (1024, 1024) and c.encoder.n_layers == 2
    assert TrainConfig.from_json(json.loads(json.dumps(c.to_json()))) == c


def test_margin_helper():
    assert margin_for_dim(1024) == 4.0
    assert margin_for_dim(64) == 1.0
    assert abs(margin_for_dim(256) - 2.0) < 1e-15


def test_minibatches_drop_singleton_tail():
    rng = np.random.default_rng(0)
    sizes = [len(b) for b in minibatches(9, 4, rng)]
    assert sizes == [4, 4]
    assert [len(b) for b in minibatches(10, 4, rng)] == [4, 4, 2]
    flat = np.concatenate(minibatches(12, 5, np.random.default_rng(1)))
    assert sorted(flat) == list(range(12))


# ---------------------------------------------------------------- training loop

def corpus(n, seed):
    return [inst.reaction for inst in generate_corpus(n, seed)]


def small_config(**kw):
    enc = EncoderConfig.uniform("gcn", 2, 16)
    base = dict(margin=1.0, batch_size=8, epochs=2, learning_rate=1e-3, seed=0, encoder=enc)
    return TrainConfig(**{**base, **kw})


def test_lr_zero_keeps_weights():
    data = corpus(20, 0)
    vocab = vocab_for(data)
    ckpt, _ = train(data, small_config(learning_rate=0.0, epochs=1), vocab)
    init = init_weights(ckpt.encoder, vocab.total_dim, 0)
    assert all(np.array_equal(ckpt.weights[k], init[k]) for k in init)


def test_training_is_deterministic():
    data = corpus(24, 1)
    a_ckpt, a_log = train(data, small_config())
    b_ckpt, b_log = train(data, small_config())
    assert [r.mean_loss for r in a_log] == [r.mean_loss for r in b_log]
    assert a_ckpt.model_hash == b_ckpt.model_hash


def test_training_reduces_loss():
    data = corpus(200, 2)
    enc = EncoderConfig.uniform("gcn", 2, 32)
    _, log = train(data, TrainConfig(margin=margin_for_dim(32), batch_size=32, epochs=30, learning_rate=1e-3,
                                     encoder=enc))
    assert log[-1].mean_loss < log[0].mean_loss


def test_validation_keeps_best_epoch():
    data, val = corpus(40, 3), corpus(10, 4)
    seen = []
    ckpt, log = train(data, small_config(epochs=4), validation=val, on_epoch=seen.append)
    assert seen == log and all(r.val_mrr is not None for r in log)
    from molr.evaluator import evaluate_ranking

    best = max(r.val_mrr for r in log)
    assert evaluate_ranking(val, ckpt.vocab, ckpt.encoder, ckpt.weights).mrr == pytest.approx(best, abs=1e-12)


def test_train_rejects_tiny_dataset():
    with pytest.raises(BatchTooSmall):
        train(corpus(1, 0), small_config())


# ---------------------------------------------------------------- checkpoints

@pytest.mark.parametrize("kind", KINDS)
def test_checkpoint_round_trip_bit_exact(tmp_path, kind):
    rng = np.random.default_rng(0)
    mols = [random_molecule(int(rng.integers(1, 9)), rng) for _ in range(20)]
    vocab = build_vocab(mols)
    enc = EncoderConfig.uniform(kind, 2, 8, heads=2)
    w = {k: rng.normal(size=v.shape) for k, v in init_weights(enc, vocab.total_dim).items()}
    ckpt = ModelCheckpoint(enc, vocab, w, TrainConfig(batch_size=8, encoder=enc))
    save_checkpoint(ckpt, tmp_path)
    back = load_checkpoint(tmp_path)
    assert back.encoder == enc and back.vocab == vocab and back.train_config == ckpt.train_config
    assert all(np.array_equal(back.weights[k], w[k]) for k in w)
    assert back.model_hash == ckpt.model_hash
    a = encode_molecules(mols, vocab, enc, w)
    b = encode_molecules(mols, back.vocab, back.encoder, back.weights)
    assert np.array_equal(a, b)


def test_blob_layout_is_sorted_little_endian(tmp_path):
    vocab = build_vocab([parse_molecule("C")])
    enc = EncoderConfig.uniform("gcn", 1, 2)
    w = {"layer1.W": np.arange(16.0).reshape(8, 2), "layer1.b": np.array([[-1.0, -2.0]])}
    save_checkpoint(ModelCheckpoint(enc, vocab, w), tmp_path)
    raw = np.frombuffer((tmp_path / "model.bin").read_bytes(), dtype="<f8")
    assert raw.tolist() == list(range(16)) + [-1.0, -2.0]


def test_truncated_blob(tmp_path):
    vocab = build_vocab([parse_molecule("CO")])
    enc = EncoderConfig.uniform("gcn", 1, 2)
    save_checkpoint(ModelCheckpoint(enc, vocab, init_weights(enc, vocab.total_dim)), tmp_path)
    blob = tmp_path / "model.bin"
    blob.write_bytes(blob.read_bytes()[:-8])
    with pytest.raises(CorruptWeights):
        load_checkpoint(tmp_path)


def test_flipped_byte(tmp_path):
    vocab = build_vocab([parse_molecule("CO")])
    enc = EncoderConfig.uniform("gcn", 1, 2)
    save_checkpoint(ModelCheckpoint(enc, vocab, init_weights(enc, vocab.total_dim)), tmp_path)
    blob = tmp_path / "model.bin"
    data = bytearray(blob.read_bytes())
    data[3] ^= 0xFF
    blob.write_bytes(bytes(data))
    with pytest.raises(CorruptWeights):
        load_checkpoint(tmp_path)


def test_version_mismatch(tmp_path):
    vocab = build_vocab([parse_molecule("CO")])
    enc = EncoderConfig.uniform("gcn", 1, 2)
    save_checkpoint(ModelCheckpoint(enc, vocab, init_weights(enc, vocab.total_dim)), tmp_path)
    manifest = json.loads((tmp_path / "model.json").read_text())
    manifest["format_version"] = 99
    (tmp_path / "model.json").write_text(json.dumps(manifest))
    with pytest.raises(VersionMismatch):
        load_checkpoint(tmp_path)
