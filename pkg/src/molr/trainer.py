"""Contrastive training on reaction equivalence, plus checkpoint files."""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import AdamState, Tape, Var
from .encoders import EncoderConfig, GraphBatch, forward, init_weights
from .errors import BatchTooSmall, ConfigError, CorruptWeights, TrainingError, VersionMismatch
from .graph import FeatureVocab, MolecularGraph, Reaction, build_vocab, featurize

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
MANIFEST_NAME = "model.json"
BLOB_NAME = "model.bin"


def margin_for_dim(dim: int, base_margin: float = 4.0, base_dim: int = 1024) -> float:
    """Scale a margin tuned at ``base_dim`` to another embedding width.

    Distances between random vectors grow with the square root of their
    length, so the margin does too: 4.0 at 1024 dims is 1.0 at 64 dims.
    """
    return base_margin * math.sqrt(dim / base_dim)


@dataclass(frozen=True)
class TrainConfig:
    margin: float = 4.0
    batch_size: int = 4096
    epochs: int = 20
    learning_rate: float = 1e-4
    seed: int = 0
    encoder: EncoderConfig = field(default_factory=EncoderConfig)

    def __post_init__(self):
        if not self.margin > 0:
            raise ConfigError("margin must be positive")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be at least 2 so every batch has negative pairs")
        if self.epochs < 0:
            raise ConfigError("epochs must be non-negative")
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be non-negative")

    def to_json(self) -> dict:
        d = asdict(self)
        d["encoder"] = self.encoder.to_json()
        return d

    @classmethod
    def from_json(cls, data: Mapping) -> "TrainConfig":
        return cls(**{**data, "encoder": EncoderConfig.from_json(data["encoder"])})


# ---------------------------------------------------------------- loss

def _side_embeddings(batch: Sequence[Reaction], vocab: FeatureVocab, encoder: EncoderConfig,
                     params: Mapping[str, Var], features: Callable[[MolecularGraph], np.ndarray]):
    mols, side = [], []
    n = len(batch)
    for i, r in enumerate(batch):
        mols.extend(r.reactants)
        side.extend([i] * len(r.reactants))
    for i, r in enumerate(batch):
        mols.extend(r.products)
        side.extend([n + i] * len(r.products))
    emb = forward(GraphBatch(mols, [features(m) for m in mols]), encoder, params)
    sides = ad.segment_sum(emb, np.array(side), 2 * n)
    return ad.gather_rows(sides, np.arange(n)), ad.gather_rows(sides, np.arange(n, 2 * n))


def batch_loss(
    batch: Sequence[Reaction],
    vocab: FeatureVocab,
    config: TrainConfig,
    weights: Mapping[str, np.ndarray],
    tape: Tape | None = None,
    features: Callable[[MolecularGraph], np.ndarray] | None = None,
):
    """Margin loss over one minibatch.

    Positive pairs are matched reactant/product sides; every unmatched
    ``(R_i, P_j)`` with ``i != j`` is a negative pair. Returns a ``(1, 1)``
    ``Var`` on ``tape`` when one is given, otherwise a float.
    """
    n = len(batch)
    if n < 2:
        raise BatchTooSmall(f"batch of {n} reaction(s) has no negative pairs")
    owned = tape is None
    tape = tape if tape is not None else Tape(record=False)
    params = {name: tape.param(name, w) for name, w in weights.items()}
    feats = features or (lambda g: featurize(g, vocab))
    h_r, h_p = _side_embeddings(batch, vocab, config.encoder, params, feats)

    dist = ad.pairwise_distances(h_r, h_p)
    eye = np.eye(n)
    positive = ad.scale(ad.total(ad.mul(dist, eye)), 1.0 / n)
    hinge = ad.relu(ad.add_scalar(ad.scale(dist, -1.0), config.margin))
    negative = ad.scale(ad.total(ad.mul(hinge, 1.0 - eye)), 1.0 / (n * (n - 1)))
    loss = ad.add(positive, negative)
    return float(loss.value[0, 0]) if owned else loss


# ---------------------------------------------------------------- checkpoints

@dataclass
class ModelCheckpoint:
    encoder: EncoderConfig
    vocab: FeatureVocab
    weights: dict[str, np.ndarray]
    train_config: TrainConfig | None = None
    format_version: int = FORMAT_VERSION

    def parameter_table(self) -> list[dict]:
        return [{"name": n, "shape": list(self.weights[n].shape)} for n in sorted(self.weights)]

    def blob(self) -> bytes:
        parts = [np.ascontiguousarray(self.weights[n], dtype="<f8").tobytes() for n in sorted(self.weights)]
        return b"".join(parts)

    def manifest(self) -> dict:
        blob = self.blob()
        core = {
            "format_version": self.format_version,
            "encoder": self.encoder.to_json(),
            "vocab": self.vocab.to_json(),
            "parameters": self.parameter_table(),
        }
        blob_sha = hashlib.sha256(blob).hexdigest()
        model_hash = hashlib.sha256(
            (json.dumps(core, sort_keys=True) + blob_sha).encode()).hexdigest()
        return {
            **core,
            "train": self.train_config.to_json() if self.train_config else None,
            "blob": {"file": BLOB_NAME, "bytes": len(blob), "sha256": blob_sha},
            "model_hash": model_hash,
        }

    @property
    def model_hash(self) -> str:
        return self.manifest()["model_hash"]


def save_checkpoint(checkpoint: ModelCheckpoint, path: str | Path) -> Path:
    """Write ``model.json`` and ``model.bin`` into directory ``path``."""
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    (out / BLOB_NAME).write_bytes(checkpoint.blob())
    (out / MANIFEST_NAME).write_text(json.dumps(checkpoint.manifest(), indent=2) + "\n")
    return out


def load_checkpoint(path: str | Path) -> ModelCheckpoint:
    root = Path(path)
    manifest = json.loads((root / MANIFEST_NAME).read_text())
    if manifest.get("format_version") != FORMAT_VERSION:
        raise VersionMismatch(
            f"checkpoint format {manifest.get('format_version')!r}, this build reads {FORMAT_VERSION}")
    blob = (root / manifest["blob"]["file"]).read_bytes()
    if len(blob) != manifest["blob"]["bytes"] or hashlib.sha256(blob).hexdigest() != manifest["blob"]["sha256"]:
        raise CorruptWeights(f"{root / manifest['blob']['file']} does not match its manifest")
    weights, offset = {}, 0
    for entry in manifest["parameters"]:
        r, c = entry["shape"]
        size = r * c * 8
        if offset + size > len(blob):
            raise CorruptWeights("weight blob is shorter than the parameter table")
        weights[entry["name"]] = np.frombuffer(blob, dtype="<f8", count=r * c, offset=offset).reshape(r, c).copy()
        offset += size
    if offset != len(blob):
        raise CorruptWeights("weight blob has trailing bytes")
    train = manifest.get("train")
    return ModelCheckpoint(
        encoder=EncoderConfig.from_json(manifest["encoder"]),
        vocab=FeatureVocab.from_json(manifest["vocab"]),
        weights=weights,
        train_config=TrainConfig.from_json(train) if train else None,
    )


# ---------------------------------------------------------------- training loop

@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    mean_loss: float
    val_mrr: float | None = None


def vocab_for(reactions: Sequence[Reaction]) -> FeatureVocab:
    return build_vocab(m for r in reactions for side in (r.reactants, r.products) for m in side)


def minibatches(n: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Shuffled index batches; a trailing batch shorter than 2 is dropped."""
    order = rng.permutation(n)
    batches = [order[i:i + batch_size] for i in range(0, n, batch_size)]
    if batches and len(batches[-1]) < 2:
        batches.pop()
    return batches


def train(
    dataset: Sequence[Reaction],
    config: TrainConfig,
    vocab: FeatureVocab | None = None,
    validation: Sequence[Reaction] | None = None,
    weights: Mapping[str, np.ndarray] | None = None,
    on_epoch: Callable[[EpochRecord], None] | None = None,
) -> tuple[ModelCheckpoint, list[EpochRecord]]:
    """Minimize the margin loss with Adam over shuffled minibatches.

    With ``validation`` the returned checkpoint holds the weights of the
    epoch with the best validation MRR; otherwise the final weights.
    """
    if not dataset:
        raise ValueError("training set is empty")
    if len(dataset) < 2:
        raise BatchTooSmall("training needs at least two reactions")
    vocab = vocab or vocab_for(dataset)
    weights = dict(weights) if weights is not None else init_weights(config.encoder, vocab.total_dim, config.seed)
    rng = np.random.default_rng(config.seed)
    state = AdamState(lr=config.learning_rate)

    cache: dict[int, np.ndarray] = {}

    def features(g: MolecularGraph) -> np.ndarray:
        key = id(g)
        if key not in cache:
            cache[key] = featurize(g, vocab)
        return cache[key]

    if validation:
        from .evaluator import evaluate_ranking

    history: list[EpochRecord] = []
    best, best_mrr = dict(weights), -1.0
    for epoch in range(1, config.epochs + 1):
        losses = []
        for b, idx in enumerate(minibatches(len(dataset), config.batch_size, rng)):
            tape = Tape()
            loss = batch_loss([dataset[i] for i in idx], vocab, config, weights, tape, features)
            value = float(loss.value[0, 0])
            if not math.isfinite(value):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {b}")
            grads = tape.backward(loss)
            weights, state = ad.adam_step(weights, grads, state)
            losses.append(value)
        val_mrr = None
        if validation:
            val_mrr = evaluate_ranking(validation, vocab, config.encoder, weights).mrr
            if val_mrr > best_mrr:
                best, best_mrr = dict(weights), val_mrr
        record = EpochRecord(epoch, float(np.mean(losses)) if losses else float("nan"), val_mrr)
        log.info("epoch %d loss %.6f%s", epoch, record.mean_loss,
                 "" if val_mrr is None else f" val_mrr {val_mrr:.4f}")
        history.append(record)
        if on_epoch:
            on_epoch(record)
    final = best if validation and best_mrr >= 0 else weights
    return ModelCheckpoint(config.encoder, vocab, final, config), history
