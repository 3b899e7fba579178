"""GNN molecule encoders (GCN, GAT, GraphSAGE-pool, TAGCN) and readout.

Node features are row vectors, so a linear map is ``H @ W + b``. Every
layer applies ReLU except the last, which is the identity.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from functools import cached_property
from typing import Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Var
from .errors import ConfigError, EmptyGraph, EmptySide
from .graph import FeatureVocab, MolecularGraph, featurize

GNN_KINDS = ("gcn", "gat", "sage", "tag")
READOUTS = ("sum", "mean")


@dataclass(frozen=True)
class EncoderConfig:
    gnn: str = "gcn"
    n_layers: int = 2
    dims: tuple[int, ...] = (1024, 1024)
    heads: int = 16
    tag_l: int = 2
    readout: str = "sum"

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        if self.gnn not in GNN_KINDS:
            raise ConfigError(f"unknown gnn kind {self.gnn!r}; expected one of {GNN_KINDS}")
        if self.readout not in READOUTS:
            raise ConfigError(f"unknown readout {self.readout!r}")
        if self.n_layers < 1:
            raise ConfigError("n_layers must be at least 1")
        if len(self.dims) != self.n_layers:
            raise ConfigError(f"{self.n_layers} layers need {self.n_layers} dims, got {len(self.dims)}")
        if any(d < 1 for d in self.dims):
            raise ConfigError("layer dims must be positive")
        if self.gnn == "gat":
            if self.heads < 1:
                raise ConfigError("gat needs at least one head")
            if any(d % self.heads for d in self.dims):
                raise ConfigError(f"gat dims {self.dims} must be divisible by {self.heads} heads")
        if self.gnn == "tag" and self.tag_l < 0:
            raise ConfigError("tag_l must be non-negative")

    @classmethod
    def uniform(cls, gnn: str = "gcn", layers: int = 2, dim: int = 1024, **kw) -> "EncoderConfig":
        return cls(gnn=gnn, n_layers=layers, dims=(dim,) * layers, **kw)

    @property
    def out_dim(self) -> int:
        return self.dims[-1]

    def to_json(self) -> dict:
        d = asdict(self)
        d["dims"] = list(self.dims)
        return d

    @classmethod
    def from_json(cls, data: Mapping) -> "EncoderConfig":
        return cls(**{**data, "dims": tuple(data["dims"])})


def required_attachment_distance(config: EncoderConfig) -> int:
    """Hop distance from the reaction center beyond which substituents cannot move the residual.

    A substituent hanging off a core atom ``t`` leaves the reactant-product
    residual unchanged (sum readout) once ``t`` is at least this far from
    every center atom, provided ``t``'s own features and degree are the same
    for every substituent. GCN and TAG end in an aggregation that is linear
    in the previous layer, so only atoms near the center contribute; GAT
    attention and SAGE max pooling are not, which doubles their reach.
    """
    k = config.n_layers
    if config.gnn == "gcn":
        return 2 * max(1, k - 1)
    if config.gnn == "tag":
        return 2 * max(config.tag_l, (k - 1) * config.tag_l)
    return 2 * k


# ---------------------------------------------------------------- parameters

def parameter_shapes(config: EncoderConfig, in_dim: int) -> dict[str, tuple[int, int]]:
    shapes: dict[str, tuple[int, int]] = {}
    d_in = in_dim
    for k, d_out in enumerate(config.dims, start=1):
        p = f"layer{k}"
        if config.gnn == "gcn":
            shapes[f"{p}.W"] = (d_in, d_out)
        elif config.gnn == "gat":
            dh = d_out // config.heads
            for s in range(config.heads):
                shapes[f"{p}.head{s}.W"] = (d_in, dh)
                shapes[f"{p}.head{s}.att"] = (2 * dh, 1)
        elif config.gnn == "sage":
            shapes[f"{p}.W2"] = (d_in, d_in)
            shapes[f"{p}.b2"] = (1, d_in)
            shapes[f"{p}.W1"] = (2 * d_in, d_out)
        else:
            for l in range(config.tag_l + 1):
                shapes[f"{p}.W{l}"] = (d_in, d_out)
        shapes[f"{p}.b1" if config.gnn == "sage" else f"{p}.b"] = (1, d_out)
        d_in = d_out
    return shapes


def init_weights(config: EncoderConfig, in_dim: int, seed: int = 0) -> dict[str, np.ndarray]:
    """Glorot-uniform matrices and zero biases, one derived seed per parameter."""
    shapes = parameter_shapes(config, in_dim)
    seeds = np.random.SeedSequence(seed).generate_state(len(shapes), dtype=np.uint64)
    weights = {}
    for (name, (r, c)), s in zip(sorted(shapes.items()), seeds):
        is_bias = name.rsplit(".", 1)[1].startswith("b")
        weights[name] = np.zeros((r, c)) if is_bias else ad.glorot_init(r, c, int(s))
    return weights


def check_weights(config: EncoderConfig, in_dim: int, weights: Mapping[str, np.ndarray]) -> None:
    shapes = parameter_shapes(config, in_dim)
    if set(shapes) != set(weights):
        missing = sorted(set(shapes) - set(weights))
        extra = sorted(set(weights) - set(shapes))
        raise ConfigError(f"weights do not match config (missing {missing}, unexpected {extra})")
    for name, shape in shapes.items():
        if weights[name].shape != shape:
            raise ConfigError(f"{name} has shape {weights[name].shape}, expected {shape}")


# ---------------------------------------------------------------- batching

class GraphBatch:
    """Several molecules packed into one disjoint graph."""

    def __init__(self, graphs: Sequence[MolecularGraph], features: Sequence[np.ndarray]):
        if not graphs:
            raise EmptyGraph("a batch needs at least one molecule")
        sizes = np.array([g.n_atoms for g in graphs], dtype=np.int64)
        if (sizes == 0).any():
            raise EmptyGraph("cannot encode a molecule without atoms")
        offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]])
        self.n_mols = len(graphs)
        self.n_atoms = int(sizes.sum())
        self.sizes = sizes
        self.x = np.vstack(features)
        self.mol_index = np.repeat(np.arange(self.n_mols), sizes)
        src, dst = [], []
        for g, off in zip(graphs, offsets):
            s, d = g.edge_index
            src.append(s + off)
            dst.append(d + off)
        self.src = np.concatenate(src)
        self.dst = np.concatenate(dst)
        self.degree = np.bincount(self.dst, minlength=self.n_atoms)

    @classmethod
    def from_graphs(cls, graphs: Sequence[MolecularGraph], vocab: FeatureVocab) -> "GraphBatch":
        return cls(graphs, [featurize(g, vocab) for g in graphs])

    @cached_property
    def loops(self) -> np.ndarray:
        return np.arange(self.n_atoms)

    @cached_property
    def gcn_edges(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        deg = self.degree.astype(np.float64)
        w_nb = 1.0 / np.sqrt(deg[self.src] * deg[self.dst])
        # isolated atoms keep their own features (coefficient 1)
        w_self = np.where(deg > 0, 1.0 / np.maximum(deg, 1.0), 1.0)
        return (np.concatenate([self.src, self.loops]),
                np.concatenate([self.dst, self.loops]),
                np.concatenate([w_nb, w_self]))

    @cached_property
    def tag_edges(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        deg = self.degree.astype(np.float64) + 1.0
        src = np.concatenate([self.src, self.loops])
        dst = np.concatenate([self.dst, self.loops])
        return src, dst, 1.0 / np.sqrt(deg[src] * deg[dst])

    @cached_property
    def attention_edges(self) -> tuple[np.ndarray, np.ndarray]:
        return np.concatenate([self.src, self.loops]), np.concatenate([self.dst, self.loops])

    @cached_property
    def pooled_nodes(self) -> tuple[np.ndarray, np.ndarray]:
        """Atoms with at least one neighbor, and each edge's compact target index."""
        has = np.flatnonzero(self.degree > 0)
        compact = np.full(self.n_atoms, -1, dtype=np.int64)
        compact[has] = np.arange(len(has))
        return has, compact[self.dst]


# ---------------------------------------------------------------- layers

def _activation(last: bool):
    return ad.identity if last else ad.relu


def gcn_layer(h: Var, batch: GraphBatch, params: Mapping[str, Var], prefix: str, act=ad.relu) -> Var:
    src, dst, w = batch.gcn_edges
    agg = ad.propagate(h, src, dst, w, batch.n_atoms)
    return act(ad.add(ad.matmul(agg, params[f"{prefix}.W"]), params[f"{prefix}.b"]))


def gat_layer(h: Var, batch: GraphBatch, params: Mapping[str, Var], prefix: str, heads: int,
              act=ad.relu) -> Var:
    src, dst = batch.attention_edges
    out = None
    for s in range(heads):
        z = ad.matmul(h, params[f"{prefix}.head{s}.W"])
        z_src = ad.gather_rows(z, src)
        pair = ad.concat_cols(ad.gather_rows(z, dst), z_src)
        logits = ad.leaky_relu(ad.matmul(pair, params[f"{prefix}.head{s}.att"]))
        alpha = ad.segment_softmax(logits, dst, batch.n_atoms)
        head = ad.segment_sum(ad.row_scale(z_src, alpha), dst, batch.n_atoms)
        out = head if out is None else ad.concat_cols(out, head)
    return act(ad.add(out, params[f"{prefix}.b"]))


def sage_layer(h: Var, batch: GraphBatch, params: Mapping[str, Var], prefix: str, act=ad.relu) -> Var:
    pooled = ad.relu(ad.add(ad.matmul(h, params[f"{prefix}.W2"]), params[f"{prefix}.b2"]))
    has, compact_dst = batch.pooled_nodes
    if len(has):
        nb = ad.segment_max(ad.gather_rows(pooled, batch.src), compact_dst, len(has))
        # scatter pooled rows back to their atoms; isolated atoms stay zero
        nb = ad.segment_sum(nb, has, batch.n_atoms)
    else:
        nb = h.tape.constant(np.zeros((batch.n_atoms, pooled.shape[1])))
    both = ad.concat_cols(h, nb)
    return act(ad.add(ad.matmul(both, params[f"{prefix}.W1"]), params[f"{prefix}.b1"]))


def tag_layer(h: Var, batch: GraphBatch, params: Mapping[str, Var], prefix: str, L: int,
              act=ad.relu) -> Var:
    src, dst, w = batch.tag_edges
    hop = h
    out = ad.matmul(hop, params[f"{prefix}.W0"])
    for l in range(1, L + 1):
        hop = ad.propagate(hop, src, dst, w, batch.n_atoms)
        out = ad.add(out, ad.matmul(hop, params[f"{prefix}.W{l}"]))
    return act(ad.add(out, params[f"{prefix}.b"]))


def readout(h: Var, batch: GraphBatch, mode: str = "sum") -> Var:
    pooled = ad.segment_sum(h, batch.mol_index, batch.n_mols)
    if mode == "mean":
        pooled = ad.row_scale(pooled, 1.0 / batch.sizes.astype(np.float64)[:, None])
    elif mode != "sum":
        raise ConfigError(f"unknown readout {mode!r}")
    return pooled


def forward(batch: GraphBatch, config: EncoderConfig, params: Mapping[str, Var]) -> Var:
    """Molecule embeddings (one row per molecule in ``batch``)."""
    tape = next(iter(params.values())).tape
    h = tape.constant(batch.x)
    for k in range(1, config.n_layers + 1):
        prefix = f"layer{k}"
        act = _activation(k == config.n_layers)
        if config.gnn == "gcn":
            h = gcn_layer(h, batch, params, prefix, act)
        elif config.gnn == "gat":
            h = gat_layer(h, batch, params, prefix, config.heads, act)
        elif config.gnn == "sage":
            h = sage_layer(h, batch, params, prefix, act)
        else:
            h = tag_layer(h, batch, params, prefix, config.tag_l, act)
    return readout(h, batch, config.readout)


# ---------------------------------------------------------------- inference

def _thread_cap() -> int:
    try:
        return max(0, int(os.environ.get("MOLR_THREADS", "0")))
    except ValueError:
        return 0


def encode_molecules(
    graphs: Sequence[MolecularGraph],
    vocab: FeatureVocab,
    config: EncoderConfig,
    weights: Mapping[str, np.ndarray],
    chunk: int = 512,
) -> np.ndarray:
    """Embeddings for many molecules, returned in input order."""
    if not graphs:
        return np.zeros((0, config.out_dim))
    check_weights(config, vocab.total_dim, weights)

    def run(part):
        tape = Tape(record=False)
        params = {n: tape.param(n, w) for n, w in weights.items()}
        return forward(GraphBatch.from_graphs(part, vocab), config, params).value

    parts = [graphs[i:i + chunk] for i in range(0, len(graphs), chunk)]
    threads = _thread_cap()
    if threads > 1 and len(parts) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, parts))
    else:
        results = [run(p) for p in parts]
    return np.vstack(results)


def encode_molecule(graph: MolecularGraph, vocab: FeatureVocab, config: EncoderConfig,
                    weights: Mapping[str, np.ndarray]) -> np.ndarray:
    return encode_molecules([graph], vocab, config, weights)[0]


def encode_side(molecules: Sequence[MolecularGraph], vocab: FeatureVocab, config: EncoderConfig,
                weights: Mapping[str, np.ndarray]) -> np.ndarray:
    """Sum of the embeddings of one side of a reaction."""
    if not molecules:
        raise EmptySide("a reaction side needs at least one molecule")
    return encode_molecules(list(molecules), vocab, config, weights).sum(axis=0)
