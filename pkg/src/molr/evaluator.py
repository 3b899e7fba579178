"""Reaction-prediction ranking metrics and multi-choice product selection."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .encoders import EncoderConfig, encode_molecules
from .errors import EmptyRanks, TruthMissing
from .graph import FeatureVocab, MolecularGraph, Reaction, canonical_key

log = logging.getLogger(__name__)

HIT_KS = (1, 3, 5, 10)


@dataclass
class RankingReport:
    mrr: float
    mr: float
    hit: dict[int, float]
    ranks: list[int] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "mrr": self.mrr,
            "mr": self.mr,
            **{f"hit@{k}": v for k, v in self.hit.items()},
            "n_queries": len(self.ranks),
        }


def side_key(molecules: Sequence[MolecularGraph]) -> tuple[str, ...]:
    return tuple(sorted(canonical_key(m) for m in molecules))


def build_candidate_pool(reactions: Sequence[Reaction]) -> tuple[list[tuple[MolecularGraph, ...]], list[int]]:
    """Unique product sides in first-seen order, plus each reaction's pool index."""
    pool: list[tuple[MolecularGraph, ...]] = []
    index: dict[tuple[str, ...], int] = {}
    truth = []
    for r in reactions:
        key = side_key(r.products)
        if key not in index:
            index[key] = len(pool)
            pool.append(r.products)
        elif pool[index[key]] != r.products:
            log.debug("reaction %s product merged with pool entry %d", r.id, index[key])
        truth.append(index[key])
    return pool, truth


def rank_products(h_r: np.ndarray, pool: np.ndarray, truth: int) -> int:
    """1-based rank of the true candidate by L2 distance; ties go to pool order."""
    if not 0 <= truth < len(pool):
        raise TruthMissing(f"truth index {truth} outside pool of {len(pool)}")
    dist = np.sqrt(((pool - h_r[None, :]) ** 2).sum(axis=1))
    d = dist[truth]
    return int(1 + np.sum(dist < d) + np.sum(dist[:truth] == d))


def ranking_metrics(ranks: Sequence[int]) -> RankingReport:
    r = np.asarray(ranks, dtype=np.float64)
    if r.size == 0:
        raise EmptyRanks("no ranks to summarize")
    return RankingReport(
        mrr=float(np.mean(1.0 / r)),
        mr=float(np.mean(r)),
        hit={k: float(np.mean(r <= k)) for k in HIT_KS},
        ranks=[int(x) for x in ranks],
    )


def _side_sums(sides: Sequence[Sequence[MolecularGraph]], vocab, config, weights) -> np.ndarray:
    flat = [m for s in sides for m in s]
    emb = encode_molecules(flat, vocab, config, weights)
    out, i = [], 0
    for s in sides:
        out.append(emb[i:i + len(s)].sum(axis=0))
        i += len(s)
    return np.array(out).reshape(len(sides), -1)


def evaluate_ranking(
    reactions: Sequence[Reaction],
    vocab: FeatureVocab,
    config: EncoderConfig,
    weights: Mapping[str, np.ndarray],
) -> RankingReport:
    """Rank every test reaction's product among all test products."""
    pool, truth = build_candidate_pool(reactions)
    pool_emb = _side_sums(pool, vocab, config, weights)
    react_emb = _side_sums([r.reactants for r in reactions], vocab, config, weights)
    ranks = [rank_products(h, pool_emb, t) for h, t in zip(react_emb, truth)]
    return ranking_metrics(ranks)


def multi_choice(h_r: np.ndarray, choices: np.ndarray, truth: int | None = None) -> tuple[int, bool]:
    """Pick the choice closest to the reactant embedding (lowest index on ties)."""
    choices = np.asarray(choices)
    if len(choices) < 2:
        raise ValueError("need at least two choices")
    dist = np.sqrt(((choices - h_r[None, :]) ** 2).sum(axis=1))
    pick = int(np.argmin(dist))
    return pick, (truth is not None and pick == truth)
