"""Molecular graph model, atom featurization and reaction-center machinery."""

from __future__ import annotations

import enum
import hashlib
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import EmptyCorpus, InvalidMap, InvalidPermutation

OTHER = "other"
UNKNOWN = "unknown"


class BondOrder(enum.Enum):
    SINGLE = "single"
    DOUBLE = "double"
    TRIPLE = "triple"
    AROMATIC = "aromatic"
    NONE = "none"

    @property
    def valence(self) -> float:
        return _VALENCE[self]


_VALENCE = {
    BondOrder.SINGLE: 1.0,
    BondOrder.DOUBLE: 2.0,
    BondOrder.TRIPLE: 3.0,
    BondOrder.AROMATIC: 1.5,
    BondOrder.NONE: 0.0,
}


@dataclass(frozen=True)
class Atom:
    element: str
    charge: int = 0
    aromatic: bool = False
    hydrogen_count: int = 0

    def __post_init__(self):
        if not 0 <= self.hydrogen_count <= 8:
            raise ValueError(f"hydrogen_count out of range: {self.hydrogen_count}")


@dataclass(frozen=True)
class Bond:
    i: int
    j: int
    order: BondOrder = BondOrder.SINGLE

    def __post_init__(self):
        if self.i == self.j:
            raise ValueError(f"self-loop on atom {self.i}")
        if self.i > self.j:
            a, b = self.j, self.i
            object.__setattr__(self, "i", a)
            object.__setattr__(self, "j", b)

    @property
    def endpoints(self) -> tuple[int, int]:
        return (self.i, self.j)


@dataclass(frozen=True)
class MolecularGraph:
    """Heavy atoms as nodes, typed bonds as undirected edges.

    Bonds are normalized to ``i < j`` and stored sorted, so two graphs built
    from the same atoms and bond set compare equal regardless of the order
    the bonds were supplied in.
    """

    atoms: tuple[Atom, ...]
    bonds: tuple[Bond, ...] = ()
    stereo_markers: int = field(default=0, compare=False)

    def __post_init__(self):
        atoms = tuple(self.atoms)
        bonds = tuple(sorted(self.bonds, key=lambda b: (b.i, b.j)))
        n = len(atoms)
        seen = set()
        for b in bonds:
            if b.j >= n or b.i < 0:
                raise ValueError(f"bond {b.endpoints} references a missing atom")
            if b.endpoints in seen:
                raise ValueError(f"duplicate bond {b.endpoints}")
            seen.add(b.endpoints)
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "bonds", bonds)

    @property
    def n_atoms(self) -> int:
        return len(self.atoms)

    @property
    def n_bonds(self) -> int:
        return len(self.bonds)

    @cached_property
    def neighbors(self) -> tuple[tuple[int, ...], ...]:
        nbrs: list[list[int]] = [[] for _ in self.atoms]
        for b in self.bonds:
            nbrs[b.i].append(b.j)
            nbrs[b.j].append(b.i)
        return tuple(tuple(sorted(x)) for x in nbrs)

    @cached_property
    def bond_lookup(self) -> dict[tuple[int, int], BondOrder]:
        return {b.endpoints: b.order for b in self.bonds}

    def bond_order(self, i: int, j: int) -> BondOrder:
        key = (i, j) if i < j else (j, i)
        return self.bond_lookup.get(key, BondOrder.NONE)

    @cached_property
    def edge_index(self) -> tuple[np.ndarray, np.ndarray]:
        """Directed (src, dst) arrays with both directions of every bond."""
        if not self.bonds:
            empty = np.zeros(0, dtype=np.int64)
            return empty, empty.copy()
        ij = np.array([b.endpoints for b in self.bonds], dtype=np.int64)
        src = np.concatenate([ij[:, 0], ij[:, 1]])
        dst = np.concatenate([ij[:, 1], ij[:, 0]])
        return src, dst

    def components(self) -> list[list[int]]:
        seen = [False] * self.n_atoms
        comps = []
        for start in range(self.n_atoms):
            if seen[start]:
                continue
            seen[start] = True
            comp, queue = [], deque([start])
            while queue:
                u = queue.popleft()
                comp.append(u)
                for v in self.neighbors[u]:
                    if not seen[v]:
                        seen[v] = True
                        queue.append(v)
            comps.append(sorted(comp))
        return comps

    def subgraph(self, nodes: Sequence[int]) -> "MolecularGraph":
        index = {old: new for new, old in enumerate(nodes)}
        bonds = [Bond(index[b.i], index[b.j], b.order) for b in self.bonds
                 if b.i in index and b.j in index]
        return MolecularGraph(tuple(self.atoms[i] for i in nodes), tuple(bonds))


@dataclass(frozen=True)
class Reaction:
    id: str
    reactants: tuple[MolecularGraph, ...]
    products: tuple[MolecularGraph, ...]

    def __post_init__(self):
        object.__setattr__(self, "reactants", tuple(self.reactants))
        object.__setattr__(self, "products", tuple(self.products))
        if not self.reactants or not self.products:
            raise ValueError("a reaction needs at least one reactant and one product")


def disjoint_union(graphs: Iterable[MolecularGraph]) -> MolecularGraph:
    """Treat several molecules as one graph with one component each."""
    atoms: list[Atom] = []
    bonds: list[Bond] = []
    for g in graphs:
        off = len(atoms)
        atoms.extend(g.atoms)
        bonds.extend(Bond(b.i + off, b.j + off, b.order) for b in g.bonds)
    return MolecularGraph(tuple(atoms), tuple(bonds))


# --------------------------------------------------------------------------
# featurization

def _sort_key(value):
    # bools before ints before strings keeps mixed lists deterministic
    return (str(type(value).__name__), value)


@dataclass(frozen=True)
class FeatureVocab:
    """One-hot vocabularies for the four atom properties.

    Every list ends with the ``"unknown"`` slot, which absorbs values never
    seen while the vocabulary was built.
    """

    element: tuple
    charge: tuple
    aromatic: tuple
    hydrogen_count: tuple

    def __post_init__(self):
        for name in ("element", "charge", "aromatic", "hydrogen_count"):
            values = tuple(getattr(self, name))
            if not values or values[-1] != UNKNOWN:
                values = values + (UNKNOWN,)
            if len(set(values)) != len(values):
                raise ValueError(f"duplicate values in {name} vocabulary")
            object.__setattr__(self, name, values)

    @property
    def lists(self) -> tuple[tuple, tuple, tuple, tuple]:
        return (self.element, self.charge, self.aromatic, self.hydrogen_count)

    @property
    def total_dim(self) -> int:
        return sum(len(v) for v in self.lists)

    @cached_property
    def _offsets(self) -> tuple[int, int, int, int]:
        sizes = [len(v) for v in self.lists]
        return tuple(int(x) for x in np.cumsum([0] + sizes[:-1]))

    @cached_property
    def _index(self) -> tuple[dict, ...]:
        # keys carry the type so True/1 and False/0 never collide
        return tuple({(type(v), v): i for i, v in enumerate(vals)} for vals in self.lists)

    def slot(self, block: int, value) -> int:
        table = self._index[block]
        return table.get((type(value), value), len(self.lists[block]) - 1)

    def to_json(self) -> dict:
        return {name: [v for v in getattr(self, name)[:-1]]
                for name in ("element", "charge", "aromatic", "hydrogen_count")}

    @classmethod
    def from_json(cls, data: Mapping) -> "FeatureVocab":
        return cls(
            element=tuple(str(v) for v in data["element"]),
            charge=tuple(int(v) for v in data["charge"]),
            aromatic=tuple(bool(v) for v in data["aromatic"]),
            hydrogen_count=tuple(int(v) for v in data["hydrogen_count"]),
        )


def build_vocab(corpus: Iterable[MolecularGraph]) -> FeatureVocab:
    elements, charges, aromatic, hcounts = set(), set(), set(), set()
    empty = True
    for g in corpus:
        empty = False
        for a in g.atoms:
            elements.add(a.element)
            charges.add(int(a.charge))
            aromatic.add(bool(a.aromatic))
            hcounts.add(int(a.hydrogen_count))
    if empty:
        raise EmptyCorpus("cannot build a vocabulary from an empty corpus")
    return FeatureVocab(
        element=tuple(sorted(elements)),
        charge=tuple(sorted(charges)),
        aromatic=tuple(sorted(aromatic)),
        hydrogen_count=tuple(sorted(hcounts)),
    )


def encode_atom(atom: Atom, vocab: FeatureVocab) -> np.ndarray:
    vec = np.zeros(vocab.total_dim)
    values = (atom.element, int(atom.charge), bool(atom.aromatic), int(atom.hydrogen_count))
    for block, (off, value) in enumerate(zip(vocab._offsets, values)):
        vec[off + vocab.slot(block, value)] = 1.0
    return vec


def featurize(graph: MolecularGraph, vocab: FeatureVocab) -> np.ndarray:
    """Stack ``encode_atom`` rows for every atom of ``graph``."""
    if graph.n_atoms == 0:
        return np.zeros((0, vocab.total_dim))
    return np.stack([encode_atom(a, vocab) for a in graph.atoms])


# --------------------------------------------------------------------------
# reaction centers

def _check_map(atom_map: Mapping[int, int], n_react: int, n_prod: int) -> None:
    images = set()
    for u, v in atom_map.items():
        if not (0 <= u < n_react):
            raise InvalidMap(f"map key {u} is not a reactant atom")
        if not (0 <= v < n_prod):
            raise InvalidMap(f"map value {v} is not a product atom")
        if v in images:
            raise InvalidMap(f"product atom {v} is the image of two reactant atoms")
        images.add(v)


def reaction_center(reaction: Reaction, atom_map: Mapping[int, int]) -> set[int]:
    """Reactant atoms with at least one incident bond whose order changes.

    Atom ids index the disjoint union of the reactants (resp. products) in
    listed order. Reactant atoms missing from ``atom_map`` are deleted by the
    reaction and always belong to the center.
    """
    R = disjoint_union(reaction.reactants)
    P = disjoint_union(reaction.products)
    _check_map(atom_map, R.n_atoms, P.n_atoms)
    inverse = {v: u for u, v in atom_map.items()}

    center = {u for u in range(R.n_atoms) if u not in atom_map}
    for b in R.bonds:
        if b.i in center and b.j in center:
            continue
        mi, mj = atom_map.get(b.i), atom_map.get(b.j)
        after = BondOrder.NONE if mi is None or mj is None else P.bond_order(mi, mj)
        if after != b.order:
            center.update(b.endpoints)
    for b in P.bonds:
        ui, uj = inverse.get(b.i), inverse.get(b.j)
        before = BondOrder.NONE if ui is None or uj is None else R.bond_order(ui, uj)
        if before != b.order:
            center.update(u for u in (ui, uj) if u is not None)
    return center


def k_hop_neighborhood(graphs: Sequence[MolecularGraph], seeds: Iterable[int], k: int) -> set[int]:
    if k < 0:
        raise ValueError("k must be non-negative")
    g = disjoint_union(graphs)
    dist = {}
    queue = deque()
    for s in seeds:
        if not 0 <= s < g.n_atoms:
            raise IndexError(f"seed atom {s} does not exist")
        if s not in dist:
            dist[s] = 0
            queue.append(s)
    while queue:
        u = queue.popleft()
        if dist[u] == k:
            continue
        for v in g.neighbors[u]:
            if v not in dist:
                dist[v] = dist[u] + 1
                queue.append(v)
    return set(dist)


def distances_from(graph: MolecularGraph, seeds: Iterable[int]) -> dict[int, int]:
    """Shortest-path hop counts from the seed set; unreachable atoms omitted."""
    dist = {s: 0 for s in seeds}
    queue = deque(dist)
    while queue:
        u = queue.popleft()
        for v in graph.neighbors[u]:
            if v not in dist:
                dist[v] = dist[u] + 1
                queue.append(v)
    return dist


def permute_atoms(graph: MolecularGraph, permutation: Sequence[int]) -> MolecularGraph:
    """Relabel atoms so that old atom ``i`` becomes ``permutation[i]``."""
    perm = [int(p) for p in permutation]
    n = graph.n_atoms
    if len(perm) != n or sorted(perm) != list(range(n)):
        raise InvalidPermutation(f"not a permutation of range({n}): {perm}")
    atoms: list[Atom | None] = [None] * n
    for old, new in enumerate(perm):
        atoms[new] = graph.atoms[old]
    bonds = tuple(Bond(perm[b.i], perm[b.j], b.order) for b in graph.bonds)
    return MolecularGraph(tuple(atoms), bonds, graph.stereo_markers)


# --------------------------------------------------------------------------
# canonical keys

def _digest(*parts) -> str:
    return hashlib.blake2b(repr(parts).encode(), digest_size=12).hexdigest()


def canonical_key(graph: MolecularGraph, rounds: int | None = None) -> str:
    """Permutation-invariant fingerprint from iterated neighborhood refinement.

    Two isomorphic graphs always share a key. Distinct graphs may collide in
    rare regular cases, which only merges them in a candidate pool.
    """
    n = graph.n_atoms
    colors = [_digest(a.element, a.charge, a.aromatic, a.hydrogen_count, len(graph.neighbors[i]))
              for i, a in enumerate(graph.atoms)]
    n_classes = len(set(colors))
    for _ in range(rounds if rounds is not None else max(n, 1)):
        colors = [
            _digest(colors[i], sorted((graph.bond_order(i, j).value, colors[j]) for j in graph.neighbors[i]))
            for i in range(n)
        ]
        k = len(set(colors))
        if k == n_classes and rounds is None:
            break
        n_classes = k
    edges = sorted(tuple(sorted((colors[b.i], colors[b.j]))) + (b.order.value,) for b in graph.bonds)
    return _digest(sorted(colors), edges)
