"""Seeded synthetic reaction families built as graph rewrites.

Each template is a fixed core with two attachment points. A linear carbon
linker puts each attachment atom a chosen number of hops from the reaction
center, and random alkyl trees hang off the attachment atoms. Small
by-products (water, HCl) are omitted consistently, so their atoms are
unmapped and belong to the center.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import SizeOutOfRange
from .graph import Atom, Bond, BondOrder, MolecularGraph, Reaction
from .smiles import implicit_hydrogen_count, to_smiles

TEMPLATES = ("esterification", "oxidation", "substitution")

S, D = BondOrder.SINGLE, BondOrder.DOUBLE


def _finish(elements: Sequence[str], bonds: Sequence[tuple[int, int, BondOrder]]) -> MolecularGraph:
    orders: list[list[float]] = [[] for _ in elements]
    for i, j, o in bonds:
        orders[i].append(o.valence)
        orders[j].append(o.valence)
    atoms = tuple(Atom(e, 0, False, implicit_hydrogen_count(e, 0, False, None, orders[k]))
                  for k, e in enumerate(elements))
    return MolecularGraph(atoms, tuple(Bond(i, j, o) for i, j, o in bonds))


def _tree_edges(size: int, rng: np.random.Generator) -> list[tuple[int, int]]:
    # children per node capped at 3 so the root keeps a free valence for attachment
    children = [0] * size
    edges = []
    for new in range(1, size):
        open_nodes = [u for u in range(new) if children[u] < 3]
        parent = int(rng.choice(open_nodes))
        children[parent] += 1
        edges.append((parent, new))
    return edges


def generate_alkyl_tree(size: int, seed: int) -> MolecularGraph:
    """A random saturated carbon tree; atom 0 is the root."""
    if not 1 <= size <= 12:
        raise SizeOutOfRange(f"alkyl tree size must be in [1, 12], got {size}")
    edges = _tree_edges(size, np.random.default_rng(seed))
    return _finish(["C"] * size, [(i, j, S) for i, j in edges])


class _Builder:
    def __init__(self):
        self.elements: list[str] = []
        self.bonds: list[tuple[int, int, BondOrder]] = []

    def atom(self, element: str) -> int:
        self.elements.append(element)
        return len(self.elements) - 1

    def bond(self, i: int, j: int, order: BondOrder = S) -> None:
        self.bonds.append((i, j, order))

    def chain(self, start: int, length: int) -> list[int]:
        atoms, prev = [], start
        for _ in range(length):
            cur = self.atom("C")
            self.bond(prev, cur)
            atoms.append(cur)
            prev = cur
        return atoms

    def graft(self, at: int, tree: MolecularGraph | None) -> None:
        if tree is None:
            return
        base = len(self.elements)
        for a in tree.atoms:
            self.atom(a.element)
        for b in tree.bonds:
            self.bond(base + b.i, base + b.j, b.order)
        self.bond(at, base)

    def build(self) -> MolecularGraph:
        return _finish(self.elements, self.bonds)


@dataclass(frozen=True)
class TemplateInstance:
    """A generated reaction with its ground-truth atom map and center.

    Atom ids index the disjoint union of reactants (keys of ``atom_map``)
    and of products (values), in listed order.
    """

    template: str
    reaction: Reaction
    atom_map: dict[int, int]
    center: frozenset[int]
    attachments: tuple[int, int]
    substituents: tuple[MolecularGraph | None, MolecularGraph | None]


def _linker(b: _Builder, start: int, distance: int) -> int:
    """Carbon chain so the returned atom sits ``distance`` hops from ``start``."""
    return b.chain(start, distance)[-1] if distance > 0 else start


def build_instance(
    template: str,
    r1: MolecularGraph | None,
    r2: MolecularGraph | None,
    distance: int = 2,
    rid: str = "0",
    mutate: dict[int, str] | None = None,
) -> TemplateInstance:
    """Instantiate ``template`` with substituents ``r1``/``r2``.

    ``mutate`` maps reactant atom ids to replacement elements, applied
    consistently to both sides (used to probe atoms near the center).
    """
    if template not in TEMPLATES:
        raise ValueError(f"unknown template {template!r}; expected one of {TEMPLATES}")
    if distance < 1:
        raise ValueError("attachment distance must be at least 1")
    # Reactant and product builders add atoms in the same order, so shared
    # atoms get the same index on both sides; `dropped` lists reactant-only atoms.
    ra, rb, pa = _Builder(), _Builder(), _Builder()
    if template == "esterification":
        c = ra.atom("C"); o1 = ra.atom("O"); o2 = ra.atom("O")
        ra.bond(c, o1, D); ra.bond(c, o2)
        t1 = _linker(ra, c, distance); ra.graft(t1, r1)
        o3 = rb.atom("O")
        t2 = _linker(rb, o3, distance); rb.graft(t2, r2)
        reactants = [ra, rb]
        n_a = len(ra.elements)
        center_local = [c, o2, n_a + o3]
        dropped = {o2}
        # product: ester = acid atoms minus hydroxyl O, then alcohol atoms
        keep = [k for k in range(n_a) if k != o2]
        remap = {old: new for new, old in enumerate(keep)}
        for k in keep:
            pa.atom(ra.elements[k])
        for i, j, o in ra.bonds:
            if i in remap and j in remap:
                pa.bond(remap[i], remap[j], o)
        base = len(pa.elements)
        for e in rb.elements:
            pa.atom(e)
        for i, j, o in rb.bonds:
            pa.bond(base + i, base + j, o)
        pa.bond(remap[c], base + o3)
        atom_map = {k: remap[k] for k in keep}
        atom_map.update({n_a + k: base + k for k in range(len(rb.elements))})
        attachments = (t1, n_a + t2)
    elif template == "oxidation":
        c = ra.atom("C"); o = ra.atom("O")
        ra.bond(c, o)
        t1 = _linker(ra, c, distance); ra.graft(t1, r1)
        t2 = _linker(ra, c, distance); ra.graft(t2, r2)
        reactants = [ra]
        center_local = [c, o]
        dropped = set()
        pa.elements = list(ra.elements)
        pa.bonds = [(i, j, D if {i, j} == {c, o} else order) for i, j, order in ra.bonds]
        atom_map = {k: k for k in range(len(ra.elements))}
        attachments = (t1, t2)
    else:  # substitution
        c = ra.atom("C"); cl = ra.atom("Cl")
        ra.bond(c, cl)
        t1 = _linker(ra, c, distance); ra.graft(t1, r1)
        n = rb.atom("N")
        t2 = _linker(rb, n, distance); rb.graft(t2, r2)
        reactants = [ra, rb]
        n_a = len(ra.elements)
        center_local = [c, cl, n_a + n]
        dropped = {cl}
        keep = [k for k in range(n_a) if k != cl]
        remap = {old: new for new, old in enumerate(keep)}
        for k in keep:
            pa.atom(ra.elements[k])
        for i, j, o in ra.bonds:
            if i in remap and j in remap:
                pa.bond(remap[i], remap[j], o)
        base = len(pa.elements)
        for e in rb.elements:
            pa.atom(e)
        for i, j, o in rb.bonds:
            pa.bond(base + i, base + j, o)
        pa.bond(remap[c], base + n)
        atom_map = {k: remap[k] for k in keep}
        atom_map.update({n_a + k: base + k for k in range(len(rb.elements))})
        attachments = (t1, n_a + t2)

    if mutate:
        offsets, total = [], 0
        for b in reactants:
            offsets.append(total)
            total += len(b.elements)
        for rid_atom, element in mutate.items():
            for b, off in zip(reactants, offsets):
                if off <= rid_atom < off + len(b.elements):
                    b.elements[rid_atom - off] = element
            if rid_atom in atom_map:
                pa.elements[atom_map[rid_atom]] = element

    reaction = Reaction(rid, tuple(b.build() for b in reactants), (pa.build(),))
    return TemplateInstance(template, reaction, atom_map, frozenset(center_local), attachments, (r1, r2))


def random_substituent(rng: np.random.Generator, max_size: int = 6) -> MolecularGraph:
    size = int(rng.integers(1, max_size + 1))
    return generate_alkyl_tree(size, int(rng.integers(2**31)))


def generate_template_reactions(
    template: str,
    n: int,
    seed: int,
    distance: int = 2,
    max_substituent: int = 6,
    substituent_size: int | None = None,
) -> list[TemplateInstance]:
    """``n`` instances of ``template`` with random alkyl substituents.

    ``substituent_size=0`` yields the bare core every time.
    """
    rng = np.random.default_rng(seed)
    out = []
    for k in range(n):
        if substituent_size == 0:
            r1 = r2 = None
        elif substituent_size is not None:
            r1 = generate_alkyl_tree(substituent_size, int(rng.integers(2**31)))
            r2 = generate_alkyl_tree(substituent_size, int(rng.integers(2**31)))
        else:
            r1 = random_substituent(rng, max_substituent)
            r2 = random_substituent(rng, max_substituent)
        out.append(build_instance(template, r1, r2, distance, rid=f"{template}-{seed}-{k}"))
    return out


def generate_corpus(
    n: int,
    seed: int,
    templates: Sequence[str] = TEMPLATES,
    distance: int = 2,
    max_substituent: int = 6,
    unique_products: bool = False,
    exclude: set[tuple[str, ...]] | None = None,
    id_prefix: str = "r",
) -> list[TemplateInstance]:
    """``n`` reactions drawn from ``templates`` in a seeded order.

    With ``unique_products`` no two reactions share a product (up to
    isomorphism), and none has a product whose key is in ``exclude``.
    """
    from .evaluator import side_key

    rng = np.random.default_rng(seed)
    seen = set(exclude or ())
    out: list[TemplateInstance] = []
    attempts = 0
    while len(out) < n:
        attempts += 1
        if attempts > 100 * n + 1000:
            raise ValueError(f"could not draw {n} distinct products; widen max_substituent")
        t = templates[int(rng.integers(len(templates)))]
        inst = generate_template_reactions(t, 1, int(rng.integers(2**31)), distance, max_substituent)[0]
        r = inst.reaction
        if unique_products or exclude:
            key = side_key(r.products)
            if key in seen:
                continue
            if unique_products:
                seen.add(key)
        out.append(TemplateInstance(inst.template, Reaction(f"{id_prefix}{len(out)}", r.reactants, r.products),
                                    inst.atom_map, inst.center, inst.attachments, inst.substituents))
    return out


def random_molecule(n_atoms: int, rng: np.random.Generator, elements: Sequence[str] = ("C", "C", "C", "N", "O"),
                    p_double: float = 0.2, p_ring: float = 0.3) -> MolecularGraph:
    """A small random valence-respecting molecule (random tree plus an optional ring bond)."""
    from .smiles import VALENCES

    elems = [str(rng.choice(elements)) for _ in range(n_atoms)]
    cap = [max(VALENCES[e]) if e != "N" else 3 for e in elems]
    used = [0] * n_atoms
    bonds: dict[tuple[int, int], BondOrder] = {}

    def try_bond(i, j, order):
        v = int(order.valence)
        if used[i] + v <= cap[i] and used[j] + v <= cap[j] and (min(i, j), max(i, j)) not in bonds:
            bonds[(min(i, j), max(i, j))] = order
            used[i] += v
            used[j] += v
            return True
        return False

    for new in range(1, n_atoms):
        order = D if rng.random() < p_double else S
        candidates = [u for u in rng.permutation(new) if used[u] < cap[u]]
        for u in candidates:
            if try_bond(int(u), new, order) or try_bond(int(u), new, S):
                break
        else:
            # no free valence left; restart with carbons only
            return random_molecule(n_atoms, rng, ("C",), 0.0, p_ring)
    if n_atoms >= 3 and rng.random() < p_ring:
        i, j = (int(x) for x in rng.choice(n_atoms, 2, replace=False))
        try_bond(i, j, S)
    return _finish(elems, [(i, j, o) for (i, j), o in bonds.items()])


def corpus_hash(reactions: Sequence[Reaction]) -> str:
    h = hashlib.sha256()
    for r in reactions:
        for side in (r.reactants, r.products):
            h.update(".".join(to_smiles(m)[0] for m in side).encode())
            h.update(b"\t")
        h.update(b"\n")
    return h.hexdigest()
