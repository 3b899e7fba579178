"""SMILES subset parser with implicit-hydrogen inference, plus a writer.

Supported grammar: bare atoms ``B C N O P S F Cl Br I`` and aromatic
``b c n o p s``; bracket atoms ``[isotope? symbol chirality? Hn? charge? class?]``
(isotope, chirality and atom class are read and discarded); bonds ``- = # :``;
branches; ring closures ``1-9`` and ``%nn``; dots. Stereo bond markers ``/``
and ``\\`` are stripped and counted on the resulting graph.
"""

from __future__ import annotations

import enum
import math
import re
import sys
from typing import NamedTuple, Sequence

from .errors import (
    EmptyInput,
    MalformedRecord,
    ParseError,
    UnexpectedCharacter,
    UnknownElement,
    UnmatchedParenthesis,
    UnmatchedRingClosure,
    ValenceExceeded,
)
from .graph import OTHER, Atom, Bond, BondOrder, MolecularGraph, Reaction

VALENCES: dict[str, tuple[int, ...]] = {
    "B": (3,),
    "C": (4,),
    "N": (3, 5),
    "O": (2,),
    "P": (3, 5),
    "S": (2, 4, 6),
    "F": (1,),
    "Cl": (1,),
    "Br": (1,),
    "I": (1,),
}
AROMATIC_BARE = {"b": "B", "c": "C", "n": "N", "o": "O", "p": "P", "s": "S"}
AROMATIC_BRACKET = {**AROMATIC_BARE, "se": "Se", "as": "As", "te": "Te"}

BOND_SYMBOLS = {
    "-": BondOrder.SINGLE,
    "=": BondOrder.DOUBLE,
    "#": BondOrder.TRIPLE,
    ":": BondOrder.AROMATIC,
}
_SYMBOL_OF = {v: k for k, v in BOND_SYMBOLS.items()}


class TokenKind(enum.Enum):
    BARE_ATOM = "BareAtom"
    BRACKET_ATOM = "BracketAtom"
    BOND = "BondSymbol"
    OPEN_BRANCH = "OpenBranch"
    CLOSE_BRANCH = "CloseBranch"
    RING_CLOSURE = "RingClosure"
    DOT = "Dot"


class Token(NamedTuple):
    kind: TokenKind
    text: str
    position: int

    @property
    def ring_index(self) -> int:
        return int(self.text.lstrip("%"))


_STEREO_BONDS = "/\\"
_BRACKET_RE = re.compile(
    r"""^\[
    (?P<isotope>\d+)?
    (?P<symbol>\*|[A-Z][a-z]?|se|as|te|[bcnops])
    (?P<chiral>@@?(?:TH[12]|AL[12]|SP[1-3]|TB\d\d?|OH\d\d?)?)?
    (?P<hcount>H\d?)?
    (?P<charge>\+\d*|-\d*|\+\++|--+)?
    (?::\d+)?
    \]$""",
    re.VERBOSE,
)


def _scan(smiles: str) -> tuple[list[Token], int]:
    tokens: list[Token] = []
    stereo = 0
    i, n = 0, len(smiles)
    while i < n:
        c = smiles[i]
        if not c.isascii():
            raise UnexpectedCharacter(f"unexpected character {c!r}", i)
        if smiles.startswith(("Cl", "Br"), i):
            tokens.append(Token(TokenKind.BARE_ATOM, smiles[i:i + 2], i))
            i += 2
        elif c in "BCNOPSFI*" or c in AROMATIC_BARE:
            tokens.append(Token(TokenKind.BARE_ATOM, c, i))
            i += 1
        elif c == "[":
            j = smiles.find("]", i)
            if j < 0:
                raise UnexpectedCharacter("unterminated bracket atom", i)
            tokens.append(Token(TokenKind.BRACKET_ATOM, smiles[i:j + 1], i))
            i = j + 1
        elif c in BOND_SYMBOLS:
            tokens.append(Token(TokenKind.BOND, c, i))
            i += 1
        elif c in _STEREO_BONDS:
            stereo += 1
            i += 1
        elif c == "(":
            tokens.append(Token(TokenKind.OPEN_BRANCH, c, i))
            i += 1
        elif c == ")":
            tokens.append(Token(TokenKind.CLOSE_BRANCH, c, i))
            i += 1
        elif c.isdigit():
            tokens.append(Token(TokenKind.RING_CLOSURE, c, i))
            i += 1
        elif c == "%":
            if not smiles[i + 1:i + 3].isdigit() or len(smiles[i + 1:i + 3]) != 2:
                raise UnexpectedCharacter("'%' must be followed by two digits", i)
            tokens.append(Token(TokenKind.RING_CLOSURE, smiles[i:i + 3], i))
            i += 3
        elif c == ".":
            tokens.append(Token(TokenKind.DOT, c, i))
            i += 1
        else:
            raise UnexpectedCharacter(f"unexpected character {c!r}", i)
    return tokens, stereo


def tokenize(smiles: str) -> list[Token]:
    """Split ``smiles`` into tokens; ``/`` and ``\\`` produce no token."""
    if not smiles:
        raise EmptyInput("empty SMILES")
    return _scan(smiles)[0]


def implicit_hydrogen_count(
    element: str,
    charge: int = 0,
    bracketed: bool = False,
    explicit_h: int | None = None,
    incident_orders: Sequence[float] = (),
) -> int:
    """Hydrogens attached to an atom.

    Bracket atoms carry their count explicitly. For bare atoms the count is
    ``v - ceil(S)`` where ``S`` sums the incident bond orders (aromatic = 1.5)
    and ``v`` is the smallest standard valence not below ``ceil(S)``; zero
    when no such valence exists.
    """
    if bracketed:
        return int(explicit_h or 0)
    symbol = AROMATIC_BARE.get(element, element)
    if symbol not in VALENCES:
        raise UnknownElement(f"no standard valence for element {element!r}")
    need = math.ceil(sum(incident_orders))
    for v in VALENCES[symbol]:
        if v >= need:
            return v - need
    return 0


class _AtomSpec(NamedTuple):
    element: str
    aromatic: bool
    bracketed: bool
    charge: int
    explicit_h: int | None


def _parse_bracket(tok: Token) -> tuple[_AtomSpec, int]:
    m = _BRACKET_RE.match(tok.text)
    if m is None:
        raise UnexpectedCharacter(f"unsupported bracket atom {tok.text!r}", tok.position)
    symbol = m.group("symbol")
    aromatic = symbol in AROMATIC_BRACKET
    element = AROMATIC_BRACKET.get(symbol, symbol)
    if element not in VALENCES:
        element = OTHER
    hcount = m.group("hcount")
    explicit_h = (int(hcount[1:]) if len(hcount) > 1 else 1) if hcount else 0
    charge_text = m.group("charge") or ""
    if not charge_text:
        charge = 0
    elif charge_text[1:].isdigit():
        charge = int(charge_text[1:]) * (1 if charge_text[0] == "+" else -1)
    else:
        charge = len(charge_text) * (1 if charge_text[0] == "+" else -1)
    stereo = 1 if m.group("chiral") else 0
    return _AtomSpec(element, aromatic, True, charge, explicit_h), stereo


def _parse_bare(tok: Token) -> _AtomSpec:
    if tok.text == "*":
        return _AtomSpec(OTHER, False, False, 0, 0)
    if tok.text in AROMATIC_BARE:
        return _AtomSpec(AROMATIC_BARE[tok.text], True, False, 0, None)
    return _AtomSpec(tok.text, False, False, 0, None)


def parse_molecule(smiles: str) -> MolecularGraph:
    """Parse ``smiles`` into a graph with one node per heavy-atom token."""
    if not smiles or not smiles.strip():
        raise EmptyInput("empty SMILES")
    smiles = smiles.strip()
    tokens, stereo = _scan(smiles)

    specs: list[_AtomSpec] = []
    bonds: dict[tuple[int, int], BondOrder] = {}
    prev: int | None = None
    pending: Token | None = None
    branches: list[tuple[int, int]] = []
    rings: dict[int, tuple[int, Token | None, int]] = {}
    last_kind: TokenKind | None = None

    def add_bond(a: int, b: int, symbol: Token | None, position: int) -> None:
        if a == b:
            raise UnmatchedRingClosure("ring closure bonds an atom to itself", position)
        key = (a, b) if a < b else (b, a)
        if key in bonds:
            raise UnmatchedRingClosure("ring closure duplicates an existing bond", position)
        if symbol is not None:
            order = BOND_SYMBOLS[symbol.text]
        elif specs[a].aromatic and specs[b].aromatic:
            order = BondOrder.AROMATIC
        else:
            order = BondOrder.SINGLE
        bonds[key] = order

    for tok in tokens:
        kind = tok.kind
        if kind in (TokenKind.BARE_ATOM, TokenKind.BRACKET_ATOM):
            if kind is TokenKind.BRACKET_ATOM:
                spec, chiral = _parse_bracket(tok)
                stereo += chiral
            else:
                spec = _parse_bare(tok)
            specs.append(spec)
            new = len(specs) - 1
            if prev is not None:
                add_bond(prev, new, pending, tok.position)
            elif pending is not None:
                raise ParseError("bond symbol without a preceding atom", pending.position)
            pending = None
            prev = new
        elif kind is TokenKind.BOND:
            if prev is None or pending is not None:
                raise ParseError(f"misplaced bond symbol {tok.text!r}", tok.position)
            pending = tok
        elif kind is TokenKind.OPEN_BRANCH:
            if prev is None or pending is not None:
                raise UnmatchedParenthesis("branch opened without a preceding atom", tok.position)
            branches.append((prev, tok.position))
        elif kind is TokenKind.CLOSE_BRANCH:
            if not branches:
                raise UnmatchedParenthesis("unmatched ')'", tok.position)
            if pending is not None or last_kind is TokenKind.OPEN_BRANCH:
                raise ParseError("empty branch or dangling bond", tok.position)
            prev = branches.pop()[0]
        elif kind is TokenKind.RING_CLOSURE:
            if prev is None:
                raise UnmatchedRingClosure("ring closure without a preceding atom", tok.position)
            idx = tok.ring_index
            if idx in rings:
                other, other_bond, _ = rings.pop(idx)
                if pending is not None and other_bond is not None and pending.text != other_bond.text:
                    raise UnmatchedRingClosure(f"conflicting bond symbols on ring {idx}", tok.position)
                add_bond(other, prev, pending or other_bond, tok.position)
            else:
                rings[idx] = (prev, pending, tok.position)
            pending = None
        else:  # DOT
            if prev is None or pending is not None:
                raise ParseError("misplaced '.'", tok.position)
            prev = None
        last_kind = kind

    if rings:
        pos = min(p for _, _, p in rings.values())
        raise UnmatchedRingClosure(f"unclosed ring bond(s) {sorted(rings)}", pos)
    if branches:
        raise UnmatchedParenthesis("unclosed '('", branches[-1][1])
    if pending is not None:
        raise ParseError("dangling bond symbol", pending.position)
    if prev is None:
        raise ParseError("trailing '.'", len(smiles) - 1)

    incident: list[list[BondOrder]] = [[] for _ in specs]
    for (a, b), order in bonds.items():
        incident[a].append(order)
        incident[b].append(order)

    atoms = []
    for idx, spec in enumerate(specs):
        orders = [o.valence for o in incident[idx]]
        if spec.bracketed or spec.element == OTHER:
            h = int(spec.explicit_h or 0)
        else:
            # aromatic bonds count 1 here so fused aromatic atoms stay legal
            lower = sum(1.0 if o is BondOrder.AROMATIC else o.valence for o in incident[idx])
            if lower > max(VALENCES[spec.element]):
                raise ValenceExceeded(
                    f"atom {idx} ({spec.element}) has bond-order sum {lower:g}", None)
            h = implicit_hydrogen_count(spec.element, 0, False, None, orders)
        atoms.append(Atom(spec.element, spec.charge, spec.aromatic, h))
    return MolecularGraph(tuple(atoms), tuple(Bond(a, b, o) for (a, b), o in bonds.items()), stereo)


def parse_reaction(line: str) -> Reaction:
    """Parse one ``id<TAB>reactants<TAB>products`` record."""
    cols = line.rstrip("\r\n").split("\t")
    if len(cols) != 3:
        raise MalformedRecord(f"expected 3 tab-separated columns, found {len(cols)}")
    rid, react, prod = (c.strip() for c in cols)
    sides = []
    for name, text in (("reactants", react), ("product", prod)):
        if not text:
            raise MalformedRecord(f"empty {name} column")
        mols = []
        for part in text.split("."):
            try:
                mols.append(parse_molecule(part))
            except ParseError as err:
                err.field = name
                err.args = (f"{name}: {err.args[0]}",)
                raise
        sides.append(tuple(mols))
    return Reaction(rid, sides[0], sides[1])


# --------------------------------------------------------------------------
# writer

def _atom_text(graph: MolecularGraph, idx: int) -> str:
    atom = graph.atoms[idx]
    symbol = atom.element
    if atom.element == OTHER:
        symbol = "*"
    elif atom.aromatic:
        symbol = symbol.lower()
    bare_ok = (
        atom.element in VALENCES
        and atom.charge == 0
        and (not atom.aromatic or symbol in AROMATIC_BARE)
    )
    if bare_ok:
        orders = [graph.bond_order(idx, j).valence for j in graph.neighbors[idx]]
        lower = sum(1.0 if graph.bond_order(idx, j) is BondOrder.AROMATIC else graph.bond_order(idx, j).valence
                    for j in graph.neighbors[idx])
        if lower <= max(VALENCES[atom.element]) and \
                implicit_hydrogen_count(atom.element, 0, False, None, orders) == atom.hydrogen_count:
            return symbol
    text = "[" + symbol
    if atom.hydrogen_count:
        text += "H" if atom.hydrogen_count == 1 else f"H{atom.hydrogen_count}"
    if atom.charge:
        text += ("+" if atom.charge > 0 else "-") + (str(abs(atom.charge)) if abs(atom.charge) > 1 else "")
    return text + "]"


def _bond_text(graph: MolecularGraph, a: int, b: int) -> str:
    order = graph.bond_order(a, b)
    both_aromatic = graph.atoms[a].aromatic and graph.atoms[b].aromatic
    if order is BondOrder.SINGLE:
        return "-" if both_aromatic else ""
    if order is BondOrder.AROMATIC:
        return "" if both_aromatic else ":"
    return _SYMBOL_OF[order]


def to_smiles(graph: MolecularGraph) -> tuple[str, list[int]]:
    """Write a (non-canonical) SMILES string for ``graph``.

    Returns the string and the emission order: parsing the string yields
    ``permute_atoms(graph, perm)`` where ``perm[order[k]] = k``.
    """
    n = graph.n_atoms
    seen = [False] * n
    children: list[list[int]] = [[] for _ in range(n)]
    ring_partners: list[list[int]] = [[] for _ in range(n)]
    roots = []
    for start in range(n):
        if seen[start]:
            continue
        roots.append(start)
        seen[start] = True
        stack = [(start, -1, iter(graph.neighbors[start]))]
        on_stack = {start}
        while stack:
            u, parent, it = stack[-1]
            advanced = False
            for v in it:
                if v == parent:
                    continue
                if not seen[v]:
                    seen[v] = True
                    children[u].append(v)
                    stack.append((v, u, iter(graph.neighbors[v])))
                    on_stack.add(v)
                    advanced = True
                    break
                if v in on_stack and v not in children[u]:
                    # back edge to an ancestor; record once from the descendant
                    ring_partners[u].append(v)
                    ring_partners[v].append(u)
            if not advanced:
                stack.pop()
                on_stack.discard(u)

    order: list[int] = []
    pieces: list[str] = []
    open_rings: dict[tuple[int, int], int] = {}
    free: list[int] = []
    next_num = [1]

    def ring_label(num: int) -> str:
        return str(num) if num < 10 else f"%{num:02d}"

    def take_number() -> int:
        if free:
            free.sort()
            return free.pop(0)
        num = next_num[0]
        next_num[0] += 1
        return num

    def emit(u: int) -> None:
        order.append(u)
        pieces.append(_atom_text(graph, u))
        emitted = set(order)
        for v in ring_partners[u]:
            key = (min(u, v), max(u, v))
            if v in emitted and key in open_rings:
                num = open_rings.pop(key)
                pieces.append(_bond_text(graph, u, v) + ring_label(num))
                free.append(num)
            elif v not in emitted:
                num = take_number()
                open_rings[key] = num
                pieces.append(ring_label(num))
        kids = children[u]
        for k, v in enumerate(kids):
            last = k == len(kids) - 1
            if not last:
                pieces.append("(")
            pieces.append(_bond_text(graph, u, v))
            emit(v)
            if not last:
                pieces.append(")")

    if n + 100 > sys.getrecursionlimit():
        sys.setrecursionlimit(n + 100)
    for k, root in enumerate(roots):
        if k:
            pieces.append(".")
        emit(root)
    return "".join(pieces), order
