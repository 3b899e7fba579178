import json
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from molr.errors import (
    EmptyInput,
    MalformedRecord,
    ParseError,
    UnexpectedCharacter,
    UnknownElement,
    UnmatchedParenthesis,
    UnmatchedRingClosure,
    ValenceExceeded,
)
from molr.graph import OTHER, BondOrder, permute_atoms
from molr.smiles import TokenKind, implicit_hydrogen_count, parse_molecule, parse_reaction, to_smiles, tokenize

GOLDEN = json.loads((Path(__file__).parent / "data" / "golden_parses.json").read_text())["cases"]
ORDER_CODE = {"s": BondOrder.SINGLE, "d": BondOrder.DOUBLE, "t": BondOrder.TRIPLE, "a": BondOrder.AROMATIC}


def test_golden_file_has_fifty_cases():
    assert len(GOLDEN) >= 50
    assert len({c["smiles"] for c in GOLDEN}) == len(GOLDEN)


@pytest.mark.parametrize("case", GOLDEN, ids=[c["smiles"] for c in GOLDEN])
def test_golden_parse(case):
    g = parse_molecule(case["smiles"])
    atoms = [[a.element, a.charge, int(a.aromatic), a.hydrogen_count] for a in g.atoms]
    assert atoms == case["atoms"]
    expected = set()
    for b in case["bonds"]:
        ends, code = b.split(":")
        i, j = map(int, ends.split("-"))
        expected.add((i, j, ORDER_CODE[code]))
    assert {(b.i, b.j, b.order) for b in g.bonds} == expected
    assert g.stereo_markers == case.get("stereo", 0)


# ---------------------------------------------------------------- tokenizer

def kinds(s):
    return [(t.kind, t.text) for t in tokenize(s)]


def test_tokenize_simple_chain():
    assert kinds("CCO") == [(TokenKind.BARE_ATOM, "C"), (TokenKind.BARE_ATOM, "C"), (TokenKind.BARE_ATOM, "O")]


def test_tokenize_branch_and_two_letter_element():
    assert kinds("C(Cl)=O") == [
        (TokenKind.BARE_ATOM, "C"),
        (TokenKind.OPEN_BRANCH, "("),
        (TokenKind.BARE_ATOM, "Cl"),
        (TokenKind.CLOSE_BRANCH, ")"),
        (TokenKind.BOND, "="),
        (TokenKind.BARE_ATOM, "O"),
    ]


def test_tokenize_percent_ring_closure():
    toks = tokenize("C%12CC%12")
    rings = [t for t in toks if t.kind is TokenKind.RING_CLOSURE]
    assert [t.ring_index for t in rings] == [12, 12]
    assert [t.text for t in rings] == ["%12", "%12"]


@pytest.mark.parametrize("s", ["CC(=O)OCC", "c1ccc2ccccc2c1", "[13CH4].[Na+]", "C%10CC%10", "F/C=C\\F", "N[C@@H](C)C(=O)O"])
def test_tokens_reassemble_normalized_input(s):
    toks = tokenize(s)
    positions = [t.position for t in toks]
    assert positions == sorted(set(positions))
    for t in toks:
        assert s[t.position:t.position + len(t.text)] == t.text
    normalized = s.replace("/", "").replace("\\", "").replace("@", "")
    assert "".join(t.text for t in toks).replace("@", "") == normalized


@pytest.mark.parametrize("s,pos", [("CC$C", 2), ("C C", 1), ("Cx", 1), ("[C", 0)])
def test_unexpected_character_reports_position(s, pos):
    with pytest.raises(UnexpectedCharacter) as info:
        tokenize(s)
    assert info.value.position == pos


# ---------------------------------------------------------------- hydrogens

def test_implicit_h_examples():
    assert implicit_hydrogen_count("C", 0, False, None, [1, 1]) == 2
    assert implicit_hydrogen_count("c", 0, False, None, [1.5, 1.5]) == 1
    assert implicit_hydrogen_count("n", 0, True, 1, [1.5, 1.5]) == 1
    assert implicit_hydrogen_count("N", 0, False, None, [2, 2]) == 1  # ceil(4)=4 -> valence 5
    assert implicit_hydrogen_count("F", 0, False, None, [1, 1]) == 0  # nothing fits


def test_implicit_h_unknown_bare_element():
    with pytest.raises(UnknownElement):
        implicit_hydrogen_count("Xe")


@pytest.mark.parametrize("element", ["B", "C", "N", "O", "P", "S", "F", "Cl", "Br", "I"])
def test_implicit_h_monotone_in_bond_sum(element):
    sums = [x / 2 for x in range(0, 13)]
    counts = [implicit_hydrogen_count(element, incident_orders=[s]) for s in sums]
    # v jumps between standard valences; within each valence branch the count never rises
    per_valence = {}
    for s, c in zip(sums, counts):
        assert c >= 0
        per_valence.setdefault(c + int(-(-s // 1)), []).append(c)
    for cs in per_valence.values():
        assert cs == sorted(cs, reverse=True)


# ---------------------------------------------------------------- parse errors

@pytest.mark.parametrize("s,err", [
    ("C1CC", UnmatchedRingClosure),
    ("C(C", UnmatchedParenthesis),
    ("CC)", UnmatchedParenthesis),
    ("C(=O)(=O)=O", ValenceExceeded),
    ("FF=C", ValenceExceeded),
    ("", EmptyInput),
    ("Xe", UnexpectedCharacter),
])
def test_parse_errors(s, err):
    with pytest.raises(err):
        parse_molecule(s)


def test_parse_errors_are_value_errors():
    with pytest.raises(ValueError):
        parse_molecule("C1CC")
    assert issubclass(ParseError, ValueError)


def test_ring_closure_never_self_loops():
    with pytest.raises(ParseError):
        parse_molecule("C11")


def test_parse_is_pure():
    assert parse_molecule("CC(=O)Oc1ccccc1C(=O)O") == parse_molecule("CC(=O)Oc1ccccc1C(=O)O")


def test_dot_yields_components():
    g = parse_molecule("CCO.c1ccccc1.[Na+]")
    assert len(g.components()) == 3


def test_unknown_bracket_element_maps_to_other():
    g = parse_molecule("[Si](C)(C)(C)C")
    assert g.atoms[0].element == OTHER


# ---------------------------------------------------------------- reactions

def test_parse_reaction_esterification():
    r = parse_reaction("0\tCC(=O)O.OCC\tCC(=O)OCC")
    assert r.id == "0" and len(r.reactants) == 2 and len(r.products) == 1


def test_parse_reaction_identity():
    r = parse_reaction("1\tC\tC")
    assert r.reactants == r.products


@pytest.mark.parametrize("line", ["0\tCC", "0\tCC\tCC\tCC", "0\t\tCC"])
def test_parse_reaction_malformed(line):
    with pytest.raises(MalformedRecord):
        parse_reaction(line)


def test_parse_reaction_names_field():
    with pytest.raises(ParseError, match="product"):
        parse_reaction("0\tCC\tC1C")


# ---------------------------------------------------------------- writer round trip

@pytest.mark.parametrize("case", GOLDEN, ids=[c["smiles"] for c in GOLDEN])
def test_writer_round_trip(case):
    g = parse_molecule(case["smiles"])
    text, order = to_smiles(g)
    perm = [0] * g.n_atoms
    for k, old in enumerate(order):
        perm[old] = k
    again = parse_molecule(text)
    assert again == permute_atoms(g, perm)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 14), st.integers(0, 2**31 - 1))
def test_random_molecule_round_trip(n, seed):
    import numpy as np

    from molr.datagen import random_molecule

    g = random_molecule(n, np.random.default_rng(seed))
    text, order = to_smiles(g)
    perm = [0] * g.n_atoms
    for k, old in enumerate(order):
        perm[old] = k
    assert parse_molecule(text) == permute_atoms(g, perm)
    assert g.n_atoms == sum(1 for t in tokenize(text) if t.kind in (TokenKind.BARE_ATOM, TokenKind.BRACKET_ATOM))
