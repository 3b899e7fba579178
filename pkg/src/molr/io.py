"""Dataset file formats: reaction TSV, SMILES lists, CSV helpers."""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError, MolrError
from .graph import Reaction
from .smiles import parse_reaction, to_smiles

REACTION_HEADER = ("id", "reactants", "product")


def reaction_line(reaction: Reaction) -> str:
    react = ".".join(to_smiles(m)[0] for m in reaction.reactants)
    prod = ".".join(to_smiles(m)[0] for m in reaction.products)
    return f"{reaction.id}\t{react}\t{prod}"


def write_reactions_tsv(reactions: Iterable[Reaction], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\t".join(REACTION_HEADER) + "\n")
        for r in reactions:
            fh.write(reaction_line(r) + "\n")


def read_reactions_tsv(path: str | Path) -> list[Reaction]:
    """Read a reaction TSV; the header line is optional. Errors carry the line number."""
    reactions = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            if lineno == 1 and tuple(c.strip() for c in line.rstrip("\n").split("\t")) == REACTION_HEADER:
                continue
            try:
                reactions.append(parse_reaction(line))
            except MolrError as err:
                raise DataError(str(err), path, lineno) from err
    return reactions


def read_lines(path: str | Path) -> list[str]:
    with open(path, encoding="utf-8") as fh:
        return [line.rstrip("\r\n") for line in fh]


def read_csv_rows(path: str | Path, required: Sequence[str]) -> list[dict]:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in required if c not in (reader.fieldnames or [])]
        if missing:
            raise DataError(f"missing column(s) {missing}", path, 1)
        return list(reader)


def fmt_float(x: float) -> str:
    """17 significant digits: a lossless float64 round trip."""
    return format(float(x), ".17g")


def write_sidecar(path: str | Path, meta: dict) -> Path:
    side = Path(str(path) + ".meta.json")
    side.write_text(json.dumps(meta, indent=2, sort_keys=True, default=_jsonable) + "\n")
    return side


def _jsonable(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"not JSON serializable: {type(x)}")
