"""Molecule embeddings that respect reaction equivalence: sum(reactants) = sum(products)."""

from ._kernels import BACKEND
from .encoders import EncoderConfig, encode_molecule, encode_molecules, encode_side
from .errors import MolrError
from .graph import Atom, Bond, BondOrder, MolecularGraph, Reaction
from .smiles import parse_molecule, parse_reaction, to_smiles
from .trainer import ModelCheckpoint, TrainConfig, load_checkpoint, save_checkpoint, train

__version__ = "0.1.0"

__all__ = [
    "Atom", "BACKEND", "Bond", "BondOrder", "EncoderConfig", "ModelCheckpoint", "MolecularGraph", "MolrError",
    "Reaction", "TrainConfig", "encode_molecule", "encode_molecules", "encode_side", "load_checkpoint",
    "parse_molecule", "parse_reaction", "save_checkpoint", "to_smiles", "train",
]
