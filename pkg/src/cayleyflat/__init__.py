"""Cayley-table completion by flatness-regularized operator-valued tensor factorization."""
from . import algebra, baseline, engine, model, numerics
from .algebra import CayleyTable, Isotopy, cyclic_group, dihedral_group, direct_product
from .engine import TrainConfig, decode, evaluate, landscape_probe, train
from .model import FactorParams, ObservationSet, flatness, regular_representation

__version__ = "0.1.0"
