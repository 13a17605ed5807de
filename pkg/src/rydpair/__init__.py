"""Interacting Rydberg-EIT photon pairs: effective pair potential, metastable
bound-state spectra, and split-step time evolution."""

from .model import (
    SPEED_OF_LIGHT,
    EffectiveProblem,
    NormalizedPoint,
    PolaritonParams,
    blockade_radius,
    effective_mass_energy,
    effective_potential,
    pair_potential_real,
    repulsive_core_predicate,
)

__all__ = [
    "SPEED_OF_LIGHT",
    "EffectiveProblem",
    "NormalizedPoint",
    "PolaritonParams",
    "blockade_radius",
    "effective_mass_energy",
    "effective_potential",
    "pair_potential_real",
    "repulsive_core_predicate",
]
