"""Synthetic structure generators for desk-scale training and testing."""

from __future__ import annotations

import itertools

import numpy as np

from .lattice import CrystalStructure, Lattice, wrap_pi

__all__ = ["make_cubic_rocksalt_dataset", "rocksalt_structure", "cubic_structure"]

_HALF_GRID = np.array(list(itertools.product((0.0, 0.5), repeat=3)))


def cubic_structure(a: float, element: int, jitter: np.ndarray | None = None) -> CrystalStructure:
    """Single atom on a simple-cubic lattice of parameter ``a``."""
    coords = np.zeros((1, 3))
    if jitter is not None:
        coords = wrap_pi(coords + jitter)
    return CrystalStructure(Lattice.from_parameters(a, a, a, 90, 90, 90),
                            coords, np.array([element]))


def rocksalt_structure(a: float, element_a: int, element_b: int,
                       jitter: np.ndarray | None = None) -> CrystalStructure:
    """Conventional 8-atom rock-salt cell: atoms on the half-integer grid,
    species alternating with site parity."""
    coords = _HALF_GRID.copy()
    parity = (coords.sum(axis=1) * 2).astype(int) % 2
    numbers = np.where(parity == 0, element_a, element_b)
    if jitter is not None:
        coords = wrap_pi(coords + jitter)
    return CrystalStructure(Lattice.from_parameters(a, a, a, 90, 90, 90),
                            coords, numbers)


def make_cubic_rocksalt_dataset(
    n_structures: int,
    seed: int = 0,
    elements: tuple[int, int] = (11, 17),
    rocksalt_fraction: float = 0.5,
    cubic_length: float = 3.0,
    rocksalt_length: float = 5.6,
    length_jitter: float = 0.05,
    coord_jitter: float = 0.01,
) -> list[CrystalStructure]:
    """Randomly perturbed cubic and rock-salt structures over two species.

    Each sample is either a 1-atom simple-cubic cell (random species) or
    an 8-atom rock-salt cell (random species-to-sublattice assignment).
    Lattice lengths are scaled by U(1 - length_jitter, 1 + length_jitter)
    and fractional coordinates receive Gaussian jitter of scale
    ``coord_jitter`` before wrapping.
    """
    if n_structures < 1:
        raise ValueError("n_structures must be positive")
    e1, e2 = elements
    rng = np.random.default_rng(seed)
    structures = []
    for _ in range(n_structures):
        scale = 1.0 + rng.uniform(-length_jitter, length_jitter)
        if rng.random() < rocksalt_fraction:
            a, b = (e1, e2) if rng.random() < 0.5 else (e2, e1)
            jitter = rng.normal(0.0, coord_jitter, size=(8, 3))
            structures.append(rocksalt_structure(rocksalt_length * scale, a, b, jitter))
        else:
            element = e1 if rng.random() < 0.5 else e2
            jitter = rng.normal(0.0, coord_jitter, size=(1, 3))
            structures.append(cubic_structure(cubic_length * scale, element, jitter))
    return structures
