"""Evaluation suite: tolerance-based structure matching, structural and
compositional validity, fingerprint coverage, and Wasserstein property
statistics.

The matcher is a deterministic simplification of the usual
crystallographic matching tools: both cells are Niggli-reduced (no
primitive-cell search), cell parameters are compared under relative
length and absolute angle tolerances, and the site correspondence is a
minimum-cost assignment under minimum-image distances, searched over the
rigid translations that align the candidate's first rarest-species atom
onto each base atom of that species.  For lattices with point-group
symmetry the reduced bases of base and candidate may differ by a lattice
rotation that the matcher does not search; symmetric motifs (e.g. cubic
family structures) absorb this into the translation search.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, fields

import numpy as np
from scipy.optimize import linear_sum_assignment

from .elements import AMU_TO_GRAM, mass_for, oxidation_states_for
from .errors import DataError
from .lattice import (
    CrystalStructure,
    min_image_distance_matrix,
    niggli_reduce_with_transform,
    wrap_pi,
)

__all__ = [
    "MatchCriteria",
    "CoverageThresholds",
    "MetricsReport",
    "structure_match",
    "match_rate_and_rms",
    "validity",
    "coverage",
    "wasserstein_1d",
    "density",
    "n_elements",
    "ground_state_compare",
    "evaluate_reconstruction",
    "evaluate_generation",
    "evaluate_ground_state",
]

MIN_INTERATOMIC_DISTANCE = 0.5  # Angstrom; structural validity threshold


@dataclass(frozen=True)
class MatchCriteria:
    """Structure-matcher tolerances: site (fraction of the free length per
    atom), lattice angles (degrees), lattice lengths (relative)."""

    stol: float = 0.5
    angle_tol: float = 10.0
    ltol: float = 0.3

    def __post_init__(self):
        if min(self.stol, self.angle_tol, self.ltol) <= 0:
            raise ValueError("matcher tolerances must be positive")


@dataclass(frozen=True)
class CoverageThresholds:
    """Fingerprint distance cutoffs for the coverage metrics."""

    struct_threshold: float = 1.0
    comp_threshold: float = 0.1


@dataclass
class MetricsReport:
    """Flat bundle of every evaluation metric; unpopulated entries stay
    None and serialize to JSON null."""

    match_rate: float | None = None
    mean_delta_rms: float | None = None
    validity_struct: float | None = None
    validity_comp: float | None = None
    cov_r: float | None = None
    cov_p: float | None = None
    wasserstein_rho: float | None = None
    wasserstein_nelem: float | None = None
    delta_v_rms: float | None = None
    delta_e_rms: float | None = None

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def _reduced_frame(structure: CrystalStructure):
    reduced, transform = niggli_reduce_with_transform(structure.lattice)
    coords = wrap_pi(structure.frac_coords @ np.linalg.inv(transform))
    return reduced, coords


def _species_blocks(numbers: np.ndarray) -> dict[int, np.ndarray]:
    return {int(z): np.flatnonzero(numbers == z) for z in np.unique(numbers)}


def _site_distances(lattice, base_coords, cand_coords, blocks_b, blocks_c):
    """Per-species optimal assignment distances between two coordinate
    sets sharing a composition, in the given (reduced) lattice."""
    dists = []
    for z, idx_b in blocks_b.items():
        idx_c = blocks_c[z]
        cost = min_image_distance_matrix(lattice, base_coords[idx_b],
                                         cand_coords[idx_c])
        row, col = linear_sum_assignment(cost ** 2)
        dists.append(cost[row, col])
    return np.concatenate(dists)


def structure_match(base: CrystalStructure, candidate: CrystalStructure,
                    criteria: MatchCriteria = MatchCriteria()) -> float | None:
    """Match ``candidate`` against ``base``; returns the normalized RMS
    site distance on success, None on mismatch.

    Site distances are evaluated with minimum-image displacements in the
    base's reduced cell and normalized by (V / N)^(1/3); a match requires
    identical compositions, reduced cell parameters within tolerance, and
    a correspondence whose largest normalized site distance is at most
    ``stol``.
    """
    if Counter(base.atomic_numbers.tolist()) != Counter(candidate.atomic_numbers.tolist()):
        return None

    red_b, coords_b = _reduced_frame(base)
    red_c, coords_c = _reduced_frame(candidate)

    lengths_b = np.array(red_b.lengths)
    lengths_c = np.array(red_c.lengths)
    if np.any(np.abs(lengths_c - lengths_b) > criteria.ltol * lengths_b):
        return None
    if np.any(np.abs(np.array(red_c.angles) - np.array(red_b.angles))
              > criteria.angle_tol):
        return None

    n = base.n_atoms
    scale = (red_b.volume / n) ** (1.0 / 3.0)
    blocks_b = _species_blocks(base.atomic_numbers)
    blocks_c = _species_blocks(candidate.atomic_numbers)
    rarest = min(blocks_b, key=lambda z: (len(blocks_b[z]), z))
    anchor_c = coords_c[blocks_c[rarest][0]]

    best = None
    for b_idx in blocks_b[rarest]:
        shift = coords_b[b_idx] - anchor_c
        shifted = wrap_pi(coords_c + shift)
        dists = _site_distances(red_b, coords_b, shifted, blocks_b, blocks_c)
        if dists.max() <= criteria.stol * scale:
            rms = float(np.sqrt(np.mean(dists ** 2)) / scale)
            best = rms if best is None else min(best, rms)
    return best


def match_rate_and_rms(pairs, criteria: MatchCriteria = MatchCriteria()):
    """Match rate (%) and mean normalized RMS distance over the matched
    pairs of a (base, candidate) list; the mean is None when nothing
    matches."""
    pairs = list(pairs)
    if not pairs:
        raise ValueError("need at least one (base, candidate) pair")
    deltas = [structure_match(b, c, criteria) for b, c in pairs]
    matched = [d for d in deltas if d is not None]
    rate = 100.0 * len(matched) / len(pairs)
    return rate, (float(np.mean(matched)) if matched else None)


def _shortest_interatomic(structure: CrystalStructure) -> float:
    reduced, coords = _reduced_frame(structure)
    # Nearest self-image: the shortest basis vector of the reduced cell.
    shortest = reduced.a
    if structure.n_atoms > 1:
        dmat = min_image_distance_matrix(reduced, coords, coords)
        iu = np.triu_indices(structure.n_atoms, k=1)
        shortest = min(shortest, float(dmat[iu].min()))
    return float(shortest)


def _neutral_assignment_exists(counts: dict[int, int]) -> bool | None:
    """Whether one oxidation state per element can cancel the total charge;
    None when some element has no tabulated states."""
    achievable = {0}
    for z, count in counts.items():
        states = oxidation_states_for(z)
        if not states:
            return None
        achievable = {s + count * st for s in achievable for st in states}
        if not achievable:
            return False
    return 0 in achievable


def validity(structure: CrystalStructure) -> tuple[bool, bool]:
    """Structural validity (all interatomic distances above 0.5 Angstrom)
    and compositional validity (a charge-neutral assignment of common
    oxidation states exists; elemental structures pass by convention).

    Elements without tabulated oxidation states make the neutrality
    search undecidable; such compositions are reported invalid.
    """
    struct_valid = _shortest_interatomic(structure) > MIN_INTERATOMIC_DISTANCE
    counts = Counter(structure.atomic_numbers.tolist())
    if len(counts) == 1:
        comp_valid = True
    else:
        comp_valid = bool(_neutral_assignment_exists(counts))
    return struct_valid, comp_valid


def composition_fingerprint(structure: CrystalStructure) -> np.ndarray:
    """Element-fraction vector over the full atomic-number range."""
    fp = np.zeros(118)
    for z, count in Counter(structure.atomic_numbers.tolist()).items():
        fp[z - 1] = count / structure.n_atoms
    return fp


def rdf_fingerprint(structure: CrystalStructure, r_max: float = 10.0,
                    n_bins: int = 100, smear: float = 0.15) -> np.ndarray:
    """Gaussian-smeared radial distribution function, normalized by the
    ideal-gas pair density so the fingerprint is supercell-invariant."""
    reduced, coords = _reduced_frame(structure)
    n = structure.n_atoms
    lat = reduced.matrix
    heights = reduced.plane_heights()
    reach = r_max + 4.0 * smear
    n_img = np.ceil(reach / heights).astype(int) + 1
    axes = [np.arange(-k, k + 1) for k in n_img]
    shifts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)

    dfrac = coords[:, None, None, :] - coords[None, :, None, :] + shifts[None, None, :, :]
    dist = np.linalg.norm(dfrac @ lat, axis=-1).reshape(-1)
    dist = dist[(dist > 1e-8) & (dist < reach)]

    edges = np.linspace(0.0, r_max, n_bins + 1)
    centers = 0.5 * (edges[:-1] + edges[1:])
    width = edges[1] - edges[0]
    kernel = np.exp(-((centers[None, :] - dist[:, None]) ** 2) / (2 * smear ** 2))
    kernel /= np.sqrt(2 * np.pi) * smear
    counts = kernel.sum(axis=0) * width

    number_density = n / reduced.volume
    ideal = n * 4.0 * np.pi * centers ** 2 * width * number_density
    return counts / ideal


def coverage(generated, reference,
             thresholds: CoverageThresholds = CoverageThresholds()):
    """Coverage recall and precision (%) under composition and structure
    fingerprint distances: a structure is covered when some counterpart
    is within both thresholds."""
    generated = list(generated)
    reference = list(reference)
    if not generated or not reference:
        raise ValueError("coverage needs non-empty generated and reference sets")
    comp_g = np.stack([composition_fingerprint(s) for s in generated])
    comp_r = np.stack([composition_fingerprint(s) for s in reference])
    struct_g = np.stack([rdf_fingerprint(s) for s in generated])
    struct_r = np.stack([rdf_fingerprint(s) for s in reference])

    d_comp = np.linalg.norm(comp_g[:, None, :] - comp_r[None, :, :], axis=-1)
    d_struct = np.linalg.norm(struct_g[:, None, :] - struct_r[None, :, :], axis=-1)
    close = (d_comp <= thresholds.comp_threshold) \
        & (d_struct <= thresholds.struct_threshold)
    cov_r = 100.0 * float(close.any(axis=0).mean())
    cov_p = 100.0 * float(close.any(axis=1).mean())
    return cov_r, cov_p


def wasserstein_1d(samples_a, samples_b) -> float:
    """Exact 1-D earth mover's distance between two empirical
    distributions via quantile-function integration on the merged
    quantile grid (sample counts may differ)."""
    a = np.sort(np.asarray(samples_a, dtype=np.float64))
    b = np.sort(np.asarray(samples_b, dtype=np.float64))
    if a.size == 0 or b.size == 0:
        raise ValueError("wasserstein_1d needs non-empty samples")
    grid = np.union1d(np.arange(1, a.size) / a.size,
                      np.arange(1, b.size) / b.size)
    grid = np.concatenate([[0.0], grid, [1.0]])
    widths = np.diff(grid)
    mids = 0.5 * (grid[:-1] + grid[1:])
    qa = a[np.minimum((mids * a.size).astype(int), a.size - 1)]
    qb = b[np.minimum((mids * b.size).astype(int), b.size - 1)]
    return float(np.sum(widths * np.abs(qa - qb)))


def density(structure: CrystalStructure) -> float:
    """Mass density in g/cm^3 from the bundled atomic masses."""
    mass = sum(mass_for(int(z)) for z in structure.atomic_numbers) * AMU_TO_GRAM
    return mass / (structure.lattice.volume * 1e-24)


def n_elements(structure: CrystalStructure) -> int:
    """Number of distinct elements in the unit cell."""
    return int(np.unique(structure.atomic_numbers).size)


def ground_state_compare(generated, relaxed, energies_gen, energies_rel,
                         criteria: MatchCriteria = MatchCriteria()):
    """Similarity of generated structures to their relaxed counterparts:
    (match_rate %, mean delta_rms, delta_v_rms in A^3/atom, delta_e_rms in
    meV/atom).  Energies are per-atom eV, supplied externally."""
    generated = list(generated)
    relaxed = list(relaxed)
    energies_gen = np.asarray(energies_gen, dtype=np.float64)
    energies_rel = np.asarray(energies_rel, dtype=np.float64)
    if not (len(generated) == len(relaxed) == energies_gen.size == energies_rel.size):
        raise DataError("ground-state comparison needs aligned structures "
                        "and energies")
    rate, mean_rms = match_rate_and_rms(
        [(r, g) for r, g in zip(relaxed, generated)], criteria)
    v_gen = np.array([s.lattice.volume / s.n_atoms for s in generated])
    v_rel = np.array([s.lattice.volume / s.n_atoms for s in relaxed])
    delta_v = float(np.sqrt(np.mean((v_gen - v_rel) ** 2)))
    delta_e = float(np.sqrt(np.mean((energies_gen - energies_rel) ** 2)) * 1000.0)
    return rate, mean_rms, delta_v, delta_e


def evaluate_reconstruction(bases, candidates,
                            criteria: MatchCriteria = MatchCriteria()) -> MetricsReport:
    bases = list(bases)
    candidates = list(candidates)
    if len(bases) != len(candidates):
        raise DataError(f"reconstruction evaluation needs aligned lists, got "
                        f"{len(bases)} references vs {len(candidates)} candidates")
    rate, mean_rms = match_rate_and_rms(list(zip(bases, candidates)), criteria)
    return MetricsReport(match_rate=rate, mean_delta_rms=mean_rms)


def evaluate_generation(generated, reference,
                        thresholds: CoverageThresholds = CoverageThresholds()) -> MetricsReport:
    generated = list(generated)
    reference = list(reference)
    checks = [validity(s) for s in generated]
    struct_ok = [s for (s, _) in checks]
    comp_ok = [c for (_, c) in checks]
    report = MetricsReport(
        validity_struct=100.0 * float(np.mean(struct_ok)),
        validity_comp=100.0 * float(np.mean(comp_ok)),
    )
    report.cov_r, report.cov_p = coverage(generated, reference, thresholds)
    valid = [s for s, ok in zip(generated, checks) if ok[0] and ok[1]]
    if valid:
        report.wasserstein_rho = wasserstein_1d(
            [density(s) for s in valid], [density(s) for s in reference])
        report.wasserstein_nelem = wasserstein_1d(
            [n_elements(s) for s in valid], [n_elements(s) for s in reference])
    return report


def evaluate_ground_state(generated, relaxed, energies_gen, energies_rel,
                          criteria: MatchCriteria = MatchCriteria()) -> MetricsReport:
    rate, mean_rms, delta_v, delta_e = ground_state_compare(
        generated, relaxed, energies_gen, energies_rel, criteria)
    return MetricsReport(match_rate=rate, mean_delta_rms=mean_rms,
                         delta_v_rms=delta_v, delta_e_rms=delta_e)
