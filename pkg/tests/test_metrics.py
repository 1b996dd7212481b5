"""Tests for the evaluation suite (matcher, validity, coverage, W1,
property statistics)."""

import itertools

import numpy as np
import pytest
from scipy.optimize import linprog

from dpcdvae.datasets import rocksalt_structure
from dpcdvae.errors import DataError, GeometryError
from dpcdvae.lattice import CrystalStructure, Lattice, lattice_from_params, wrap_pi
from dpcdvae.metrics import (
    CoverageThresholds,
    MatchCriteria,
    MetricsReport,
    coverage,
    density,
    evaluate_generation,
    evaluate_reconstruction,
    ground_state_compare,
    match_rate_and_rms,
    n_elements,
    structure_match,
    validity,
    wasserstein_1d,
)


def random_structure(rng, n_atoms=4, species=(6, 8)):
    while True:
        a, b, c = rng.uniform(3, 6, 3)
        al, be, ga = rng.uniform(70, 110, 3)
        try:
            lat = lattice_from_params(a, b, c, al, be, ga)
        except GeometryError:
            continue
        coords = rng.random((n_atoms, 3))
        numbers = rng.choice(species, size=n_atoms)
        try:
            return CrystalStructure(lat, coords, numbers)
        except ValueError:
            continue


def transport_lp(a, b):
    """Brute-force optimal transport between two empirical distributions."""
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    n, m = a.size, b.size
    cost = np.abs(a[:, None] - b[None, :]).ravel()
    a_eq = []
    for i in range(n):
        row = np.zeros((n, m))
        row[i, :] = 1
        a_eq.append(row.ravel())
    for j in range(m):
        row = np.zeros((n, m))
        row[:, j] = 1
        a_eq.append(row.ravel())
    b_eq = np.concatenate([np.full(n, 1 / n), np.full(m, 1 / m)])
    res = linprog(cost, A_eq=np.array(a_eq), b_eq=b_eq, bounds=(0, None),
                  method="highs")
    assert res.success
    return res.fun


class TestStructureMatch:
    def test_reflexive(self):
        rng = np.random.default_rng(0)
        s = random_structure(rng)
        assert structure_match(s, s) == pytest.approx(0.0, abs=1e-9)

    def test_uniform_translation_invariance(self):
        rng = np.random.default_rng(1)
        s = random_structure(rng, n_atoms=5)
        shifted = CrystalStructure(
            s.lattice, wrap_pi(s.frac_coords + np.array([0.3, 0.3, 0.3])),
            s.atomic_numbers)
        assert structure_match(s, shifted) == pytest.approx(0.0, abs=1e-9)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(2)
        s = random_structure(rng, n_atoms=6)
        perm = rng.permutation(6)
        permuted = CrystalStructure(s.lattice, s.frac_coords[perm],
                                    s.atomic_numbers[perm])
        assert structure_match(s, permuted) == pytest.approx(0.0, abs=1e-9)

    def test_unimodular_relabel_invariance(self):
        rng = np.random.default_rng(3)
        s = random_structure(rng, n_atoms=4)
        m = np.array([[1, 1, 0], [0, 1, 0], [0, 0, 1]], dtype=float)
        basis = m @ s.lattice.matrix
        if np.linalg.det(basis) < 0:
            basis = -basis
        relabeled = CrystalStructure(
            Lattice.from_matrix(basis),
            wrap_pi(s.frac_coords @ np.linalg.inv(m)), s.atomic_numbers)
        assert structure_match(s, relabeled) == pytest.approx(0.0, abs=1e-9)

    def test_composition_mismatch(self):
        lat = lattice_from_params(3, 3, 3, 90, 90, 90)
        s1 = CrystalStructure(lat, np.array([[0.0, 0.0, 0.0]]), np.array([6]))
        s2 = CrystalStructure(lat, np.array([[0.0, 0.0, 0.0]]), np.array([8]))
        assert structure_match(s1, s2) is None

    def test_displacement_beyond_stol(self):
        # one atom displaced by 0.6 * (V/N)^(1/3) under stol=0.5 cannot match
        lat = lattice_from_params(4, 4, 4, 90, 90, 90)
        coords = np.array([[0.0, 0.0, 0.0], [0.5, 0.5, 0.5]])
        s = CrystalStructure(lat, coords, np.array([11, 17]))
        scale = (lat.volume / 2) ** (1 / 3)
        moved = coords.copy()
        moved[1, 0] += 0.6 * scale / 4.0
        cand = CrystalStructure(lat, wrap_pi(moved), np.array([11, 17]))
        assert structure_match(s, cand) is None

    def test_small_displacement_reports_rms(self):
        lat = lattice_from_params(4, 4, 4, 90, 90, 90)
        coords = np.array([[0.0, 0.0, 0.0], [0.5, 0.5, 0.5]])
        s = CrystalStructure(lat, coords, np.array([11, 17]))
        moved = coords.copy()
        moved[1] += np.array([0.02, 0.0, 0.0])
        cand = CrystalStructure(lat, wrap_pi(moved), np.array([11, 17]))
        delta = structure_match(s, cand)
        assert delta is not None
        # the anchor aligns the Na atom exactly; only the Cl atom is off
        scale = (lat.volume / 2) ** (1 / 3)
        expected = (0.02 * 4.0) / np.sqrt(2.0) / scale
        assert delta == pytest.approx(expected, rel=1e-6)

    def test_lattice_tolerance(self):
        s = rocksalt_structure(5.6, 11, 17)
        bigger = rocksalt_structure(5.6 * 1.2, 11, 17)
        way_bigger = rocksalt_structure(5.6 * 1.4, 11, 17)
        assert structure_match(s, bigger) is not None
        assert structure_match(s, way_bigger) is None

    def test_match_rate_and_rms(self):
        rng = np.random.default_rng(4)
        pairs = [(random_structure(rng), None) for _ in range(4)]
        pairs = [(b, b) for b, _ in pairs]
        rate, mean_rms = match_rate_and_rms(pairs)
        assert rate == 100.0
        assert mean_rms == pytest.approx(0.0, abs=1e-9)

    def test_no_matches_reported_absent(self):
        lat = lattice_from_params(3, 3, 3, 90, 90, 90)
        s1 = CrystalStructure(lat, np.array([[0.0, 0.0, 0.0]]), np.array([6]))
        s2 = CrystalStructure(lat, np.array([[0.0, 0.0, 0.0]]), np.array([8]))
        rate, mean_rms = match_rate_and_rms([(s1, s2)])
        assert rate == 0.0
        assert mean_rms is None

    def test_empty_pairs_rejected(self):
        with pytest.raises(ValueError):
            match_rate_and_rms([])

    def test_reflexivity_on_100_random_structures(self):
        rng = np.random.default_rng(5)
        for _ in range(100):
            s = random_structure(rng, n_atoms=int(rng.integers(1, 7)))
            assert structure_match(s, s) == pytest.approx(0.0, abs=1e-9)


class TestValidity:
    def test_close_pair_invalid(self):
        lat = lattice_from_params(10, 10, 10, 90, 90, 90)
        s = CrystalStructure(lat, np.array([[0.0, 0.0, 0.0], [0.04, 0.0, 0.0]]),
                             np.array([11, 17]))
        struct_ok, _ = validity(s)
        assert not struct_ok

    def test_rocksalt_valid(self):
        s = rocksalt_structure(5.6, 11, 17)
        struct_ok, comp_ok = validity(s)
        assert struct_ok and comp_ok

    def test_elemental_convention(self):
        lat = lattice_from_params(3.567, 3.567, 3.567, 90, 90, 90)
        s = CrystalStructure(lat, np.array([[0.0, 0.0, 0.0]]), np.array([6]))
        _, comp_ok = validity(s)
        assert comp_ok

    def test_non_neutral_composition(self):
        # Na2Cl... one extra Na cannot balance with (+1, -1) states
        lat = lattice_from_params(6, 6, 6, 90, 90, 90)
        s = CrystalStructure(
            lat, np.array([[0.0, 0.0, 0.0], [0.5, 0.5, 0.5], [0.25, 0.25, 0.25]]),
            np.array([11, 11, 17]))
        _, comp_ok = validity(s)
        assert not comp_ok

    def test_untabulated_element_counted_invalid(self):
        lat = lattice_from_params(6, 6, 6, 90, 90, 90)
        s = CrystalStructure(lat, np.array([[0.0, 0.0, 0.0], [0.5, 0.5, 0.5]]),
                             np.array([104, 8]))  # Rf has no tabulated states
        _, comp_ok = validity(s)
        assert not comp_ok

    def test_brute_force_min_distance(self):
        rng = np.random.default_rng(6)
        shifts = np.array(list(itertools.product(range(-2, 3), repeat=3)), float)
        for _ in range(100):
            s = random_structure(rng, n_atoms=int(rng.integers(1, 6)))
            struct_ok, _ = validity(s)
            coords = s.frac_coords
            best = np.inf
            for i in range(s.n_atoms):
                for j in range(s.n_atoms):
                    d = np.linalg.norm(
                        (coords[i] - coords[j] + shifts) @ s.lattice.matrix, axis=1)
                    d = d[d > 1e-8]
                    best = min(best, d.min())
            assert struct_ok == (best > 0.5)


class TestWasserstein:
    def test_identical_zero(self):
        assert wasserstein_1d([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]) == 0.0

    def test_point_masses(self):
        assert wasserstein_1d([0.0], [1.0]) == pytest.approx(1.0)

    def test_two_point_example(self):
        assert wasserstein_1d([0.0, 1.0], [0.0, 0.0]) == pytest.approx(0.5)

    def test_unequal_counts_vs_lp(self):
        rng = np.random.default_rng(7)
        for _ in range(30):
            a = rng.normal(size=rng.integers(1, 7))
            b = rng.normal(size=rng.integers(1, 7))
            assert wasserstein_1d(a, b) == pytest.approx(transport_lp(a, b),
                                                         abs=1e-9)

    def test_metric_properties(self):
        rng = np.random.default_rng(8)
        for _ in range(20):
            a = rng.normal(size=5)
            b = rng.normal(size=4)
            c = rng.normal(size=6)
            dab = wasserstein_1d(a, b)
            dba = wasserstein_1d(b, a)
            assert dab == pytest.approx(dba, abs=1e-12)
            assert dab + wasserstein_1d(b, c) >= wasserstein_1d(a, c) - 1e-9

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            wasserstein_1d([], [1.0])


class TestPropertyStatistics:
    def test_diamond_density(self):
        lat = lattice_from_params(3.567, 3.567, 3.567, 90, 90, 90)
        base = np.array([[0, 0, 0], [0, 0.5, 0.5], [0.5, 0, 0.5], [0.5, 0.5, 0]],
                        dtype=float)
        coords = np.concatenate([base, base + 0.25])
        s = CrystalStructure(lat, wrap_pi(coords), np.full(8, 6))
        assert density(s) == pytest.approx(3.515, abs=2e-3)

    def test_density_halves_when_cell_doubles(self):
        lat = lattice_from_params(3, 3, 3, 90, 90, 90)
        s = CrystalStructure(lat, np.array([[0.0, 0.0, 0.0]]), np.array([26]))
        tall = lattice_from_params(3, 3, 6, 90, 90, 90)
        s2 = CrystalStructure(tall, np.array([[0.0, 0.0, 0.0]]), np.array([26]))
        assert density(s2) == pytest.approx(density(s) / 2, rel=1e-12)

    def test_density_supercell_invariant(self):
        s = rocksalt_structure(5.6, 11, 17)
        doubled_lat = lattice_from_params(11.2, 5.6, 5.6, 90, 90, 90)
        coords = np.concatenate([s.frac_coords * [0.5, 1, 1],
                                 s.frac_coords * [0.5, 1, 1] + [0.5, 0, 0]])
        doubled = CrystalStructure(doubled_lat, wrap_pi(coords),
                                   np.tile(s.atomic_numbers, 2))
        assert density(doubled) == pytest.approx(density(s), rel=1e-12)

    def test_n_elements(self):
        s = rocksalt_structure(5.6, 11, 17)
        assert n_elements(s) == 2
        lat = lattice_from_params(3, 3, 3, 90, 90, 90)
        s1 = CrystalStructure(lat, np.array([[0.0, 0.0, 0.0]]), np.array([6]))
        assert n_elements(s1) == 1


class TestCoverage:
    def test_self_coverage_full(self):
        rng = np.random.default_rng(9)
        structures = [random_structure(rng) for _ in range(5)]
        cov_r, cov_p = coverage(structures, structures)
        assert cov_r == 100.0 and cov_p == 100.0

    def test_disjoint_compositions_zero(self):
        lat = lattice_from_params(4, 4, 4, 90, 90, 90)
        gen = [CrystalStructure(lat, np.array([[0.0, 0.0, 0.0]]), np.array([6]))]
        ref = [rocksalt_structure(5.6, 11, 17)]
        cov_r, cov_p = coverage(gen, ref, CoverageThresholds(
            struct_threshold=np.inf, comp_threshold=0.05))
        assert cov_r == 0.0 and cov_p == 0.0

    def test_infinite_thresholds(self):
        rng = np.random.default_rng(10)
        gen = [random_structure(rng) for _ in range(3)]
        ref = [random_structure(rng) for _ in range(4)]
        cov_r, cov_p = coverage(gen, ref, CoverageThresholds(np.inf, np.inf))
        assert cov_r == 100.0 and cov_p == 100.0

    def test_supercell_invariant_fingerprint(self):
        from dpcdvae.metrics import rdf_fingerprint
        s = rocksalt_structure(5.6, 11, 17)
        doubled_lat = lattice_from_params(11.2, 5.6, 5.6, 90, 90, 90)
        coords = np.concatenate([s.frac_coords * [0.5, 1, 1],
                                 s.frac_coords * [0.5, 1, 1] + [0.5, 0, 0]])
        doubled = CrystalStructure(doubled_lat, wrap_pi(coords),
                                   np.tile(s.atomic_numbers, 2))
        np.testing.assert_allclose(rdf_fingerprint(s), rdf_fingerprint(doubled),
                                   atol=1e-8)


class TestGroundState:
    def test_identical_all_zero(self):
        rng = np.random.default_rng(11)
        structures = [random_structure(rng) for _ in range(3)]
        energies = [1.0, -2.0, 0.5]
        rate, rms, dv, de = ground_state_compare(structures, structures,
                                                 energies, energies)
        assert rate == 100.0
        assert rms == pytest.approx(0.0, abs=1e-9)
        assert dv == 0.0 and de == 0.0

    def test_constant_energy_offset(self):
        rng = np.random.default_rng(12)
        structures = [random_structure(rng) for _ in range(4)]
        e_rel = [0.0, 1.0, -0.5, 2.0]
        e_gen = [e + 0.1 for e in e_rel]
        _, _, _, de = ground_state_compare(structures, structures, e_gen, e_rel)
        assert de == pytest.approx(100.0, rel=1e-9)

    def test_length_mismatch(self):
        rng = np.random.default_rng(13)
        s = random_structure(rng)
        with pytest.raises(DataError):
            ground_state_compare([s], [s, s], [0.0], [0.0, 0.0])


class TestReports:
    def test_report_fields(self):
        report = MetricsReport()
        assert set(report.to_dict()) == {
            "match_rate", "mean_delta_rms", "validity_struct", "validity_comp",
            "cov_r", "cov_p", "wasserstein_rho", "wasserstein_nelem",
            "delta_v_rms", "delta_e_rms"}

    def test_evaluate_reconstruction_identity(self):
        rng = np.random.default_rng(14)
        structures = [random_structure(rng) for _ in range(3)]
        report = evaluate_reconstruction(structures, structures)
        assert report.match_rate == 100.0
        assert report.mean_delta_rms == pytest.approx(0.0, abs=1e-9)

    def test_evaluate_generation_smoke(self):
        gen = [rocksalt_structure(5.6, 11, 17),
               rocksalt_structure(5.9, 11, 17)]
        report = evaluate_generation(gen, gen)
        assert report.validity_struct == 100.0
        assert report.validity_comp == 100.0
        assert report.cov_r == 100.0
        assert report.wasserstein_rho == pytest.approx(0.0, abs=1e-12)
        assert report.wasserstein_nelem == 0.0
