from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from qnpsqd.data import load_fixture
from qnpsqd.eigensolver import fci_ground_state
from qnpsqd.integrals import IntegralSet, fock_matrix, hartree_fock_orbitals, random_integrals
from qnpsqd.mp2 import (
    DegenerateReferenceError,
    build_active_space,
    mp2_energy,
    mp2_virtual_density,
    natural_orbital_truncation,
    threshold_sweep,
)


def canonical_random(n_orb, n_elec, seed):
    return hartree_fock_orbitals(random_integrals(n_orb, n_elec, seed, coupling=0.15))[1]


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_mp2_energy_and_density_match_amplitude_loops(seed):
    s = canonical_random(8, 4, seed)
    f = fock_matrix(s, range(2))
    e_ref, d_ref = oracles.mp2_spin_orbital(f, s.eri, 2)
    assert mp2_energy(s, 2) == pytest.approx(e_ref, abs=1e-10)
    assert np.max(np.abs(mp2_virtual_density(s, 2) - d_ref)) < 1e-10


@pytest.mark.parametrize("name", ["h4_sto3g", "h6_sto3g", "h4_631g", "h2dimer_sto3g"])
def test_mp2_matches_pyscf(name, reference):
    s = load_fixture(name)
    assert mp2_energy(s, s.n_elec // 2) == pytest.approx(reference[name]["e_mp2_corr"], abs=1e-8)


def test_density_is_psd_with_trace_bounded(h4_631g):
    d = mp2_virtual_density(h4_631g, 2)
    vals = np.linalg.eigvalsh(d)
    assert vals.min() > -1e-12
    assert np.allclose(d, d.T)


def test_requires_canonical_orbitals():
    s = random_integrals(6, 4, 3)
    with pytest.raises(ValueError, match="canonical"):
        mp2_energy(s, 2)


def test_degenerate_reference():
    h = np.diag([-1.0, -1.0, -1.0, -1.0])
    eri = np.zeros((4,) * 4)
    eri[0, 2, 0, 2] = eri[2, 0, 2, 0] = eri[0, 2, 2, 0] = eri[2, 0, 0, 2] = 0.0
    with pytest.raises(DegenerateReferenceError):
        mp2_energy(IntegralSet(h, eri, 0.0, 4), 2)


def test_truncation_keeps_occupations_at_threshold():
    d = np.diag([0.3, 1e-3, 1e-5])
    spectrum = natural_orbital_truncation(d, 1e-3)
    assert spectrum.n_retained == 2
    assert np.allclose(spectrum.occupations, [0.3, 1e-3, 1e-5])
    assert natural_orbital_truncation(d, 0.0).n_retained == 3
    assert natural_orbital_truncation(d, 1.0).n_retained == 0


def test_truncation_rejects_bad_input():
    with pytest.raises(ValueError):
        natural_orbital_truncation(np.zeros((2, 3)), 0.1)
    with pytest.raises(ValueError):
        natural_orbital_truncation(np.diag([1.0, -0.1]), 0.1)
    with pytest.raises(ValueError):
        natural_orbital_truncation(np.eye(2), -1.0)


def test_threshold_sweep_is_monotone_and_converges(h4_631g):
    spaces = threshold_sweep(h4_631g, [0, 1], [1e-1, 1e-2, 1e-3, 1e-4, 0.0])
    corr = [a.mp2_corr_active for a in spaces]
    sizes = [a.n_orb_active for a in spaces]
    assert sizes == sorted(sizes)
    assert all(b <= a + 1e-14 for a, b in zip(corr, corr[1:]))
    assert corr[-1] == pytest.approx(spaces[-1].mp2_corr_full, abs=1e-12)
    # the fixture's orbitals are canonical only to ~1e-9, so recanonicalizing shifts MP2 slightly
    assert spaces[-1].mp2_corr_full == pytest.approx(mp2_energy(h4_631g, 2), abs=1e-10)


def test_threshold_zero_reproduces_parent_fci(h4, reference):
    active = build_active_space(h4, [0, 1], 0.0)
    assert active.label == "(4,4)"
    assert fci_ground_state(active).energy == pytest.approx(reference["h4_sto3g"]["e_fci"], abs=1e-9)


def test_frozen_occupied_reduces_electrons(h6):
    active = build_active_space(h6, [1, 2], 0.0)
    assert (active.n_elec_active, active.n_orb_active) == (4, 5)
    assert fci_ground_state(active).energy >= fci_ground_state(h6).energy - 1e-10
    report = active.report()
    assert report["n_elec"] == 4 and len(report["retained_occupations"]) == 3


@pytest.mark.parametrize("bad", [[0, 0], [5], []])
def test_occupied_selection_validation(h6, bad):
    with pytest.raises(ValueError):
        build_active_space(h6, bad, 1e-4)
