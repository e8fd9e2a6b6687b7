from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qnpsqd.detspace import CIVector, build_space, hamiltonian_operator, hartree_fock_state
from qnpsqd.eigensolver import fci_ground_state
from qnpsqd.integrals import hf_energy
from qnpsqd.qnp import QnpFabric, prepare_state
from qnpsqd.sqd import (
    NoiseSpec,
    SampleSet,
    SqdConfig,
    bitstring_to_config,
    config_to_bitstring,
    hamming_histogram,
    histogram_csv,
    postselect,
    recover_configurations,
    sample_bitstrings,
    spin_occupations,
    sqd_run,
    subspace_diagonalize,
    subspace_indices,
)


@pytest.fixture(scope="module")
def h6_ground(h6):
    return fci_ground_state(h6)


def test_bitstring_layout_is_blocked():
    assert config_to_bitstring((0b011, 0b100), 3) == "110001"
    assert bitstring_to_config("110001", 3) == (0b011, 0b100)
    with pytest.raises(ValueError):
        bitstring_to_config("1100", 3)


def test_noise_validation():
    with pytest.raises(ValueError):
        NoiseSpec(readout_flip_prob=1.5)
    with pytest.raises(ValueError):
        NoiseSpec(gate_depolarizing_prob=-0.1)
    assert NoiseSpec(gate_depolarizing_prob=0.01, n_gates=10).depolarized_fraction == pytest.approx(1 - 0.99**10)


def test_single_determinant_sampling_is_a_point_mass():
    v = hartree_fock_state(build_space(4, 2, 2))
    s = sample_bitstrings(v, 500, seed=3)
    assert s.shots == {"11001100": 500}


def test_unnormalized_state_rejected():
    space = build_space(3, 1, 1)
    with pytest.raises(ValueError, match="normalized"):
        sample_bitstrings(CIVector(space, np.ones(space.dim)), 10)


def test_qnp_samples_conserve_particles(rng):
    f = QnpFabric.build(6, 2, 3)
    v = prepare_state(f, rng.uniform(-1, 1, f.n_parameters))
    s = sample_bitstrings(v, 20_000, seed=1)
    hist = hamming_histogram(s)
    assert list(hist.total) == [6]
    assert list(hist.per_spin) == [(3, 3)]
    assert s.total_shots == 20_000


def test_sampling_frequencies_follow_amplitudes(h6_ground):
    v = h6_ground.vector.normalized()
    n = 100_000
    s = sample_bitstrings(v, n, seed=5)
    space = v.space
    hf_bits = config_to_bitstring((0b111, 0b111), 6)
    p = v.amplitudes[space.index(0b111, 0b111)] ** 2
    assert abs(s.shots[hf_bits] - n * p) < 5 * np.sqrt(n * p * (1 - p))


def test_half_flip_probability_randomizes_bits(h6_ground):
    n = 100_000
    s = sample_bitstrings(h6_ground.vector.normalized(), n, NoiseSpec(readout_flip_prob=0.5), seed=2)
    ones = np.zeros(12)
    for bits, count in s.shots.items():
        ones += count * np.array([c == "1" for c in bits])
    sigma = np.sqrt(n * 0.25)
    assert np.all(np.abs(ones - n / 2) < 3 * sigma)


def test_full_depolarization_is_uniform():
    v = hartree_fock_state(build_space(2, 1, 1))
    s = sample_bitstrings(v, 16_000, NoiseSpec(gate_depolarizing_prob=1.0, n_gates=1), seed=0)
    assert len(s.shots) == 16
    assert all(abs(c - 1000) < 5 * np.sqrt(1000) for c in s.shots.values())


def test_sampling_is_seed_deterministic(h6_ground):
    v = h6_ground.vector.normalized()
    noise = NoiseSpec(0.02, 0.01, 5)
    assert sample_bitstrings(v, 5000, noise, seed=11) == sample_bitstrings(v, 5000, noise, seed=11)
    assert sample_bitstrings(v, 5000, noise, seed=11) != sample_bitstrings(v, 5000, noise, seed=12)


def test_sampleset_validation_and_json():
    with pytest.raises(ValueError):
        SampleSet(4, {"101": 1})
    s = SampleSet(4, {"1010": 3, "0101": 2}, seed=7, noise=NoiseSpec(0.1))
    assert list(s.shots) == ["0101", "1010"]
    assert SampleSet.from_json(s.to_json()) == s


def test_empty_histogram():
    hist = hamming_histogram(SampleSet(4, {}))
    assert hist.total == {} and hist.per_spin == {}


def test_histogram_counts_and_csv():
    s = SampleSet(4, {"1010": 3, "1000": 2, "1110": 1})
    hist = hamming_histogram(s)
    assert hist.total == {1: (1, 2), 2: (1, 3), 3: (1, 1)}
    assert hist.per_spin[(2, 1)] == (1, 1)
    assert histogram_csv(hist).splitlines()[0] == "n_electrons,occurrences,unique_strings"


def brute_postselect(s, na, nb):
    n = s.n_orb
    out = set()
    for bits in s.shots:
        if bits[:n].count("1") == na and bits[n:].count("1") == nb:
            out.add(bitstring_to_config(bits, n))
    return out


@settings(max_examples=30, deadline=None)
@given(strings=st.lists(st.text("01", min_size=6, max_size=6), max_size=30))
def test_postselect_matches_direct_filter(strings):
    s = SampleSet(6, {b: 1 for b in strings})
    assert postselect(s, 2, 1) == brute_postselect(s, 2, 1)


def test_postselect_all_correct_and_all_flipped():
    good = SampleSet(4, {"1001": 2, "0110": 1, "1010": 4})
    assert len(postselect(good, 1, 1)) == 3
    bad = SampleSet(4, {"1101": 2, "0000": 1})
    assert postselect(bad, 1, 1) == frozenset()


def test_recovery_leaves_valid_strings_alone():
    s = SampleSet(6, {"110100": 1, "011010": 1})
    occ = np.full((2, 3), 0.5)
    assert recover_configurations(s, occ, 2, 1, seed=0) == postselect(s, 2, 1)


def test_recovery_flips_exactly_the_surplus():
    s = SampleSet(8, {"11101000": 1})  # alpha has 3 electrons, target 2
    occ = np.array([[0.9, 0.8, 0.1, 0.0], [1.0, 0.0, 0.0, 0.0]])
    (a, b), = recover_configurations(s, occ, 2, 1, seed=0)
    assert a.bit_count() == 2 and a & ~0b0111 == 0
    assert b == 0b0001


def test_recovery_fills_a_deficit():
    s = SampleSet(8, {"10000000": 1})
    occ = np.array([[1.0, 1.0, 0.0, 0.0], [1.0, 0.0, 0.0, 0.0]])
    (a, b), = recover_configurations(s, occ, 2, 1, seed=0)
    assert a == 0b0011 and b == 0b0001


def test_recovery_targets_the_orbital_that_should_be_empty():
    # pure reference: alpha occupies orbitals 0 and 1; the surplus electron sits in orbital 2
    occ = np.array([[1.0, 1.0, 0.0, 0.0], [1.0, 1.0, 0.0, 0.0]])
    s = SampleSet(8, {"11101100": 1})
    hits = sum(recover_configurations(s, occ, 2, 2, seed=k) == {(0b0011, 0b0011)} for k in range(300))
    assert hits == 300


def test_recovery_selection_distribution():
    # one surplus electron in (1, 1, 1): flip weights |1 - n| + 1e-6
    occ = np.array([[0.5, 0.2, 0.9], [0.0, 0.0, 0.0]])
    expected = np.array([0.5, 0.8, 0.1]) + 1e-6
    expected /= expected.sum()
    strings = {"111000": 1}
    counts = np.zeros(3)
    trials = 20_000
    for seed in range(trials):
        (a, _), = recover_configurations(SampleSet(6, strings), occ, 2, 0, seed=int(seed))
        counts[[p for p in range(3) if not (a >> p) & 1][0]] += 1
    sigma = np.sqrt(trials * expected * (1 - expected))
    assert np.all(np.abs(counts - trials * expected) < 5 * sigma)


def test_recovery_output_has_correct_weights_and_contains_valid_inputs(h6_ground):
    s = sample_bitstrings(h6_ground.vector.normalized(), 20_000, NoiseSpec(0.05), seed=8)
    occ = np.full((2, 6), 0.5)
    rec = recover_configurations(s, occ, 3, 3, seed=1)
    assert all(a.bit_count() == 3 and b.bit_count() == 3 for a, b in rec)
    assert postselect(s, 3, 3) <= rec
    assert rec == recover_configurations(s, occ, 3, 3, seed=1)


def test_recovery_validates_occupations():
    s = SampleSet(4, {"1010": 1})
    with pytest.raises(ValueError):
        recover_configurations(s, np.zeros((2, 3)), 1, 1)
    with pytest.raises(ValueError):
        recover_configurations(s, np.full((2, 2), 1.5), 1, 1)


def test_subspace_full_sector_is_fci(h6, h6_ground):
    space = build_space(6, 3, 3)
    configs = {space.determinant(k) for k in range(space.dim)}
    res = subspace_diagonalize(configs, h6, mode="span")
    assert res.energy == pytest.approx(h6_ground.energy, abs=1e-9)
    assert res.subspace_size == space.dim


def test_subspace_single_determinant_is_hf(h6, reference):
    res = subspace_diagonalize({(0b111, 0b111)}, h6)
    assert res.energy == pytest.approx(hf_energy(h6, range(3)), abs=1e-12)
    assert res.subspace_size == 1
    assert np.allclose(res.occupations, [[1, 1, 1, 0, 0, 0]] * 2)


@pytest.mark.parametrize("seed", range(4))
def test_random_half_matches_dense_projection(h6, h6_ground, seed):
    space = build_space(6, 3, 3)
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(space.dim, space.dim // 2, replace=False))
    configs = {space.determinant(k) for k in idx}
    res = subspace_diagonalize(configs, h6, mode="span")
    apply = hamiltonian_operator(h6, space)
    dense = np.array([apply(e) for e in np.eye(space.dim)])[np.ix_(idx, idx)]
    assert res.energy == pytest.approx(np.linalg.eigvalsh(dense)[0], abs=1e-9)
    assert res.energy >= h6_ground.energy - 1e-9
    product = subspace_diagonalize(configs, h6, mode="product")
    assert h6_ground.energy - 1e-9 <= product.energy <= res.energy + 1e-12


def test_product_subspace_is_spin_symmetric():
    space = build_space(4, 2, 2)
    idx = subspace_indices({(0b0011, 0b0101)}, space, "product")
    dets = {space.determinant(k) for k in idx}
    assert dets == {(a, b) for a in (0b0011, 0b0101) for b in (0b0011, 0b0101)}


def test_subspace_errors(h6):
    with pytest.raises(ValueError, match="empty"):
        subspace_diagonalize(set(), h6)
    with pytest.raises(ValueError, match="sector"):
        subspace_diagonalize({(0b1111, 0b111)}, h6)
    with pytest.raises(ValueError):
        subspace_indices({(0b111, 0b111)}, build_space(6, 3, 3), "triangle")


def test_spin_occupations_sum_to_electron_counts(h6_ground):
    occ = spin_occupations(h6_ground.vector)
    assert occ.sum(axis=1) == pytest.approx([3.0, 3.0], abs=1e-12)
    assert np.all((occ >= -1e-15) & (occ <= 1 + 1e-15))


def test_noiseless_exact_state_hits_fci_at_round_zero(h6, h6_ground):
    rep = sqd_run(h6_ground.vector.normalized(), h6, SqdConfig(n_shots=100_000, seed=0))
    assert rep.rounds[0].energy == pytest.approx(h6_ground.energy, abs=1e-9)
    assert rep.converged


@pytest.mark.parametrize("mode", ["product", "span"])
def test_noisy_run_ordering(h6, h6_ground, mode):
    cfg = SqdConfig(n_shots=100_000, noise=NoiseSpec(0.02), seed=2, mode=mode)
    rep = sqd_run(h6_ground.vector.normalized(), h6, cfg, fci_reference=h6_ground.energy)
    energies = [r.energy for r in rep.rounds]
    assert rep.postselection_energy >= rep.final_energy >= h6_ground.energy - 1e-9
    assert all(b <= a + 1e-12 for a, b in zip(energies, energies[1:]))
    assert set(rep.histogram.total) != {6}


def test_round_zero_falls_back_to_uniform_occupations(h6, h6_ground):
    samples = SampleSet(12, {"111100111000": 5, "110000111000": 3})
    rep = sqd_run(samples, h6, SqdConfig(max_recovery_rounds=3, seed=1))
    assert rep.rounds[0].energy is None and rep.postselection_energy is None
    assert rep.final_energy >= h6_ground.energy - 1e-9
    with pytest.raises(ValueError):
        sqd_run(samples, h6, SqdConfig(recovery=False))


def test_report_is_deterministic(h6, h6_ground):
    cfg = SqdConfig(n_shots=20_000, noise=NoiseSpec(0.02), seed=4, mode="span")
    v = h6_ground.vector.normalized()
    assert sqd_run(v, h6, cfg).to_json() == sqd_run(v, h6, cfg).to_json()


def test_sample_set_dimension_mismatch(h4):
    with pytest.raises(ValueError, match="dimension mismatch"):
        sqd_run(SampleSet(12, {"111000111000": 1}), h4)
