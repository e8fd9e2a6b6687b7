from __future__ import annotations

import math

import numpy as np
import pytest
from scipy.optimize import minimize_scalar
from hypothesis import given, settings
from hypothesis import strategies as st

from qnpsqd.detspace import CIVector, build_space, double_factorize, expectation, hartree_fock_state
from qnpsqd.eigensolver import fci_ground_state, s_squared
from qnpsqd.integrals import random_integrals, rotate_integrals
from qnpsqd.qnp import (
    CNOT_COST,
    BasinHoppingConfig,
    OptimizationError,
    QnpFabric,
    apply_qnp_or,
    apply_qnp_px,
    basin_hopping,
    basin_hopping_minimize,
    brick_pairs,
    energy_and_gradient,
    fabric_energy,
    prepare_state,
    prune_gates,
    vqe_minimize,
)


def random_state(space, rng):
    return CIVector(space, rng.normal(size=space.dim)).normalized()


@pytest.mark.parametrize("n_orb,n_layers,n_params", [(4, 4, 24), (10, 10, 180), (14, 18, 468)])
def test_parameter_count_law(n_orb, n_layers, n_params):
    f = QnpFabric.build(n_orb, n_layers, n_orb // 2)
    assert f.n_parameters == n_params == 2 * (n_orb - 1) * n_layers


@pytest.mark.parametrize("n_orb,n_layers,blocks", [(10, 3, 27), (14, 4, 52)])
def test_gate_counts(n_orb, n_layers, blocks):
    f = QnpFabric.build(n_orb, n_layers, n_orb // 2)
    assert f.n_blocks == blocks
    assert f.n_elementary_gates == 2 * blocks
    assert f.cnot_count() == blocks * (CNOT_COST["or"] + CNOT_COST["px"])


def test_brick_layout():
    assert brick_pairs(6) == [(0, 1), (2, 3), (4, 5), (1, 2), (3, 4)]
    assert brick_pairs(5) == [(0, 1), (2, 3), (1, 2), (3, 4)]


def test_reference_must_match_sector():
    with pytest.raises(ValueError):
        QnpFabric.build(4, 1, 2, 2, reference=(0b111, 0b11))


def test_or_identity_and_invalid_pair(rng):
    v = random_state(build_space(4, 2, 1), rng)
    assert np.array_equal(apply_qnp_or(v, (1, 2), 0.0).amplitudes, v.amplitudes)
    for pair in [(1, 1), (0, 4), (-1, 0)]:
        with pytest.raises(ValueError):
            apply_qnp_or(v, pair, 0.1)
        with pytest.raises(ValueError):
            apply_qnp_px(v, pair, 0.1)


def test_or_transports_single_electron():
    space = build_space(3, 1, 0)
    v = CIVector.determinant(space, 0b001, 0)
    out = apply_qnp_or(v, (0, 2), math.pi)
    target = CIVector.determinant(space, 0b100, 0).amplitudes
    assert abs(abs(out.amplitudes @ target) - 1.0) < 1e-15


@settings(max_examples=25, deadline=None)
@given(a=st.floats(-6, 6), b=st.floats(-6, 6), seed=st.integers(0, 1000))
def test_or_composition(a, b, seed):
    v = random_state(build_space(4, 2, 2), np.random.default_rng(seed))
    twice = apply_qnp_or(apply_qnp_or(v, (1, 2), a), (1, 2), b)
    once = apply_qnp_or(v, (1, 2), a + b)
    assert np.max(np.abs(twice.amplitudes - once.amplitudes)) < 1e-12


@pytest.mark.parametrize("pair", [(0, 1), (1, 2), (0, 3), (3, 1)])
def test_or_is_an_orbital_rotation(pair, rng):
    # <OR psi|H|OR psi> equals <psi|H'|psi> with H' in the Givens-rotated orbital basis
    s = random_integrals(4, 3, rng)
    v = random_state(build_space(4, 2, 1), rng)
    phi = 0.7
    p, q = pair
    u = np.eye(4)
    c, sn = math.cos(phi / 2), math.sin(phi / 2)
    u[p, p], u[q, p], u[p, q], u[q, q] = c, sn, -sn, c
    assert expectation(s, apply_qnp_or(v, pair, phi)) == pytest.approx(
        expectation(rotate_integrals(s, u), v), abs=1e-12
    )


def test_px_identity_and_single_occupation_untouched(rng):
    v = random_state(build_space(4, 2, 2), rng)
    assert np.array_equal(apply_qnp_px(v, (0, 1), 0.0).amplitudes, v.amplitudes)
    space = build_space(2, 1, 0)
    single = CIVector.determinant(space, 0b01, 0)
    assert np.array_equal(apply_qnp_px(single, (0, 1), 1.3).amplitudes, single.amplitudes)
    # p doubly occupied with a spectator: only pair moves count
    space = build_space(3, 2, 1)
    mixed = CIVector.determinant(space, 0b011, 0b010)
    assert np.array_equal(apply_qnp_px(mixed, (0, 2), 0.9).amplitudes, mixed.amplitudes)


def test_px_moves_pair():
    space = build_space(3, 1, 1)
    v = CIVector.determinant(space, 0b001, 0b001)
    out = apply_qnp_px(v, (0, 2), math.pi)
    target = CIVector.determinant(space, 0b100, 0b100).amplitudes
    assert abs(abs(out.amplitudes @ target) - 1.0) < 1e-15


def test_zero_parameters_give_reference(h4):
    f = QnpFabric.build(4, 3, 2)
    v = prepare_state(f)
    assert np.array_equal(v.amplitudes, hartree_fock_state(v.space).amplitudes)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_state_is_normalized_singlet_in_sector(seed):
    rng = np.random.default_rng(seed)
    f = QnpFabric.build(6, 2, 3)
    v = prepare_state(f, rng.uniform(-np.pi, np.pi, f.n_parameters))
    assert (v.space.n_alpha, v.space.n_beta) == (3, 3)
    assert abs(v.norm() - 1.0) < 1e-12
    assert s_squared(v) <= 1e-8


def test_open_shell_reference_keeps_spin(rng):
    f = QnpFabric.build(4, 2, 3, 1)
    v = prepare_state(f, rng.normal(size=f.n_parameters))
    assert s_squared(v) == pytest.approx(2.0, abs=1e-8)


@pytest.mark.parametrize("df_rank", [None, 5])
def test_gradient_matches_central_differences(df_rank, h4, rng):
    h = double_factorize(h4, df_rank) if df_rank else h4
    f = QnpFabric.build(4, 2, 2)
    x = rng.uniform(-1, 1, f.n_parameters)
    e, g = energy_and_gradient(f, h, x)
    assert e == pytest.approx(fabric_energy(f, h, x), abs=1e-13)
    step = 1e-5
    fd = np.array(
        [
            (fabric_energy(f, h, x + step * d) - fabric_energy(f, h, x - step * d)) / (2 * step)
            for d in np.eye(len(x))
        ]
    )
    assert np.max(np.abs(g - fd)) / np.max(np.abs(fd)) < 1e-5


def test_vqe_at_minimum_returns_immediately(h4):
    f = QnpFabric.build(4, 2, 2)
    first = vqe_minimize(f, h4, 1e-7)
    again = vqe_minimize(first.fabric, h4, 1e-5)
    assert again.iterations == 0
    assert again.energy == pytest.approx(first.energy, abs=1e-12)


def test_vqe_is_variational(h4):
    e_fci = fci_ground_state(h4).energy
    f = QnpFabric.build(4, 4, 2)
    rng = np.random.default_rng(0)
    for _ in range(3):
        res = vqe_minimize(f, h4, 1e-5, x0=rng.uniform(-np.pi, np.pi, f.n_parameters))
        assert res.energy >= e_fci - 1e-9
        assert res.grad_norm <= 1e-5


def test_vqe_reports_unreachable_tolerance(h4):
    f = QnpFabric.build(4, 1, 2)
    with pytest.raises(OptimizationError) as info:
        vqe_minimize(f, h4, 1e-30, x0=np.full(f.n_parameters, 0.3))
    assert info.value.parameters.shape == (f.n_parameters,)


def test_zero_layer_fabric_gives_reference_energy(h4, reference):
    res = vqe_minimize(QnpFabric.build(4, 0, 2), h4, 1e-6)
    assert res.energy == pytest.approx(reference["h4_sto3g"]["e_hf"], abs=1e-12)


def test_basin_hopping_single_basin_equals_local_minimizer():
    center = np.array([0.3, -0.2])

    def local(x):
        return 1.5, center.copy()

    res = basin_hopping_minimize(local, local, np.zeros(2), BasinHoppingConfig(n_hops=5))
    assert res.energy == 1.5 and np.array_equal(res.parameters, center)
    assert all(h.accepted for h in res.history)


def double_well(x):
    return (x[0] ** 2 - 1.0) ** 2 + 0.3 * x[0]


def local_descent(x):
    # bounded scalar minimization within the well that contains x
    left = minimize_scalar(double_well_1d, bounds=(-3, 0), method="bounded", options={"xatol": 1e-12})
    right = minimize_scalar(double_well_1d, bounds=(0, 3), method="bounded", options={"xatol": 1e-12})
    best = left if x[0] < 0 else right
    return float(best.fun), np.array([best.x])


def double_well_1d(t):
    return double_well(np.array([t]))


def test_basin_hopping_finds_global_well_of_double_well():
    grid = np.linspace(-3, 3, 10_000)
    global_min = grid[np.argmin([double_well_1d(t) for t in grid])]
    config = BasinHoppingConfig(n_hops=30, perturbation_scale=1.5, temperature=0.05, seed=4)
    res = basin_hopping_minimize(local_descent, local_descent, np.array([1.0]), config)
    assert res.parameters[0] == pytest.approx(global_min, abs=1e-3)


def test_metropolis_always_accepts_downhill():
    values = iter([5.0, 4.0, 3.0, 2.0, 1.0])

    def local(x):
        return next(values), x

    res = basin_hopping_minimize(local, lambda x: (0.0, x), np.zeros(1), BasinHoppingConfig(n_hops=4, temperature=0.0))
    assert [h.accepted for h in res.history] == [True] * 5


def test_failed_hops_are_skipped_and_recorded():
    calls = {"n": 0}

    def local(x):
        calls["n"] += 1
        if calls["n"] == 2:
            raise OptimizationError("line search", x, 0.0)
        return 1.0, x

    res = basin_hopping_minimize(local, local, np.zeros(1), BasinHoppingConfig(n_hops=3))
    assert [h.status for h in res.history] == ["ok", "skipped", "ok", "ok"]


@pytest.mark.parametrize("err_energy,expected", [(0.5, 0.5), (2.0, 1.0)])
def test_tight_failure_keeps_better_point_and_flags(err_energy, expected):
    def loose(x):
        return 1.0, np.ones(1)

    def tight(x):
        raise OptimizationError("no convergence", np.full(1, 7.0), err_energy)

    res = basin_hopping_minimize(loose, tight, np.zeros(1), BasinHoppingConfig(n_hops=0))
    assert not res.tight_converged
    assert res.energy == expected and res.loose_energy == 1.0


def test_tight_success_is_flagged_converged():
    res = basin_hopping_minimize(lambda x: (1.0, x), lambda x: (0.5, x), np.zeros(1), BasinHoppingConfig(n_hops=1))
    assert res.tight_converged and res.energy == 0.5


def test_basin_hopping_deterministic_across_threads(h4):
    f = QnpFabric.build(4, 2, 2)
    base = dict(n_hops=2, seed=9, n_restarts=3, loose_tol=1e-3)
    one, _ = basin_hopping(f, h4, BasinHoppingConfig(**base, threads=1))
    many, _ = basin_hopping(f, h4, BasinHoppingConfig(**base, threads=3))
    assert one.energy == many.energy
    assert np.array_equal(one.parameters, many.parameters)
    assert one.history == many.history


def test_prune_all_zero_disables_everything(h4, reference):
    f = QnpFabric.build(4, 2, 2)
    res = prune_gates(f, h4, 1e-6, 0.0)
    assert res.fabric.n_elementary_gates == 0
    assert res.energy_shift == 0.0
    assert res.energy_after == pytest.approx(reference["h4_sto3g"]["e_hf"], abs=1e-12)


def test_prune_with_zero_thresholds_keeps_everything(h4, rng):
    f = QnpFabric.build(4, 2, 2)
    f = f.with_parameters(rng.uniform(-1, 1, f.n_parameters))
    res = prune_gates(f, h4, 0.0, 0.0)
    assert res.removed == [] and res.fabric.n_elementary_gates == f.n_elementary_gates


def test_prune_energy_shift_bound(h4):
    f = vqe_minimize(QnpFabric.build(4, 3, 2), h4, 1e-6).fabric
    eps = 1e-4
    res = prune_gates(f, h4, 1e-3, eps)
    assert res.fabric.n_elementary_gates < f.n_elementary_gates
    assert abs(res.energy_shift) <= len(res.removed) * eps + 1e-12
    assert res.energy_after == pytest.approx(fabric_energy(res.fabric, h4), abs=1e-14)


def test_fabric_json_roundtrip(rng):
    f = QnpFabric.build(5, 2, 2, 1)
    f = f.with_parameters(rng.normal(size=f.n_parameters)).disable([(0, "px"), (3, "or")])
    g = QnpFabric.from_json(f.to_json())
    assert g == f
    assert g.n_parameters == f.n_parameters == 2 * 4 * 2 - 2


def test_with_parameters_checks_length():
    with pytest.raises(ValueError):
        QnpFabric.build(4, 1, 2).with_parameters(np.zeros(5))
