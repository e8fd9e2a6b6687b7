"""Quantum-number-preserving (QNP) fabric ansatz simulated on determinant-sector CI vectors.

Each fabric block ``Q(phi, theta)`` acting on neighbouring spatial orbitals
``(p, p+1)`` is an orbital rotation followed by a pair exchange:

* ``QNP_OR(phi) = exp(phi/2 (E_qp - E_pq))`` with ``E = E^alpha + E^beta``, i.e.
  the same Givens rotation ``[[cos, -sin], [sin, cos]](phi/2)`` applied to both
  spins;
* ``QNP_PX(theta) = exp(theta/2 (P_qp - P_pq))`` with the pair hop
  ``P_qp = a+_{q alpha} a+_{q beta} a_{p beta} a_{p alpha}``, a rotation in the
  plane of "pair on p" and "pair on q".

Both generators are real, antisymmetric and spin-free, so the fabric conserves
particle number, ``S_z`` and ``S^2``. Blocks in a layer are laid out as a brick
wall: pairs ``(0,1), (2,3), ...`` followed by ``(1,2), (3,4), ...``.
"""

from __future__ import annotations

import functools
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
import scipy.optimize

from qnpsqd.detspace import (
    CIVector,
    DeterminantSpace,
    DoubleFactorizedHamiltonian,
    _sigma,
    apply_df_hamiltonian,
    aufbau_strings,
    build_space,
    double_factorize,
    spin_strings,
    string_rank,
)
from qnpsqd.integrals import IntegralSet

logger = logging.getLogger(__name__)

# two-qubit gate cost of each elementary gate in a CNOT decomposition
CNOT_COST = {"or": 4, "px": 13}

# Metropolis temperature default: 5 x chemical accuracy (1 kcal/mol) in Hartree
CHEMICAL_ACCURACY = 4.184 / 2625.4996


class OptimizationError(RuntimeError):
    """Local optimization failed; ``parameters`` holds the last iterate."""

    def __init__(self, message: str, parameters: np.ndarray, energy: float):
        super().__init__(message)
        self.parameters = parameters
        self.energy = energy


# ---------------------------------------------------------------------------
# fabric
# ---------------------------------------------------------------------------


@dataclass
class QnpGate:
    layer: int
    pair: tuple[int, int]
    phi: float = 0.0
    theta: float = 0.0
    or_enabled: bool = True
    px_enabled: bool = True


def brick_pairs(n_orb: int) -> list[tuple[int, int]]:
    even = [(p, p + 1) for p in range(0, n_orb - 1, 2)]
    odd = [(p, p + 1) for p in range(1, n_orb - 1, 2)]
    return even + odd


def _bits(mask: int, n: int) -> str:
    return "".join("1" if (mask >> p) & 1 else "0" for p in range(n))


def _mask(bits: str) -> int:
    return sum(1 << p for p, b in enumerate(bits) if b == "1")


@dataclass
class QnpFabric:
    """Layered brick fabric of ``Q(phi, theta)`` blocks over a reference determinant.

    ``reference`` holds the alpha and beta string bitmasks (bit ``p`` = orbital ``p``).
    """

    n_orb: int
    n_layers: int
    reference: tuple[int, int]
    gates: list[QnpGate] = field(default_factory=list)

    @classmethod
    def build(
        cls,
        n_orb: int,
        n_layers: int,
        n_alpha: int,
        n_beta: int | None = None,
        reference: tuple[int, int] | None = None,
    ) -> QnpFabric:
        n_beta = n_alpha if n_beta is None else n_beta
        if reference is None:
            reference = aufbau_strings(n_alpha, n_beta)
        if reference[0].bit_count() != n_alpha or reference[1].bit_count() != n_beta:
            raise ValueError("reference determinant does not match the requested sector")
        gates = [
            QnpGate(layer, pair) for layer in range(n_layers) for pair in brick_pairs(n_orb)
        ]
        return cls(n_orb, n_layers, (int(reference[0]), int(reference[1])), gates)

    @property
    def n_alpha(self) -> int:
        return self.reference[0].bit_count()

    @property
    def n_beta(self) -> int:
        return self.reference[1].bit_count()

    @property
    def space(self) -> DeterminantSpace:
        return build_space(self.n_orb, self.n_alpha, self.n_beta)

    @property
    def n_blocks(self) -> int:
        return len(self.gates)

    def elementary_gates(self, enabled_only: bool = True) -> list[tuple[int, str]]:
        """``(gate_index, "or" | "px")`` in application order."""
        out = []
        for k, g in enumerate(self.gates):
            if g.or_enabled or not enabled_only:
                out.append((k, "or"))
            if g.px_enabled or not enabled_only:
                out.append((k, "px"))
        return out

    @property
    def n_elementary_gates(self) -> int:
        return len(self.elementary_gates())

    @property
    def n_parameters(self) -> int:
        return self.n_elementary_gates

    def cnot_count(self) -> int:
        return sum(CNOT_COST[kind] for _, kind in self.elementary_gates())

    def parameters(self) -> np.ndarray:
        return np.array(
            [self.gates[k].phi if kind == "or" else self.gates[k].theta for k, kind in self.elementary_gates()]
        )

    def with_parameters(self, x: np.ndarray) -> QnpFabric:
        x = np.asarray(x, dtype=float)
        ops = self.elementary_gates()
        if x.shape != (len(ops),):
            raise ValueError(f"expected {len(ops)} parameters, got {x.shape}")
        gates = [replace(g) for g in self.gates]
        for (k, kind), val in zip(ops, x):
            if kind == "or":
                gates[k].phi = float(val)
            else:
                gates[k].theta = float(val)
        return replace(self, gates=gates)

    def disable(self, ops: list[tuple[int, str]]) -> QnpFabric:
        gates = [replace(g) for g in self.gates]
        for k, kind in ops:
            if kind == "or":
                gates[k].or_enabled = False
            else:
                gates[k].px_enabled = False
        return replace(self, gates=gates)

    def to_dict(self) -> dict:
        return {
            "n_orb": self.n_orb,
            "n_layers": self.n_layers,
            "reference": {
                "alpha": _bits(self.reference[0], self.n_orb),
                "beta": _bits(self.reference[1], self.n_orb),
            },
            "gates": [
                {
                    "layer": g.layer,
                    "pair": list(g.pair),
                    "phi": g.phi,
                    "theta": g.theta,
                    "enabled": [g.or_enabled, g.px_enabled],
                }
                for g in self.gates
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, data: dict) -> QnpFabric:
        ref = (_mask(data["reference"]["alpha"]), _mask(data["reference"]["beta"]))
        gates = []
        for g in data["gates"]:
            enabled = g.get("enabled", [True, True])
            if isinstance(enabled, bool):
                enabled = [enabled, enabled]
            gates.append(
                QnpGate(g["layer"], tuple(g["pair"]), float(g["phi"]), float(g["theta"]), *map(bool, enabled))
            )
        return cls(int(data["n_orb"]), int(data["n_layers"]), ref, gates)

    @classmethod
    def from_json(cls, text: str) -> QnpFabric:
        return cls.from_dict(json.loads(text))


# ---------------------------------------------------------------------------
# gates on CI matrices
# ---------------------------------------------------------------------------


@functools.lru_cache(maxsize=1024)
def _pair_table(n_orb: int, n_elec: int, p: int, q: int):
    """Strings with ``p`` occupied and ``q`` empty, their ``p -> q`` images and the hop sign."""
    strings = spin_strings(n_orb, n_elec)
    has_p = ((strings >> p) & 1).astype(bool)
    has_q = ((strings >> q) & 1).astype(bool)
    src = np.nonzero(has_p & ~has_q)[0]
    moved = strings[src] ^ ((1 << p) | (1 << q))
    dst = string_rank(moved, n_orb) if len(src) else src
    lo, hi = min(p, q), max(p, q)
    between = ((1 << hi) - 1) ^ ((1 << (lo + 1)) - 1)
    sign = 1.0 - 2.0 * (np.bitwise_count(strings[src] & between) & 1)
    return src, dst, sign


def _check_pair(space: DeterminantSpace, pair: tuple[int, int]) -> tuple[int, int]:
    p, q = (int(x) for x in pair)
    if p == q or not (0 <= p < space.n_orb and 0 <= q < space.n_orb):
        raise ValueError(f"invalid orbital pair {pair} for {space.n_orb} orbitals")
    return p, q


def _rotate_or(c: np.ndarray, space: DeterminantSpace, p: int, q: int, cos: float, sin: float) -> np.ndarray:
    out = c.copy()
    src, dst, sg = _pair_table(space.n_orb, space.n_alpha, p, q)
    if len(src):
        a, b = c[src], c[dst]
        out[src] = cos * a - sin * sg[:, None] * b
        out[dst] = cos * b + sin * sg[:, None] * a
    c2 = out.copy()
    src, dst, sg = _pair_table(space.n_orb, space.n_beta, p, q)
    if len(src):
        a, b = c2[:, src], c2[:, dst]
        out[:, src] = cos * a - sin * sg[None, :] * b
        out[:, dst] = cos * b + sin * sg[None, :] * a
    return out


def _generator_or(c: np.ndarray, space: DeterminantSpace, p: int, q: int) -> np.ndarray:
    out = np.zeros_like(c)
    src, dst, sg = _pair_table(space.n_orb, space.n_alpha, p, q)
    if len(src):
        out[src] -= sg[:, None] * c[dst]
        out[dst] += sg[:, None] * c[src]
    src, dst, sg = _pair_table(space.n_orb, space.n_beta, p, q)
    if len(src):
        out[:, src] -= sg[None, :] * c[:, dst]
        out[:, dst] += sg[None, :] * c[:, src]
    return out


def _rotate_px(c: np.ndarray, space: DeterminantSpace, p: int, q: int, cos: float, sin: float) -> np.ndarray:
    sa_src, sa_dst, sa = _pair_table(space.n_orb, space.n_alpha, p, q)
    sb_src, sb_dst, sb = _pair_table(space.n_orb, space.n_beta, p, q)
    out = c.copy()
    if len(sa_src) and len(sb_src):
        on_p = np.ix_(sa_src, sb_src)
        on_q = np.ix_(sa_dst, sb_dst)
        x, y, s = c[on_p], c[on_q], np.outer(sa, sb)
        out[on_p] = cos * x - sin * s * y
        out[on_q] = cos * y + sin * s * x
    return out


def _generator_px(c: np.ndarray, space: DeterminantSpace, p: int, q: int) -> np.ndarray:
    sa_src, sa_dst, sa = _pair_table(space.n_orb, space.n_alpha, p, q)
    sb_src, sb_dst, sb = _pair_table(space.n_orb, space.n_beta, p, q)
    out = np.zeros_like(c)
    if len(sa_src) and len(sb_src):
        on_p = np.ix_(sa_src, sb_src)
        on_q = np.ix_(sa_dst, sb_dst)
        s = np.outer(sa, sb)
        out[on_p] = -s * c[on_q]
        out[on_q] = s * c[on_p]
    return out


_ROTATE = {"or": _rotate_or, "px": _rotate_px}
_GENERATOR = {"or": _generator_or, "px": _generator_px}


def apply_qnp_or(v: CIVector, pair: tuple[int, int], phi: float) -> CIVector:
    """Spin-adapted orbital rotation by ``phi`` (half-angle Givens rotation on both spins)."""
    p, q = _check_pair(v.space, pair)
    out = _rotate_or(v.as_matrix(), v.space, p, q, math.cos(phi / 2), math.sin(phi / 2))
    return CIVector(v.space, out.reshape(-1))


def apply_qnp_px(v: CIVector, pair: tuple[int, int], theta: float) -> CIVector:
    """Diagonal pair exchange: rotation by ``theta/2`` between "pair on p" and "pair on q"."""
    p, q = _check_pair(v.space, pair)
    out = _rotate_px(v.as_matrix(), v.space, p, q, math.cos(theta / 2), math.sin(theta / 2))
    return CIVector(v.space, out.reshape(-1))


def _reference_matrix(f: QnpFabric) -> np.ndarray:
    space = f.space
    c = np.zeros(space.shape)
    c[string_rank(f.reference[0], f.n_orb), string_rank(f.reference[1], f.n_orb)] = 1.0
    return c


def _circuit(f: QnpFabric, x: np.ndarray | None = None):
    ops = f.elementary_gates()
    if x is None:
        x = f.parameters()
    return [(kind, f.gates[k].pair, float(val)) for (k, kind), val in zip(ops, x)]


def prepare_state(f: QnpFabric, x: np.ndarray | None = None) -> CIVector:
    """Apply every enabled gate to the reference, layer by layer, OR before PX in each block."""
    space = f.space
    c = _reference_matrix(f)
    for kind, (p, q), val in _circuit(f, x):
        c = _ROTATE[kind](c, space, p, q, math.cos(val / 2), math.sin(val / 2))
    return CIVector(space, c.reshape(-1))


# ---------------------------------------------------------------------------
# energies and gradients
# ---------------------------------------------------------------------------

Hamiltonian = IntegralSet | DoubleFactorizedHamiltonian


def hamiltonian_matrix_apply(h: Hamiltonian, space: DeterminantSpace) -> Callable[[np.ndarray], np.ndarray]:
    """``C -> H C`` on CI matrices for exact or double-factorized Hamiltonians."""
    if h.n_orb != space.n_orb:
        raise ValueError(f"dimension mismatch: {h.n_orb} orbitals vs {space.n_orb}")
    if isinstance(h, DoubleFactorizedHamiltonian):
        return lambda c: apply_df_hamiltonian(h, CIVector(space, c.reshape(-1))).as_matrix()
    return lambda c: _sigma(h, c, space)


def energy_and_gradient(f: QnpFabric, h: Hamiltonian, x: np.ndarray | None = None) -> tuple[float, np.ndarray]:
    """``<psi|H|psi>`` and its gradient with respect to the enabled parameters.

    Reverse-mode (adjoint) pass: one forward sweep, one Hamiltonian
    application, one backward sweep. ``dE/dx_k = <lambda_k| G_k |phi_k>``
    where ``G_k`` is the gate generator.
    """
    space = f.space
    circuit = _circuit(f, x)
    hop = hamiltonian_matrix_apply(h, space)
    psi = _reference_matrix(f)
    for kind, (p, q), val in circuit:
        psi = _ROTATE[kind](psi, space, p, q, math.cos(val / 2), math.sin(val / 2))
    lam = hop(psi)
    energy = float(np.vdot(psi, lam))
    grad = np.zeros(len(circuit))
    for k in range(len(circuit) - 1, -1, -1):
        kind, (p, q), val = circuit[k]
        grad[k] = np.vdot(lam, _GENERATOR[kind](psi, space, p, q))
        c, s = math.cos(val / 2), math.sin(val / 2)
        psi = _ROTATE[kind](psi, space, p, q, c, -s)
        lam = _ROTATE[kind](lam, space, p, q, c, -s)
    return energy, grad


def fabric_energy(f: QnpFabric, h: Hamiltonian, x: np.ndarray | None = None) -> float:
    psi = prepare_state(f, x)
    hpsi = hamiltonian_matrix_apply(h, psi.space)(psi.as_matrix())
    return float(np.vdot(psi.as_matrix(), hpsi))


# ---------------------------------------------------------------------------
# optimization
# ---------------------------------------------------------------------------


@dataclass
class VqeResult:
    energy: float
    parameters: np.ndarray
    fabric: QnpFabric
    iterations: int
    grad_norm: float
    trace: list[tuple[int, float, float]] = field(default_factory=list)


def vqe_minimize(
    f: QnpFabric,
    h: Hamiltonian,
    tol_grad: float = 1e-6,
    x0: np.ndarray | None = None,
    max_iter: int = 20_000,
) -> VqeResult:
    """Conjugate-gradient minimization of the fabric energy.

    Converged when the infinity norm of the gradient drops to ``tol_grad``.
    A line-search breakdown that leaves the gradient above ``tol_grad`` raises
    :class:`OptimizationError` carrying the last iterate.
    """
    x0 = f.parameters() if x0 is None else np.asarray(x0, dtype=float)
    trace: list[tuple[int, float, float]] = []
    last: dict = {}

    def fun(x):
        e, g = energy_and_gradient(f, h, x)
        last.update(x=x.copy(), e=e, g=g)
        return e, g

    def callback(xk):
        e, g = energy_and_gradient(f, h, xk) if not np.array_equal(last.get("x"), xk) else (last["e"], last["g"])
        trace.append((len(trace) + 1, e, float(np.max(np.abs(g), initial=0.0))))

    if len(x0) == 0:
        e = fabric_energy(f, h, x0)
        return VqeResult(e, x0, f, 0, 0.0, trace)

    # flat directions of over-parameterized fabrics can need thousands of CG steps
    options = {"gtol": tol_grad, "norm": np.inf, "maxiter": max_iter}
    res = scipy.optimize.minimize(fun, x0, jac=True, method="CG", options=options, callback=callback)
    e, g = energy_and_gradient(f, h, res.x)
    gnorm = float(np.max(np.abs(g)))
    if gnorm > tol_grad:
        raise OptimizationError(
            f"CG stopped with gradient {gnorm:.2e} > {tol_grad:.1e}: {res.message}", res.x, e
        )
    return VqeResult(e, res.x, f.with_parameters(res.x), int(res.nit), gnorm, trace)


@dataclass
class BasinHoppingConfig:
    """Settings for :func:`basin_hopping`.

    ``loose_n_df``/``tight_n_df`` select a double-factorized Hamiltonian of that
    rank for the loose/tight stage; ``None`` uses the exact Hamiltonian.
    """

    n_hops: int = 20
    perturbation_scale: float = 0.5
    temperature: float = 5 * CHEMICAL_ACCURACY
    loose_tol: float = 1e-4
    tight_tol: float = 1e-6
    loose_n_df: int | None = None
    tight_n_df: int | None = None
    seed: int = 0
    n_restarts: int = 1
    threads: int = 1


@dataclass
class HopRecord:
    chain: int
    hop: int
    energy: float | None
    accepted: bool
    basin: int
    status: str = "ok"


@dataclass
class BasinHoppingResult:
    energy: float
    parameters: np.ndarray
    loose_energy: float
    history: list[HopRecord] = field(default_factory=list)
    tight_trace: list[tuple[int, float, float]] = field(default_factory=list)
    tight_converged: bool = True


LocalMinimizer = Callable[[np.ndarray], tuple[float, np.ndarray]]


def _hop_chain(
    chain: int,
    local: LocalMinimizer,
    x0: np.ndarray,
    config: BasinHoppingConfig,
) -> tuple[float, np.ndarray, list[HopRecord]]:
    rng = np.random.default_rng([config.seed, chain])
    history: list[HopRecord] = []
    try:
        e_cur, x_cur = local(x0)
    except OptimizationError as err:
        e_cur, x_cur = err.energy, err.parameters
        history.append(HopRecord(chain, 0, e_cur, True, 0, "failed"))
    else:
        history.append(HopRecord(chain, 0, e_cur, True, 0))
    e_best, x_best = e_cur, x_cur
    basin = 0
    for hop in range(1, config.n_hops + 1):
        step = rng.uniform(-config.perturbation_scale, config.perturbation_scale, size=x_cur.shape)
        try:
            e_new, x_new = local(x_cur + step)
        except OptimizationError:
            history.append(HopRecord(chain, hop, None, False, basin, "skipped"))
            continue
        delta = e_new - e_cur
        if delta < 0:
            accept = True
        elif config.temperature > 0:
            accept = bool(rng.random() < math.exp(-delta / config.temperature))
        else:
            accept = False
        if accept:
            basin += 1
            e_cur, x_cur = e_new, x_new
        if e_new < e_best:
            e_best, x_best = e_new, x_new
        history.append(HopRecord(chain, hop, e_new, accept, basin))
    return e_best, x_best, history


def basin_hopping_minimize(
    local_loose: LocalMinimizer,
    local_tight: LocalMinimizer,
    x0: np.ndarray,
    config: BasinHoppingConfig,
) -> BasinHoppingResult:
    """Basin hopping over any objective given loose and tight local minimizers.

    Each chain: loose minimization from ``x0``, then ``n_hops`` rounds of
    uniform perturbation, loose re-minimization and Metropolis acceptance.
    The lowest loose minimum over all chains is re-minimized with
    ``local_tight``; if that fails, the better of the two points is returned
    with ``tight_converged=False``. Chain ``i`` draws from the stream ``(seed, i)``, so the
    result does not depend on how many threads run the chains.
    """
    x0 = np.asarray(x0, dtype=float)
    chains = range(config.n_restarts)
    if config.threads > 1 and config.n_restarts > 1:
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            results = list(pool.map(lambda i: _hop_chain(i, local_loose, x0, config), chains))
    else:
        results = [_hop_chain(i, local_loose, x0, config) for i in chains]
    # lowest energy wins; ties go to the lowest chain index
    best = min(range(len(results)), key=lambda i: (results[i][0], i))
    e_loose, x_loose, _ = results[best]
    history = [rec for r in results for rec in r[2]]
    try:
        e_tight, x_tight = local_tight(x_loose)
        converged = True
    except OptimizationError as err:
        # keep the better of the loose minimum and the last tight iterate, flagged
        logger.warning("tight re-minimization did not converge: %s", err)
        e_tight, x_tight = (err.energy, err.parameters) if err.energy <= e_loose else (e_loose, x_loose)
        converged = False
    return BasinHoppingResult(e_tight, x_tight, e_loose, history, tight_converged=converged)


def basin_hopping(
    f: QnpFabric,
    h: IntegralSet,
    config: BasinHoppingConfig | None = None,
) -> tuple[BasinHoppingResult, QnpFabric]:
    """Global minimization of a fabric's energy by basin hopping with loose and tight CG stages."""
    config = config or BasinHoppingConfig()
    h_loose = double_factorize(h, config.loose_n_df) if config.loose_n_df else h
    h_tight = double_factorize(h, config.tight_n_df) if config.tight_n_df else h

    def loose(x):
        r = vqe_minimize(f, h_loose, config.loose_tol, x0=x)
        return r.energy, r.parameters

    tight_runs: list[VqeResult] = []

    def tight(x):
        r = vqe_minimize(f, h_tight, config.tight_tol, x0=x)
        tight_runs.append(r)
        return r.energy, r.parameters

    result = basin_hopping_minimize(loose, tight, f.parameters(), config)
    if tight_runs:
        result.tight_trace = tight_runs[-1].trace
    return result, f.with_parameters(result.parameters)


# ---------------------------------------------------------------------------
# pruning
# ---------------------------------------------------------------------------


@dataclass
class PruneResult:
    fabric: QnpFabric
    energy_before: float
    energy_after: float
    removed: list[tuple[int, str]]

    @property
    def energy_shift(self) -> float:
        return self.energy_after - self.energy_before


def prune_gates(
    f: QnpFabric,
    h: Hamiltonian,
    epsilon_param: float,
    epsilon_energy: float,
) -> PruneResult:
    """Keep only the gates that matter.

    First disables every elementary gate whose angle is smaller than
    ``epsilon_param`` in magnitude, then walks the remaining gates in circuit
    order and disables each one whose removal moves the energy by less than
    ``epsilon_energy`` (the reference energy is updated after every removal).
    """
    e0 = fabric_energy(f, h)
    small = [
        (k, kind)
        for k, kind in f.elementary_gates()
        if abs(f.gates[k].phi if kind == "or" else f.gates[k].theta) < epsilon_param
    ]
    current = f.disable(small)
    removed = list(small)
    e_cur = fabric_energy(current, h)
    for op in current.elementary_gates():
        trial = current.disable([op])
        e_trial = fabric_energy(trial, h)
        if abs(e_trial - e_cur) < epsilon_energy:
            current, e_cur = trial, e_trial
            removed.append(op)
    return PruneResult(current, e0, e_cur, removed)
