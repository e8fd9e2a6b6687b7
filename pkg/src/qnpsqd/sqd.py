"""Sample-based quantum diagonalization on determinant-sector states.

Bit strings use the blocked spin layout: for ``n`` spatial orbitals, character
``k`` of a string is the occupation of alpha orbital ``k`` when ``k < n`` and of
beta orbital ``k - n`` otherwise. A *configuration* is the pair of integer
bitmasks ``(alpha, beta)`` with bit ``p`` marking orbital ``p``.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

from qnpsqd.detspace import (
    CIVector,
    DeterminantSpace,
    _sigma,
    build_space,
    hamiltonian_diagonal,
    occupation_matrix,
    string_rank,
)
from qnpsqd.eigensolver import davidson_lowest, s_squared
from qnpsqd.embedding import hartree_to_kjmol
from qnpsqd.integrals import IntegralSet

# floor added to every flip weight so no orbital has zero selection probability
FLIP_WEIGHT_FLOOR = 1e-6

Configuration = tuple[int, int]


@dataclass(frozen=True)
class NoiseSpec:
    """Readout bit flips plus depolarization, emulated on the sampled distribution.

    Depolarization with per-gate probability ``p`` over ``n_gates`` two-qubit
    gates mixes the ideal distribution with the uniform distribution over all
    ``2**n_qubits`` strings at weight ``1 - (1 - p)**n_gates``.
    """

    readout_flip_prob: float = 0.0
    gate_depolarizing_prob: float = 0.0
    n_gates: int = 0

    def __post_init__(self):
        for name in ("readout_flip_prob", "gate_depolarizing_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name}={p} is not a probability")
        if self.n_gates < 0:
            raise ValueError("n_gates must be nonnegative")

    @property
    def depolarized_fraction(self) -> float:
        return 1.0 - (1.0 - self.gate_depolarizing_prob) ** self.n_gates


NOISELESS = NoiseSpec()


def config_to_bitstring(config: Configuration, n_orb: int) -> str:
    alpha, beta = config
    return "".join(str((alpha >> p) & 1) for p in range(n_orb)) + "".join(
        str((beta >> p) & 1) for p in range(n_orb)
    )


def bitstring_to_config(bits: str, n_orb: int) -> Configuration:
    if len(bits) != 2 * n_orb or set(bits) - {"0", "1"}:
        raise ValueError(f"bad bit string {bits!r} for {n_orb} orbitals")
    alpha = sum(1 << p for p in range(n_orb) if bits[p] == "1")
    beta = sum(1 << p for p in range(n_orb) if bits[n_orb + p] == "1")
    return alpha, beta


@dataclass(frozen=True)
class SampleSet:
    """Measured bit strings and their shot counts (keys sorted)."""

    n_qubits: int
    shots: dict[str, int]
    seed: int | None = None
    noise: NoiseSpec = NOISELESS

    def __post_init__(self):
        if self.n_qubits % 2:
            raise ValueError("blocked spin layout needs an even qubit count")
        for bits in self.shots:
            if len(bits) != self.n_qubits:
                raise ValueError(f"bit string {bits!r} has length {len(bits)} != {self.n_qubits}")
        object.__setattr__(self, "shots", dict(sorted(self.shots.items())))

    @property
    def n_orb(self) -> int:
        return self.n_qubits // 2

    @property
    def total_shots(self) -> int:
        return sum(self.shots.values())

    def configurations(self) -> list[tuple[Configuration, int]]:
        return [(bitstring_to_config(b, self.n_orb), n) for b, n in self.shots.items()]

    def to_json(self) -> str:
        return json.dumps(
            {"n_qubits": self.n_qubits, "seed": self.seed, "noise": asdict(self.noise), "shots": self.shots},
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> SampleSet:
        d = json.loads(text)
        return cls(d["n_qubits"], {k: int(v) for k, v in d["shots"].items()}, d.get("seed"), NoiseSpec(**d.get("noise", {})))


def _codes_to_shots(codes: np.ndarray, n_orb: int) -> dict[str, int]:
    uniq, counts = np.unique(codes, return_counts=True)
    mask = (1 << n_orb) - 1
    return {
        config_to_bitstring((int(c) & mask, int(c) >> n_orb), n_orb): int(k) for c, k in zip(uniq, counts)
    }


def sample_bitstrings(
    v: CIVector,
    n_shots: int,
    noise: NoiseSpec = NOISELESS,
    seed: int | Sequence[int] | None = 0,
) -> SampleSet:
    """Draw ``n_shots`` strings from ``|a_x|^2``, then apply the noise model.

    Random draws happen in a fixed order (depolarized shot count, ideal
    multinomial, uniform strings, readout flips), so the result is a pure
    function of ``seed``.
    """
    norm = v.norm()
    if abs(norm - 1.0) > 1e-8:
        raise ValueError(f"state is not normalized (norm {norm:.12f})")
    if n_shots < 0:
        raise ValueError("n_shots must be nonnegative")
    space = v.space
    n = space.n_orb
    n_qubits = 2 * n
    rng = np.random.default_rng(seed)

    n_uniform = int(rng.binomial(n_shots, noise.depolarized_fraction)) if noise.depolarized_fraction else 0
    probs = v.amplitudes**2
    counts = rng.multinomial(n_shots - n_uniform, probs / probs.sum())
    idx = np.repeat(np.arange(space.dim), counts)
    ia, ib = np.divmod(idx, space.n_beta_strings)
    codes = space.alpha_strings[ia] | (space.beta_strings[ib] << n)
    if n_uniform:
        codes = np.concatenate([codes, rng.integers(0, 1 << n_qubits, size=n_uniform, dtype=np.int64)])
    if noise.readout_flip_prob > 0 and len(codes):
        flips = rng.random((len(codes), n_qubits)) < noise.readout_flip_prob
        codes = codes ^ (flips.astype(np.int64) @ (np.int64(1) << np.arange(n_qubits, dtype=np.int64)))
    seed_record = int(seed) if isinstance(seed, (int, np.integer)) else None
    return SampleSet(n_qubits, _codes_to_shots(codes, n), seed_record, noise)


@dataclass(frozen=True)
class HammingHistogram:
    """``{weight: (unique strings, shots)}`` totals and per ``(alpha, beta)`` weight pair."""

    total: dict[int, tuple[int, int]]
    per_spin: dict[tuple[int, int], tuple[int, int]]


def hamming_histogram(s: SampleSet) -> HammingHistogram:
    total: dict[int, list[int]] = {}
    per_spin: dict[tuple[int, int], list[int]] = {}
    for (a, b), n in s.configurations():
        wa, wb = a.bit_count(), b.bit_count()
        for table, key in ((total, wa + wb), (per_spin, (wa, wb))):
            entry = table.setdefault(key, [0, 0])
            entry[0] += 1
            entry[1] += n
    return HammingHistogram(
        {k: tuple(v) for k, v in sorted(total.items())},
        {k: tuple(v) for k, v in sorted(per_spin.items())},
    )


def histogram_csv(h: HammingHistogram) -> str:
    """Electron count versus occurrences, with unique-string counts alongside."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["n_electrons", "occurrences", "unique_strings"])
    for k, (uniq, shots) in h.total.items():
        w.writerow([k, shots, uniq])
    return buf.getvalue()


def postselect(s: SampleSet, n_alpha: int, n_beta: int) -> frozenset[Configuration]:
    """Unique configurations with exactly ``n_alpha`` alpha and ``n_beta`` beta electrons."""
    return frozenset(
        (a, b) for (a, b), _ in s.configurations() if a.bit_count() == n_alpha and b.bit_count() == n_beta
    )


def _correct_string(x: int, target: int, occ: np.ndarray, rng: np.random.Generator) -> int:
    n = len(occ)
    bits = np.array([(x >> p) & 1 for p in range(n)])
    excess = int(bits.sum()) - target
    if excess == 0:
        return x
    # flip candidates: occupied bits for a surplus, empty bits for a deficit
    cand = np.nonzero(bits == (1 if excess > 0 else 0))[0]
    weights = np.abs(bits[cand] - occ[cand]) + FLIP_WEIGHT_FLOOR
    chosen = rng.choice(cand, size=abs(excess), replace=False, p=weights / weights.sum())
    for p in chosen:
        x ^= 1 << int(p)
    return x


def recover_configurations(
    s: SampleSet,
    occupations: np.ndarray,
    n_alpha: int,
    n_beta: int,
    seed: int | Sequence[int] | None = 0,
) -> frozenset[Configuration]:
    """Repair every sampled string to the right per-spin electron counts.

    ``occupations`` has shape ``(2, n_orb)`` (alpha row, beta row). In each spin
    block a string with ``k`` surplus (missing) electrons has ``k`` occupied
    (empty) bits flipped, drawn without replacement with probability
    proportional to ``|x_p - n_p| + 1e-6``. Unique strings are processed in
    sorted order, independent of their shot counts.
    """
    occ = np.asarray(occupations, dtype=float)
    n = s.n_orb
    if occ.shape != (2, n):
        raise ValueError(f"occupations must have shape (2, {n}), got {occ.shape}")
    if np.any(occ < -1e-12) or np.any(occ > 1 + 1e-12):
        raise ValueError("occupations must lie in [0, 1]")
    if not (0 <= n_alpha <= n and 0 <= n_beta <= n):
        raise ValueError("electron counts do not fit the orbital count")
    occ = np.clip(occ, 0.0, 1.0)
    rng = np.random.default_rng(seed)
    out = set()
    for (a, b), _ in s.configurations():
        out.add((_correct_string(a, n_alpha, occ[0], rng), _correct_string(b, n_beta, occ[1], rng)))
    return frozenset(out)


@dataclass
class SubspaceResult:
    energy: float
    vector: CIVector
    occupations: np.ndarray
    subspace_size: int
    s_squared: float
    iterations: int


def subspace_indices(
    configs: Iterable[Configuration], space: DeterminantSpace, mode: str = "product"
) -> np.ndarray:
    """Flat sector indices spanned by ``configs``.

    ``mode="span"`` uses exactly the given determinants. ``mode="product"``
    uses every combination of a sampled alpha string with a sampled beta
    string; for equal spin counts both spins draw from the union of the two
    string sets, which keeps the subspace symmetric under spin exchange.
    """
    configs = sorted(set(configs))
    if not configs:
        raise ValueError("empty configuration set")
    for a, b in configs:
        if a.bit_count() != space.n_alpha or b.bit_count() != space.n_beta or max(a, b) >> space.n_orb:
            raise ValueError(f"configuration {(a, b)} is outside the ({space.n_alpha}, {space.n_beta}) sector")
    alphas = np.array([a for a, _ in configs], dtype=np.int64)
    betas = np.array([b for _, b in configs], dtype=np.int64)
    if mode == "span":
        return np.unique(space.indices(alphas, betas))
    if mode != "product":
        raise ValueError(f"unknown subspace mode {mode!r}")
    ua, ub = np.unique(alphas), np.unique(betas)
    if space.n_alpha == space.n_beta:
        ua = ub = np.union1d(ua, ub)
    ra, rb = string_rank(ua, space.n_orb), string_rank(ub, space.n_orb)
    return np.sort((ra[:, None] * space.n_beta_strings + rb[None, :]).reshape(-1))


def spin_occupations(v: CIVector) -> np.ndarray:
    """``(2, n_orb)`` average occupations ``<n_p alpha>``, ``<n_p beta>``."""
    c = v.as_matrix()
    sp = v.space
    w_alpha = np.sum(c * c, axis=1)
    w_beta = np.sum(c * c, axis=0)
    norm2 = w_alpha.sum()
    occ_a = w_alpha @ occupation_matrix(sp.alpha_strings, sp.n_orb)
    occ_b = w_beta @ occupation_matrix(sp.beta_strings, sp.n_orb)
    return np.vstack([occ_a, occ_b]) / norm2


def subspace_diagonalize(
    configs: Iterable[Configuration],
    a: IntegralSet,
    *,
    n_alpha: int | None = None,
    n_beta: int | None = None,
    mode: str = "product",
    tol: float = 1e-10,
) -> SubspaceResult:
    """Lowest eigenpair of the Hamiltonian projected onto the configuration subspace.

    ``a`` may be an :class:`IntegralSet` or anything with an ``integrals``
    attribute. The sector defaults to the integral set's ``(n_elec, ms2)``.
    """
    s = getattr(a, "integrals", a)
    if n_alpha is None or n_beta is None:
        n_alpha, n_beta = (s.n_elec + s.ms2) // 2, (s.n_elec - s.ms2) // 2
    space = build_space(s.n_orb, n_alpha, n_beta)
    idx = subspace_indices(configs, space, mode)
    diag = hamiltonian_diagonal(s, space)[idx]

    def apply(x: np.ndarray) -> np.ndarray:
        full = np.zeros(space.dim)
        full[idx] = x
        return _sigma(s, full.reshape(space.shape), space).reshape(-1)[idx]

    res = davidson_lowest(apply, len(idx), tol=tol, diagonal=diag)
    amps = np.zeros(space.dim)
    amps[idx] = res.vector
    vec = CIVector(space, amps)
    return SubspaceResult(
        energy=res.energy,
        vector=vec,
        occupations=spin_occupations(vec),
        subspace_size=len(idx),
        s_squared=s_squared(vec),
        iterations=res.iterations,
    )


@dataclass(frozen=True)
class SqdConfig:
    n_shots: int = 100_000
    noise: NoiseSpec = NOISELESS
    max_recovery_rounds: int = 10
    energy_tol: float = 1e-6
    seed: int = 0
    recovery: bool = True
    mode: str = "product"


@dataclass
class RoundRecord:
    round: int
    energy: float | None
    subspace_size: int
    n_configurations: int
    s_squared: float | None


@dataclass
class SqdReport:
    rounds: list[RoundRecord]
    histogram: HammingHistogram
    postselected_count: int
    postselection_energy: float | None
    final_energy: float
    final_s_squared: float
    converged: bool
    fci_reference: float | None = None
    occupations: np.ndarray = field(default_factory=lambda: np.zeros((2, 0)))

    def as_dict(self) -> dict:
        d = {
            "rounds": [asdict(r) for r in self.rounds],
            "histogram": {str(k): shots for k, (_, shots) in self.histogram.total.items()},
            "histogram_per_spin": {f"{a},{b}": shots for (a, b), (_, shots) in self.histogram.per_spin.items()},
            "postselected_count": self.postselected_count,
            "postselection_energy": self.postselection_energy,
            "final_energy": self.final_energy,
            "final_s_squared": self.final_s_squared,
            "converged": self.converged,
        }
        if self.fci_reference is not None:
            d["fci_reference"] = self.fci_reference
        return d

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2)


def sqd_run(
    source: CIVector | SampleSet,
    a: IntegralSet,
    config: SqdConfig = SqdConfig(),
    fci_reference: float | None = None,
) -> SqdReport:
    """Sample, postselect, then iterate recovery and subspace diagonalization.

    Round 0 diagonalizes the postselected configurations; its occupations seed
    the first recovery (uniform ``N_e / N_q`` if nothing survived
    postselection). Every round diagonalizes the union of all configurations
    seen so far, so per-round energies never increase. Stops when the energy
    changes by less than ``energy_tol`` or after ``max_recovery_rounds``.
    Sampling uses the seed stream ``(seed, 0)`` and recovery round ``r`` uses
    ``(seed, r)``.
    """
    s = getattr(a, "integrals", a)
    n_alpha, n_beta = (s.n_elec + s.ms2) // 2, (s.n_elec - s.ms2) // 2
    if isinstance(source, SampleSet):
        samples = source
    else:
        samples = sample_bitstrings(source, config.n_shots, config.noise, seed=[config.seed, 0])
    if samples.n_orb != s.n_orb:
        raise ValueError(f"dimension mismatch: samples on {samples.n_orb} orbitals, integrals on {s.n_orb}")

    hist = hamming_histogram(samples)
    pool = set(postselect(samples, n_alpha, n_beta))
    rounds: list[RoundRecord] = []
    result: SubspaceResult | None = None
    e_post = None
    if pool:
        result = subspace_diagonalize(pool, s, n_alpha=n_alpha, n_beta=n_beta, mode=config.mode)
        occ = result.occupations
        e_post = result.energy
        rounds.append(RoundRecord(0, result.energy, result.subspace_size, len(pool), result.s_squared))
    else:
        occ = np.full((2, s.n_orb), (n_alpha + n_beta) / (2 * s.n_orb))
        rounds.append(RoundRecord(0, None, 0, 0, None))

    converged = not config.recovery
    if config.recovery:
        e_prev = e_post
        for r in range(1, config.max_recovery_rounds + 1):
            pool |= recover_configurations(samples, occ, n_alpha, n_beta, seed=[config.seed, r])
            result = subspace_diagonalize(pool, s, n_alpha=n_alpha, n_beta=n_beta, mode=config.mode)
            occ = result.occupations
            rounds.append(RoundRecord(r, result.energy, result.subspace_size, len(pool), result.s_squared))
            if e_prev is not None and abs(result.energy - e_prev) < config.energy_tol:
                converged = True
                break
            e_prev = result.energy
    if result is None:
        raise ValueError("no configuration survived postselection and recovery is disabled")
    return SqdReport(
        rounds=rounds,
        histogram=hist,
        postselected_count=len(postselect(samples, n_alpha, n_beta)),
        postselection_energy=e_post,
        final_energy=result.energy,
        final_s_squared=result.s_squared,
        converged=converged,
        fci_reference=fci_reference,
        occupations=result.occupations,
    )


def kjmol_deviation(energy: float, reference: float) -> float:
    return hartree_to_kjmol(energy - reference)


__all__ = [
    "Configuration",
    "HammingHistogram",
    "NoiseSpec",
    "RoundRecord",
    "SampleSet",
    "SqdConfig",
    "SqdReport",
    "SubspaceResult",
    "bitstring_to_config",
    "config_to_bitstring",
    "hamming_histogram",
    "histogram_csv",
    "kjmol_deviation",
    "postselect",
    "recover_configurations",
    "sample_bitstrings",
    "spin_occupations",
    "subspace_diagonalize",
    "subspace_indices",
    "sqd_run",
]
