"""Fixed-(n_alpha, n_beta) determinant spaces and Hamiltonian action on CI vectors.

Determinants are products of an alpha string and a beta string. A string is an
integer bitmask whose bit ``p`` marks orbital ``p`` as occupied; strings of a
given weight are kept in ascending integer order and ranked with the
combinatorial number system. CI amplitudes are stored row-major over
``(alpha_index, beta_index)``.

Fermionic sign convention: a determinant is
``prod_{p in alpha, ascending} a+_{p alpha} prod_{q in beta, ascending} a+_{q beta} |0>``,
i.e. all alpha operators to the left of all beta operators.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from qnpsqd.integrals import IntegralSet

DEFAULT_SECTOR_CAP = 200_000_000


class SectorTooLargeError(ValueError):
    pass


@functools.lru_cache(maxsize=None)
def _binomial_table(n: int) -> np.ndarray:
    table = np.zeros((n + 1, n + 2), dtype=np.int64)
    for p in range(n + 1):
        for k in range(n + 2):
            table[p, k] = math.comb(p, k)
    return table


@functools.lru_cache(maxsize=None)
def spin_strings(n_orb: int, n_elec: int) -> np.ndarray:
    """All ``n_orb``-bit strings of Hamming weight ``n_elec``, ascending."""
    if not 0 <= n_elec <= n_orb:
        raise ValueError(f"cannot place {n_elec} electrons in {n_orb} orbitals")
    # Gosper's hack walks weight-k integers in increasing order
    out = np.empty(math.comb(n_orb, n_elec), dtype=np.int64)
    x = (1 << n_elec) - 1
    for i in range(len(out)):
        out[i] = x
        if x == 0:
            break
        c = x & -x
        r = x + c
        x = (((r ^ x) >> 2) // c) | r
    out.setflags(write=False)
    return out


def string_rank(strings: np.ndarray | int, n_orb: int) -> np.ndarray | int:
    """Index of each string within its weight class (inverse of :func:`spin_strings`)."""
    scalar = np.ndim(strings) == 0
    s = np.atleast_1d(np.asarray(strings, dtype=np.int64))
    table = _binomial_table(n_orb)
    rank = np.zeros(s.shape, dtype=np.int64)
    count = np.zeros(s.shape, dtype=np.int64)
    for p in range(n_orb):
        bit = (s >> p) & 1
        count += bit
        rank += bit * table[p, count]
    return int(rank[0]) if scalar else rank


def occupation_matrix(strings: np.ndarray, n_orb: int) -> np.ndarray:
    """Boolean ``(len(strings), n_orb)`` occupation table."""
    return ((np.asarray(strings)[:, None] >> np.arange(n_orb)) & 1).astype(bool)


@dataclass(frozen=True)
class DeterminantSpace:
    """Determinants with ``n_alpha`` alpha and ``n_beta`` beta electrons in ``n_orb`` orbitals."""

    n_orb: int
    n_alpha: int
    n_beta: int

    @property
    def alpha_strings(self) -> np.ndarray:
        return spin_strings(self.n_orb, self.n_alpha)

    @property
    def beta_strings(self) -> np.ndarray:
        return spin_strings(self.n_orb, self.n_beta)

    @property
    def n_alpha_strings(self) -> int:
        return math.comb(self.n_orb, self.n_alpha)

    @property
    def n_beta_strings(self) -> int:
        return math.comb(self.n_orb, self.n_beta)

    @property
    def shape(self) -> tuple[int, int]:
        return self.n_alpha_strings, self.n_beta_strings

    @property
    def dim(self) -> int:
        return self.n_alpha_strings * self.n_beta_strings

    @property
    def n_elec(self) -> int:
        return self.n_alpha + self.n_beta

    def index(self, alpha: int, beta: int) -> int:
        """Flat amplitude index of the determinant with the given string bitmasks."""
        if alpha.bit_count() != self.n_alpha or beta.bit_count() != self.n_beta:
            raise ValueError("string weights do not match this space")
        ia = string_rank(alpha, self.n_orb)
        ib = string_rank(beta, self.n_orb)
        return ia * self.n_beta_strings + ib

    def indices(self, alpha: np.ndarray, beta: np.ndarray) -> np.ndarray:
        ia = string_rank(np.asarray(alpha), self.n_orb)
        ib = string_rank(np.asarray(beta), self.n_orb)
        return ia * self.n_beta_strings + ib

    def determinant(self, flat_index: int) -> tuple[int, int]:
        ia, ib = divmod(int(flat_index), self.n_beta_strings)
        return int(self.alpha_strings[ia]), int(self.beta_strings[ib])


def build_space(
    n_orb: int, n_alpha: int, n_beta: int, cap: int = DEFAULT_SECTOR_CAP
) -> DeterminantSpace:
    """Enumerate the determinant sector, refusing sectors larger than ``cap``."""
    if n_orb < 1:
        raise ValueError("n_orb must be positive")
    if not (0 <= n_alpha <= n_orb and 0 <= n_beta <= n_orb):
        raise ValueError(f"invalid sector ({n_alpha}, {n_beta}) for {n_orb} orbitals")
    dim = math.comb(n_orb, n_alpha) * math.comb(n_orb, n_beta)
    if dim > cap:
        raise SectorTooLargeError(f"sector has {dim} determinants, cap is {cap}")
    space = DeterminantSpace(n_orb, n_alpha, n_beta)
    space.alpha_strings, space.beta_strings  # noqa: B018 - warm the caches
    return space


@dataclass(frozen=True, eq=False)
class CIVector:
    """Real amplitudes over a :class:`DeterminantSpace`, row-major ``(alpha, beta)``."""

    space: DeterminantSpace
    amplitudes: np.ndarray

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=float).reshape(-1)
        if amps.shape[0] != self.space.dim:
            raise ValueError(
                f"{amps.shape[0]} amplitudes for a space of dimension {self.space.dim}"
            )
        object.__setattr__(self, "amplitudes", amps)

    def as_matrix(self) -> np.ndarray:
        return self.amplitudes.reshape(self.space.shape)

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def normalized(self) -> CIVector:
        return CIVector(self.space, self.amplitudes / self.norm())

    def dot(self, other: CIVector) -> float:
        _check_same_space(self.space, other.space)
        return float(self.amplitudes @ other.amplitudes)

    @classmethod
    def zeros(cls, space: DeterminantSpace) -> CIVector:
        return cls(space, np.zeros(space.dim))

    @classmethod
    def determinant(cls, space: DeterminantSpace, alpha: int, beta: int) -> CIVector:
        amps = np.zeros(space.dim)
        amps[space.index(alpha, beta)] = 1.0
        return cls(space, amps)


def _check_same_space(a: DeterminantSpace, b: DeterminantSpace) -> None:
    if a != b:
        raise ValueError(f"dimension mismatch: {a} vs {b}")


def aufbau_strings(n_alpha: int, n_beta: int) -> tuple[int, int]:
    """Bitmasks of the lowest-orbital (aufbau) alpha and beta strings."""
    return (1 << n_alpha) - 1, (1 << n_beta) - 1


def hartree_fock_state(space: DeterminantSpace) -> CIVector:
    return CIVector.determinant(space, *aufbau_strings(space.n_alpha, space.n_beta))


# ---------------------------------------------------------------------------
# excitation tables
# ---------------------------------------------------------------------------


def _between_mask(p: int, q: int) -> int:
    lo, hi = min(p, q), max(p, q)
    return ((1 << hi) - 1) ^ ((1 << (lo + 1)) - 1)


@dataclass(frozen=True)
class _Excitation:
    src: np.ndarray
    dst: np.ndarray
    sign: np.ndarray


@functools.lru_cache(maxsize=64)
def excitation_table(n_orb: int, n_elec: int) -> tuple[_Excitation, ...]:
    """For each ``p*n_orb+q``, the nonzero action of ``a+_p a_q`` on one spin's strings."""
    strings = spin_strings(n_orb, n_elec)
    table = []
    for p in range(n_orb):
        for q in range(n_orb):
            has_q = ((strings >> q) & 1).astype(bool)
            if p == q:
                src = np.nonzero(has_q)[0]
                table.append(_Excitation(src, src, np.ones(len(src))))
                continue
            ok = has_q & ~((strings >> p) & 1).astype(bool)
            src = np.nonzero(ok)[0]
            moved = (strings[src] ^ (1 << q)) | (1 << p)
            dst = string_rank(moved, n_orb) if len(src) else src
            parity = np.bitwise_count(strings[src] & _between_mask(p, q)) & 1
            table.append(_Excitation(src, dst, 1.0 - 2.0 * parity))
    return tuple(table)


def _apply_one_body_matrix(mat: np.ndarray, c: np.ndarray, space: DeterminantSpace) -> np.ndarray:
    """``sum_pq mat[p, q] (E^alpha_pq + E^beta_pq)`` on a CI matrix ``c``."""
    n = space.n_orb
    out = np.zeros_like(c)
    ta = excitation_table(n, space.n_alpha)
    tb = excitation_table(n, space.n_beta)
    for pq in range(n * n):
        coeff = mat.flat[pq]
        if coeff == 0.0:
            continue
        ea, eb = ta[pq], tb[pq]
        if len(ea.src):
            out[ea.dst] += coeff * ea.sign[:, None] * c[ea.src]
        if len(eb.src):
            out[:, eb.dst] += coeff * eb.sign[None, :] * c[:, eb.src]
    return out


def _excite_all(c: np.ndarray, space: DeterminantSpace) -> np.ndarray:
    """Stack of ``E_pq c`` for every ``pq``; shape ``(n_orb**2, *c.shape)``."""
    n = space.n_orb
    ta = excitation_table(n, space.n_alpha)
    tb = excitation_table(n, space.n_beta)
    out = np.zeros((n * n, *c.shape))
    for pq in range(n * n):
        ea, eb = ta[pq], tb[pq]
        if len(ea.src):
            out[pq, ea.dst] = ea.sign[:, None] * c[ea.src]
        if len(eb.src):
            out[pq][:, eb.dst] += eb.sign[None, :] * c[:, eb.src]
    return out


def _deexcite_all(d: np.ndarray, space: DeterminantSpace) -> np.ndarray:
    """``sum_pq E_pq d[pq]`` for a stack ``d`` as produced by :func:`_excite_all`."""
    n = space.n_orb
    ta = excitation_table(n, space.n_alpha)
    tb = excitation_table(n, space.n_beta)
    out = np.zeros(d.shape[1:])
    for pq in range(n * n):
        ea, eb = ta[pq], tb[pq]
        if len(ea.src):
            out[ea.dst] += ea.sign[:, None] * d[pq][ea.src]
        if len(eb.src):
            out[:, eb.dst] += eb.sign[None, :] * d[pq][:, eb.src]
    return out


def effective_one_body(s: IntegralSet) -> np.ndarray:
    """``h_pq - 1/2 sum_r (pr|rq)``: the one-body part once two-body terms are written as ``E_pq E_rs``."""
    return s.h_core - 0.5 * np.einsum("prrq->pq", s.eri)


def _sigma(s: IntegralSet, c: np.ndarray, space: DeterminantSpace) -> np.ndarray:
    n = space.n_orb
    out = s.e_core * c + _apply_one_body_matrix(effective_one_body(s), c, space)
    d = _excite_all(c, space)
    g = np.tensordot(s.eri.reshape(n * n, n * n), d, axes=([1], [0]))
    return out + 0.5 * _deexcite_all(g, space)


def apply_hamiltonian(s: IntegralSet, v: CIVector) -> CIVector:
    """Exact ``H v`` (including the constant ``e_core``) in the vector's sector."""
    if s.n_orb != v.space.n_orb:
        raise ValueError(f"dimension mismatch: {s.n_orb} orbitals vs {v.space.n_orb}")
    out = _sigma(s, v.as_matrix(), v.space)
    return CIVector(v.space, out.reshape(-1))


def hamiltonian_operator(s: IntegralSet, space: DeterminantSpace):
    """Return a function mapping flat amplitude arrays to ``H @ x``."""
    if s.n_orb != space.n_orb:
        raise ValueError(f"dimension mismatch: {s.n_orb} orbitals vs {space.n_orb}")

    def apply(x: np.ndarray) -> np.ndarray:
        return _sigma(s, x.reshape(space.shape), space).reshape(-1)

    return apply


def hamiltonian_diagonal(s: IntegralSet, space: DeterminantSpace) -> np.ndarray:
    """Slater-Condon diagonal ``<D|H|D>`` for every determinant, flat layout."""
    n = space.n_orb
    na = occupation_matrix(space.alpha_strings, n).astype(float)
    nb = occupation_matrix(space.beta_strings, n).astype(float)
    hd = np.diag(s.h_core)
    j = np.einsum("iijj->ij", s.eri)
    k = np.einsum("ijji->ij", s.eri)
    ea = na @ hd + 0.5 * np.einsum("ai,ij,aj->a", na, j - k, na)
    eb = nb @ hd + 0.5 * np.einsum("bi,ij,bj->b", nb, j - k, nb)
    cross = na @ j @ nb.T
    return (s.e_core + ea[:, None] + eb[None, :] + cross).reshape(-1)


def expectation(s: IntegralSet, v: CIVector) -> float:
    return v.dot(apply_hamiltonian(s, v)) / v.dot(v)


# ---------------------------------------------------------------------------
# double factorization
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class DoubleFactorizedHamiltonian:
    """``e_core + sum_pq one_body[p,q] E_pq + 1/2 sum_l w_l (sum_pq g_l[p,q] E_pq)^2``.

    Leaves are ordered by descending ``|w_l|``.
    """

    one_body: np.ndarray
    weights: np.ndarray
    leaves: np.ndarray  # shape (n_df, n_orb, n_orb)
    e_core: float
    n_elec: int = 0
    ms2: int = 0

    @property
    def n_orb(self) -> int:
        return self.one_body.shape[0]

    @property
    def n_df(self) -> int:
        return len(self.weights)

    def reconstruct_eri(self) -> np.ndarray:
        return np.einsum("l,lpq,lrs->pqrs", self.weights, self.leaves, self.leaves)


def double_factorize(s: IntegralSet, n_df: int) -> DoubleFactorizedHamiltonian:
    """Rank-``n_df`` eigenvalue truncation of the ``(pq),(rs)`` ERI supermatrix.

    The one-body term carries the exact reordering correction
    ``-1/2 sum_r (pr|rq)``, so only the two-body part is approximated. With
    ``n_df = n_orb**2`` the factorization is exact.
    """
    n = s.n_orb
    if not 1 <= n_df <= n * n:
        raise ValueError(f"n_df={n_df} outside [1, {n * n}]")
    vals, vecs = np.linalg.eigh(s.eri.reshape(n * n, n * n))
    order = np.argsort(-np.abs(vals), kind="stable")[:n_df]
    leaves = vecs[:, order].T.reshape(n_df, n, n)
    leaves = 0.5 * (leaves + leaves.transpose(0, 2, 1))
    return DoubleFactorizedHamiltonian(
        one_body=effective_one_body(s),
        weights=vals[order],
        leaves=leaves,
        e_core=s.e_core,
        n_elec=s.n_elec,
        ms2=s.ms2,
    )


def apply_df_hamiltonian(h: DoubleFactorizedHamiltonian, v: CIVector) -> CIVector:
    if h.n_orb != v.space.n_orb:
        raise ValueError(f"dimension mismatch: {h.n_orb} orbitals vs {v.space.n_orb}")
    c, space = v.as_matrix(), v.space
    out = h.e_core * c + _apply_one_body_matrix(h.one_body, c, space)
    for w, g in zip(h.weights, h.leaves):
        out += 0.5 * w * _apply_one_body_matrix(g, _apply_one_body_matrix(g, c, space), space)
    return CIVector(space, out.reshape(-1))


def df_operator(h: DoubleFactorizedHamiltonian, space: DeterminantSpace):
    def apply(x: np.ndarray) -> np.ndarray:
        return apply_df_hamiltonian(h, CIVector(space, x)).amplitudes

    return apply


def df_expectation(h: DoubleFactorizedHamiltonian, v: CIVector) -> float:
    """``<v|H_DF|v>`` for a normalized vector, including ``e_core``."""
    if h.n_orb != v.space.n_orb:
        raise ValueError(f"dimension mismatch: {h.n_orb} orbitals vs {v.space.n_orb}")
    c, space = v.as_matrix(), v.space
    energy = h.e_core * np.vdot(c, c)
    energy += np.vdot(c, _apply_one_body_matrix(h.one_body, c, space))
    for w, g in zip(h.weights, h.leaves):
        u = _apply_one_body_matrix(g, c, space)
        energy += 0.5 * w * np.vdot(u, u)
    return float(energy)


# ---------------------------------------------------------------------------
# vector dumps
# ---------------------------------------------------------------------------


def format_civector(v: CIVector) -> str:
    """Text dump: a comment line, ``n_orb n_alpha n_beta``, then one amplitude per line."""
    sp = v.space
    lines = ["# civector row-major (alpha, beta)", f"{sp.n_orb} {sp.n_alpha} {sp.n_beta}"]
    lines += [f"{a:.16e}" for a in v.amplitudes]
    return "\n".join(lines) + "\n"


def parse_civector(text: str) -> CIVector:
    rows = [ln for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    n_orb, n_alpha, n_beta = (int(x) for x in rows[0].split())
    space = build_space(n_orb, n_alpha, n_beta)
    return CIVector(space, np.array([float(x) for x in rows[1:]]))


def save_civector(v: CIVector, path: str | Path) -> None:
    Path(path).write_text(format_civector(v))


def load_civector(path: str | Path) -> CIVector:
    return parse_civector(Path(path).read_text())
