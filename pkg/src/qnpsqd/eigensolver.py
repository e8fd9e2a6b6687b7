"""Davidson diagonalization, FCI ground states and total-spin diagnostics."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np

from qnpsqd.detspace import (
    CIVector,
    DeterminantSpace,
    build_space,
    hamiltonian_diagonal,
    hamiltonian_operator,
    spin_strings,
    string_rank,
)
from qnpsqd.integrals import IntegralSet

logger = logging.getLogger(__name__)

MAX_SUBSPACE = 20


class ConvergenceError(RuntimeError):
    """Davidson did not converge; ``best`` holds the last Ritz pair."""

    def __init__(self, message: str, best: EigenResult):
        super().__init__(message)
        self.best = best


@dataclass
class EigenResult:
    energy: float
    vector: np.ndarray | CIVector
    residual_norm: float
    iterations: int


def fix_sign(vec: np.ndarray) -> np.ndarray:
    """Flip ``vec`` so its first largest-magnitude component is positive."""
    if vec.size == 0:
        return vec
    mags = np.abs(vec)
    k = int(np.argmax(mags >= mags.max() - 1e-12))
    return -vec if vec[k] < 0 else vec


def default_guess(dim: int, diagonal: np.ndarray | None = None) -> np.ndarray:
    """Lowest-diagonal unit vector plus a small fixed-seed admixture.

    A bare determinant can be orthogonal to the ground state by spatial
    symmetry, in which case Davidson would converge inside the wrong symmetry
    block; the 1e-3 admixture removes that trap and is deterministic.
    """
    noise = np.random.default_rng(20240917).uniform(-1.0, 1.0, dim)
    guess = 1e-3 * noise / np.linalg.norm(noise)
    guess[int(np.argmin(diagonal)) if diagonal is not None else 0] += 1.0
    return guess


def davidson_lowest(
    apply: Callable[[np.ndarray], np.ndarray],
    dim: int,
    guess: np.ndarray | None = None,
    tol: float = 1e-8,
    *,
    diagonal: np.ndarray | None = None,
    max_iter: int = 200,
    max_subspace: int = MAX_SUBSPACE,
) -> EigenResult:
    """Lowest eigenpair of a symmetric operator given only its action.

    Uses the diagonal (Jacobi) preconditioner when ``diagonal`` is supplied and
    restarts from the current Ritz vector once the search space holds
    ``max_subspace`` vectors. With no guess, starts from :func:`default_guess`.
    The residual ``||Hv - Ev||`` of the returned vector is below ``tol``.
    """
    if dim < 1:
        raise ValueError("dim must be positive")
    if guess is None:
        guess = default_guess(dim, diagonal)
    v = np.asarray(guess, dtype=float).reshape(dim)
    v = v / np.linalg.norm(v)

    basis = v[:, None]
    sigmas = apply(v)[:, None]
    best = EigenResult(float(v @ sigmas[:, 0]), v, np.inf, 0)
    for it in range(1, max_iter + 1):
        sub = basis.T @ sigmas
        sub = 0.5 * (sub + sub.T)
        vals, vecs = np.linalg.eigh(sub)
        theta, y = vals[0], vecs[:, 0]
        x = basis @ y
        hx = sigmas @ y
        r = hx - theta * x
        rnorm = float(np.linalg.norm(r))
        best = EigenResult(float(theta), fix_sign(x), rnorm, it)
        if rnorm <= tol:
            return best
        if basis.shape[1] >= dim:
            return best  # search space is the whole space; Ritz pair is exact
        if basis.shape[1] >= max_subspace:
            # deterministic restart from the current Ritz vector
            basis = x[:, None] / np.linalg.norm(x)
            sigmas = hx[:, None] / np.linalg.norm(x)
        if diagonal is not None:
            denom = diagonal - theta
            denom[np.abs(denom) < 1e-8] = 1e-8
            t = r / denom
        else:
            t = r.copy()
        for _ in range(2):  # twice is enough for numerical orthogonality
            t -= basis @ (basis.T @ t)
        tnorm = np.linalg.norm(t)
        if tnorm < 1e-10:
            # preconditioned residual collapsed into the space; fall back to raw residual
            t = r - basis @ (basis.T @ r)
            tnorm = np.linalg.norm(t)
            if tnorm < 1e-14:
                return best
        t /= tnorm
        basis = np.column_stack([basis, t])
        sigmas = np.column_stack([sigmas, apply(t)])
    raise ConvergenceError(
        f"Davidson did not converge in {max_iter} iterations (residual {best.residual_norm:.2e})",
        best,
    )


def sector_for(n_elec: int, sz2: int) -> tuple[int, int]:
    if (n_elec + sz2) % 2 or abs(sz2) > n_elec:
        raise ValueError(f"no sector with {n_elec} electrons and 2Sz={sz2}")
    return (n_elec + sz2) // 2, (n_elec - sz2) // 2


def fci_ground_state(
    integrals: IntegralSet, sz2: int | None = None, tol: float = 1e-8, max_iter: int = 200
) -> EigenResult:
    """Lowest total energy in the requested ``2 S_z`` sector.

    ``integrals`` may also be anything with an ``integrals`` attribute (such as
    an ``ActiveSpace``). ``sz2`` defaults to the integral set's ``ms2``.
    """
    s = getattr(integrals, "integrals", integrals)
    sz2 = s.ms2 if sz2 is None else sz2
    na, nb = sector_for(s.n_elec, sz2)
    if na > s.n_orb or nb > s.n_orb:
        raise ValueError(f"sector ({na}, {nb}) does not fit in {s.n_orb} orbitals")
    space = build_space(s.n_orb, na, nb)
    diag = hamiltonian_diagonal(s, space)
    res = davidson_lowest(hamiltonian_operator(s, space), space.dim, tol=tol, diagonal=diag, max_iter=max_iter)
    res.vector = CIVector(space, res.vector)
    return res


def _spin_raise_table(space: DeterminantSpace):
    """Pieces of ``S+ = sum_p a+_{p alpha} a_{p beta}`` mapping into ``(n_alpha+1, n_beta-1)``."""
    n = space.n_orb
    alphas, betas = space.alpha_strings, space.beta_strings
    out = []
    for p in range(n):
        bit = 1 << p
        a_ok = np.nonzero((alphas & bit) == 0)[0]
        b_ok = np.nonzero(betas & bit)[0]
        if not len(a_ok) or not len(b_ok):
            continue
        a_dst = string_rank(alphas[a_ok] | bit, n)
        b_dst = string_rank(betas[b_ok] ^ bit, n)
        below = bit - 1
        a_sign = 1.0 - 2.0 * (np.bitwise_count(alphas[a_ok] & below) & 1)
        b_sign = 1.0 - 2.0 * (np.bitwise_count(betas[b_ok] & below) & 1)
        out.append((a_ok, a_dst, a_sign, b_ok, b_dst, b_sign))
    return out


def apply_spin_raise(v: CIVector) -> np.ndarray:
    """``S+ v`` as a matrix over the ``(n_alpha+1, n_beta-1)`` sector (empty if that sector does not exist).

    The overall sign ``(-1)^n_alpha`` from moving the beta annihilator past the
    alpha string is dropped; it is common to every term.
    """
    sp = v.space
    if sp.n_alpha == sp.n_orb or sp.n_beta == 0:
        return np.zeros((0, 0))
    c = v.as_matrix()
    shape = (
        len(spin_strings(sp.n_orb, sp.n_alpha + 1)),
        len(spin_strings(sp.n_orb, sp.n_beta - 1)),
    )
    out = np.zeros(shape)
    for a_ok, a_dst, a_sign, b_ok, b_dst, b_sign in _spin_raise_table(sp):
        block = c[np.ix_(a_ok, b_ok)] * np.outer(a_sign, b_sign)
        out[np.ix_(a_dst, b_dst)] += block
    return out


def s_squared(v: CIVector) -> float:
    """``<S^2>`` via ``S- S+ + S_z (S_z + 1)``, i.e. ``||S+ v||^2 + S_z(S_z+1)``."""
    norm2 = v.dot(v)
    sz = 0.5 * (v.space.n_alpha - v.space.n_beta)
    raised = apply_spin_raise(v)
    return float(np.sum(raised * raised) / norm2 + sz * (sz + 1.0))


def spin_from_s_squared(s2: float) -> float:
    """Solve ``S(S+1) = s2`` for ``S >= 0``."""
    return 0.5 * (np.sqrt(1.0 + 4.0 * max(s2, 0.0)) - 1.0)

