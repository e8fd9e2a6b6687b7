"""Closed-shell MP2, frozen natural orbitals and active-space construction."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from qnpsqd.integrals import (
    IntegralSet,
    OrbitalRotation,
    fock_matrix,
    freeze_orbitals,
    recanonicalize,
    rotate_integrals,
)

CANONICAL_TOL = 1e-8
DENOMINATOR_TOL = 1e-8
OCCUPATION_CLAMP = 1e-12


class DegenerateReferenceError(ValueError):
    pass


def _canonical_blocks(s: IntegralSet, n_occ: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Orbital energies and the ``(ia|jb)`` block; checks the Fock matrix is diagonal."""
    if not 0 < n_occ <= s.n_orb:
        raise ValueError(f"n_occ={n_occ} out of range for {s.n_orb} orbitals")
    f = fock_matrix(s, range(n_occ))
    off = np.max(np.abs(f - np.diag(np.diag(f))))
    if off > CANONICAL_TOL:
        raise ValueError(f"integrals are not canonical (off-diagonal Fock {off:.2e})")
    eps = np.diag(f)
    ovov = s.eri[:n_occ, n_occ:, :n_occ, n_occ:]
    e_o, e_v = eps[:n_occ], eps[n_occ:]
    denom = e_o[:, None, None, None] - e_v[None, :, None, None]
    denom = denom + e_o[None, None, :, None] - e_v[None, None, None, :]
    if denom.size and np.min(np.abs(denom)) < DENOMINATOR_TOL:
        raise DegenerateReferenceError("vanishing MP2 denominator: degenerate reference")
    return eps, ovov, denom


def mp2_amplitudes(s: IntegralSet, n_occ: int) -> np.ndarray:
    """``t[i, a, j, b] = (ia|jb) / (e_i + e_j - e_a - e_b)`` for canonical integrals."""
    _, ovov, denom = _canonical_blocks(s, n_occ)
    return ovov / denom


def mp2_energy(s: IntegralSet, n_occ: int) -> float:
    """Closed-shell MP2 correlation energy with the first ``n_occ`` orbitals doubly occupied."""
    _, ovov, denom = _canonical_blocks(s, n_occ)
    if ovov.size == 0:
        return 0.0
    t = ovov / denom
    return float(np.sum(t * (2.0 * ovov - ovov.transpose(0, 3, 2, 1))))


def mp2_virtual_density(s: IntegralSet, n_occ: int) -> np.ndarray:
    """Unrelaxed MP2 one-particle density, virtual-virtual block, spin-summed.

    ``D_ab = 2 sum_ijc t_ij^ac (2 t_ij^bc - t_ij^cb)``; the trace is twice the
    squared norm of the first-order wavefunction.
    """
    t = mp2_amplitudes(s, n_occ)  # [i, a, j, b]
    t = t.transpose(0, 2, 1, 3)  # [i, j, a, b]
    d = 2.0 * np.einsum("ijac,ijbc->ab", t, 2.0 * t - t.transpose(0, 1, 3, 2))
    return 0.5 * (d + d.T)


@dataclass(frozen=True, eq=False)
class NaturalOrbitalSpectrum:
    """Natural occupations (descending) and the virtual-block rotation to natural orbitals."""

    occupations: np.ndarray
    rotation: OrbitalRotation
    n_retained: int


def natural_orbital_truncation(d: np.ndarray, threshold: float) -> NaturalOrbitalSpectrum:
    """Diagonalize a virtual density and keep orbitals with occupation >= ``threshold``.

    Occupations in ``[-1e-12, 0)`` are numerical noise and are clamped to zero;
    anything more negative means the density was not positive semidefinite.
    """
    d = np.asarray(d, dtype=float)
    if d.ndim != 2 or d.shape[0] != d.shape[1]:
        raise ValueError(f"density must be square, got {d.shape}")
    if threshold < 0:
        raise ValueError("threshold must be nonnegative")
    if d.size == 0:
        return NaturalOrbitalSpectrum(np.zeros(0), OrbitalRotation(np.zeros((0, 0))), 0)
    vals, vecs = np.linalg.eigh(0.5 * (d + d.T))
    if vals[0] < -1e-8:
        raise ValueError(f"density has a negative eigenvalue {vals[0]:.2e}")
    order = np.argsort(-vals, kind="stable")
    vals, vecs = vals[order], vecs[:, order]
    vals = np.where(vals < OCCUPATION_CLAMP, np.maximum(vals, 0.0), vals)
    # first largest-magnitude component positive, for reproducible orbitals
    idx = np.argmax(np.abs(vecs) > np.abs(vecs).max(axis=0) - 1e-12, axis=0)
    vecs = vecs * np.where(vecs[idx, np.arange(len(vals))] < 0, -1.0, 1.0)
    n_keep = int(np.count_nonzero(vals >= threshold))
    return NaturalOrbitalSpectrum(vals, OrbitalRotation(vecs), n_keep)


@dataclass(frozen=True, eq=False)
class ActiveSpace:
    """Correlated subproblem ``(n_elec_active, n_orb_active)`` with its provenance."""

    integrals: IntegralSet
    occupied_select: tuple[int, ...]
    threshold: float
    parent_n_orb: int
    occupations: np.ndarray = field(default_factory=lambda: np.zeros(0))
    mp2_corr_active: float = 0.0
    mp2_corr_full: float = 0.0

    @property
    def n_elec_active(self) -> int:
        return self.integrals.n_elec

    @property
    def n_orb_active(self) -> int:
        return self.integrals.n_orb

    @property
    def label(self) -> str:
        return f"({self.n_elec_active},{self.n_orb_active})"

    def report(self) -> dict:
        return {
            "n_elec": self.n_elec_active,
            "n_orb": self.n_orb_active,
            "threshold": self.threshold,
            "retained_occupations": [float(x) for x in self.occupations],
            "mp2_corr_active": self.mp2_corr_active,
            "mp2_corr_full": self.mp2_corr_full,
        }

    def report_json(self) -> str:
        return json.dumps(self.report(), indent=2, sort_keys=True)


def build_active_space(
    s: IntegralSet,
    occupied_select: Sequence[int],
    threshold: float,
) -> ActiveSpace:
    """Selected occupied orbitals plus MP2 natural virtuals above ``threshold``.

    The parent reference is closed shell with its lowest ``n_elec/2`` orbitals
    (in the given ordering) doubly occupied. Occupied orbitals that are not
    selected are frozen and folded into ``h`` and ``e_core``. The selected
    occupied block is recanonicalized, the virtual block is rotated to MP2
    natural orbitals and truncated, and the retained virtuals are
    recanonicalized once more.
    """
    if s.n_elec % 2 or s.ms2:
        raise ValueError("active-space construction needs a closed-shell parent")
    n_occ_parent = s.n_elec // 2
    sel = tuple(int(i) for i in occupied_select)
    if len(set(sel)) != len(sel):
        raise ValueError(f"duplicate indices in occupied selection {sel}")
    if any(not 0 <= i < n_occ_parent for i in sel):
        raise ValueError(f"occupied selection {sel} must lie within the {n_occ_parent} occupied orbitals")
    if not sel:
        raise ValueError("occupied selection is empty")

    frozen = [i for i in range(n_occ_parent) if i not in set(sel)]
    reduced = freeze_orbitals(s, frozen)
    # positions of the selected orbitals after the frozen ones were removed
    keep = [p for p in range(s.n_orb) if p not in set(frozen)]
    sel_pos = [keep.index(i) for i in sorted(sel)]
    _, canon = recanonicalize(reduced, sel_pos)
    n_occ = len(sel)

    d = mp2_virtual_density(canon, n_occ)
    spectrum = natural_orbital_truncation(d, threshold)
    n_vir = canon.n_orb - n_occ
    u = np.zeros((canon.n_orb, n_occ + spectrum.n_retained))
    u[:n_occ, :n_occ] = np.eye(n_occ)
    u[n_occ:, n_occ:] = spectrum.rotation.u[:, : spectrum.n_retained] if n_vir else 0.0
    truncated = rotate_integrals(canon, u)
    _, active = recanonicalize(truncated, range(n_occ))

    mp2_full = mp2_energy(canon, n_occ) if n_vir else 0.0
    mp2_active = mp2_energy(active, n_occ) if spectrum.n_retained else 0.0
    return ActiveSpace(
        integrals=active,
        occupied_select=sel,
        threshold=float(threshold),
        parent_n_orb=s.n_orb,
        occupations=spectrum.occupations[: spectrum.n_retained].copy(),
        mp2_corr_active=mp2_active,
        mp2_corr_full=mp2_full,
    )


def threshold_sweep(
    s: IntegralSet, occupied_select: Sequence[int], thresholds: Sequence[float]
) -> list[ActiveSpace]:
    return [build_active_space(s, occupied_select, t) for t in thresholds]

