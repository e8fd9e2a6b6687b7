"""Spin-restricted electronic integrals: FCIDUMP I/O, orbital rotations, Fock matrices."""

from __future__ import annotations

import io
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence, TextIO

import numpy as np

ORTHOGONALITY_TOL = 1e-8
DUPLICATE_TOL = 1e-12


class FcidumpError(ValueError):
    """Raised for malformed FCIDUMP input. Carries the offending line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass(frozen=True, eq=False)
class IntegralSet:
    """One- and two-electron integrals over spatial orbitals.

    Attributes:
        h_core: Symmetric one-electron matrix, shape ``(n_orb, n_orb)``.
        eri: Two-electron integrals ``(pq|rs)`` in chemist notation, shape
            ``(n_orb,) * 4``, with full 8-fold permutational symmetry.
        e_core: Constant energy (nuclear repulsion plus any folded core).
        n_elec: Total number of electrons.
        ms2: Twice the spin projection ``S_z``.
    """

    h_core: np.ndarray
    eri: np.ndarray
    e_core: float = 0.0
    n_elec: int = 0
    ms2: int = 0

    def __post_init__(self):
        h = np.array(self.h_core, dtype=float)
        eri = np.array(self.eri, dtype=float)
        n = h.shape[0]
        if h.shape != (n, n) or n < 1:
            raise ValueError(f"h_core must be a nonempty square matrix, got {h.shape}")
        if eri.shape != (n, n, n, n):
            raise ValueError(f"eri shape {eri.shape} does not match n_orb={n}")
        if not 0 <= self.n_elec <= 2 * n:
            raise ValueError(f"n_elec={self.n_elec} out of range for n_orb={n}")
        h.setflags(write=False)
        eri.setflags(write=False)
        object.__setattr__(self, "h_core", h)
        object.__setattr__(self, "eri", eri)
        object.__setattr__(self, "e_core", float(self.e_core))
        object.__setattr__(self, "n_elec", int(self.n_elec))
        object.__setattr__(self, "ms2", int(self.ms2))

    @property
    def n_orb(self) -> int:
        return self.h_core.shape[0]

    @property
    def n_alpha(self) -> int:
        return (self.n_elec + self.ms2) // 2

    @property
    def n_beta(self) -> int:
        return (self.n_elec - self.ms2) // 2

    def replace(self, **changes) -> IntegralSet:
        fields = dict(
            h_core=self.h_core,
            eri=self.eri,
            e_core=self.e_core,
            n_elec=self.n_elec,
            ms2=self.ms2,
        )
        fields.update(changes)
        return IntegralSet(**fields)

    def symmetry_residual(self) -> float:
        """Largest deviation from the hermiticity and 8-fold ERI symmetries."""
        h, g = self.h_core, self.eri
        res = np.max(np.abs(h - h.T))
        for perm in ((1, 0, 2, 3), (0, 1, 3, 2), (2, 3, 0, 1)):
            res = max(res, np.max(np.abs(g - g.transpose(perm))))
        return float(res)


@dataclass(frozen=True, eq=False)
class OrbitalRotation:
    """Real orthogonal orbital rotation; new orbital ``k`` is column ``u[:, k]``."""

    u: np.ndarray
    tol: float = field(default=ORTHOGONALITY_TOL, repr=False)

    def __post_init__(self):
        u = np.array(self.u, dtype=float)
        if u.ndim != 2 or u.shape[0] != u.shape[1]:
            raise ValueError(f"rotation must be square, got shape {u.shape}")
        resid = np.max(np.abs(u.T @ u - np.eye(u.shape[0]))) if u.size else 0.0
        if resid > self.tol:
            raise ValueError(f"rotation is not orthogonal (residual {resid:.2e})")
        u.setflags(write=False)
        object.__setattr__(self, "u", u)

    @classmethod
    def identity(cls, n: int) -> OrbitalRotation:
        return cls(np.eye(n))

    def __matmul__(self, other: OrbitalRotation) -> OrbitalRotation:
        return OrbitalRotation(self.u @ other.u)


def symmetrize_eri(eri: np.ndarray) -> np.ndarray:
    """Average a rank-4 tensor over the 8 chemist-notation permutations."""
    g = eri + eri.transpose(1, 0, 2, 3)
    g = g + g.transpose(0, 1, 3, 2)
    g = g + g.transpose(2, 3, 0, 1)
    return g / 8.0


# ---------------------------------------------------------------------------
# FCIDUMP
# ---------------------------------------------------------------------------

_HEADER_END = re.compile(r"(&END|/)\s*$", re.IGNORECASE)


def _header_int(header: str, key: str, required: bool) -> int | None:
    m = re.search(rf"\b{key}\s*=\s*([-+]?\d+)", header, re.IGNORECASE)
    if m is None:
        if required:
            raise FcidumpError(f"header is missing {key}", line=1)
        return None
    return int(m.group(1))


def parse_fcidump(source: str | TextIO) -> IntegralSet:
    """Parse FCIDUMP text into a fully symmetrized :class:`IntegralSet`.

    ``source`` is either the file contents or an open text stream. Entries that
    are not listed default to zero. A repeated entry (any symmetry-equivalent
    index tuple) must agree with the earlier one to within 1e-12.
    """
    text = source if isinstance(source, str) else source.read()
    lines = text.splitlines()

    header_parts = []
    body_start = None
    for lineno, line in enumerate(lines, start=1):
        header_parts.append(line)
        if _HEADER_END.search(line.strip()):
            body_start = lineno
            break
    if body_start is None or not header_parts[0].lstrip().upper().startswith("&FCI"):
        raise FcidumpError("malformed header: expected '&FCI ... &END'", line=1)
    header = " ".join(header_parts)
    norb = _header_int(header, "NORB", required=True)
    nelec = _header_int(header, "NELEC", required=True)
    ms2 = _header_int(header, "MS2", required=False) or 0
    if norb < 1:
        raise FcidumpError(f"NORB must be positive, got {norb}", line=1)

    h = np.zeros((norb, norb))
    eri = np.zeros((norb,) * 4)
    e_core = 0.0
    seen: dict[tuple[int, ...], tuple[float, int]] = {}

    for lineno in range(body_start + 1, len(lines) + 1):
        line = lines[lineno - 1].strip()
        if not line:
            continue
        fields = line.split()
        if len(fields) != 5:
            raise FcidumpError(f"expected 'value i j k l', got {line!r}", line=lineno)
        try:
            value = float(fields[0].replace("D", "E").replace("d", "e"))
            i, j, k, l = (int(x) for x in fields[1:])
        except ValueError:
            raise FcidumpError(f"cannot parse entry {line!r}", line=lineno) from None
        for idx in (i, j, k, l):
            if not 0 <= idx <= norb:
                raise FcidumpError(f"index {idx} outside [1, {norb}]", line=lineno)

        if i and j and k and l:
            key = _canonical_eri_key(i - 1, j - 1, k - 1, l - 1)
        elif i and j and not k and not l:
            key = (min(i, j) - 1, max(i, j) - 1)
        elif not (i or j or k or l):
            key = ()
        elif i and not (j or k or l):
            # orbital energy line; not part of the Hamiltonian
            continue
        else:
            raise FcidumpError(f"unsupported index pattern {i} {j} {k} {l}", line=lineno)

        if key in seen:
            previous, prev_line = seen[key]
            if abs(previous - value) > DUPLICATE_TOL:
                raise FcidumpError(
                    f"conflicting duplicate of entry first given on line {prev_line}"
                    f" ({previous!r} vs {value!r})",
                    line=lineno,
                )
        seen[key] = (value, lineno)

        if len(key) == 4:
            p, q, r, s = key
            for a, b, c, d in _eri_images(p, q, r, s):
                eri[a, b, c, d] = value
        elif len(key) == 2:
            p, q = key
            h[p, q] = h[q, p] = value
        else:
            e_core = value

    return IntegralSet(h, eri, e_core, nelec, ms2)


def load_fcidump(path: str | Path) -> IntegralSet:
    with open(path) as f:
        return parse_fcidump(f)


def _canonical_eri_key(p: int, q: int, r: int, s: int) -> tuple[int, int, int, int]:
    pq = (max(p, q), min(p, q))
    rs = (max(r, s), min(r, s))
    return (*max(pq, rs), *min(pq, rs))


def _eri_images(p, q, r, s):
    return {
        (p, q, r, s), (q, p, r, s), (p, q, s, r), (q, p, s, r),
        (r, s, p, q), (s, r, p, q), (r, s, q, p), (s, r, q, p),
    }  # fmt: skip


def format_fcidump(s: IntegralSet, tol: float = 0.0) -> str:
    """Serialize to FCIDUMP text.

    Output is deterministic: unique two-electron entries with ``i>=j``, ``k>=l``,
    ``ij>=kl`` in lexicographic order, then the one-electron lower triangle,
    then the core energy. Values carry 17 significant digits so a parse of the
    output reproduces every float exactly. Entries with ``|value| <= tol`` are
    skipped.
    """
    n = s.n_orb
    out = io.StringIO()
    out.write(f" &FCI NORB={n},NELEC={s.n_elec},MS2={s.ms2},\n")
    out.write("  ORBSYM=" + "1," * n + "\n  ISYM=1,\n &END\n")
    fmt = "{:23.16e} {:4d} {:4d} {:4d} {:4d}\n"
    for i in range(n):
        for j in range(i + 1):
            for k in range(i + 1):
                for l in range((j if k == i else k) + 1):
                    v = s.eri[i, j, k, l]
                    if abs(v) > tol or (tol == 0.0 and v != 0.0):
                        out.write(fmt.format(v, i + 1, j + 1, k + 1, l + 1))
    for i in range(n):
        for j in range(i + 1):
            v = s.h_core[i, j]
            if abs(v) > tol or (tol == 0.0 and v != 0.0):
                out.write(fmt.format(v, i + 1, j + 1, 0, 0))
    out.write(fmt.format(s.e_core, 0, 0, 0, 0))
    return out.getvalue()


def write_fcidump(s: IntegralSet, path: str | Path, tol: float = 0.0) -> None:
    Path(path).write_text(format_fcidump(s, tol))


# ---------------------------------------------------------------------------
# Transformations
# ---------------------------------------------------------------------------


def rotate_integrals(s: IntegralSet, r: OrbitalRotation | np.ndarray) -> IntegralSet:
    """Transform integrals to the rotated orbital basis ``u``.

    ``h' = u^T h u`` and the full four-index transform of ``eri``. ``u`` may be
    rectangular (``n_orb x m``, orthonormal columns) to project onto a subspace;
    the caller is then responsible for ``n_elec`` making sense.
    """
    u = r.u if isinstance(r, OrbitalRotation) else np.asarray(r, dtype=float)
    if u.shape[0] != s.n_orb:
        raise ValueError(f"rotation has {u.shape[0]} rows, integrals have {s.n_orb} orbitals")
    resid = np.max(np.abs(u.T @ u - np.eye(u.shape[1]))) if u.size else 0.0
    if resid > ORTHOGONALITY_TOL:
        raise ValueError(f"rotation is not orthogonal (residual {resid:.2e})")
    h = u.T @ s.h_core @ u
    g = np.einsum("pqrs,pi,qj,rk,sl->ijkl", s.eri, u, u, u, u, optimize=True)
    h = 0.5 * (h + h.T)
    return IntegralSet(h, symmetrize_eri(g), s.e_core, s.n_elec, s.ms2)


def fock_matrix(s: IntegralSet, occupied: Sequence[int]) -> np.ndarray:
    """Closed-shell Fock matrix with each listed orbital doubly occupied."""
    occ = list(occupied)
    f = s.h_core.copy()
    if occ:
        g = s.eri
        f += 2.0 * np.einsum("pqii->pq", g[:, :, occ][:, :, :, occ])
        f -= np.einsum("piiq->pq", g[:, occ][:, :, occ])
    return 0.5 * (f + f.T)


def hf_energy(s: IntegralSet, occupied: Sequence[int]) -> float:
    """Closed-shell determinant energy with the listed orbitals doubly occupied."""
    occ = list(occupied)
    if not occ:
        return s.e_core
    h = s.h_core[occ][:, occ]
    g = s.eri[np.ix_(occ, occ, occ, occ)]
    coul = np.einsum("iijj->", g)
    exch = np.einsum("ijji->", g)
    return float(s.e_core + 2.0 * np.trace(h) + 2.0 * coul - exch)


def _fix_column_signs(vecs: np.ndarray) -> np.ndarray:
    """Make the first largest-magnitude entry of each column positive."""
    if vecs.size == 0:
        return vecs
    idx = np.argmax(np.abs(vecs) > np.max(np.abs(vecs), axis=0) - 1e-12, axis=0)
    signs = np.sign(vecs[idx, np.arange(vecs.shape[1])])
    signs[signs == 0] = 1.0
    return vecs * signs


def _sorted_eigh(mat: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    if mat.size == 0:
        return np.zeros(0), np.zeros((0, 0))
    vals, vecs = np.linalg.eigh(mat)
    vecs = _fix_column_signs(vecs)
    # ascending eigenvalue, ties broken lexicographically on the vector
    keys = [tuple(vecs[:, k]) for k in range(len(vals))]
    order = sorted(range(len(vals)), key=lambda k: (round(vals[k], 12), keys[k]))
    return vals[order], vecs[:, order]


def recanonicalize(
    s: IntegralSet, occupied: Iterable[int]
) -> tuple[OrbitalRotation, IntegralSet]:
    """Diagonalize the closed-shell Fock matrix within the occupied and virtual blocks.

    The Fock matrix is built with every orbital in ``occupied`` doubly
    occupied. It is diagonalized separately on the occupied indices and on
    their complement, so occupied and virtual spaces never mix. In the
    returned basis the occupied orbitals come first (ascending orbital energy),
    followed by the virtuals (ascending).
    """
    occ = list(occupied)
    if len(set(occ)) != len(occ):
        raise ValueError(f"duplicate orbital indices in {occ}")
    n = s.n_orb
    if any(not 0 <= i < n for i in occ):
        raise ValueError(f"occupied indices {occ} out of range for n_orb={n}")
    vir = [p for p in range(n) if p not in set(occ)]
    f = fock_matrix(s, occ)
    u = np.zeros((n, n))
    col = 0
    for block in (sorted(occ), vir):
        _, vecs = _sorted_eigh(f[np.ix_(block, block)])
        for k in range(len(block)):
            u[block, col] = vecs[:, k]
            col += 1
    rot = OrbitalRotation(u)
    return rot, rotate_integrals(s, rot)


def freeze_orbitals(s: IntegralSet, frozen: Sequence[int]) -> IntegralSet:
    """Remove doubly occupied orbitals, folding their mean field into ``h`` and ``e_core``."""
    frozen = sorted(set(frozen))
    keep = [p for p in range(s.n_orb) if p not in set(frozen)]
    if not keep:
        raise ValueError("cannot freeze every orbital")
    e_core = hf_energy(s, frozen) if frozen else s.e_core
    f = fock_matrix(s, frozen)
    h = f[np.ix_(keep, keep)]
    eri = s.eri[np.ix_(keep, keep, keep, keep)]
    return IntegralSet(h, eri, e_core, s.n_elec - 2 * len(frozen), s.ms2)


def restrict_orbitals(s: IntegralSet, keep: Sequence[int]) -> IntegralSet:
    """Keep a subset of (unoccupied or active) orbitals without any folding."""
    keep = list(keep)
    return IntegralSet(
        s.h_core[np.ix_(keep, keep)],
        s.eri[np.ix_(keep, keep, keep, keep)],
        s.e_core,
        s.n_elec,
        s.ms2,
    )


def random_integrals(
    n_orb: int,
    n_elec: int,
    rng: np.random.Generator | int | None = None,
    *,
    gap: float = 1.0,
    coupling: float = 0.1,
    rank: int | None = None,
) -> IntegralSet:
    """Random, physically shaped integrals with a gapped closed-shell reference.

    The ERI supermatrix is built as a sum of outer products of symmetric
    matrices, so it is positive semidefinite and has the full 8-fold symmetry.
    Diagonal one-electron energies are spaced so that the lowest ``n_elec/2``
    orbitals sit ``gap`` below the rest.
    """
    rng = np.random.default_rng(rng)
    n_occ = n_elec // 2
    eps = np.sort(rng.uniform(-1.0, 0.0, n_orb))
    eps[n_occ:] += gap
    h = np.diag(eps)
    a = rng.normal(scale=coupling, size=(n_orb, n_orb))
    h += 0.5 * (a + a.T)
    rank = rank or n_orb
    eri = np.zeros((n_orb,) * 4)
    for _ in range(rank):
        m = rng.normal(scale=coupling, size=(n_orb, n_orb))
        m = 0.5 * (m + m.T)
        eri += np.einsum("pq,rs->pqrs", m, m)
    # a diagonal Coulomb-like backbone keeps the problem away from degeneracy
    d = rng.uniform(0.2, 0.5, n_orb)
    for p in range(n_orb):
        eri[p, p, p, p] += d[p]
    return IntegralSet(h, symmetrize_eri(eri), float(rng.normal()), n_elec, 0)


def hartree_fock_orbitals(
    s: IntegralSet, max_iter: int = 1000, tol: float = 1e-12
) -> tuple[OrbitalRotation, IntegralSet]:
    """Closed-shell Roothaan iterations in the (already orthonormal) orbital basis.

    Returns the rotation to canonical HF orbitals and the rotated integrals,
    occupied orbitals first. Intended for synthetic instances: plain fixed-point
    iteration with a virtual-space level shift, retried with larger shifts
    when the iteration oscillates.
    """
    n_occ = s.n_elec // 2
    if s.n_elec % 2:
        raise ValueError("closed-shell HF needs an even electron count")
    for shift in (0.5, 1.0, 2.0, 4.0):
        c = _roothaan(s, n_occ, shift, max_iter, tol)
        if c is not None:
            break
    else:
        raise RuntimeError("Hartree-Fock iterations did not converge")
    rot, canon = recanonicalize(rotate_integrals(s, c), range(n_occ))
    return OrbitalRotation(c) @ rot, canon


def _roothaan(s: IntegralSet, n_occ: int, shift: float, max_iter: int, tol: float) -> np.ndarray | None:
    c = np.eye(s.n_orb)
    for _ in range(max_iter):
        dm = c[:, :n_occ] @ c[:, :n_occ].T
        f = s.h_core + 2.0 * np.einsum("pqrs,rs->pq", s.eri, dm) - np.einsum(
            "psrq,rs->pq", s.eri, dm
        )
        f_mo = c.T @ f @ c
        f_mo[n_occ:, n_occ:] += shift * np.eye(s.n_orb - n_occ)
        _, vecs = np.linalg.eigh(0.5 * (f_mo + f_mo.T))
        c = c @ vecs
        dm_new = c[:, :n_occ] @ c[:, :n_occ].T
        if np.max(np.abs(dm_new - dm)) < tol:
            return c
    return None
