"""Regenerate the FCIDUMP fixtures shipped in ``src/qnpsqd/data``.

Needs pyscf, which is *not* a dependency of the package::

    pip install --target /tmp/pyscfenv pyscf
    PYTHONPATH=/tmp/pyscfenv python tools/make_fixtures.py

Besides the FCIDUMP files, prints reference energies computed by pyscf;
those numbers are frozen into the test suite as independent oracles.
"""

import json
from pathlib import Path

from pyscf import ao2mo, fci, gto, mp, scf
from pyscf.tools import fcidump

ROOT = Path(__file__).resolve().parents[1]
OUT = ROOT / "src" / "qnpsqd" / "data"
REFS = ROOT / "tests" / "data" / "pyscf_reference.json"

GEOMETRIES = {
    # (4,4): linear H4, mildly stretched
    "h4_sto3g": ("H 0 0 0; H 0 0 1.2; H 0 0 2.4; H 0 0 3.6", "sto-3g"),
    # (6,6): stretched H6 chain, strongly correlated, amplitudes spread out
    "h6_sto3g": ("; ".join(f"H 0 0 {1.6 * i:.2f}" for i in range(6)), "sto-3g"),
    # (4,8): H4 chain in a split-valence basis, MP2/NO tests
    "h4_631g": ("H 0 0 0; H 0 0 1.0; H 0 0 2.0; H 0 0 3.0", "6-31g"),
    # adsorption-style triple: H2 dimer (4,4), and its monomers (2,2)
    "h2dimer_sto3g": ("H 0 0 0; H 0 0 0.74; H 0 1.8 0.37; H 0 2.54 0.37", "sto-3g"),
    "h2a_sto3g": ("H 0 0 0; H 0 0 0.74", "sto-3g"),
    "h2b_sto3g": ("H 0 1.8 0.37; H 0 2.54 0.37", "sto-3g"),
}


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    REFS.parent.mkdir(parents=True, exist_ok=True)
    refs = {}
    for name, (atom, basis) in GEOMETRIES.items():
        mol = gto.M(atom=atom, basis=basis, unit="Angstrom", verbose=0)
        mf = scf.RHF(mol).run(conv_tol=1e-12)
        fcidump.from_scf(mf, str(OUT / f"{name}.fcidump"), tol=1e-15)
        e_mp2 = mp.MP2(mf).run().e_corr
        norb = mf.mo_coeff.shape[1]
        e_fci = fci.FCI(mf).kernel()[0]
        h1 = mf.mo_coeff.T @ mf.get_hcore() @ mf.mo_coeff
        eri = ao2mo.full(mol, mf.mo_coeff)
        sectors = {}
        n = mol.nelectron
        for sz2 in range(0, min(n, 2 * norb - n) + 1, 2):
            na, nb = (n + sz2) // 2, (n - sz2) // 2
            e = fci.direct_spin1.kernel(
                h1, eri, norb, (na, nb), ecore=mol.energy_nuc(), conv_tol=1e-14
            )[0]
            sectors[str(sz2)] = e
        refs[name] = {
            "norb": norb,
            "nelec": n,
            "e_hf": mf.e_tot,
            "e_mp2_corr": e_mp2,
            "e_fci": e_fci,
            "e_fci_by_sz2": sectors,
        }
    text = json.dumps(refs, indent=2)
    (REFS).write_text(text + "\n")
    print(text)


if __name__ == "__main__":
    main()
