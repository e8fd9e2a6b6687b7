"""Adsorption energies from an embedded energy ledger.

Each system (complex, host, molecule) contributes a Hartree-Fock energy plus
an active-space correlation correction. A positive result means binding is
favorable. The first example rebuilds the composition 18.0 + 10.5 = 28.5
kJ/mol. The second treats one H2 molecule as the host and a second H2, 1.8
Angstrom away in a T shape, as the adsorbate. Every system is solved with FCI
on top of HF.
"""

from __future__ import annotations

from qnpsqd import EnergyLedger, SystemEnergies, adsorption_energy, fci_ground_state, load_fixture
from qnpsqd.embedding import kjmol_to_hartree
from qnpsqd.integrals import hf_energy

ledger = EnergyLedger(
    {
        "complex": SystemEnergies(kjmol_to_hartree(-18.0), kjmol_to_hartree(-10.5)),
        "host": SystemEnergies(0.0),
        "molecule": SystemEnergies(0.0),
    }
)
res = adsorption_energy(ledger)
print(f"HF {res.delta_e_hf:.1f} + correlation {res.delta_e_corr_as:.1f} = {res.delta_e_total:.1f} kJ/mol\n")

systems = {}
for role, name in (("complex", "h2dimer_sto3g"), ("host", "h2a_sto3g"), ("molecule", "h2b_sto3g")):
    s = load_fixture(name)
    e_hf = hf_energy(s, range(s.n_elec // 2))
    systems[role] = SystemEnergies(e_hf, fci_ground_state(s).energy - e_hf)
    print(f"{role:>8}: E_HF = {e_hf:.8f}  E_corr = {systems[role].e_corr_as_m1:.8f} Eh")
dimer = adsorption_energy(EnergyLedger(systems))
print(f"\nH2 on H2: HF {dimer.delta_e_hf:.2f} + correlation {dimer.delta_e_corr_as:.2f} = {dimer.delta_e_total:.2f} kJ/mol")
print("At this short contact the minimal-basis dimer is repulsive, so the")
print("adsorption energy is negative: binding is unfavorable.")
