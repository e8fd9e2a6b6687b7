from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qnpsqd.embedding import (
    HARTREE_TO_KJMOL,
    AdsorptionEnergy,
    EnergyLedger,
    SystemEnergies,
    adsorption_energy,
    embedded_correlation,
    hartree_to_kjmol,
    kjmol_to_hartree,
    summary_csv,
)

energies = st.floats(-10.0, 0.0, allow_nan=False)


def ledger_from(values):
    return EnergyLedger({name: SystemEnergies(*values[4 * k : 4 * k + 4]) for k, name in enumerate(("complex", "host", "molecule"))})


@given(st.lists(energies, min_size=12, max_size=12))
def test_correlation_identity(values):
    # total embedded correlation split into the high-level part and the low-level remainder
    ledger = ledger_from(values)
    for e in ledger.systems.values():
        remainder = e.e_corr_full_m2 - e.e_corr_as_m2
        assert e.e_corr_embedded == pytest.approx(e.e_corr_as_m1 + remainder, abs=1e-12)
    res = adsorption_energy(ledger)
    direct = -(
        ledger.systems["complex"].e_total - ledger.systems["host"].e_total - ledger.systems["molecule"].e_total
    )
    assert res.delta_e_total == pytest.approx(hartree_to_kjmol(direct), abs=1e-9)


def test_published_composition_18_plus_10_5():
    assert AdsorptionEnergy(18.0, 10.5).delta_e_total == 28.5


def test_sign_convention_binding_is_positive():
    ledger = EnergyLedger(
        {
            "complex": SystemEnergies(-3.01),
            "host": SystemEnergies(-2.0),
            "molecule": SystemEnergies(-1.0),
        }
    )
    assert adsorption_energy(ledger).delta_e_hf == pytest.approx(0.01 * HARTREE_TO_KJMOL)


def test_hf_low_level_has_no_remainder():
    e = SystemEnergies(-1.0, -0.2)
    assert e.e_corr_embedded == -0.2 and e.e_total == -1.2


def test_unit_roundtrip():
    assert kjmol_to_hartree(hartree_to_kjmol(0.123)) == pytest.approx(0.123, abs=1e-15)


def test_missing_system():
    with pytest.raises(KeyError, match="molecule"):
        adsorption_energy(EnergyLedger({"complex": SystemEnergies(-1), "host": SystemEnergies(-1)}))


def test_non_finite_rejected():
    ledger = ledger_from([np.nan] + [0.0] * 11)
    with pytest.raises(ValueError):
        adsorption_energy(ledger)


def test_positive_correlation_warns():
    with pytest.warns(UserWarning, match="positive"):
        EnergyLedger({"host": SystemEnergies(-1.0, 0.1)})


@given(st.lists(energies, min_size=12, max_size=12), st.floats(0.1, 10.0))
def test_linear_in_scaling(values, c):
    base = adsorption_energy(ledger_from(values))
    scaled = adsorption_energy(ledger_from(values).scaled(c))
    assert scaled.delta_e_total == pytest.approx(c * base.delta_e_total, rel=1e-9, abs=1e-9)


def test_json_and_csv_roundtrip():
    ledger = ledger_from([-1.0 - 0.1 * k for k in range(12)])
    again = EnergyLedger.from_json(ledger.to_json())
    assert again.to_json() == ledger.to_json()
    csv_text = summary_csv(ledger)
    header, row = csv_text.strip().split("\n")
    assert header.split(",")[-1] == "delta_e_total_kjmol"
    assert float(row.split(",")[-1]) == adsorption_energy(ledger).delta_e_total
    assert json.loads(json.dumps(adsorption_energy(ledger).as_dict()))["units"] == "kJ/mol"


def test_embedded_correlation_function():
    assert embedded_correlation(-0.5, -1.0, -0.4) == pytest.approx(-1.1)
