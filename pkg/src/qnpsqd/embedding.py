"""Adsorption-energy bookkeeping for an active space embedded in a lower-level method.

Sign convention: a positive adsorption energy means favorable (exothermic)
binding, i.e. ``dE = -(E_complex - E_host - E_molecule)``.
"""

from __future__ import annotations

import csv
import io
import json
import math
import warnings
from dataclasses import asdict, dataclass, field

HARTREE_TO_KJMOL = 2625.4996
SYSTEMS = ("complex", "host", "molecule")


def hartree_to_kjmol(e: float) -> float:
    return e * HARTREE_TO_KJMOL


def kjmol_to_hartree(e: float) -> float:
    return e / HARTREE_TO_KJMOL


def embedded_correlation(e_m1_as: float, e_m2_full: float, e_m2_as: float) -> float:
    """High-level active-space correlation plus low-level correlation outside it."""
    return e_m1_as + e_m2_full - e_m2_as


@dataclass
class SystemEnergies:
    """Energies of one system, in Hartree.

    With Hartree-Fock as the low-level method both ``e_corr_*_m2`` terms are 0.
    """

    e_hf: float
    e_corr_as_m1: float = 0.0
    e_corr_full_m2: float = 0.0
    e_corr_as_m2: float = 0.0

    @property
    def e_corr_embedded(self) -> float:
        return embedded_correlation(self.e_corr_as_m1, self.e_corr_full_m2, self.e_corr_as_m2)

    @property
    def e_total(self) -> float:
        return self.e_hf + self.e_corr_embedded


@dataclass
class EnergyLedger:
    systems: dict[str, SystemEnergies] = field(default_factory=dict)

    def __post_init__(self):
        for name, sysE in self.systems.items():
            for attr in ("e_corr_as_m1", "e_corr_full_m2", "e_corr_as_m2"):
                if getattr(sysE, attr) > 0:
                    warnings.warn(f"{name}.{attr} is positive", stacklevel=2)

    def to_json(self) -> str:
        return json.dumps({k: asdict(v) for k, v in self.systems.items()}, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> EnergyLedger:
        data = json.loads(text)
        return cls({k: SystemEnergies(**v) for k, v in data.items()})

    def scaled(self, c: float) -> EnergyLedger:
        return EnergyLedger(
            {
                k: SystemEnergies(*(c * x for x in (v.e_hf, v.e_corr_as_m1, v.e_corr_full_m2, v.e_corr_as_m2)))
                for k, v in self.systems.items()
            }
        )


@dataclass(frozen=True)
class AdsorptionEnergy:
    """Adsorption-energy components in kJ/mol (positive = favorable)."""

    delta_e_hf: float
    delta_e_corr_as: float

    @property
    def delta_e_total(self) -> float:
        return self.delta_e_hf + self.delta_e_corr_as

    def as_dict(self) -> dict:
        return {
            "delta_e_hf": self.delta_e_hf,
            "delta_e_corr_as": self.delta_e_corr_as,
            "delta_e_total": self.delta_e_total,
            "units": "kJ/mol",
        }


def _binding(values: dict[str, float]) -> float:
    return -(values["complex"] - values["host"] - values["molecule"])


def adsorption_energy(ledger: EnergyLedger) -> AdsorptionEnergy:
    """HF and embedded-correlation contributions to the adsorption energy."""
    missing = [name for name in SYSTEMS if name not in ledger.systems]
    if missing:
        raise KeyError(f"ledger is missing systems: {', '.join(missing)}")
    sys_ = ledger.systems
    d_hf = _binding({k: sys_[k].e_hf for k in SYSTEMS})
    d_corr = _binding({k: sys_[k].e_corr_embedded for k in SYSTEMS})
    for x in (d_hf, d_corr):
        if not math.isfinite(x):
            raise ValueError("non-finite energy in ledger")
    return AdsorptionEnergy(hartree_to_kjmol(d_hf), hartree_to_kjmol(d_corr))


def summary_csv(ledger: EnergyLedger, result: AdsorptionEnergy | None = None) -> str:
    """Header plus one row: per-system energies (Hartree) and the deltas (kJ/mol)."""
    result = result or adsorption_energy(ledger)
    row = {}
    for name in SYSTEMS:
        e = ledger.systems[name]
        row[f"{name}_e_hf_Eh"] = repr(e.e_hf)
        row[f"{name}_e_corr_Eh"] = repr(e.e_corr_embedded)
    row["delta_e_hf_kjmol"] = repr(result.delta_e_hf)
    row["delta_e_corr_as_kjmol"] = repr(result.delta_e_corr_as)
    row["delta_e_total_kjmol"] = repr(result.delta_e_total)
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(row), lineterminator="\n")
    writer.writeheader()
    writer.writerow(row)
    return buf.getvalue()
