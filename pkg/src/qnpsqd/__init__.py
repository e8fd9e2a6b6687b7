"""Active-space embedding, QNP-fabric VQE and sample-based quantum diagonalization on determinant sectors."""

from __future__ import annotations

__version__ = "0.1.0"

from qnpsqd.data import load_fixture
from qnpsqd.detspace import CIVector, DeterminantSpace, build_space, double_factorize
from qnpsqd.eigensolver import davidson_lowest, fci_ground_state, s_squared
from qnpsqd.embedding import EnergyLedger, SystemEnergies, adsorption_energy
from qnpsqd.integrals import IntegralSet, OrbitalRotation, load_fcidump, write_fcidump
from qnpsqd.mp2 import ActiveSpace, build_active_space, mp2_energy
from qnpsqd.qnp import QnpFabric, basin_hopping, prepare_state, prune_gates, vqe_minimize
from qnpsqd.sqd import NoiseSpec, SampleSet, sample_bitstrings, sqd_run

__all__ = [
    "ActiveSpace",
    "CIVector",
    "DeterminantSpace",
    "EnergyLedger",
    "IntegralSet",
    "NoiseSpec",
    "OrbitalRotation",
    "QnpFabric",
    "SampleSet",
    "SystemEnergies",
    "adsorption_energy",
    "basin_hopping",
    "build_active_space",
    "build_space",
    "davidson_lowest",
    "double_factorize",
    "fci_ground_state",
    "load_fcidump",
    "load_fixture",
    "mp2_energy",
    "prepare_state",
    "prune_gates",
    "s_squared",
    "sample_bitstrings",
    "sqd_run",
    "vqe_minimize",
    "write_fcidump",
]
