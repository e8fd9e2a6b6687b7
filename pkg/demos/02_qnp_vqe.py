"""A quantum-number-preserving fabric reaching the exact ground state.

Four layers of Q(phi, theta) blocks on the H4 (4,4) problem expose 24
parameters. Basin hopping explores the rugged landscape with loose local
minimizations, then polishes the best basin with a tight one. Afterwards,
gates whose angles stay near zero are pruned if removing them costs almost no
energy.
"""

from __future__ import annotations

from qnpsqd import QnpFabric, basin_hopping, fci_ground_state, load_fixture, prune_gates, s_squared
from qnpsqd.embedding import hartree_to_kjmol
from qnpsqd.qnp import BasinHoppingConfig, prepare_state

h4 = load_fixture("h4_sto3g")
e_fci = fci_ground_state(h4).energy

fabric = QnpFabric.build(n_orb=4, n_layers=4, n_alpha=2)
print(f"fabric: {fabric.n_blocks} blocks, {fabric.n_parameters} parameters, {fabric.cnot_count()} CNOTs")

config = BasinHoppingConfig(n_hops=20, perturbation_scale=1.0, tight_tol=1e-7, seed=0)
result, optimized = basin_hopping(fabric, h4, config)
accepted = sum(rec.accepted for rec in result.history)
print(f"basin hopping: {len(result.history)} minimizations, {accepted} accepted")
print(f"  loose best   {result.loose_energy:.10f} Eh")
print(f"  tight        {result.energy:.10f} Eh")
print(f"  FCI          {e_fci:.10f} Eh")
print(f"  deviation    {hartree_to_kjmol(result.energy - e_fci):.2e} kJ/mol")
print(f"  <S^2>        {s_squared(prepare_state(optimized)):.1e}")

pruned = prune_gates(optimized, h4, epsilon_param=1e-3, epsilon_energy=1e-6)
print(f"\npruning removed {len(pruned.removed)} elementary gates")
print(f"  CNOTs {optimized.cnot_count()} -> {pruned.fabric.cnot_count()}")
print(f"  energy shift {hartree_to_kjmol(pruned.energy_shift):.2e} kJ/mol")
