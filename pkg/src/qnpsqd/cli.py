"""Command-line pipeline: active-space construction, FCI, VQE, sampling, SQD and adsorption ledgers.

Every command reads an optional JSON config (``--config``), applies flag
overrides, writes its outputs to ``--output`` and embeds the fully resolved
config in its JSON report. Exit codes: 0 success, 1 numerical failure, 2 bad
configuration or input.
"""

from __future__ import annotations

import argparse
import csv
import datetime
import io
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path
from typing import Any, Callable

import numpy as np

from qnpsqd import __version__
from qnpsqd.data import load_fixture
from qnpsqd.detspace import CIVector
from qnpsqd.eigensolver import ConvergenceError, fci_ground_state, s_squared, sector_for
from qnpsqd.embedding import (
    SYSTEMS,
    EnergyLedger,
    SystemEnergies,
    adsorption_energy,
    hartree_to_kjmol,
    summary_csv,
)
from qnpsqd.integrals import FcidumpError, IntegralSet, hf_energy, load_fcidump, write_fcidump
from qnpsqd.mp2 import build_active_space
from qnpsqd.qnp import (
    BasinHoppingConfig,
    OptimizationError,
    QnpFabric,
    basin_hopping,
    prepare_state,
    prune_gates,
)
from qnpsqd.sqd import NoiseSpec, SampleSet, SqdConfig, histogram_csv, sample_bitstrings, sqd_run

logger = logging.getLogger("qnpsqd")


class ConfigError(ValueError):
    """Invalid configuration or input; maps to exit code 2."""


_BASIN_KEYS = {
    "n_hops": 20,
    "perturbation_scale": 0.5,
    "temperature": BasinHoppingConfig.temperature,
    "loose_tol": 1e-4,
    "tight_tol": 1e-6,
    "loose_n_df": None,
    "tight_n_df": None,
    "n_restarts": 1,
}

_NOISE_KEYS = {"readout_flip_prob": 0.0, "gate_depolarizing_prob": 0.0, "n_gates": 0}

DEFAULTS: dict[str, dict[str, Any]] = {
    "active-space": {
        "fcidump": None,
        "occupied": None,
        "threshold": 1e-4,
        "sweep": None,
        "fci": False,
    },
    "fci": {"fcidump": None, "sz2": None, "tol": 1e-8, "max_iter": 200},
    "vqe": {
        "fcidump": None,
        "n_layers": 4,
        "fci_reference": True,
        "epsilon_param": None,
        "epsilon_energy": None,
        **_BASIN_KEYS,
    },
    "sample": {"fcidump": None, "state": "fci", "fabric": None, "n_shots": 100_000, **_NOISE_KEYS},
    "sqd": {
        "fcidump": None,
        "state": "fci",
        "fabric": None,
        "samples": None,
        "n_shots": 100_000,
        "max_recovery_rounds": 10,
        "energy_tol": 1e-6,
        "subspace": "product",
        "fci_reference": True,
        **_NOISE_KEYS,
    },
    "adsorption": {
        "complex": None,
        "host": None,
        "molecule": None,
        "ledger": None,
        "method": "fci",
        "e_hf": None,
        "n_layers": 4,
        "n_shots": 100_000,
        **_BASIN_KEYS,
        **_NOISE_KEYS,
    },
}

STOCHASTIC = {"vqe", "sample", "sqd", "adsorption"}


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _resolve_config(command: str, args: argparse.Namespace) -> dict[str, Any]:
    config = dict(DEFAULTS[command])
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            loaded = json.loads(path.read_text())
        except json.JSONDecodeError as err:
            raise ConfigError(f"config {path} is not valid JSON: {err}") from err
        if not isinstance(loaded, dict):
            raise ConfigError("config must be a JSON object")
        config.update(loaded)
    for item in args.set or []:
        key, sep, raw = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        try:
            config[key] = json.loads(raw)
        except json.JSONDecodeError:
            config[key] = raw
    if getattr(args, "fcidump", None):
        config["fcidump"] = args.fcidump
    allowed = set(DEFAULTS[command]) | ({"seed"} if command in STOCHASTIC else set())
    unknown = sorted(set(config) - allowed)
    if unknown:
        raise ConfigError(f"unknown config keys for {command}: {', '.join(unknown)}")
    if command in STOCHASTIC:
        if args.seed is not None:
            config["seed"] = args.seed
        elif "seed" not in config:
            raise ConfigError(f"{command} is stochastic and needs --seed")
        config["seed"] = int(config["seed"])
    return config


def _load_integrals(ref: str | None, key: str = "fcidump") -> IntegralSet:
    if not ref:
        raise ConfigError(f"config key {key!r} is required")
    if ref.startswith("fixture:"):
        try:
            return load_fixture(ref.split(":", 1)[1])
        except FileNotFoundError as err:
            raise ConfigError(str(err)) from err
    path = Path(ref)
    if not path.is_file():
        raise ConfigError(f"input file not found: {path}")
    return load_fcidump(path)


def _energy(e: float | None) -> dict | None:
    if e is None:
        return None
    return {"hartree": e, "kjmol": hartree_to_kjmol(e)}


def _write(out: Path, name: str, text: str) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    path = out / name
    path.write_text(text)
    return path


def _report(command: str, config: dict, results: dict, args: argparse.Namespace) -> str:
    report = {"command": command, "version": __version__, "config": config, "results": results}
    if not args.no_timestamp:
        report["timestamp"] = datetime.datetime.now(datetime.timezone.utc).isoformat()
    return json.dumps(report, indent=2) + "\n"


def _noise(config: dict) -> NoiseSpec:
    return NoiseSpec(
        float(config["readout_flip_prob"]), float(config["gate_depolarizing_prob"]), int(config["n_gates"])
    )


def _basin_config(config: dict, threads: int) -> BasinHoppingConfig:
    return BasinHoppingConfig(
        n_hops=int(config["n_hops"]),
        perturbation_scale=float(config["perturbation_scale"]),
        temperature=float(config["temperature"]),
        loose_tol=float(config["loose_tol"]),
        tight_tol=float(config["tight_tol"]),
        loose_n_df=config["loose_n_df"],
        tight_n_df=config["tight_n_df"],
        seed=int(config["seed"]),
        n_restarts=int(config["n_restarts"]),
        threads=threads,
    )


def _sector(s: IntegralSet) -> tuple[int, int]:
    return sector_for(s.n_elec, s.ms2)


def _state(config: dict, s: IntegralSet) -> CIVector:
    """The state to sample: the FCI ground state or a stored fabric's output."""
    if config["state"] == "fci":
        return fci_ground_state(s).vector.normalized()
    if config["state"] == "fabric":
        if not config.get("fabric"):
            raise ConfigError("state 'fabric' needs a 'fabric' JSON path")
        path = Path(config["fabric"])
        if not path.is_file():
            raise ConfigError(f"fabric file not found: {path}")
        fabric = QnpFabric.from_json(path.read_text())
        if (fabric.n_orb, fabric.n_alpha, fabric.n_beta) != (s.n_orb, *_sector(s)):
            raise ConfigError("fabric does not match the integrals' sector")
        return prepare_state(fabric)
    raise ConfigError(f"unknown state {config['state']!r} (expected 'fci' or 'fabric')")


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_fci(config: dict, args: argparse.Namespace) -> None:
    s = _load_integrals(config["fcidump"])
    sz2 = s.ms2 if config["sz2"] is None else int(config["sz2"])
    res = fci_ground_state(s, sz2=sz2, tol=float(config["tol"]), max_iter=int(config["max_iter"]))
    n_alpha, n_beta = sector_for(s.n_elec, sz2)
    results = {
        "n_orb": s.n_orb,
        "n_alpha": n_alpha,
        "n_beta": n_beta,
        "energy": _energy(res.energy),
        "s_squared": s_squared(res.vector),
        "residual_norm": res.residual_norm,
        "iterations": res.iterations,
    }
    _write(Path(args.output), "fci.json", _report("fci", config, results, args))


def _sweep_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()


def cmd_active_space(config: dict, args: argparse.Namespace) -> None:
    s = _load_integrals(config["fcidump"])
    occupied = config["occupied"]
    if occupied is None:
        occupied = list(range(s.n_elec // 2))
    out = Path(args.output)
    active = build_active_space(s, occupied, float(config["threshold"]))
    results = {"active_space": active.report(), "label": active.label}
    if config["fci"]:
        results["fci_active"] = _energy(fci_ground_state(active).energy)
        results["fci_parent"] = _energy(fci_ground_state(s).energy)
    out.mkdir(parents=True, exist_ok=True)
    write_fcidump(active.integrals, out / "active.fcidump")
    if config["sweep"]:
        rows = []
        for t in config["sweep"]:
            a = build_active_space(s, occupied, float(t))
            rows.append(
                {
                    "threshold": repr(float(t)),
                    "n_elec": a.n_elec_active,
                    "n_orb": a.n_orb_active,
                    "mp2_corr_active_Eh": repr(a.mp2_corr_active),
                    "mp2_corr_full_Eh": repr(a.mp2_corr_full),
                    "missing_corr_kjmol": repr(hartree_to_kjmol(a.mp2_corr_active - a.mp2_corr_full)),
                }
            )
        _write(out, "sweep.csv", _sweep_csv(rows))
        results["sweep_rows"] = len(rows)
    _write(out, "active_space.json", _report("active-space", config, results, args))


def _vqe_energy(s: IntegralSet, config: dict, threads: int) -> tuple[dict, QnpFabric, Any]:
    n_alpha, n_beta = _sector(s)
    fabric = QnpFabric.build(s.n_orb, int(config["n_layers"]), n_alpha, n_beta)
    result, optimized = basin_hopping(fabric, s, _basin_config(config, threads))
    summary = {
        "energy": result.energy,
        "loose_energy": result.loose_energy,
        "tight_converged": result.tight_converged,
    }
    return summary, optimized, result


def cmd_vqe(config: dict, args: argparse.Namespace) -> None:
    s = _load_integrals(config["fcidump"])
    out = Path(args.output)
    summary, fabric, result = _vqe_energy(s, config, args.threads)
    results: dict[str, Any] = {
        "n_layers": fabric.n_layers,
        "n_parameters": fabric.n_parameters,
        "n_blocks": fabric.n_blocks,
        "energy": _energy(summary["energy"]),
        "loose_energy": _energy(summary["loose_energy"]),
        "tight_converged": summary["tight_converged"],
        "temperature": float(config["temperature"]),
    }
    if config["fci_reference"]:
        e_fci = fci_ground_state(s).energy
        results["fci_energy"] = _energy(e_fci)
        results["deviation_kjmol"] = hartree_to_kjmol(summary["energy"] - e_fci)
    if config["epsilon_param"] is not None or config["epsilon_energy"] is not None:
        pruned = prune_gates(
            fabric, s, float(config["epsilon_param"] or 0.0), float(config["epsilon_energy"] or 0.0)
        )
        results["pruning"] = {
            "elementary_gates_before": fabric.n_elementary_gates,
            "elementary_gates_after": pruned.fabric.n_elementary_gates,
            "cnots_before": fabric.cnot_count(),
            "cnots_after": pruned.fabric.cnot_count(),
            "energy_shift_kjmol": hartree_to_kjmol(pruned.energy_shift),
        }
        _write(out, "fabric_pruned.json", pruned.fabric.to_json() + "\n")
    _write(out, "fabric.json", fabric.to_json() + "\n")

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["stage", "chain", "iteration", "energy", "gradient_norm", "basin", "accepted", "status"])
    for rec in result.history:
        w.writerow(["hop", rec.chain, rec.hop, repr(rec.energy), "", rec.basin, int(rec.accepted), rec.status])
    for it, e, g in result.tight_trace:
        w.writerow(["tight", "", it, repr(e), repr(g), "", "", "ok"])
    _write(out, "trace.csv", buf.getvalue())
    _write(out, "vqe.json", _report("vqe", config, results, args))


def cmd_sample(config: dict, args: argparse.Namespace) -> None:
    s = _load_integrals(config["fcidump"])
    v = _state(config, s)
    samples = sample_bitstrings(v, int(config["n_shots"]), _noise(config), seed=[config["seed"], 0])
    samples = SampleSet(samples.n_qubits, samples.shots, config["seed"], samples.noise)
    _write(Path(args.output), "samples.json", samples.to_json() + "\n")


def cmd_sqd(config: dict, args: argparse.Namespace) -> None:
    s = _load_integrals(config["fcidump"])
    out = Path(args.output)
    e_fci = fci_ground_state(s).energy if config["fci_reference"] else None
    if config["samples"]:
        path = Path(config["samples"])
        if not path.is_file():
            raise ConfigError(f"samples file not found: {path}")
        source: CIVector | SampleSet = SampleSet.from_json(path.read_text())
    else:
        source = _state(config, s)
    base = SqdConfig(
        n_shots=int(config["n_shots"]),
        noise=_noise(config),
        max_recovery_rounds=int(config["max_recovery_rounds"]),
        energy_tol=float(config["energy_tol"]),
        seed=int(config["seed"]),
        mode=str(config["subspace"]),
    )
    post_only = sqd_run(source, s, SqdConfig(**{**asdict(base), "noise": base.noise, "recovery": False}), e_fci)
    recovered = sqd_run(source, s, base, e_fci)

    def column(rep):
        col = {"energy": _energy(rep.final_energy), "s_squared": rep.final_s_squared}
        if e_fci is not None:
            col["deviation_kjmol"] = hartree_to_kjmol(rep.final_energy - e_fci)
        return col

    results = {
        "postselection": column(post_only),
        "recovery": column(recovered),
        "fci_energy": _energy(e_fci),
        "report": recovered.as_dict(),
    }
    _write(out, "histogram.csv", histogram_csv(recovered.histogram))
    _write(out, "sqd.json", _report("sqd", config, results, args))


def _correlation(s: IntegralSet, method: str, config: dict, threads: int, stream: int) -> float:
    """Active-space total energy from the requested high-level method."""
    if method == "fci":
        return fci_ground_state(s).energy
    if method == "vqe":
        cfg = {**config, "seed": config["seed"] * 1000 + stream}
        return _vqe_energy(s, cfg, threads)[0]["energy"]
    if method == "sqd":
        v = fci_ground_state(s).vector.normalized()
        rep = sqd_run(v, s, SqdConfig(n_shots=int(config["n_shots"]), noise=_noise(config), seed=config["seed"] * 1000 + stream))
        return rep.final_energy
    raise ConfigError(f"unknown method {method!r} (expected fci, vqe, sqd or none)")


def cmd_adsorption(config: dict, args: argparse.Namespace) -> None:
    out = Path(args.output)
    if config["ledger"]:
        path = Path(config["ledger"])
        if not path.is_file():
            raise ConfigError(f"ledger file not found: {path}")
        ledger = EnergyLedger.from_json(path.read_text())
    else:
        systems = {}
        e_hf_given = config["e_hf"] or {}
        for stream, name in enumerate(SYSTEMS):
            s = _load_integrals(config[name], name)
            if s.ms2:
                raise ConfigError(f"{name}: adsorption ledger expects closed-shell systems")
            e_hf = float(e_hf_given[name]) if name in e_hf_given else hf_energy(s, range(s.n_elec // 2))
            if config["method"] == "none":
                systems[name] = SystemEnergies(e_hf)
            else:
                e_total = _correlation(s, config["method"], config, args.threads, stream)
                systems[name] = SystemEnergies(e_hf, e_total - e_hf)
        ledger = EnergyLedger(systems)
    result = adsorption_energy(ledger)
    results = {"ledger": json.loads(ledger.to_json()), "adsorption": result.as_dict()}
    _write(out, "adsorption.csv", summary_csv(ledger, result))
    _write(out, "adsorption.json", _report("adsorption", config, results, args))


COMMANDS: dict[str, Callable[[dict, argparse.Namespace], None]] = {
    "active-space": cmd_active_space,
    "fci": cmd_fci,
    "vqe": cmd_vqe,
    "sample": cmd_sample,
    "sqd": cmd_sqd,
    "adsorption": cmd_adsorption,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qnpsqd", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("fcidump", nargs="?", help="FCIDUMP path or fixture:NAME (overrides the config)")
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key (JSON value)")
        p.add_argument("--seed", type=int, help="master seed (required for stochastic commands)")
        p.add_argument("--threads", type=int, default=1, help="worker threads for independent restarts")
        p.add_argument("--no-timestamp", action="store_true", help="omit the timestamp from reports")
        p.add_argument("--output", default=".", help="output directory")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.threads < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return 2
    try:
        config = _resolve_config(args.command, args)
        COMMANDS[args.command](config, args)
    except (ConvergenceError, OptimizationError, np.linalg.LinAlgError) as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return 1
    except (ConfigError, FcidumpError, FileNotFoundError, KeyError, ValueError, TypeError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
