"""Configuration parsing, orchestration, persistence and the ``phi4`` command.

Config files are flat ``key = value`` text, keys namespaced by module
prefix; unknown keys are hard errors with a nearest-key suggestion.  All
randomness flows from the single ``seed`` via documented sub-stream ids
(chain index, suite index), so a config plus its seed reproduces every
output byte-for-byte on one platform.  Each output directory receives a
manifest with the config hash and checksums of every emitted file.
"""

from __future__ import annotations

import argparse
import csv
import difflib
import hashlib
import json
import math
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .dynamics import BatchChain, SimConfig, run_chain
from .lattice import build_grid, read_snapshot, write_snapshot
from .noise import NoiseStream
from .potential import TruncatedPotential
from .stats import (
    SampleSet,
    density_cross_check,
    estimate_partition,
    tail_exponent,
    uniform_Z_plateau,
)
from .trees import DyadicKernelFamily, evolve_trees, seminorm_report
from .verify import (
    check_apriori,
    check_apriori_localised,
    convergence_study,
    init_discretisation_rate,
    LacunaryFunction,
    max_principle_battery,
)

__all__ = ["parse_config", "orchestrate", "main", "RunManifest", "ConfigError"]


class ConfigError(ValueError):
    """Invalid, unknown or missing configuration keys."""


def _parse_bool(s: str) -> bool:
    if s.lower() in ("true", "1", "yes", "on"):
        return True
    if s.lower() in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _parse_n(s: str) -> float:
    return math.inf if s.lower() in ("inf", "infinity") else float(int(s))


def _parse_int_list(s: str) -> tuple[int, ...]:
    return tuple(int(tok) for tok in s.replace(",", " ").split())


# key -> (parser, default)
CONFIG_KEYS: dict[str, tuple] = {
    "seed": (int, 0),
    "grid.d": (int, 1),
    "grid.L": (float, 1.0),
    "grid.N": (int, 4),
    "dt": (float, 1e-3),
    "t_end": (float, 1.0),
    "integrator": (str, "imex"),
    "burn_in": (int, 0),
    "thinning": (int, 1),
    "snapshot_every": (int, 0),
    "quadratic": (_parse_bool, False),
    "noise.kind": (str, "counter_rng"),
    "renorm.m2": (float, 1.0),
    "renorm.c1_offset": (float, 0.0),
    "renorm.c2_offset": (float, 0.0),
    "renorm.c2_method": (str, "sum"),
    "potential.n": (_parse_n, math.inf),
    "dynamics.beta": (float, 0.0),
    "observable.kind": (str, "V"),
    "observable.beta": (float, 0.1),
    "observable.alpha": (float, 0.6),
    "psi.radius": (float, 0.35),
    "norm.kappa": (float, 0.2),
    "stats.n_chains": (int, 32),
    "stats.n_records": (int, 2000),
    "stats.record_stride": (int, 10),
    "stats.burn_steps": (int, 2000),
    "stats.n_list": (_parse_int_list, (1, 2, 4, 8, 16)),
    "verify.suite_seeds": (int, 3),
    "verify.R": (float, 0.5),
    "verify.kappa": (float, 0.2),
    "verify.kappa_bar": (float, 0.05),
    "verify.n_box": (float, 0.45),
    "verify.levels": (_parse_int_list, (4, 5, 6)),
    "verify.n_ref": (int, 8),
    "verify.c_max": (float, 10.0),
    "trees.n_steps": (int, 1000),
    "trees.store_every": (int, 4),
    "trees.mode": (str, "imex"),
}


def parse_config(path) -> dict:
    """Read and fully validate a flat key/value config file."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    values = {key: default for key, (_, default) in CONFIG_KEYS.items()}
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key not in CONFIG_KEYS:
            hint = difflib.get_close_matches(key, CONFIG_KEYS.keys(), n=1)
            suffix = f" (did you mean {hint[0]!r}?)" if hint else ""
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}{suffix}")
        parser, _ = CONFIG_KEYS[key]
        try:
            values[key] = parser(val)
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: bad value for {key}: {exc}") from exc
    _validate(values)
    return values


def _validate(values: dict) -> None:
    try:
        sim_config(values)
    except (ValueError, Exception) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc
    if values["noise.kind"] != "counter_rng":
        raise ConfigError(f"unsupported noise.kind {values['noise.kind']!r}")


def sim_config(values: dict, stream_id: int = 0) -> SimConfig:
    return SimConfig(
        d=values["grid.d"],
        L=values["grid.L"],
        N=values["grid.N"],
        dt=values["dt"],
        t_end=values["t_end"],
        integrator=values["integrator"],
        m2=values["renorm.m2"],
        seed=values["seed"],
        stream_id=stream_id,
        burn_in=values["burn_in"],
        thinning=values["thinning"],
        snapshot_every=values["snapshot_every"],
        beta=values["dynamics.beta"],
        potential_n=values["potential.n"],
        psi_radius=values["psi.radius"],
        c1_offset=values["renorm.c1_offset"],
        c2_offset=values["renorm.c2_offset"],
        alpha=values["observable.alpha"],
        norm_kappa=values["norm.kappa"],
        quadratic=values["quadratic"],
    )


def worker_count() -> int:
    raw = os.environ.get("PHI4_THREADS", "")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _parallel_map(fn, items):
    """Map over independent battery entries, bounded by PHI4_THREADS."""
    workers = min(worker_count(), len(items))
    if workers <= 1:
        return [fn(item) for item in items]
    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    """Inventory of one output directory: config hash, seed, file checksums."""

    config_hash: str
    seed: int
    version: str = __version__
    parameters: dict = field(default_factory=dict)
    files: dict = field(default_factory=dict)

    def register(self, out_dir: Path, name: str) -> None:
        self.files[name] = _sha256(out_dir / name)

    def write(self, out_dir: Path) -> Path:
        path = out_dir / "manifest.json"
        payload = {
            "config_hash": self.config_hash,
            "seed": self.seed,
            "version": self.version,
            "parameters": self.parameters,
            "files": self.files,
        }
        path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
        return path

    def audit(self, out_dir: Path) -> bool:
        return all(_sha256(out_dir / name) == digest for name, digest in self.files.items())


def config_hash(values: dict) -> str:
    canonical = json.dumps(
        {k: (str(v) if v == math.inf else v) for k, v in sorted(values.items())},
        sort_keys=True,
    )
    return hashlib.sha256(canonical.encode()).hexdigest()


def _new_manifest(values: dict) -> RunManifest:
    params = {k: (str(v) if v == math.inf else v) for k, v in sorted(values.items())}
    return RunManifest(config_hash=config_hash(values), seed=values["seed"], parameters=params)


def _write_samples_csv(path: Path, result) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "time", "pairing", "V", "W", "c_alpha_norm"])
        for row in result.rows():
            writer.writerow([row[0]] + [f"{v:.17g}" for v in row[1:]])


def cmd_run(args) -> int:
    values = parse_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = sim_config(values)
    resume_state = None
    if args.resume:
        snaps = sorted(out.glob("snapshot_*.snap"))
        if snaps:
            fld, seed = read_snapshot(snaps[-1])
            stream = NoiseStream(values["seed"], cfg.grid())
            step_idx = int(round(fld.time / cfg.dt))
            stream.counter = step_idx
            from .dynamics import ChainState

            resume_state = ChainState(field=fld, step=step_idx, stream=stream)
    result = run_chain(cfg, resume_state=resume_state)
    manifest = _new_manifest(values)
    if len(result.pairing) >= 8:
        from .stats import integrated_autocorr_time

        # burn-in is operator-chosen; the autocorrelation time is logged for audit
        manifest.parameters["audit.pairing_autocorr_time"] = integrated_autocorr_time(
            result.pairing
        )
    _write_samples_csv(out / "samples.csv", result)
    manifest.register(out, "samples.csv")
    for step_idx, fld in result.snapshots:
        name = f"snapshot_{step_idx:08d}.snap"
        write_snapshot(out / name, fld, seed=values["seed"])
        manifest.register(out, name)
    manifest.write(out)
    if not manifest.audit(out):
        print("manifest self-audit failed", file=sys.stderr)
        return 2
    print(f"run complete: {len(result.steps)} records -> {out}")
    return 0


def _collect_pairings(values: dict, beta: float, stream_id: int) -> SampleSet:
    cfg = sim_config(values, stream_id=stream_id)
    cfg.beta = beta
    cfg.validate()
    batch = BatchChain(cfg, n_chains=values["stats.n_chains"])
    batch.advance(values["stats.burn_steps"])
    records = batch.sample_pairings(values["stats.n_records"], values["stats.record_stride"])
    return SampleSet(records, seed=values["seed"], dt=cfg.dt,
                     burn_in=values["stats.burn_steps"], thinning=values["stats.record_stride"])


def cmd_stats(args) -> int:
    values = parse_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = _new_manifest(values)
    beta = values["observable.beta"]
    n = values["potential.n"]
    if n == math.inf:
        n = max(values["stats.n_list"])
    p = TruncatedPotential(n)
    report: dict = {"suite": args.suite}
    ok = True

    if args.suite == "partition":
        samples = _collect_pairings(values, beta=0.0, stream_id=1)
        est = estimate_partition(samples, p, beta)
        report["estimate"] = est.__dict__
        ok = est.reliable
    elif args.suite == "plateau":
        samples = _collect_pairings(values, beta=0.0, stream_id=1)
        plateau = uniform_Z_plateau(samples, beta, values["stats.n_list"])
        report["plateau"] = {
            "n_list": plateau.n_list,
            "z_hat": [e.z_hat for e in plateau.estimates],
            "ci": [[e.ci_lo, e.ci_hi] for e in plateau.estimates],
            "monotone_within_ci": plateau.monotone_within_ci,
            "plateau_ratio": plateau.plateau_ratio,
            "plateau_ok": plateau.plateau_ok,
        }
        ok = plateau.plateau_ok and plateau.monotone_within_ci
    elif args.suite == "density":
        phi_samples = _collect_pairings(values, beta=0.0, stream_id=1)
        psi_samples = _collect_pairings(values, beta=beta, stream_id=2)
        cross = density_cross_check(phi_samples, psi_samples, np.tanh, p, beta)
        report["density"] = {
            "a": cross.a, "se_a": cross.se_a, "b": cross.b, "se_b": cross.se_b,
            "diff": cross.diff, "sigma": cross.sigma, "z": cross.z,
            "ess_a": cross.ess_a, "ess_b": cross.ess_b,
        }
        ok = cross.z < 3.0
    elif args.suite == "tail":
        samples = _collect_pairings(values, beta=0.0, stream_id=1)
        try:
            fit = tail_exponent(np.abs(samples.pooled()))
            report["tail"] = {
                "slope": fit.slope, "stderr": fit.stderr,
                "k_window": list(fit.k_window), "n_points": fit.n_points,
            }
            with open(out / "survival.csv", "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["K", "survival", "neg_log_survival"])
                for k_val, logp in zip(fit.k_values, fit.log_survival):
                    writer.writerow([f"{k_val:.17g}", f"{math.exp(logp):.17g}", f"{-logp:.17g}"])
            manifest.register(out, "survival.csv")
        except Exception as exc:
            report["tail"] = {"error": str(exc)}
            ok = False
    else:
        print(f"unknown stats suite {args.suite!r}", file=sys.stderr)
        return 2

    (out / "stats.json").write_text(json.dumps(report, indent=2, default=float) + "\n")
    manifest.register(out, "stats.json")
    manifest.write(out)
    if not manifest.audit(out):
        print("manifest self-audit failed", file=sys.stderr)
        return 2
    print(json.dumps(report, indent=2, default=float))
    return 0 if ok else 1


def cmd_verify(args) -> int:
    values = parse_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = _new_manifest(values)
    kappa = values["verify.kappa"]
    seeds = tuple(range(values["verify.suite_seeds"]))
    report: dict = {"suite": args.suite}
    ok = True

    if args.suite == "maxprinciple":
        battery = max_principle_battery(
            d=values["grid.d"], L=values["grid.L"], N=values["grid.N"],
            seed=values["seed"], c_max=values["verify.c_max"], dt=values["dt"],
        )
        report["report"] = battery.as_dict()
        ok = battery.passed
    elif args.suite == "apriori":
        batteries = _parallel_map(
            lambda s: check_apriori(
                d=values["grid.d"], L=values["grid.L"], N=values["grid.N"],
                dt=values["dt"], R=values["verify.R"], kappa=kappa,
                seeds=(s,), c_max=values["verify.c_max"],
            ),
            seeds,
        )
        battery = batteries[0]
        for extra in batteries[1:]:
            battery.entries.extend(extra.entries)
        report["report"] = battery.as_dict()
        ok = battery.passed
    elif args.suite == "apriori-local":
        battery = check_apriori_localised(
            d=values["grid.d"], L=values["grid.L"], N=values["grid.N"],
            dt=values["dt"], R=values["verify.R"], kappa=kappa,
            N_box=values["verify.n_box"], psi_radius=values["psi.radius"],
            seeds=seeds, c_max=values["verify.c_max"],
        )
        report["report"] = battery.as_dict()
        ok = battery.passed
    elif args.suite == "convergence":
        conv = convergence_study(
            levels=values["verify.levels"], n_ref=values["verify.n_ref"],
            d=values["grid.d"], L=values["grid.L"], dt=values["dt"],
            t_end=values["t_end"], seed=values["seed"], kappa=kappa,
            quadratic=values["quadratic"],
        )
        report["report"] = {
            "levels": list(conv.levels),
            "n_ref": conv.n_ref,
            "sup_proxy_distance": {str(k): v for k, v in conv.sup_proxy_distance.items()},
            "rms_observable_distance": {str(k): v for k, v in conv.rms_observable_distance.items()},
            "blown_up": list(conv.blown_up),
            "decreasing": conv.distances_decreasing(strict=False),
        }
        ok = conv.distances_decreasing(strict=False) and not conv.blown_up
    elif args.suite == "initrate":
        zeta = LacunaryFunction(alpha_prime=-0.5 - kappa / 2.0, seed=values["seed"])
        fit = init_discretisation_rate(zeta, kappa, values["verify.kappa_bar"],
                                       levels=values["verify.levels"])
        report["report"] = {
            "levels": list(fit["levels"]),
            "norms": [float(v) for v in fit["norms"]],
            "slope": fit["slope"],
            "reference_slope": fit["reference_slope"],
        }
        ok = fit["slope"] >= fit["reference_slope"] - 0.1
    else:
        print(f"unknown verify suite {args.suite!r}", file=sys.stderr)
        return 2

    report["passed"] = ok
    (out / "verify.json").write_text(json.dumps(report, indent=2, default=float) + "\n")
    manifest.register(out, "verify.json")
    manifest.write(out)
    if not manifest.audit(out):
        print("manifest self-audit failed", file=sys.stderr)
        return 2
    print(json.dumps({"suite": args.suite, "passed": ok}, indent=2))
    return 0 if ok else 1


def cmd_trees(args) -> int:
    values = parse_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = _new_manifest(values)
    grid = build_grid(values["grid.d"], values["grid.L"], values["grid.N"])
    ens = evolve_trees(
        grid,
        dt=values["dt"],
        n_steps=values["trees.n_steps"],
        m2=values["renorm.m2"],
        seed=values["seed"],
        mode=values["trees.mode"],
        store_every=values["trees.store_every"],
    )
    kernels = DyadicKernelFamily(grid, store_dt=values["dt"] * values["trees.store_every"])
    kappa = values["norm.kappa"]
    report = seminorm_report(ens, kernels, kappa)
    with open(out / "trees.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["tau", "kappa", "domain", "seminorm", "seed"])
        for tau, val in report.values.items():
            writer.writerow([tau, kappa, report.domain, f"{val:.17g}", values["seed"]])
    manifest.register(out, "trees.csv")
    (out / "kernels.json").write_text(json.dumps(kernels.table(), indent=2) + "\n")
    manifest.register(out, "kernels.json")
    manifest.write(out)
    if not manifest.audit(out):
        print("manifest self-audit failed", file=sys.stderr)
        return 2
    print(f"tree seminorms written to {out / 'trees.csv'}")
    return 0


def cmd_snapshot(args) -> int:
    fld, seed = read_snapshot(args.file)
    if args.action == "info":
        print(json.dumps({
            "d": fld.grid.d, "L": fld.grid.L, "N": fld.grid.N,
            "sites": fld.grid.n_sites, "time": fld.time, "seed": seed,
            "min": float(fld.values.min()), "max": float(fld.values.max()),
        }, indent=2))
    else:
        writer = csv.writer(sys.stdout)
        writer.writerow(["index", "value"])
        for i, v in enumerate(fld.values.reshape(-1)):
            writer.writerow([i, f"{v:.17g}"])
    return 0


def orchestrate(args) -> int:
    """Dispatch a parsed command line; non-zero exit on any failed acceptance."""
    handlers = {
        "run": cmd_run,
        "stats": cmd_stats,
        "verify": cmd_verify,
        "trees": cmd_trees,
        "snapshot": cmd_snapshot,
    }
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - reported with context for the operator
        print(f"{args.command} failed: {exc}", file=sys.stderr)
        return 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="phi4", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one Langevin chain")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--out", required=True)
    p_run.add_argument("--resume", action="store_true")

    p_verify = sub.add_parser("verify", help="run a verification suite")
    p_verify.add_argument(
        "--suite", required=True,
        choices=["maxprinciple", "apriori", "apriori-local", "convergence", "initrate"],
    )
    p_verify.add_argument("--config", required=True)
    p_verify.add_argument("--out", required=True)

    p_stats = sub.add_parser("stats", help="run a statistics suite")
    p_stats.add_argument("--suite", required=True,
                         choices=["partition", "tail", "density", "plateau"])
    p_stats.add_argument("--config", required=True)
    p_stats.add_argument("--out", required=True)

    p_trees = sub.add_parser("trees", help="evolve the tree ensemble and report seminorms")
    p_trees.add_argument("--config", required=True)
    p_trees.add_argument("--out", required=True)

    p_snap = sub.add_parser("snapshot", help="inspect field snapshots")
    p_snap.add_argument("action", choices=["dump", "info"])
    p_snap.add_argument("--file", required=True)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return orchestrate(args)


if __name__ == "__main__":
    sys.exit(main())
