"""``ergo`` command line: one entry point per laboratory pipeline.

Subcommands: lyapunov, simulate, invariant, sweep-rho, ergodic, hormander,
calibrate.  Every run writes a JSON report containing the echoed effective
config (reproducible: feeding it back through --config reruns the same
experiment), the library version/backend, and wall-clock timing.  Exit
codes: 0 pass, 2 verdict fail, 3 inconclusive, 1 usage or config error.
"""

from __future__ import annotations

import argparse
import csv
import datetime
import json
import os
import sys
import time

import numpy as np

from . import __version__, backends, rng
from .engine import (SimConfig, simulate_path, weak_error_probe,
                     write_trajectory)
from .ergodic import (CauchyConfig, DiscountedConfig, TimeAverageConfig,
                      cross_estimator_report, default_observable,
                      lambda_discounted, lambda_time_average)
from .fields import EnvelopedField, PolyField, hormander_rank
from .lyapunov import (LyapunovCandidate, ShellScanConfig, canonical_w,
                       find_min_R0, NoPassingRadiusError, scan_shells)
from .measures import (SweepConfig, adjoint_residual, occupation_measure,
                       rho_sweep_study, tail_mass)
from .models import ConfigurationError, DriftSpec, build_model
from scipy.stats import norm as _norm

EXIT_PASS, EXIT_USAGE, EXIT_FAIL, EXIT_INCONCLUSIVE = 0, 1, 2, 3


class CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        raise CliError(message)


# -- spec parsing ---------------------------------------------------------------

def parse_drift(text: str) -> DriftSpec:
    """'ou:gamma=1', 'power:C=6,1;alpha=2;R=1', 'zero'."""
    kind, _, rest = text.partition(":")
    opts = {}
    if rest:
        for item in rest.split(";"):
            key, _, val = item.partition("=")
            opts[key.strip()] = val.strip()
    try:
        if kind == "ou":
            return DriftSpec(kind="ou", gamma=float(opts.get("gamma", 1.0)))
        if kind == "zero":
            return DriftSpec(kind="zero")
        if kind == "power":
            C = tuple(float(v) for v in opts.get("C", "1").split(","))
            return DriftSpec(kind="power", C=C,
                             alpha=float(opts.get("alpha", 1.0)),
                             R=float(opts.get("R", 1.0)))
    except (ValueError, ConfigurationError) as exc:
        raise CliError(f"bad drift spec {text!r}: {exc}") from exc
    raise CliError(f"unknown drift kind {kind!r}")


def parse_observable(text: str, dim: int) -> EnvelopedField:
    """'gauss:s=1' or 'gauss:s=2;c=0.5' -> c * exp(-|x|^2 / (2 s^2))."""
    kind, _, rest = text.partition(":")
    opts = {}
    if rest:
        for item in rest.split(";"):
            key, _, val = item.partition("=")
            opts[key.strip()] = val.strip()
    if kind != "gauss":
        raise CliError(f"unknown observable {kind!r} (supported: gauss)")
    s = float(opts.get("s", 1.0))
    c = float(opts.get("c", 1.0))
    return EnvelopedField(PolyField(dim, {(0,) * dim: c}), s)


def parse_points(text: str, dim: int) -> list[tuple[float, ...]]:
    """'0,0,0;2,0,0' -> [(0,0,0), (2,0,0)]."""
    pts = []
    for chunk in text.split(";"):
        vals = tuple(float(v) for v in chunk.split(","))
        if len(vals) != dim:
            raise CliError(f"point {chunk!r} has {len(vals)} coords, need {dim}")
        pts.append(vals)
    return pts


def parse_floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",")]


def _jsonify(obj):
    if isinstance(obj, dict):
        return {k: _jsonify(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonify(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonify(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def emit_report(config: dict, results: dict, json_path: str | None,
                elapsed: float) -> dict:
    report = {
        "config": _jsonify(config),
        "results": _jsonify(results),
        "meta": {
            "version": __version__,
            "backend": backends.BACKEND,
            "wall_time_s": round(elapsed, 3),
            "timestamp": datetime.datetime.now(datetime.timezone.utc)
                        .isoformat(),
        },
    }
    if json_path:
        with open(json_path, "w") as fh:
            json.dump(report, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return report


def write_csv(path: str, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow(row)


def write_dat(path: str, pairs) -> None:
    with open(path, "w") as fh:
        for x, y in pairs:
            fh.write(f"{x!r} {y!r}\n")


# -- argument plumbing ------------------------------------------------------------

def _add_model_args(p: _Parser) -> None:
    p.add_argument("--model", default="heisenberg",
                   choices=["heisenberg", "grushin", "ou_identity",
                            "lions_musiela"])
    p.add_argument("--drift", default="ou:gamma=1")
    p.add_argument("--rho", type=float, default=0.0)
    p.add_argument("--dim", type=int, default=3,
                   help="dimension for ou_identity")


def _add_common(p: _Parser) -> None:
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--config", default=None, help="JSON config file; flags override")
    p.add_argument("--json", dest="json_path", default=None)


def _effective_config(args: argparse.Namespace, argv: list[str]) -> dict:
    """File config overridden by explicitly passed flags."""
    cfg = vars(args).copy()
    cfg.pop("func", None)
    cfg.pop("config", None)
    if args.config:
        try:
            with open(args.config) as fh:
                loaded = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise CliError(f"cannot read config {args.config!r}: {exc}")
        file_cfg = loaded.get("config", loaded)
        passed = {name.split("=")[0].lstrip("-").replace("-", "_")
                  for name in argv if name.startswith("--")}
        for key, val in file_cfg.items():
            if key in cfg and key not in passed:
                cfg[key] = val
    if cfg.get("seed") is None:
        cfg["seed"] = int(os.environ.get("ERGO_SEED", "0"))
    return cfg


def _build_model_from(cfg: dict):
    drift = parse_drift(cfg["drift"])
    return build_model(cfg["model"], drift, rho=float(cfg["rho"]),
                       dim=int(cfg.get("dim", 3)))


# -- subcommands -----------------------------------------------------------------

def cmd_lyapunov(cfg: dict) -> tuple[dict, int]:
    model = _build_model_from(cfg)
    w = canonical_w(model.kind)
    candidate = LyapunovCandidate(field=w, model=model, target=cfg["target"])
    scan_cfg = ShellScanConfig(r_min=cfg["rmin"], r_max=cfg["rmax"],
                               shells=cfg["shells"], samples_per_shell=cfg["samples"])
    report = scan_shells(candidate, scan_cfg)
    results = report.to_dict()
    if cfg["find_r0"]:
        try:
            results["min_r0"] = find_min_R0(candidate, scan_cfg)
        except NoPassingRadiusError as exc:
            results["min_r0"] = None
            results["min_r0_error"] = str(exc)
    code = EXIT_PASS if report.passed else EXIT_FAIL
    return results, code


def cmd_simulate(cfg: dict) -> tuple[dict, int]:
    model = _build_model_from(cfg)
    x0 = parse_points(cfg["x0"], model.dim)[0]
    sim = SimConfig(dt=cfg["dt"], steps=cfg["steps"], x0=x0,
                    seed=cfg["seed"], record_stride=cfg["stride"])
    traj = simulate_path(model, sim, stream=cfg["stream"])
    if cfg["out"]:
        write_trajectory(cfg["out"], traj)
    results = {
        "model": model.name,
        "recorded_states": int(traj.states.shape[0]),
        "blow_step": traj.blow_step,
        "final_state": list(traj.states[-1]),
        "out": cfg["out"],
    }
    return results, EXIT_PASS


def cmd_invariant(cfg: dict) -> tuple[dict, int]:
    model = _build_model_from(cfg)
    x0 = parse_points(cfg["x0"], model.dim)[0]
    steps = int(round(cfg["T"] / cfg["dt"]))
    sim = SimConfig(dt=cfg["dt"], steps=steps, x0=x0, seed=cfg["seed"],
                    record_stride=cfg["stride"])
    traj = simulate_path(model, sim)
    measure = occupation_measure(traj, burn_in=cfg["burn"])
    residuals = adjoint_residual(model, measure)
    tails = tail_mass(measure, parse_floats(cfg["radii"]))
    results = {
        "n_samples": measure.n,
        "mean": list(measure.mean()),
        "cov": [list(r) for r in measure.cov()],
        "residuals": residuals.to_dict(),
        "tail_mass": tails.to_dict(),
        "blow_step": traj.blow_step,
    }
    return results, EXIT_PASS if residuals.all_passed else EXIT_FAIL


def cmd_sweep_rho(cfg: dict) -> tuple[dict, int]:
    drift = parse_drift(cfg["drift"])
    dim = {"heisenberg": 3, "grushin": 2,
           "lions_musiela": 2}.get(cfg["model"], int(cfg.get("dim", 3)))
    sweep_cfg = SweepConfig(T=cfg["T"], burn_in=cfg["burn"], dt=cfg["dt"],
                            record_stride=cfg["stride"], seed=cfg["seed"],
                            x0=tuple(parse_points(cfg["x0"], dim)[0]),
                            tail_radii=tuple(parse_floats(cfg["radii"])))
    rows = rho_sweep_study(cfg["model"], drift, parse_floats(cfg["rhos"]),
                           sweep_cfg)
    if cfg.get("csv"):
        dim = len(rows[0].mean)
        header = (["rho"] + [f"mean{i+1}" for i in range(dim)]
                  + [f"ks{i+1}" for i in range(dim)]
                  + [f"tail@{r:g}" for r in sweep_cfg.tail_radii]
                  + ["max_abs_residual", "residuals_passed"])
        write_csv(cfg["csv"], header,
                  [[row.rho, *row.mean, *row.ks_to_baseline,
                    *row.tail_masses, row.max_abs_residual,
                    row.residuals_passed] for row in rows])
    results = {"rows": [row.to_dict() for row in rows]}
    ok = all(row.residuals_passed for row in rows)
    return results, EXIT_PASS if ok else EXIT_FAIL


def cmd_ergodic(cfg: dict) -> tuple[dict, int]:
    model = _build_model_from(cfg)
    f = parse_observable(cfg["f"], model.dim)
    x0_set = tuple(parse_points(cfg["x0"], model.dim))
    dcfg = DiscountedConfig(deltas=tuple(parse_floats(cfg["deltas"])),
                            x0_set=x0_set, M=cfg["M"], dt=cfg["dt"],
                            eps_tail=cfg["eps_tail"])
    ccfg = CauchyConfig(times=tuple(parse_floats(cfg["times"])),
                        x0_set=x0_set, M=cfg["M"], dt=cfg["dt"])
    tcfg = TimeAverageConfig(T=cfg["T"], burn=cfg["burn"], dt=cfg["dt"])
    report = cross_estimator_report(model, f, dcfg, ccfg, tcfg,
                                    seed=cfg["seed"], workers=cfg["workers"])
    if cfg.get("csv"):
        rows = []
        for ix, x0 in enumerate(report.discounted.x0_list):
            x0txt = ",".join(f"{v:g}" for v in x0)
            for j, d in enumerate(report.discounted.deltas):
                rows.append([d, x0txt, report.discounted.values[ix, j],
                             report.discounted.ses[ix, j]])
        write_csv(cfg["csv"], ["delta", "x0", "lambda_hat", "se"], rows)
    if cfg.get("dat"):
        for ix, x0 in enumerate(report.discounted.x0_list):
            tag = "_".join(f"{v:g}" for v in x0)
            write_dat(f"{cfg['dat']}_delta_{tag}.dat",
                      zip(report.discounted.deltas,
                          report.discounted.values[ix]))
        for ix, x0 in enumerate(report.cauchy_x0):
            tag = "_".join(f"{v:g}" for v in x0)
            write_dat(f"{cfg['dat']}_time_{tag}.dat",
                      zip(report.cauchy_times, report.cauchy_values[ix]))
    code = {"pass": EXIT_PASS, "fail": EXIT_FAIL,
            "inconclusive": EXIT_INCONCLUSIVE}[report.verdict]
    return report.to_dict(), code


def cmd_hormander(cfg: dict) -> tuple[dict, int]:
    model = _build_model_from(cfg)
    point = parse_points(cfg["point"], model.dim)[0]
    rank, spanning = hormander_rank(model, np.asarray(point), cfg["order"])
    results = {"point": list(point), "max_order": cfg["order"],
               "rank": rank, "spanning": spanning, "dim": model.dim}
    print(f"rank {rank}, spanning={'true' if spanning else 'false'}")
    return results, EXIT_PASS if spanning else EXIT_FAIL


def cmd_calibrate(cfg: dict) -> tuple[dict, int]:
    """Full pipeline on the exactly solvable OU-identity model."""
    gamma, dim = cfg["gamma"], 3
    model = build_model("ou_identity", DriftSpec(kind="ou", gamma=gamma),
                        dim=dim)
    f = default_observable(dim, 1.0)
    lam_true = (1.0 + 1.0 / gamma) ** (-dim / 2.0)
    results: dict = {"lambda_analytic": lam_true}
    checks: list[bool] = []
    inconclusive = False

    probe = weak_error_probe(gamma=gamma, M=cfg["M_weak"],
                             seed=rng.derive_seed(cfg["seed"], "weak"),
                             workers=cfg["workers"])
    if not probe.conclusive:
        probe = weak_error_probe(gamma=gamma, M=4 * cfg["M_weak"],
                                 seed=rng.derive_seed(cfg["seed"], "weak-retry"),
                                 workers=cfg["workers"])
        if not probe.conclusive:
            inconclusive = True
    results["weak_error"] = probe.to_dict()
    checks.append(probe.conclusive and 1.6 <= probe.ratio <= 2.4)

    table = lambda_discounted(model, f, [np.zeros(dim)],
                              parse_floats(cfg["deltas"]), cfg["M"],
                              cfg["dt"], seed=rng.derive_seed(cfg["seed"], "disc"),
                              workers=cfg["workers"])
    err = abs(table.extrapolated[0] - lam_true)
    tol = max(3.0 * table.extrapolated_se[0], 0.01)
    results["discounted"] = {"extrapolated": float(table.extrapolated[0]),
                             "se": float(table.extrapolated_se[0]),
                             "error": float(err), "tol": float(tol)}
    checks.append(bool(err <= tol))

    ta = lambda_time_average(model, f, np.zeros(dim), cfg["T"], cfg["burn"],
                             cfg["dt"], seed=rng.derive_seed(cfg["seed"], "ta"))
    err_ta = abs(ta.value - lam_true)
    tol_ta = max(3.0 * ta.se, 0.01)
    results["time_average"] = {"value": ta.value, "se": ta.se,
                               "error": float(err_ta), "tol": float(tol_ta)}
    checks.append(bool(err_ta <= tol_ta))

    std = 1.0 / np.sqrt(gamma)
    from .measures import ks_one_sample
    ks_vals = [ks_one_sample(ta.measure.samples[:, i], ta.measure.weights,
                             lambda x: _norm.cdf(x / std))
               for i in range(dim)]
    results["stationary_ks"] = {"per_coordinate": ks_vals, "tol": 0.05}
    checks.append(bool(max(ks_vals) <= 0.05))

    results["checks_passed"] = checks
    if inconclusive:
        return results, EXIT_INCONCLUSIVE
    return results, EXIT_PASS if all(checks) else EXIT_FAIL


# -- main ------------------------------------------------------------------------

def build_parser() -> _Parser:
    parser = _Parser(prog="ergo", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("lyapunov", parents=[], help="shell scan of L_rho w >= k")
    _add_model_args(p)
    _add_common(p)
    p.add_argument("--rmin", type=float, default=4.0)
    p.add_argument("--rmax", type=float, default=60.0)
    p.add_argument("--shells", type=int, default=57)
    p.add_argument("--samples", type=int, default=512)
    p.add_argument("--target", type=float, default=1.0)
    p.add_argument("--find-r0", dest="find_r0", action="store_true")
    p.set_defaults(func=cmd_lyapunov)

    p = sub.add_parser("simulate", help="one path, optionally to an ERGT file")
    _add_model_args(p)
    _add_common(p)
    p.add_argument("--dt", type=float, default=1e-3)
    p.add_argument("--steps", type=int, default=100_000)
    p.add_argument("--stride", type=int, default=100)
    p.add_argument("--stream", type=int, default=0)
    p.add_argument("--x0", default="0,0,0")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("invariant", help="occupation measure diagnostics")
    _add_model_args(p)
    _add_common(p)
    p.add_argument("--T", type=float, default=200.0)
    p.add_argument("--dt", type=float, default=1e-3)
    p.add_argument("--burn", type=float, default=20.0)
    p.add_argument("--stride", type=int, default=10)
    p.add_argument("--x0", default="0,0,0")
    p.add_argument("--radii", default="5,10,20")
    p.set_defaults(func=cmd_invariant)

    p = sub.add_parser("sweep-rho", help="rho -> 0 convergence study")
    _add_model_args(p)
    _add_common(p)
    p.add_argument("--rhos", default="1,0.5,0.25,0.1")
    p.add_argument("--T", type=float, default=200.0)
    p.add_argument("--dt", type=float, default=1e-3)
    p.add_argument("--burn", type=float, default=20.0)
    p.add_argument("--stride", type=int, default=10)
    p.add_argument("--x0", default="0,0,0")
    p.add_argument("--radii", default="5,10,20")
    p.add_argument("--csv", default=None)
    p.set_defaults(func=cmd_sweep_rho)

    p = sub.add_parser("ergodic", help="three-estimator identity chain")
    _add_model_args(p)
    _add_common(p)
    p.add_argument("--f", default="gauss:s=1")
    p.add_argument("--deltas", default="0.4,0.2,0.1,0.05")
    p.add_argument("--times", default="5,10,20,50")
    p.add_argument("--x0", default="0,0,0")
    p.add_argument("--M", type=int, default=20_000)
    p.add_argument("--dt", type=float, default=1e-3)
    p.add_argument("--T", type=float, default=2000.0)
    p.add_argument("--burn", type=float, default=20.0)
    p.add_argument("--eps-tail", dest="eps_tail", type=float, default=0.05)
    p.add_argument("--csv", default=None)
    p.add_argument("--dat", default=None)
    p.set_defaults(func=cmd_ergodic)

    p = sub.add_parser("hormander", help="commutator rank at a point")
    _add_model_args(p)
    _add_common(p)
    p.add_argument("--point", default="0,0,0")
    p.add_argument("--order", type=int, default=1)
    p.set_defaults(func=cmd_hormander)

    p = sub.add_parser("calibrate", help="OU-identity analytic calibration")
    _add_common(p)
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--M", type=int, default=4000)
    p.add_argument("--M-weak", dest="M_weak", type=int, default=100_000)
    p.add_argument("--dt", type=float, default=1e-3)
    p.add_argument("--T", type=float, default=500.0)
    p.add_argument("--burn", type=float, default=10.0)
    p.add_argument("--deltas", default="0.4,0.2,0.1,0.05")
    p.set_defaults(func=cmd_calibrate)

    return parser


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    start = time.perf_counter()
    try:
        args = parser.parse_args(argv)
        cfg = _effective_config(args, argv)
        if cfg.get("workers") is not None:
            cfg["workers"] = int(cfg["workers"])
        results, code = args.func(cfg)
    except (CliError, ConfigurationError, OSError, ValueError) as exc:
        print(f"ergo: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    cfg_echo = {k: v for k, v in cfg.items() if k not in ("func", "json_path")}
    cfg_echo["command"] = args.command
    report = emit_report(cfg_echo, results, cfg.get("json_path"),
                         time.perf_counter() - start)
    if not cfg.get("json_path"):
        json.dump(report["results"], sys.stdout, indent=2, sort_keys=True,
                  default=str)
        print()
    return code


if __name__ == "__main__":
    sys.exit(main())
