"""Three independent Monte Carlo estimators of the ergodic constant and the
diagnostics tying them together.

For a bounded observable f the constant can be reached through the
vanishing-discount limit delta * E int f(X_t) e^(-delta t) dt, the long-time
Cauchy value E f(X_t), the running time average (either of one long path or
of the integral functional v(t,x)/t), or directly as the integral of f
against the empirical invariant measure.  The cross-estimator report checks
that all four agree within combined standard errors, and the constancy
diagnostic probes the Liouville property: the limits must not depend on the
starting point.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import backends, rng
from .engine import resolve_workers, run_paths_bulk, SimConfig, simulate_path
from .fields import EnvelopedField, PolyField, ScalarField
from .measures import EmpiricalMeasure, batch_means_se, occupation_measure
from .models import DiffusionModel

OBS_CONST, OBS_GAUSS = 0, 1


class ObservableError(ValueError):
    pass


def encode_observable(f: ScalarField):
    """Kernel encoding (obs_id, c, s, center) for constant and
    constant-times-Gaussian fields; None when only the generic python path
    can evaluate f."""
    if isinstance(f, PolyField) and f.is_constant():
        c = f.value_many(np.zeros((1, f.dim)))[0]
        return (OBS_CONST, float(c), 1.0, np.zeros(f.dim))
    if isinstance(f, EnvelopedField) and f.poly.is_constant():
        c = f.poly.value_many(np.zeros((1, f.dim)))[0]
        return (OBS_GAUSS, float(c), float(f.scale),
                np.ascontiguousarray(f.center, dtype=np.float64))
    return None


def observable_sup(f: ScalarField) -> float:
    """sup |f|; exact for the encodable observables, sampled otherwise."""
    enc = encode_observable(f)
    if enc is not None:
        return abs(enc[1])
    if isinstance(f, EnvelopedField):
        sup = f.sup_bound()
        if sup is not None:
            return sup
    pts = np.random.default_rng(7).normal(scale=5.0, size=(200_000, f.dim))
    return float(np.max(np.abs(f.value_many(pts))))


def horizon_steps(delta: float, eps_tail: float, dt: float) -> int:
    """Smallest step count with e^(-delta T) / delta <= eps_tail.

    eps_tail is relative to sup|f| (the discarded tail of u_delta is at most
    sup|f| * eps_tail), which keeps horizons scale-free: rescaling the
    observable rescales every estimate exactly."""
    if delta <= 0 or eps_tail <= 0:
        raise ValueError("delta and eps_tail must be > 0")
    arg = 1.0 / (delta * eps_tail)
    if arg <= 1.0:
        return 1
    return max(1, int(np.ceil(np.log(arg) / delta / dt)))


def discounted_weight_total(delta: float, dt: float, ksteps: int) -> float:
    """Trapezoid mass sum dt * w_k e^(-delta t_k); sharp pathwise bound for
    |integral| / sup|f| (slightly above 1/delta by O((delta dt)^2))."""
    k = np.arange(ksteps + 1)
    w = np.ones(ksteps + 1)
    w[0] = w[-1] = 0.5
    return float(dt * np.sum(w * np.exp(-delta * dt * k)))


def _run_discounted(model: DiffusionModel, f: ScalarField, x0, deltas,
                    ksteps, M: int, dt: float, seed: int, stream0: int = 0,
                    workers: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """(M, D) per-path trapezoid integrals of f e^(-delta t); deltas may
    include 0 for the plain running integral.  ksteps must be ascending."""
    deltas = np.asarray(deltas, dtype=np.float64)
    ksteps = np.asarray(ksteps, dtype=np.int64)
    if not (np.diff(ksteps) >= 0).all():
        raise ValueError("ksteps must be ascending")
    decay = np.exp(-deltas * dt)
    enc = encode_observable(f)
    ka = model.kernel_args()
    use_compiled = (model.kernel_compiled_ok and enc is not None
                    and backends.BACKEND == "compiled")
    kern = backends.get_kernel("compiled" if use_compiled else "python")
    if enc is None:
        obs_args = dict(obs_id=OBS_CONST, obs_c=0.0, obs_s=1.0,
                        obs_center=np.zeros(model.dim),
                        obs_fn=lambda X: f.value_many(X))
    else:
        obs_args = dict(obs_id=enc[0], obs_c=enc[1], obs_s=enc[2],
                        obs_center=enc[3])
        if kern is backends.get_kernel("python"):
            obs_args["obs_fn"] = None
    x0 = np.ascontiguousarray(x0, dtype=np.float64)
    sums = np.empty((M, len(deltas)))
    blow = np.empty(M, dtype=np.int64)

    def call(lo, hi):
        extra = {}
        if "drift_fn" in ka:
            extra["drift_fn"] = ka["drift_fn"]
        if "obs_fn" in obs_args:
            extra["obs_fn"] = obs_args["obs_fn"]
        kern.run_discounted(ka["model_id"], ka["dim"], ka["m"], ka["rho"],
                            ka["drift_id"], ka["gamma"], ka["alpha"],
                            ka["cvec"], obs_args["obs_id"], obs_args["obs_c"],
                            obs_args["obs_s"], obs_args["obs_center"], x0,
                            hi - lo, seed, stream0 + lo, dt, decay, ksteps,
                            sums[lo:hi], blow[lo:hi], **extra)

    workers = min(resolve_workers(workers), M)
    if workers <= 1:
        call(0, M)
    else:
        bounds = np.linspace(0, M, workers + 1).astype(int)
        with ThreadPoolExecutor(workers) as ex:
            list(ex.map(lambda w: call(bounds[w], bounds[w + 1])
                        if bounds[w] < bounds[w + 1] else None,
                        range(workers)))
    return sums, blow


@dataclass
class UDelta:
    """Monte Carlo estimate of u_delta(x) = E int_0^inf f e^(-delta t) dt."""

    value: float
    se: float
    delta: float
    x0: tuple
    horizon: float
    blowup_fraction: float
    pathwise_bound: float          # sup|f| * trapezoid mass, >= every path
    pathwise_ok: bool
    flagged: bool


def u_delta(model: DiffusionModel, f: ScalarField, x0, delta: float, M: int,
            dt: float, seed: int = 0, eps_tail: float = 0.05,
            workers: int | None = None) -> UDelta:
    """Discounted-cost estimator, truncated where the geometric tail is below
    eps_tail (in units of u_delta)."""
    if delta <= 0:
        raise ValueError("delta must be > 0")
    sup_f = observable_sup(f)
    ks = horizon_steps(delta, eps_tail, dt)
    sums, blow = _run_discounted(model, f, x0, [delta], [ks], M, dt, seed,
                                 workers=workers)
    vals = sums[:, 0]
    cap = sup_f * discounted_weight_total(delta, dt, ks)
    pathwise_ok = bool(np.all(np.abs(vals) <= cap * (1 + 1e-12)))
    frac = float(np.mean(blow >= 0))
    if frac > 0.01:
        warnings.warn(f"blow-up fraction {frac:.2%} in u_delta", RuntimeWarning)
    return UDelta(value=float(np.mean(vals)),
                  se=float(np.std(vals, ddof=1) / np.sqrt(M)) if M > 1 else 0.0,
                  delta=delta, x0=tuple(np.atleast_1d(x0)),
                  horizon=ks * dt, blowup_fraction=frac,
                  pathwise_bound=cap, pathwise_ok=pathwise_ok,
                  flagged=frac > 0.01)


@dataclass
class DiscountTable:
    """delta * u_delta(x0) for each (delta, x0), plus the affine-in-delta
    extrapolation from the two smallest deltas (per-path combination, so the
    reported SE accounts for the shared-path correlation)."""

    deltas: list[float]
    x0_list: list[tuple]
    values: np.ndarray          # (n_x0, n_delta) lambda-hat = delta * u
    ses: np.ndarray
    extrapolated: np.ndarray    # (n_x0,)
    extrapolated_se: np.ndarray
    horizons: list[float]
    pathwise_ok: bool
    blowup_fraction: float
    inconclusive: bool
    per_path: dict = dc_field(default_factory=dict, repr=False)

    def to_dict(self) -> dict:
        return {
            "deltas": self.deltas,
            "x0": [list(x) for x in self.x0_list],
            "lambda_hat": [[float(v) for v in row] for row in self.values],
            "se": [[float(v) for v in row] for row in self.ses],
            "extrapolated": [float(v) for v in self.extrapolated],
            "extrapolated_se": [float(v) for v in self.extrapolated_se],
            "horizons": self.horizons,
            "pathwise_ok": self.pathwise_ok,
            "blowup_fraction": self.blowup_fraction,
            "inconclusive": self.inconclusive,
        }


def lambda_discounted(model: DiffusionModel, f: ScalarField, x0_list,
                      deltas, M: int, dt: float, seed: int = 0,
                      eps_tail: float = 0.05,
                      workers: int | None = None) -> DiscountTable:
    """delta-sweep with common random numbers: one simulation per starting
    point serves every delta (the counter-based streams make the shared run
    bit-identical to separate per-delta runs), and the same streams are
    reused across starting points to sharpen constancy spreads."""
    deltas = sorted((float(d) for d in deltas), reverse=True)
    if deltas[-1] <= 0:
        raise ValueError("deltas must be positive and descending")
    sup_f = observable_sup(f)
    ks = [horizon_steps(d, eps_tail, dt) for d in deltas]
    x0_list = [tuple(np.atleast_1d(np.asarray(x, dtype=np.float64)))
               for x in x0_list]
    nx, nd = len(x0_list), len(deltas)
    values = np.empty((nx, nd))
    ses = np.empty((nx, nd))
    extrap = np.empty(nx)
    extrap_se = np.empty(nx)
    pathwise_ok = True
    blow_frac = 0.0
    per_path = {}
    d_arr = np.asarray(deltas)
    for ix, x0 in enumerate(x0_list):
        sums, blow = _run_discounted(model, f, np.asarray(x0), deltas, ks, M,
                                     dt, seed, workers=workers)
        lam = sums * d_arr[None, :]
        values[ix] = lam.mean(axis=0)
        ses[ix] = lam.std(axis=0, ddof=1) / np.sqrt(M) if M > 1 else 0.0
        d1, d2 = deltas[-1], deltas[-2]     # two smallest
        w1 = d2 / (d2 - d1)
        w2 = -d1 / (d2 - d1)
        ext = w1 * lam[:, -1] + w2 * lam[:, -2]
        extrap[ix] = ext.mean()
        extrap_se[ix] = ext.std(ddof=1) / np.sqrt(M) if M > 1 else 0.0
        for j, d in enumerate(deltas):
            cap = sup_f * discounted_weight_total(d, dt, ks[j]) * d
            pathwise_ok &= bool(np.all(np.abs(lam[:, j]) <= cap * (1 + 1e-12)))
        blow_frac = max(blow_frac, float(np.mean(blow >= 0)))
        per_path[x0] = lam
    # noise-dominance check: adjacent lambda(delta) differences that flip
    # direction by more than 3 combined SE mark the sweep inconclusive
    inconclusive = False
    for ix in range(nx):
        diffs = np.diff(values[ix])
        sig = 3.0 * np.sqrt(ses[ix][1:] ** 2 + ses[ix][:-1] ** 2)
        signs = [np.sign(d) for d, s in zip(diffs, sig) if abs(d) > s]
        if len(set(signs)) > 1:
            inconclusive = True
    return DiscountTable(deltas=deltas, x0_list=x0_list, values=values,
                         ses=ses, extrapolated=extrap,
                         extrapolated_se=extrap_se,
                         horizons=[k * dt for k in ks],
                         pathwise_ok=pathwise_ok,
                         blowup_fraction=blow_frac,
                         inconclusive=inconclusive, per_path=per_path)


def u_cauchy(model: DiffusionModel, f: ScalarField, x0, t: float, M: int,
             dt: float, seed: int = 0,
             workers: int | None = None) -> tuple[float, float]:
    """Ensemble estimate of u(t, x0) = E f(X_t); (value, SE)."""
    if t < 0:
        raise ValueError("t must be >= 0")
    nsteps = int(round(t / dt))
    x0 = np.asarray(x0, dtype=np.float64)
    if nsteps == 0:
        return float(f.value_many(x0[None, :])[0]), 0.0
    x0s = np.tile(x0, (M, 1))
    _, endv, blow = run_paths_bulk(model, x0s, seed, 0, nsteps, dt,
                                   workers=workers)
    frac = float(np.mean(blow >= 0))
    if frac > 0.01:
        warnings.warn(f"blow-up fraction {frac:.2%} in u_cauchy", RuntimeWarning)
    vals = f.value_many(endv)
    return (float(np.mean(vals)),
            float(np.std(vals, ddof=1) / np.sqrt(M)) if M > 1 else 0.0)


@dataclass
class TimeAverage:
    value: float
    se: float
    T: float
    burn: float
    measure: EmpiricalMeasure


def lambda_time_average(model: DiffusionModel, f: ScalarField, x0, T: float,
                        burn: float, dt: float, seed: int = 0,
                        record_stride: int = 10) -> TimeAverage:
    """Time average of f over one long path after burn-in; by construction
    identical to the integral of f against the trajectory's occupation
    measure (same weighted sum)."""
    if T <= burn:
        raise ValueError("need T > burn")
    cfg = SimConfig(dt=dt, steps=int(round(T / dt)), x0=tuple(np.atleast_1d(x0)),
                    seed=seed, record_stride=record_stride)
    traj = simulate_path(model, cfg)
    if traj.blown:
        raise RuntimeError(f"path blew up at step {traj.blow_step}")
    measure = occupation_measure(traj, burn_in=burn)
    vals = f.value_many(measure.samples)
    value = float(np.dot(measure.weights, vals))
    return TimeAverage(value=value, se=batch_means_se(vals), T=T, burn=burn,
                       measure=measure)


# -- constancy (Liouville) diagnostics ------------------------------------------

@dataclass
class ConstancySpread:
    parameter: float            # the delta (or t) this row belongs to
    spread: float               # max - min of the estimate across x0
    combined_se: float          # SE of the argmax-argmin difference
    x0_max: tuple
    x0_min: tuple
    passed: bool


@dataclass
class ConstancyReport:
    rows: list[ConstancySpread]
    decreasing: bool
    abs_tol: float

    @property
    def final_passed(self) -> bool:
        return self.rows[-1].passed if self.rows else True

    def to_dict(self) -> dict:
        return {"abs_tol": self.abs_tol, "decreasing": self.decreasing,
                "final_passed": self.final_passed,
                "rows": [{"parameter": r.parameter, "spread": r.spread,
                          "combined_se": r.combined_se,
                          "x0_max": list(r.x0_max), "x0_min": list(r.x0_min),
                          "passed": r.passed} for r in self.rows]}


def constancy_diagnostic(table: DiscountTable,
                         abs_tol: float = 0.005) -> ConstancyReport:
    """Spread of delta * u_delta across starting points per delta.  With the
    common-random-number pairing, the SE of the spread comes from the
    per-path difference between the extreme starting points."""
    rows = []
    nx = len(table.x0_list)
    for j, d in enumerate(table.deltas):
        col = table.values[:, j]
        imax, imin = int(np.argmax(col)), int(np.argmin(col))
        spread = float(col[imax] - col[imin])
        if nx < 2 or imax == imin:
            se = 0.0
        else:
            pa = table.per_path[table.x0_list[imax]][:, j]
            pb = table.per_path[table.x0_list[imin]][:, j]
            diff = pa - pb
            se = float(np.std(diff, ddof=1) / np.sqrt(len(diff)))
        rows.append(ConstancySpread(
            parameter=d, spread=spread, combined_se=se,
            x0_max=table.x0_list[imax], x0_min=table.x0_list[imin],
            passed=bool(spread <= 3.0 * se + abs_tol)))
    decreasing = rows[-1].spread < rows[0].spread if len(rows) > 1 else True
    return ConstancyReport(rows=rows, decreasing=bool(decreasing),
                           abs_tol=abs_tol)


# -- the identity chain ----------------------------------------------------------

@dataclass(frozen=True)
class DiscountedConfig:
    deltas: tuple[float, ...] = (0.4, 0.2, 0.1, 0.05)
    x0_set: tuple[tuple[float, ...], ...] = ((0.0, 0.0, 0.0),)
    M: int = 20_000
    dt: float = 1e-3
    eps_tail: float = 0.05


@dataclass(frozen=True)
class CauchyConfig:
    times: tuple[float, ...] = (5.0, 10.0, 20.0, 50.0)
    x0_set: tuple[tuple[float, ...], ...] = ((0.0, 0.0, 0.0),)
    M: int = 20_000
    dt: float = 1e-3

    def __post_init__(self):
        if sorted(self.times) != list(self.times):
            raise ValueError("times must be increasing")


@dataclass(frozen=True)
class TimeAverageConfig:
    T: float = 2000.0
    burn: float = 20.0
    dt: float = 1e-3
    record_stride: int = 10


@dataclass
class ErgodicReport:
    lambda_invariant: float
    lambda_invariant_se: float
    discounted: DiscountTable
    constancy_discounted: ConstancyReport
    cauchy_times: list[float]
    cauchy_values: np.ndarray       # (n_x0, n_t) u-hat(t, x0)
    cauchy_ses: np.ndarray
    v_over_t: np.ndarray            # (n_x0, n_t) v-hat(t, x0)/t
    v_over_t_ses: np.ndarray
    cauchy_x0: list[tuple]
    lambda_time_average: float
    lambda_time_average_se: float
    headline: dict
    verdict: str                    # "pass" | "fail" | "inconclusive"
    abs_tol: float
    sup_f_bound_ok: bool

    def to_dict(self) -> dict:
        return {
            "lambda_invariant": self.lambda_invariant,
            "lambda_invariant_se": self.lambda_invariant_se,
            "discounted": self.discounted.to_dict(),
            "constancy_discounted": self.constancy_discounted.to_dict(),
            "cauchy": {
                "times": self.cauchy_times,
                "x0": [list(x) for x in self.cauchy_x0],
                "u": [[float(v) for v in row] for row in self.cauchy_values],
                "u_se": [[float(v) for v in row] for row in self.cauchy_ses],
                "v_over_t": [[float(v) for v in row] for row in self.v_over_t],
                "v_over_t_se": [[float(v) for v in row]
                                for row in self.v_over_t_ses],
            },
            "lambda_time_average": self.lambda_time_average,
            "lambda_time_average_se": self.lambda_time_average_se,
            "headline": self.headline,
            "verdict": self.verdict,
            "abs_tol": self.abs_tol,
            "sup_f_bound_ok": self.sup_f_bound_ok,
        }


def cross_estimator_report(model: DiffusionModel, f: ScalarField,
                           discounted_cfg: DiscountedConfig,
                           cauchy_cfg: CauchyConfig,
                           ta_cfg: TimeAverageConfig,
                           seed: int = 0, abs_tol: float = 0.005,
                           workers: int | None = None) -> ErgodicReport:
    """Assemble the four estimates of the ergodic constant and compare them
    pairwise at 3 combined SE + abs_tol."""
    sup_f = observable_sup(f)

    ta = lambda_time_average(model, f, np.asarray(cauchy_cfg.x0_set[0]),
                             ta_cfg.T, ta_cfg.burn, ta_cfg.dt,
                             seed=rng.derive_seed(seed, "time-average"),
                             record_stride=ta_cfg.record_stride)
    lam_inv = ta.measure.expect(f)          # same weighted sum as ta.value
    lam_inv_se = ta.se

    table = lambda_discounted(model, f, discounted_cfg.x0_set,
                              discounted_cfg.deltas, discounted_cfg.M,
                              discounted_cfg.dt,
                              seed=rng.derive_seed(seed, "discounted"),
                              eps_tail=discounted_cfg.eps_tail,
                              workers=workers)
    constancy = constancy_diagnostic(table, abs_tol=abs_tol)

    times = list(cauchy_cfg.times)
    steps = [int(round(t / cauchy_cfg.dt)) for t in times]
    nx = len(cauchy_cfg.x0_set)
    u_vals = np.empty((nx, len(times)))
    u_ses = np.empty((nx, len(times)))
    v_vals = np.empty((nx, len(times)))
    v_ses = np.empty((nx, len(times)))
    sup_ok = True
    cseed = rng.derive_seed(seed, "cauchy")
    for ix, x0 in enumerate(cauchy_cfg.x0_set):
        x0 = np.asarray(x0, dtype=np.float64)
        stride = int(np.gcd.reduce(steps))
        rec, endv, _ = run_paths_bulk(
            model, np.tile(x0, (cauchy_cfg.M, 1)), cseed, 0, steps[-1],
            cauchy_cfg.dt, record_every=stride, workers=workers)
        for jt, ks in enumerate(steps):
            snap = rec[:, ks // stride, :]
            vals = f.value_many(snap)
            sup_ok &= bool(np.all(np.abs(vals) <= sup_f * (1 + 1e-12)))
            u_vals[ix, jt] = np.mean(vals)
            u_ses[ix, jt] = np.std(vals, ddof=1) / np.sqrt(cauchy_cfg.M)
        sums, _ = _run_discounted(model, f, x0, [0.0] * len(steps), steps,
                                  cauchy_cfg.M, cauchy_cfg.dt, cseed,
                                  workers=workers)
        for jt, (t, ks) in enumerate(zip(times, steps)):
            vt = sums[:, jt] / t
            v_vals[ix, jt] = np.mean(vt)
            v_ses[ix, jt] = np.std(vt, ddof=1) / np.sqrt(cauchy_cfg.M)

    headline = {
        "lambda_invariant": (float(lam_inv), float(lam_inv_se)),
        "lambda_discounted_extrapolated": (float(table.extrapolated[0]),
                                           float(table.extrapolated_se[0])),
        "u_cauchy_final": (float(u_vals[0, -1]), float(u_ses[0, -1])),
        "lambda_time_average": (float(ta.value), float(ta.se)),
        "v_over_t_final": (float(v_vals[0, -1]), float(v_ses[0, -1])),
    }
    names = ["lambda_invariant", "lambda_discounted_extrapolated",
             "u_cauchy_final", "lambda_time_average"]
    verdict = "pass"
    for i in range(len(names)):
        for j in range(i + 1, len(names)):
            vi, si = headline[names[i]]
            vj, sj = headline[names[j]]
            if abs(vi - vj) > 3.0 * np.hypot(si, sj) + abs_tol:
                verdict = "fail"
    if table.inconclusive or table.blowup_fraction > 0.01:
        verdict = "inconclusive"

    return ErgodicReport(
        lambda_invariant=float(lam_inv), lambda_invariant_se=float(lam_inv_se),
        discounted=table, constancy_discounted=constancy,
        cauchy_times=times, cauchy_values=u_vals, cauchy_ses=u_ses,
        v_over_t=v_vals, v_over_t_ses=v_ses,
        cauchy_x0=[tuple(x) for x in cauchy_cfg.x0_set],
        lambda_time_average=float(ta.value),
        lambda_time_average_se=float(ta.se), headline=headline,
        verdict=verdict, abs_tol=abs_tol, sup_f_bound_ok=bool(sup_ok))


def default_observable(dim: int = 3, scale: float = 1.0) -> EnvelopedField:
    """f(x) = exp(-|x|^2 / (2 scale^2)), the bounded smooth default."""
    return EnvelopedField(PolyField(dim, {(0,) * dim: 1.0}), scale)
