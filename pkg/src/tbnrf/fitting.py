"""Weighted least-squares fits of measured NRF curves to the lossy-arm models.

The objective is the plain chi-square sum over points. Minimisation is a
bounded Nelder-Mead simplex run from several log-uniform starting points;
wide-range parameters (mode counts) are searched in log space.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy.optimize import minimize

from .errors import DegenerateInputError, DomainError, FitConvergenceError
from .nrf import lossy_curve

__all__ = [
    "XRole",
    "DataSeries",
    "FitSpec",
    "FitResult",
    "MODEL_PARAMS",
    "DEFAULT_BOUNDS",
    "N_STARTS",
    "model_params",
    "model_eval",
    "chi2_nu",
    "fit",
    "two_stage_fit",
    "synthetic_series",
]

MODEL_PARAMS = {
    "coherent": ("mean_m", "mu", "eta", "t", "mean_noise"),
    "thermal": ("mean_m", "mu", "eta", "t", "mean_noise", "mu_noise"),
    "fock": ("mean_m", "mu", "eta", "t", "mean_noise"),
}

DEFAULT_BOUNDS = {
    "eta": (1e-3, 1.0),
    "t": (1e-3, 1.0),
    "mu": (1.0, 1e5),
    "mu_noise": (1.0, 1e5),
    "mean_m": (0.0, 1e3),
    "mean_noise": (0.0, 1e3),
}

N_STARTS = 16
CONVERGENCE_RTOL = 1e-8
# absolute floor on the chi-square gap, so zero-residual fits count as agreeing
CONVERGENCE_ATOL = 1e-12
WEAK_MU_FRACTION = 1e-6
# flat directions never satisfy an x tolerance, so termination is on the
# spread of objective values across the simplex only
NM_XATOL = math.inf
NM_FATOL = 1e-11
NM_MAXFEV = 4000
_LOG_PARAMS = frozenset({"mu", "mu_noise"})
_LOG_FLOOR = 1e-3


class XRole(str, enum.Enum):
    NOISE_MEAN = "noise_mean"
    TWB_MEAN = "twb_mean"


@dataclass(frozen=True)
class DataSeries:
    """Measured points (x, R, sigma_R); ``x`` is the noise mean or the TWB mean."""

    x: np.ndarray
    r: np.ndarray
    sigma_r: np.ndarray
    x_role: XRole = XRole.NOISE_MEAN

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        r = np.asarray(self.r, dtype=float)
        s = np.asarray(self.sigma_r, dtype=float)
        if not (x.ndim == r.ndim == s.ndim == 1 and x.size == r.size == s.size):
            raise DomainError("x, r and sigma_r must be 1-d arrays of equal length")
        if x.size < 2:
            raise DomainError("a data series needs at least 2 points")
        if np.any(~np.isfinite(x)) or np.any(x < 0):
            raise DomainError("x values must be finite and nonnegative")
        if np.any(~np.isfinite(r)):
            raise DomainError("r values must be finite")
        bad = np.flatnonzero(~(s > 0) | ~np.isfinite(s))
        if bad.size:
            raise DomainError(f"sigma_r must be positive (point {int(bad[0])} has {s[bad[0]]!r})")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "sigma_r", s)
        object.__setattr__(self, "x_role", XRole(self.x_role))

    def __len__(self):
        return self.x.size

    @classmethod
    def from_points(cls, points, x_role=XRole.NOISE_MEAN) -> "DataSeries":
        arr = np.asarray(points, dtype=float).reshape(-1, 3)
        return cls(arr[:, 0], arr[:, 1], arr[:, 2], x_role)


def model_params(model: str, x_role) -> tuple[str, ...]:
    """Fit parameters of ``model`` once the x-axis quantity is removed."""
    if model not in MODEL_PARAMS:
        raise DomainError(f"unknown model {model!r}; expected one of {sorted(MODEL_PARAMS)}")
    x_name = "mean_noise" if XRole(x_role) is XRole.NOISE_MEAN else "mean_m"
    return tuple(p for p in MODEL_PARAMS[model] if p != x_name)


@dataclass
class FitSpec:
    model: str
    free: Sequence[str]
    frozen: Mapping[str, float] = field(default_factory=dict)
    bounds: Mapping[str, tuple[float, float]] = field(default_factory=dict)
    init: Mapping[str, float] = field(default_factory=dict)
    seed: int = 0
    n_starts: int = N_STARTS

    def validate(self, x_role) -> None:
        names = set(model_params(self.model, x_role))
        free, frozen = set(self.free), set(self.frozen)
        if len(set(self.free)) != len(self.free):
            raise DomainError("duplicate names in free parameter list")
        if free & frozen:
            raise DomainError(f"parameters both free and frozen: {sorted(free & frozen)}")
        unknown = (free | frozen) - names
        if unknown:
            raise DomainError(f"{sorted(unknown)} are not parameters of the {self.model} model here")
        missing = names - free - frozen
        if missing:
            raise DomainError(f"parameters neither free nor frozen: {sorted(missing)}")
        if not free:
            raise DomainError("at least one parameter must be free")
        for name, (lo, hi) in self.all_bounds().items():
            dlo, dhi = DEFAULT_BOUNDS[name]
            if not (dlo <= lo < hi <= dhi) and not (name in ("mean_m", "mean_noise") and 0 <= lo < hi):
                raise DomainError(f"bounds for {name} must satisfy {dlo} <= lo < hi <= {dhi}, got {(lo, hi)}")
        for name, v in self.frozen.items():
            _check_value(name, v)
        for name, v in self.init.items():
            if name not in free:
                raise DomainError(f"init given for non-free parameter {name!r}")
            lo, hi = self.all_bounds()[name]
            if not lo <= v <= hi:
                raise DomainError(f"init for {name} = {v} lies outside its bounds {(lo, hi)}")
        if self.n_starts < 1:
            raise DomainError("n_starts must be positive")

    def all_bounds(self) -> dict[str, tuple[float, float]]:
        out = {k: v for k, v in DEFAULT_BOUNDS.items()}
        out.update({k: tuple(map(float, v)) for k, v in self.bounds.items()})
        return out


def _check_value(name: str, v: float) -> None:
    if name in ("eta", "t") and not 0 < v <= 1:
        raise DomainError(f"{name} must lie in (0, 1], got {v!r}")
    if name in ("mu", "mu_noise") and not v >= 1:
        raise DomainError(f"{name} must be >= 1, got {v!r}")
    if name in ("mean_m", "mean_noise") and not v >= 0:
        raise DomainError(f"{name} must be >= 0, got {v!r}")


@dataclass
class FitResult:
    estimates: dict[str, float]
    chi2_nu: float
    dof: int
    converged: bool
    n_restarts_used: int
    residuals: np.ndarray
    free: tuple[str, ...] = ()
    frozen: dict[str, float] = field(default_factory=dict)
    weakly_identified: list[str] = field(default_factory=list)
    objective: float = 0.0
    restart_objectives: list[float] = field(default_factory=list)
    trace: list[float] = field(default_factory=list)

    @property
    def params(self) -> dict[str, float]:
        return {**self.frozen, **self.estimates}


def model_eval(model: str, params: Mapping[str, float], x, x_role=XRole.NOISE_MEAN):
    """R at ``x`` where ``x`` is the noise mean or the TWB mean depending on ``x_role``."""
    role = XRole(x_role)
    names = model_params(model, role)
    missing = [n for n in names if n not in params]
    if missing:
        raise DomainError(f"missing parameters for {model} model: {missing}")
    kw = {n: params[n] for n in names}
    if role is XRole.NOISE_MEAN:
        kw["mean_noise"] = x
    else:
        kw["mean_m"] = x
    if model != "thermal":
        kw.pop("mu_noise", None)
    total = (1 + kw["t"]) * np.asarray(kw["mean_m"], dtype=float) + np.asarray(kw["mean_noise"], dtype=float)
    if np.any(total == 0):
        raise DegenerateInputError("total detected mean is zero at some x; R is undefined")
    return lossy_curve(model, **kw)


def _objective(series: DataSeries, model: str, params: Mapping[str, float]) -> float:
    try:
        with np.errstate(divide="ignore", invalid="ignore"):
            pred = model_eval(model, params, series.x, series.x_role)
    except DegenerateInputError:
        return math.inf
    z = (series.r - pred) / series.sigma_r
    val = float(np.dot(z, z))
    return val if math.isfinite(val) else math.inf


def chi2_nu(series: DataSeries, model: str, params: Mapping[str, float], n_free: int = 0) -> float:
    """Chi-square per degree of freedom, dof = points - n_free."""
    dof = len(series) - n_free
    if dof < 1:
        raise DomainError(f"no degrees of freedom left: {len(series)} points, {n_free} free parameters")
    return _objective(series, model, params) / dof


class _Coords:
    """Maps free parameters to the optimiser's coordinates (log for mode counts)."""

    def __init__(self, names, bounds):
        self.names = tuple(names)
        self.log = tuple(n in _LOG_PARAMS for n in self.names)
        self.bounds = [bounds[n] for n in self.names]

    def to_internal(self, values):
        return np.array([math.log(v) if lg else v for v, lg in zip(values, self.log)])

    def to_external(self, u):
        return [math.exp(x) if lg else float(x) for x, lg in zip(u, self.log)]

    def internal_bounds(self):
        return [(math.log(lo), math.log(hi)) if lg else (lo, hi) for (lo, hi), lg in zip(self.bounds, self.log)]


def _draw_starts(coords: _Coords, n: int, rng: np.random.Generator) -> list[list[float]]:
    starts = []
    for _ in range(n):
        pt = []
        for lo, hi in coords.bounds:
            a = max(lo, _LOG_FLOOR)
            pt.append(float(math.exp(rng.uniform(math.log(a), math.log(hi)))))
        starts.append(pt)
    return starts


def _nelder_mead(fun, u0, ib, trace=None):
    def cb(intermediate_result):
        if trace is not None:
            trace.append(float(intermediate_result.fun))

    opts = dict(xatol=NM_XATOL, fatol=NM_FATOL, maxfev=NM_MAXFEV, adaptive=len(u0) > 2)
    res = minimize(fun, u0, method="Nelder-Mead", bounds=ib, callback=cb, options=opts)
    # restart from the optimum: cheap insurance against simplex collapse
    res2 = minimize(fun, res.x, method="Nelder-Mead", bounds=ib, callback=cb, options=opts)
    return res2 if res2.fun <= res.fun else res


def _fast_objective(series: DataSeries, model: str, free, frozen, coords: "_Coords"):
    """Chi-square as a function of internal coordinates, specialised for speed.

    Same algebra as :func:`model_eval` folded into one numerator; the
    test-suite checks it against :func:`_objective`.
    """
    x, r, w = series.x, series.r, 1.0 / series.sigma_r
    noise_x = series.x_role is XRole.NOISE_MEAN
    thermal, fock = model == "thermal", model == "fock"
    idx = {n: i for i, n in enumerate(free)}
    base = dict(frozen)
    base.setdefault("mu_noise", 1.0)

    def fun(u):
        v = coords.to_external(u)
        p = base.copy()
        for n, i in idx.items():
            p[n] = v[i]
        eta, t, mu = p["eta"], p["t"], p["mu"]
        if noise_x:
            m, mn = p["mean_m"], x
            num = 2 * eta * t * m - (1 - t) ** 2 * m * m / mu
        else:
            m, mn = x, p["mean_noise"]
            num = (2 * eta * t - (1 - t) ** 2 * m / mu) * m
        if thermal:
            num = num - mn * mn / p["mu_noise"]
        elif fock:
            num = num + eta * t * mn
        d = (1 + t) * m + mn
        with np.errstate(divide="ignore", invalid="ignore"):
            z = (r - 1 + num / d) * w
        val = float(np.dot(z, z))
        return val if math.isfinite(val) else math.inf

    return fun


def _minimise(series, spec: FitSpec, free, frozen, bounds, starts):
    coords = _Coords(free, bounds)
    ib = coords.internal_bounds()
    fun = _fast_objective(series, spec.model, free, frozen, coords)

    runs = []
    for start in starts:
        trace: list[float] = []
        u0 = np.clip(coords.to_internal(start), [b[0] for b in ib], [b[1] for b in ib])
        trace.append(fun(u0))
        res = _nelder_mead(fun, u0, ib, trace)
        runs.append((float(res.fun), coords.to_external(res.x), trace))
    return runs


def _agree(f0: float, f1: float) -> bool:
    return abs(f1 - f0) <= CONVERGENCE_RTOL * abs(f0) + CONVERGENCE_ATOL


def _mu_term_fraction(series: DataSeries, model: str, params: Mapping[str, float]) -> float:
    p = dict(params)
    if series.x_role is XRole.NOISE_MEAN:
        m, mn = p["mean_m"], series.x
    else:
        m, mn = series.x, p["mean_noise"]
    t = p["t"]
    d = (1 + t) * m + mn
    with np.errstate(divide="ignore", invalid="ignore"):
        term = np.where(d > 0, (1 - t) ** 2 * m**2 / (p["mu"] * d), 0.0)
        r = model_eval(model, p, series.x, series.x_role)
    span = float(np.nanmax(r) - np.nanmin(r))
    if span == 0:
        span = float(np.nanmax(np.abs(r))) or 1.0
    return float(np.max(np.abs(term))) / span


def _profile_weak(series, spec, free, frozen, bounds, best, best_f, name) -> bool:
    """True when moving ``name`` by +-50% (then re-fitting the rest) costs < 1 in chi-square."""
    lo, hi = bounds[name]
    v = best[name]
    for probe in (v * 0.5, v * 1.5):
        probe = min(max(probe, lo), hi)
        if probe == v:
            continue
        others = [n for n in free if n != name]
        fz = dict(frozen)
        fz[name] = probe
        if others:
            runs = _minimise(series, spec, others, fz, bounds, [[best[n] for n in others]])
            f = runs[0][0]
        else:
            f = _objective(series, spec.model, fz)
        if f - best_f < 1.0:
            return True
    return False


def fit(
    series: DataSeries,
    spec: FitSpec,
    raise_on_failure: bool = False,
    profile: Sequence[str] = ("mu",),
) -> FitResult:
    """Minimise the chi-square of ``series`` over the free parameters of ``spec``.

    ``spec.n_starts`` log-uniform starting points are drawn from
    ``spec.seed`` (plus ``spec.init`` when complete). The lowest objective
    wins, ties going to the earlier restart. ``converged`` requires the two
    best restarts to agree within 1e-8 relative.

    A parameter listed in ``profile`` is flagged weakly identified when a
    +-50% shift, with the other parameters re-fitted, raises the chi-square
    by less than 1. ``mu`` is additionally flagged when its imbalance term
    is below 1e-6 of the model's range over the series.
    """
    spec.validate(series.x_role)
    free = tuple(spec.free)
    frozen = {k: float(v) for k, v in spec.frozen.items()}
    bounds = spec.all_bounds()
    dof = len(series) - len(free)
    if dof < 1:
        raise DomainError(f"no degrees of freedom left: {len(series)} points, {len(free)} free parameters")

    rng = np.random.default_rng(spec.seed)
    starts = _draw_starts(_Coords(free, bounds), spec.n_starts + 1, rng)
    user = starts.pop(0)
    if spec.init:
        # parameters left at "auto" keep their random draw
        starts.insert(0, [float(spec.init.get(n, v)) for n, v in zip(free, user)])

    runs = _minimise(series, spec, free, frozen, bounds, starts)
    order = sorted(range(len(runs)), key=lambda i: (runs[i][0], i))
    best_f, best_x, best_trace = runs[order[0]]
    converged = len(runs) == 1 or _agree(best_f, runs[order[1]][0])
    estimates = dict(zip(free, best_x))
    params = {**frozen, **estimates}
    pred = model_eval(spec.model, params, series.x, series.x_role)
    residuals = (series.r - pred) / series.sigma_r

    weak = []
    for name in free:
        flagged = False
        if name == "mu" and _mu_term_fraction(series, spec.model, params) < WEAK_MU_FRACTION:
            flagged = True
        if not flagged and name in profile:
            flagged = _profile_weak(series, spec, free, frozen, bounds, estimates, best_f, name)
        if flagged:
            weak.append(name)

    result = FitResult(
        estimates=estimates,
        chi2_nu=best_f / dof,
        dof=dof,
        converged=converged,
        n_restarts_used=len(runs),
        residuals=residuals,
        free=free,
        frozen=frozen,
        weakly_identified=weak,
        objective=best_f,
        restart_objectives=[runs[i][0] for i in range(len(runs))],
        trace=best_trace,
    )
    if raise_on_failure and not converged:
        raise FitConvergenceError("best restarts disagree beyond tolerance", result)
    return result


def two_stage_fit(series_clean: DataSeries, series_noisy: DataSeries, spec: FitSpec):
    """Fit the noiseless curve for (mu, eta, t), then the noise parameters on the noisy curve.

    Stage 1 freezes the noise mean at 0. Stage 2 freezes the stage-1 values
    and leaves only ``mean_noise`` (and ``mu_noise`` for the thermal model)
    free. Bounds, init and seed of ``spec`` carry over to both stages.
    """
    for s in (series_clean, series_noisy):
        if s.x_role is not XRole.TWB_MEAN:
            raise DomainError("two-stage fitting needs series with x_role=twb_mean")
    noise_names = ("mean_noise", "mu_noise") if spec.model == "thermal" else ("mean_noise",)
    stage1_frozen = {"mean_noise": 0.0}
    if spec.model == "thermal":
        stage1_frozen["mu_noise"] = 1.0
    s1 = FitSpec(
        spec.model,
        free=("mu", "eta", "t"),
        frozen=stage1_frozen,
        bounds=spec.bounds,
        init={k: v for k, v in spec.init.items() if k in ("mu", "eta", "t")},
        seed=spec.seed,
        n_starts=spec.n_starts,
    )
    r1 = fit(series_clean, s1)
    s2 = FitSpec(
        spec.model,
        free=noise_names,
        frozen=dict(r1.estimates),
        bounds=spec.bounds,
        init={k: v for k, v in spec.init.items() if k in noise_names},
        seed=spec.seed,
        n_starts=spec.n_starts,
    )
    r2 = fit(series_noisy, s2, profile=())
    return r1, r2


def synthetic_series(
    model: str,
    params: Mapping[str, float],
    x,
    x_role=XRole.NOISE_MEAN,
    sigma: float = 0.01,
    rng: Optional[np.random.Generator] = None,
) -> DataSeries:
    """Model curve sampled at ``x`` with Gaussian noise of std ``sigma`` (none when rng is None)."""
    x = np.asarray(x, dtype=float)
    r = np.asarray(model_eval(model, params, x, x_role), dtype=float)
    if rng is not None:
        r = r + rng.normal(0.0, sigma, size=r.shape)
    return DataSeries(x, r, np.full(x.shape, float(sigma)), x_role)
