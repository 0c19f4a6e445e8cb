"""``tbnrf`` command-line entry point.

Exit codes: 0 success, 1 I/O error, 2 invalid input, 3 runtime failure
(fit non-convergence, heralded-sampler rejection timeout).
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .errors import DegenerateInputError, DomainError, RejectionTimeoutError
from .fitting import MODEL_PARAMS, FitSpec, XRole, fit, model_params, two_stage_fit
from .io import (
    SCAN_HEADER,
    ConfigError,
    ensure_writable,
    fmt,
    format_fit_report,
    load_config,
    parse_range,
    read_series,
    write_csv,
    write_shots,
)
from .montecarlo import estimate_from_counts, simulate
from .nrf import lossy_arm_means, nrf_lossy_terms, nrf_noisy_lossy, nrf_noisy_one_arm
from .photon_stats import (
    Coherent,
    Conditional,
    Fock,
    MomentPair,
    MultiThermal,
    NoiseModel,
    NoNoise,
    noise_moments,
)
from .thresholds import classify, fock_noise_threshold, t_min, thermal_noise_max

EXIT_OK, EXIT_IO, EXIT_INPUT, EXIT_RUNTIME = 0, 1, 2, 3


class _InputError(Exception):
    pass


def _err(msg: str) -> None:
    print(f"tbnrf: error: {msg}", file=sys.stderr)


def _noise_label(noise: NoiseModel) -> str:
    fields = ", ".join(f"{f.name}={getattr(noise, f.name)}" for f in dataclasses.fields(noise))
    return f"{noise.kind}({fields})" if fields else noise.kind


def cmd_nrf(args) -> int:
    cfg = load_config(args.config)
    terms = nrf_lossy_terms(cfg.twb, cfg.noise)
    r = nrf_noisy_lossy(cfg.twb, cfg.noise)
    nm = noise_moments(cfg.noise)
    m1, m2, e1, e2 = lossy_arm_means(cfg.twb)
    print(f"R = {fmt(r)}")
    print(f"classification = {classify(cfg.twb, cfg.noise).value}")
    print(f"noise = {_noise_label(cfg.noise)}  mean = {fmt(nm.mean)}  variance = {fmt(nm.variance)}")
    print(f"arm means: m1 = {fmt(m1)}  m2 = {fmt(m2)}  effective efficiencies: {fmt(e1)}, {fmt(e2)}")
    print("terms:")
    print(f"  shot_noise   = {fmt(terms.shot_noise)}")
    print(f"  correlation  = {fmt(terms.correlation)}")
    print(f"  imbalance    = {fmt(terms.imbalance)}")
    print(f"  excess_noise = {fmt(terms.excess_noise)}")
    return EXIT_OK


def noise_pair_at(noise: NoiseModel, mean: float) -> MomentPair:
    """Noise moments with the scanned mean substituted.

    The scanned quantity is the detected noise mean, except for conditional
    sources where it is the unconditioned mean of the heralding beam.
    """
    if isinstance(noise, NoNoise):
        return MomentPair(0.0, 0.0)
    if isinstance(noise, Coherent):
        return MomentPair(mean, mean)
    if isinstance(noise, MultiThermal):
        return noise_moments(MultiThermal(mean, noise.modes))
    if isinstance(noise, Fock):
        # continuous detected mean: binomial variance (1 - eff) * mean
        return MomentPair(mean, (1.0 - noise.detection_efficiency) * mean)
    if isinstance(noise, Conditional):
        return noise_moments(dataclasses.replace(noise, unconditioned_mean=mean))
    raise TypeError(f"unknown noise model {noise!r}")


def scan_grid(twb, noise: NoiseModel, twb_means, noise_means):
    rows = []
    for m in twb_means:
        p = dataclasses.replace(twb, mean_m=float(m))
        m1, m2, e1, e2 = lossy_arm_means(p)
        for mn in noise_means:
            r = nrf_noisy_one_arm(m1, m2, e1, e2, p.modes, noise_pair_at(noise, float(mn)))
            rows.append((float(m), float(mn), r))
    return rows


def cmd_scan(args) -> int:
    cfg = load_config(args.config)
    twb_means = parse_range(args.twb_mean, "--twb-mean")
    noise_means = parse_range(args.noise_mean, "--noise-mean")
    if twb_means.min() < 0 or noise_means.min() < 0:
        raise ConfigError("scan ranges must be nonnegative")
    rows = scan_grid(cfg.twb, cfg.noise, twb_means, noise_means)
    ensure_writable(args.out)
    write_csv(args.out, SCAN_HEADER, rows)
    print(f"wrote {len(rows)} rows to {args.out}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    if cfg.mc is None:
        raise ConfigError("config has no mc block (shots, seed)", "mc")
    if args.out is None and not args.estimate:
        raise ConfigError("give an output path (-o) and/or --estimate")
    if args.threads is not None and args.threads < 1:
        raise ConfigError("--threads must be a positive integer", "--threads")
    if args.out is not None:
        ensure_writable(args.out)
    k1, k2 = simulate(cfg.twb, cfg.noise, cfg.mc.shots, cfg.mc.seed, workers=args.threads)
    if args.out is not None:
        write_shots(args.out, k1, k2)
        print(f"wrote {k1.size} shots to {args.out}", file=sys.stderr if args.estimate else sys.stdout)
    if args.estimate:
        est = estimate_from_counts(k1, k2, method=args.se_method, seed=cfg.mc.seed)
        r = nrf_noisy_lossy(cfg.twb, cfg.noise)
        print(f"r_hat = {fmt(est.r_hat)}")
        print(f"std_err = {fmt(est.std_err)}")
        print(f"shots = {est.shots}")
        print(f"mean1 = {fmt(est.mean1)}")
        print(f"mean2 = {fmt(est.mean2)}")
        print(f"R_analytic = {fmt(r)}")
        print(f"z = {fmt((est.r_hat - r) / est.std_err)}")
    return EXIT_OK


def _assignments(items, flag) -> dict[str, float]:
    out = {}
    for item in items or []:
        for piece in item.split(","):
            if not piece.strip():
                continue
            key, sep, val = piece.partition("=")
            if not sep:
                raise ConfigError(f"{flag}: expected name=value, got {piece!r}", flag)
            try:
                out[key.strip()] = float(val)
            except ValueError:
                raise ConfigError(f"{flag}: {key.strip()} is not a number: {val!r}", flag) from None
    return out


def _bounds(items) -> dict[str, tuple[float, float]]:
    out = {}
    for item in items or []:
        key, sep, val = item.partition("=")
        lo, sep2, hi = val.partition(":")
        try:
            if not (sep and sep2):
                raise ValueError
            out[key.strip()] = (float(lo), float(hi))
        except ValueError:
            raise ConfigError(f"--bounds: expected name=lo:hi, got {item!r}", "--bounds") from None
    return out


def _human(result, title: str) -> str:
    lines = [f"{title}: chi2_nu = {result.chi2_nu:.4g} (dof {result.dof}), "
             f"{'converged' if result.converged else 'NOT converged'}"]
    for k, v in result.estimates.items():
        flag = "  (weakly identified)" if k in result.weakly_identified else ""
        lines.append(f"  {k:<11s} = {v:.6g}{flag}")
    return "\n".join(lines)


def _report_json(results: dict) -> str:
    doc = {}
    for stage, r in results.items():
        doc[stage] = {
            "estimates": r.estimates,
            "frozen": r.frozen,
            "chi2_nu": r.chi2_nu,
            "dof": r.dof,
            "converged": r.converged,
            "n_restarts_used": r.n_restarts_used,
            "weakly_identified": r.weakly_identified,
            "residuals": [float(v) for v in r.residuals],
        }
    return json.dumps(doc, indent=2) + "\n"


def cmd_fit(args) -> int:
    model = args.model
    role = XRole(args.x_role)
    frozen = _assignments(args.frozen, "--frozen")
    init = _assignments(args.init, "--init")
    bounds = _bounds(args.bounds)
    series = read_series(args.data, role)

    if args.two_stage:
        noisy = read_series(args.two_stage, role)
        spec = FitSpec(model, free=(), bounds=bounds, init=init, seed=args.seed)
        r1, r2 = two_stage_fit(series, noisy, spec)
        results = {"stage1": r1, "stage2": r2}
    else:
        names = model_params(model, role)
        if args.free:
            free = [n.strip() for n in args.free.split(",") if n.strip()]
        else:
            free = [n for n in names if n not in frozen]
        spec = FitSpec(model, free=free, frozen=frozen, bounds=bounds, init=init, seed=args.seed)
        results = {"fit": fit(series, spec)}

    if args.out:
        ensure_writable(args.out)
        if args.out.endswith(".json"):
            text = _report_json(results)
        elif len(results) == 1:
            text = format_fit_report(results["fit"])
        else:
            text = "".join(format_fit_report(r, prefix=f"{k}.") for k, r in results.items())
        with open(args.out, "w", newline="") as fh:
            fh.write(text)
    for k, r in results.items():
        print(_human(r, k))
    if not all(r.converged for r in results.values()):
        _err("fit did not converge (best restarts disagree); report written with best point")
        return EXIT_RUNTIME
    return EXIT_OK


def _threshold_line(name, rep) -> str:
    val = "none" if rep.value is None else fmt(rep.value)
    rhs = "undefined" if rep.rhs is None else fmt(rep.rhs)
    return f"{name}: kind={rep.kind.value} value={val} feasible={'true' if rep.feasible else 'false'} rhs={rhs}"


def cmd_threshold(args) -> int:
    tm = t_min(args.eta, args.mu, args.mean_m)
    print(f"t_min = {fmt(tm)}")
    if args.t is not None:
        if args.mu_noise is not None:
            print(_threshold_line("thermal_noise_max", thermal_noise_max(args.eta, args.t, args.mu, args.mean_m, args.mu_noise)))
        print(_threshold_line("fock_noise_threshold", fock_noise_threshold(args.eta, args.t, args.mu, args.mean_m)))
    elif args.mu_noise is not None:
        print("note: thermal_noise_max needs --t as well", file=sys.stderr)
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        _err(message)
        raise SystemExit(EXIT_INPUT)


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="tbnrf", description="Noise reduction factor of noisy, lossy twin beams.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("nrf", help="evaluate R for a config and show its terms")
    p.add_argument("config")
    p.set_defaults(func=cmd_nrf)

    p = sub.add_parser("scan", help="R over a (TWB mean, noise mean) grid as CSV")
    p.add_argument("config")
    p.add_argument("--twb-mean", required=True, help="start:step:stop")
    p.add_argument("--noise-mean", required=True, help="start:step:stop (unconditioned mean for conditional noise)")
    p.add_argument("-o", "--out", required=True)
    p.set_defaults(func=cmd_scan)

    p = sub.add_parser("simulate", help="Monte Carlo shots (k1,k2) and/or an R estimate")
    p.add_argument("config")
    p.add_argument("-o", "--out")
    p.add_argument("--estimate", action="store_true")
    p.add_argument("--threads", type=int, help="worker threads (default: TBNRF_THREADS or core count)")
    p.add_argument("--se-method", choices=("delta", "bootstrap"), default="delta")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="fit a measured R curve (CSV x,r,sigma_r)")
    p.add_argument("data")
    p.add_argument("--model", required=True, choices=sorted(MODEL_PARAMS))
    p.add_argument("--x-role", required=True, choices=[r.value for r in XRole])
    p.add_argument("--free", help="comma-separated free parameters (default: all not frozen)")
    p.add_argument("--frozen", action="append", help="name=value[,name=value...]")
    p.add_argument("--init", action="append", help="name=value[,name=value...]")
    p.add_argument("--bounds", action="append", help="name=lo:hi")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--two-stage", metavar="NOISY_CSV", help="second series for the clean/noisy two-stage protocol")
    p.add_argument("-o", "--out")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("threshold", help="transmittance and noise thresholds for R < 1")
    p.add_argument("--eta", type=float, required=True)
    p.add_argument("--mu", type=float, required=True)
    p.add_argument("--mean-m", type=float, required=True)
    p.add_argument("--t", type=float)
    p.add_argument("--mu-noise", type=float)
    p.set_defaults(func=cmd_threshold)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DomainError, DegenerateInputError) as exc:
        _err(str(exc))
        return EXIT_INPUT
    except RejectionTimeoutError as exc:
        _err(f"rejection timeout: {exc}")
        return EXIT_RUNTIME
    except OSError as exc:
        _err(str(exc))
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
