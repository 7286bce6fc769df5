"""Command-line front end: ``transition-calib {simulate,calibrate,profile,study}``.

Every command writes ``manifest.json`` (configuration, seed, version) next
to its outputs.  Exit codes: 0 success, 2 usage or configuration error,
3 numerical failure.
"""

import argparse
import json
import sys
import warnings

import numpy as np

from . import __version__
from . import _backend
from ._parallel import WORKERS_ENV, resolve_workers
from .config import DEFAULTS_HELP, load_config, normalize_config, require
from .domain import (ObservedFactors, ensure_dir, labels_or_default, read_migrations,
                     write_factors, write_migrations)
from .errors import CalibrationError, ConfigError

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3


class UsageError(Exception):
    pass


def _config(args):
    if args.config is None:
        return normalize_config({})
    return load_config(args.config)


def _manifest(out, command, args, cfg):
    record = {
        "command": command,
        "version": __version__,
        "backend": _backend.name,
        "seed": args.seed,
        "arguments": {k: v for k, v in sorted(vars(args).items())
                      if k not in ("func", "config", "out") and not callable(v)},
        "config_file": args.config,
        "config": cfg,
    }
    with open(out / "manifest.json", "w") as fh:
        json.dump(record, fh, indent=2, sort_keys=True, default=_jsonable)
        fh.write("\n")


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, np.generic):
        return v.item()
    raise TypeError(f"cannot serialize {type(v).__name__}")


def _family(args, cfg):
    return getattr(args, "family", None) or cfg["model"]["family"]


# -- simulate -----------------------------------------------------------------

def cmd_simulate(args):
    from .simulate import simulate_migrations

    cfg = _config(args)
    require(cfg, args.config or "<config>", "truth", "populations")
    study = _study_config(cfg, n_scenarios=1)
    psi = study.true_params()
    rng = np.random.default_rng(args.seed)
    sc = simulate_migrations(study.family, psi, study.populations, study.n_periods, rng,
                             renormalize=cfg["calibration"]["renormalize"])
    out = ensure_dir(args.out)
    scheme = labels_or_default(cfg["model"]["ratings"], len(study.populations) + 1)
    write_migrations(out / "migrations.csv", sc.series, scheme)
    write_factors(out / "latent.csv", ObservedFactors(sc.latent.x))
    truth = {"names": list(study.param_names()), "values": study.true_vector().tolist(),
             "d": np.where(np.isinf(psi.d), None, psi.d).tolist(), "A": psi.A.tolist(),
             "Q": psi.Q.tolist(), "K": np.asarray(psi.K).tolist()}
    with open(out / "truth.json", "w") as fh:
        json.dump(truth, fh, indent=2, sort_keys=True)
        fh.write("\n")
    _manifest(out, "simulate", args, cfg)
    print(f"wrote {sc.series.n} periods to {out / 'migrations.csv'}")
    return EXIT_OK


def _study_config(cfg, n_scenarios=None, methods=None):
    from .calibrate import StudyConfig

    kw = dict(family=cfg["model"]["family"], truth=cfg["truth"],
              populations=tuple(cfg["populations"]), n_periods=cfg["model"]["periods"],
              n_scenarios=n_scenarios or cfg["study"]["scenarios"],
              methods=tuple(methods or cfg["study"]["methods"]),
              renormalize=bool(cfg["study"]["renormalize"]),
              particles=cfg["pf"]["particles"], grid_count=cfg["gpr"]["grid_count"],
              grid_range=tuple(cfg["gpr"]["grid_range"]))
    try:
        return StudyConfig(**kw)
    except (ValueError, TypeError, KeyError) as exc:
        raise ConfigError(f"invalid study configuration: {exc}") from None


# -- calibrate ----------------------------------------------------------------

def _read_series(path):
    try:
        return read_migrations(path)
    except OSError as exc:
        raise UsageError(f"cannot read data {path}: {exc.strerror}") from None
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def cmd_calibrate(args):
    from .gpr import default_grid, pf_gpr_mle
    from .laplace import mle_laplace
    from .particle import pf_importance
    from .calibrate import stepwise_calibrate

    cfg = _config(args)
    method = args.method or cfg["calibration"]["method"]
    series, scheme = _read_series(args.data)
    family = _family(args, cfg)
    particles = args.particles or cfg["pf"]["particles"]
    out = ensure_dir(args.out)
    report = {"method": method, "family": family, "periods": series.n}
    if method == "laplace":
        res = mle_laplace(family, series, tol=cfg["calibration"]["tol"])
        report.update(params=res.params, loglik=res.loglik, evaluations=res.n_evals,
                      converged=res.converged, newton_iterations=res.mode.iterations)
        latent = res.latent
    elif method == "stepwise":
        res = stepwise_calibrate(series)
        report.update(params=res.params, loglik_default=res.default.loglik,
                      loglik_performing=res.performing.loglik)
        latent = np.stack([res.latent_default, res.latent_performing], axis=1)
    else:
        if family == "two_factor":
            raise UsageError("pf-gpr needs a two-parameter family (default_only or performing)")
        lo, hi = cfg["gpr"]["grid_range"]
        grid = default_grid(2, lo, hi, cfg["gpr"]["grid_count"])
        res = pf_gpr_mle(family, series, grid=grid, N=particles, rng=args.seed,
                         workers=args.workers)
        res.surface.write(out / "surface.csv")
        pf = pf_importance(family, series, res.psi_hat, N=particles,
                           rng=np.random.default_rng(args.seed))
        with open(out / "ess.csv", "w") as fh:
            fh.write("period,ess\n")
            for k, e in enumerate(pf.ess):
                fh.write(f"{k + 1},{e!r}\n")
        k = res.surface.model.kernel
        report.update(params=res.params, fitted_max=res.fitted_max, pf_loglik=pf.loglik,
                      particles=particles, failed_points=len(res.failed),
                      kernel={"sigma_f": k.sigma_f, "lengthscales": list(k.lengthscales),
                              "sigma_noise": k.sigma_noise})
        latent = pf.mode.x_mode
    write_factors(out / "latent_estimate.csv", ObservedFactors(latent))
    with open(out / "estimates.json", "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True, default=_jsonable)
        fh.write("\n")
    _manifest(out, "calibrate", args, cfg)
    print(" ".join(f"{k}={v:.4f}" for k, v in report["params"].items()))
    return EXIT_OK


# -- profile ------------------------------------------------------------------

def _parse_range(text):
    parts = text.replace(":", ",").split(",")
    if len(parts) != 3:
        raise UsageError("--range must be LOW,HIGH,COUNT")
    try:
        lo, hi, count = float(parts[0]), float(parts[1]), int(parts[2])
    except ValueError:
        raise UsageError("--range must be LOW,HIGH,COUNT") from None
    if count < 1 or hi < lo:
        raise UsageError("--range is empty")
    return np.linspace(lo, hi, count)


def _parse_at(items):
    base = {}
    for item in items or ():
        name, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"--at expects NAME=VALUE, got {item!r}")
        try:
            base[name.strip()] = float(value)
        except ValueError:
            raise UsageError(f"--at value for {name!r} is not a number") from None
    return base


def cmd_profile(args):
    from .calibrate import likelihood_profile
    from .params import default_map

    cfg = _config(args)
    series, _ = _read_series(args.data)
    family = _family(args, cfg)
    values = _parse_range(args.range)
    method = {"pf-is": "pf_is", "pf-bootstrap": "pf_bootstrap"}.get(args.method, args.method)
    pmap = default_map(family, series)
    base = {}
    if cfg["truth"] is not None and family == cfg["model"]["family"]:
        base.update(dict(zip(_study_config(cfg, 1).param_names(),
                             _study_config(cfg, 1).true_vector())))
    base.update(_parse_at(args.at))
    missing = [n for n in pmap.names if n not in base and n != args.axis]
    if args.axis not in pmap.names:
        raise UsageError(f"--axis must be one of {', '.join(pmap.names)}")
    if missing:
        raise UsageError(f"give fixed values with --at for: {', '.join(missing)}")
    base.setdefault(args.axis, float(values[0]))
    table = likelihood_profile(family, series, base, args.axis, values, method=method,
                               N=args.particles or cfg["pf"]["particles"],
                               seed=args.seed if args.seed is not None else 0, pmap=pmap)
    out = ensure_dir(args.out)
    table.write(out / f"profile_{args.axis}_{args.method}.csv")
    _manifest(out, "profile", args, cfg)
    for i, err in table.errors.items():
        print(f"point {values[i]:.4f} failed: {err}", file=sys.stderr)
    if len(table.errors) == values.size:
        return EXIT_NUMERIC
    return EXIT_OK


# -- study --------------------------------------------------------------------

def cmd_study(args):
    from .calibrate import scenario_study

    cfg = _config(args)
    require(cfg, args.config or "<config>", "truth", "populations")
    methods = [args.method] if args.method else None
    study = _study_config(cfg, methods=methods)
    if args.particles:
        from dataclasses import replace
        study = replace(study, particles=args.particles)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", RuntimeWarning)
        res = scenario_study(study, seed=args.seed, workers=args.workers)
        summary = res.summary()
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    out = res.write(args.out)
    _manifest(out, "study", args, cfg)
    print(summary)
    if all(len(res.failures[m]) == study.n_scenarios for m in study.methods):
        return EXIT_NUMERIC
    return EXIT_OK


# -- entry point --------------------------------------------------------------

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML configuration file (see sections below)")
    common.add_argument("--seed", type=int, default=0, help="master random seed")
    common.add_argument("--out", required=True, help="output directory")
    common.add_argument("--workers", type=int, default=None,
                        help=f"parallel worker processes (default: ${WORKERS_ENV} or 1)")
    common.add_argument("--particles", type=int, default=None,
                        help="particle count for PF methods (default: pf.particles)")

    p = argparse.ArgumentParser(prog="transition-calib", description=__doc__.splitlines()[0],
                                epilog=DEFAULTS_HELP,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="simulate a migration series",
                       epilog=DEFAULTS_HELP, formatter_class=argparse.RawDescriptionHelpFormatter)
    s.set_defaults(func=cmd_simulate)

    c = sub.add_parser("calibrate", parents=[common], help="estimate parameters from data",
                       epilog=DEFAULTS_HELP, formatter_class=argparse.RawDescriptionHelpFormatter)
    c.add_argument("--data", required=True, help="migration file (period,from,to,count)")
    c.add_argument("--method", choices=("laplace", "pf-gpr", "stepwise"),
                   help="estimation method (default: calibration.method)")
    c.add_argument("--family", choices=("default_only", "two_factor", "performing"),
                   help="model family (default: model.family)")
    c.set_defaults(func=cmd_calibrate)

    f = sub.add_parser("profile", parents=[common], help="log-likelihood profile",
                       epilog=DEFAULTS_HELP, formatter_class=argparse.RawDescriptionHelpFormatter)
    f.add_argument("--data", required=True, help="migration file (period,from,to,count)")
    f.add_argument("--axis", required=True, help="free parameter to vary, e.g. a or k")
    f.add_argument("--range", required=True, help="LOW,HIGH,COUNT")
    f.add_argument("--method", choices=("laplace", "pf-is", "pf-bootstrap"), default="laplace")
    f.add_argument("--at", action="append", metavar="NAME=VALUE",
                   help="value of another free parameter (default: config truth)")
    f.add_argument("--family", choices=("default_only", "two_factor", "performing"),
                   help="model family (default: model.family)")
    f.set_defaults(func=cmd_profile)

    t = sub.add_parser("study", parents=[common], help="multi-scenario calibration study",
                       epilog=DEFAULTS_HELP, formatter_class=argparse.RawDescriptionHelpFormatter)
    t.add_argument("--method", choices=("laplace", "pf-gpr", "stepwise"),
                   help="single method overriding study.methods")
    t.set_defaults(func=cmd_study)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if hasattr(args, "workers"):
            args.workers = resolve_workers(args.workers)
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        # bad shapes or parameter values in the inputs
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except CalibrationError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
