"""Command-line interface: ``locscale {fit,cv,simulate,register}``.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical error.
"""

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .bandwidth import CVConfig, cv_select
from .errors import DataError, NumericalError
from .inference import all_beta_cis, default_bandwidths
from .ingest import load_panel, panel_to_csv, read_spectra, register
from .kernel import KernelFamily, make_kernel
from .model import Bandwidths, FitOptions, curve_to_csv, fit_to_json, multi_step_fit
from .synth import run_mc, sim_config_from_dict

log = logging.getLogger("locscale")

EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 2, 3, 4
THREADS_ENV = "LOCSCALE_THREADS"


class UsageError(Exception):
    pass


def parse_grid(text):
    """``"lo:hi:step"`` (inclusive) or a comma-separated list of values."""
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    text = str(text).strip()
    if ":" in text:
        try:
            lo, hi, step = (float(p) for p in text.split(":"))
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad grid {text!r}; expected lo:hi:step") from None
        if step <= 0 or hi < lo:
            raise argparse.ArgumentTypeError(f"bad grid {text!r}; need step > 0 and hi >= lo")
        count = int(np.floor((hi - lo) / step + 1e-9)) + 1
        return [float(f"{lo + k * step:.12g}") for k in range(count)]
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad grid {text!r}") from None


def _default_threads():
    env = os.environ.get(THREADS_ENV)
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def _common(p):
    p.add_argument("--config", help="JSON file of option defaults (flags take precedence)")
    p.add_argument("--kernel", default="epanechnikov", choices=[f.value for f in KernelFamily])
    p.add_argument("--seed", type=int, default=None, help="RNG seed (default 0, or the simulation config's)")
    p.add_argument("--threads", type=int, default=None, help=f"worker threads (default ${THREADS_ENV} or all cores)")
    p.add_argument("-v", "--verbose", action="count", default=0)


def _read_options(p):
    p.add_argument("--mz-min", type=float, default=None)
    p.add_argument("--mz-max", type=float, default=None)
    p.add_argument("--log", dest="log_transform", action="store_true", help="apply log(1 + intensity)")


def _fit_options(p):
    p.add_argument("--single-pass", action="store_true", help="stop after the first pooled update")
    p.add_argument("--literal-iteration", action="store_true",
                   help="iterate without re-anchoring the curve to the baseline")
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--max-iter", type=int, default=20)


def build_parser():
    parser = argparse.ArgumentParser(prog="locscale", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit location/scale parameters and the baseline curve")
    _common(p)
    _read_options(p)
    _fit_options(p)
    p.add_argument("--input", required=True, help="panel CSV (wide or long)")
    p.add_argument("--baseline", default=None, help="id of the baseline individual (default: first)")
    p.add_argument("--h", type=float, default=None, help="bandwidth of the initial smooth")
    p.add_argument("--h-star", type=float, default=None, help="bandwidth of the pooled smooth")
    p.add_argument("--auto-bandwidth", action="store_true", help="use the rate-based default bandwidths")
    p.add_argument("--ci", type=float, default=None, metavar="LEVEL", help="add confidence intervals for beta")
    p.add_argument("--out", default="-", help="fit JSON path, '-' for stdout")
    p.add_argument("--curve-csv", default=None, help="also write the curve as two-column CSV")

    p = sub.add_parser("cv", help="cross-validate the bandwidth pair")
    _common(p)
    _read_options(p)
    _fit_options(p)
    p.add_argument("--input", required=True)
    p.add_argument("--baseline", default=None)
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--h-grid", type=parse_grid, required=False, default=None)
    p.add_argument("--hstar-grid", type=parse_grid, required=False, default=None)
    p.add_argument("--out", default="-", help="report JSON path, '-' for stdout")
    p.add_argument("--mspe-csv", default=None, help="also write the MSPE table (rows h*, columns h)")

    p = sub.add_parser("simulate", help="Monte-Carlo study on synthetic panels")
    _common(p)
    _fit_options(p)
    p.add_argument("--reps", type=int, default=None)
    p.add_argument("--h-grid", type=parse_grid, default=None)
    p.add_argument("--hstar-grid", type=parse_grid, default=None)
    p.add_argument("--oracle-grid", type=parse_grid, default=None)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("register", help="interpolate spectra onto a reference m/z grid")
    _common(p)
    _read_options(p)
    p.add_argument("--input", required=True)
    p.add_argument("--reference", default=None, help="reference id (default: first)")
    p.add_argument("--out", default="-")
    parser.commands = sub.choices
    return parser


def _load_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON ({exc})") from None


def parse_args(argv):
    parser = build_parser()
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("command", nargs="?")
    pre.add_argument("--config")
    early, _ = pre.parse_known_args(argv)
    if early.config and early.command in parser.commands and early.command != "simulate":
        # config values become defaults, so explicit flags still win
        sub = parser.commands[early.command]
        conf = {k.replace("-", "_"): v for k, v in _load_json(early.config).items()}
        known = {a.dest for a in sub._actions}
        unknown = sorted(set(conf) - known)
        if unknown:
            sub.error(f"unknown keys in {early.config}: {', '.join(unknown)}")
        for a in sub._actions:
            if a.dest in conf:
                a.required = False
        sub.set_defaults(**conf)
    return parser.parse_args(argv)


def _write(path, text):
    if path in (None, "-"):
        sys.stdout.write(text)
        sys.stdout.flush()
    else:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            fh.write(text)


def _options(args):
    return FitOptions(
        tol=args.tol, max_iter=args.max_iter, single_pass=args.single_pass, reanchor=not args.literal_iteration
    )


def _panel(args):
    return load_panel(args.input, baseline_id=args.baseline, mz_min=args.mz_min, mz_max=args.mz_max,
                      log_transform=args.log_transform)


def cmd_fit(args):
    if args.auto_bandwidth and (args.h is not None or args.h_star is not None):
        raise UsageError("--auto-bandwidth cannot be combined with --h/--h-star")
    if not args.auto_bandwidth and (args.h is None or args.h_star is None):
        raise UsageError("fit needs both --h and --h-star, or --auto-bandwidth")
    panel = _panel(args)
    kernel = make_kernel(args.kernel)
    bw = default_bandwidths(panel) if args.auto_bandwidth else Bandwidths(args.h, args.h_star)
    log.info("fitting %r with h=%g, h*=%g", panel, bw.h, bw.h_star)
    fit = multi_step_fit(panel, kernel, bw, _options(args))
    inference = all_beta_cis(panel, fit, args.ci) if args.ci is not None else None
    _write(args.out, fit_to_json(fit, inference))
    if args.curve_csv:
        _write(args.curve_csv, curve_to_csv(fit))


def cmd_cv(args):
    if args.h_grid is None or args.hstar_grid is None:
        raise UsageError("cv needs --h-grid and --hstar-grid")
    panel = _panel(args)
    config = CVConfig(args.folds, tuple(args.h_grid), tuple(args.hstar_grid), args.seed or 0, args.single_pass)
    report = cv_select(panel, config, make_kernel(args.kernel), _options(args), threads=args.threads)
    log.info("selected h=%g, h*=%g", report.selected.h, report.selected.h_star)
    _write(args.out, json.dumps(report.to_dict(), indent=2) + "\n")
    if args.mspe_csv:
        _write(args.mspe_csv, report.mspe_csv())


def _csv(rows):
    return "".join(",".join(str(c) for c in r) + "\n" for r in rows)


def cmd_simulate(args):
    spec = _load_json(args.config) if args.config else {}
    spec = dict(spec)
    if args.reps is not None:
        spec["replications"] = args.reps
    if args.seed is not None:
        spec["seed"] = args.seed
    h_grid = args.h_grid or parse_grid(spec.pop("h_grid", "0.02:0.06:0.02"))
    hstar_grid = args.hstar_grid or parse_grid(spec.pop("hstar_grid", "0.01:0.03:0.005"))
    oracle_grid = args.oracle_grid or parse_grid(spec.pop("oracle_grid", hstar_grid))
    if spec.pop("single_pass", False):
        args.single_pass = True
    try:
        config = sim_config_from_dict(spec)
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"bad simulation config: {exc}") from None
    result = run_mc(config, h_grid, hstar_grid, _options(args), make_kernel(args.kernel),
                    oracle_grid=oracle_grid, threads=args.threads)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ih, ihs = result.best_updated()
    mean, sd = result.param_mean[ih, ihs], result.param_sd[ih, ihs]
    rows = [["id", "alpha", "beta", "alpha_hat", "alpha_sd", "beta_hat", "beta_sd"]]
    for i, (a, b) in enumerate(config.params):
        rows.append([i + 1, repr(a), repr(b), repr(float(mean[i, 0])), repr(float(sd[i, 0])),
                     repr(float(mean[i, 1])), repr(float(sd[i, 1]))])
    _write(out / "params.csv", _csv(rows))
    rows = [["h", "mse", "se"]] + [
        [repr(float(h)), repr(float(m)), repr(float(s))]
        for h, m, s in zip(result.h_grid, result.curve_mse_initial, result.curve_mse_initial_se)
    ]
    _write(out / "mse_initial.csv", _csv(rows))
    rows = [["h_star\\h"] + [repr(float(h)) for h in result.h_grid]]
    for j, hs in enumerate(result.hstar_grid):
        rows.append([repr(float(hs))] + [repr(float(v)) for v in result.curve_mse_updated[:, j]])
    _write(out / "mse_updated.csv", _csv(rows))
    rows = [["h", "mse", "se"]] + [
        [repr(float(h)), repr(float(m)), repr(float(s))]
        for h, m, s in zip(result.oracle_grid, result.oracle_mse, result.oracle_mse_se)
    ]
    _write(out / "oracle.csv", _csv(rows))
    summary = {
        "n": config.n,
        "T": config.T,
        "sigma": config.sigma,
        "seed": config.seed,
        "replications": result.replications,
        "failed": result.failed,
        "h_grid": result.h_grid.tolist(),
        "hstar_grid": result.hstar_grid.tolist(),
        "best": {"h": float(result.h_grid[ih]), "h_star": float(result.hstar_grid[ihs]),
                 "mse": float(result.curve_mse_updated[ih, ihs])},
        "mse_initial": result.curve_mse_initial.tolist(),
        "mse_updated": result.curve_mse_updated.tolist(),
        "oracle_grid": result.oracle_grid.tolist(),
        "oracle_mse": result.oracle_mse.tolist(),
        "known_param_mse": result.known_param_mse.tolist(),
        "converged_fraction": float(result.converged.mean()),
    }
    _write(out / "summary.json", json.dumps(summary, indent=2) + "\n")


def cmd_register(args):
    raw = read_spectra(args.input, mz_min=args.mz_min, mz_max=args.mz_max, log_transform=args.log_transform)
    _write(args.out, panel_to_csv(register(raw, args.reference)))


COMMANDS = {"fit": cmd_fit, "cv": cmd_cv, "simulate": cmd_simulate, "register": cmd_register}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    except DataError as exc:
        print(f"locscale: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    logging.captureWarnings(True)
    if args.threads is None:
        args.threads = _default_threads()
    try:
        COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"locscale {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError) as exc:
        print(f"locscale: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"locscale: numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"locscale: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return 0


if __name__ == "__main__":
    sys.exit(main())
