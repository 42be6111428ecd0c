"""Command-line interface: simulate, fit, xct and frechet subcommands.

Exit codes: 0 success, 2 invalid input, 3 numerical failure, 4 usage error.
Set ``LTM_THREADS`` to cap the number of worker threads.
"""

from __future__ import annotations

import argparse
import logging
import sys
import warnings
from itertools import product
from pathlib import Path

import numpy as np

from . import __version__
from .core import Domain, InvariantError, evaluate
from .frechet import fit_frechet, global_frechet_regression, ExtrapolationWarning
from .io import (
    ValidationError,
    load_fit,
    load_truth,
    metadata_line,
    read_covariates,
    read_dataset,
    save_fit,
    save_truth,
    write_curve_csv,
    write_dataset,
)
from .ltm import LTMConfig, MultivariateSample, fit_ltm
from .smooth import Kernel, SmoothConfig, default_bandwidth
from .xct import TransportMatrix, cycle_deviation, marginal_xct, subject_xct

logger = logging.getLogger("latent_transport")

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL, EXIT_USAGE = 0, 2, 3, 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _float_list(text: str):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _id_list(text: str):
    ids = [v.strip() for v in text.split(",")]
    if any(not v for v in ids):
        raise argparse.ArgumentTypeError(f"empty id in {text!r}")
    return ids


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="latent-transport", description="Latent transport model for multivariate curves.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-q", "--quiet", action="store_true", help="only report warnings and errors")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="simulate a data set or Monte Carlo result tables")
    s.add_argument("--preset", choices=["paper"], help="the full 3x3x4 noise grid (table mode)")
    s.add_argument("--n", type=int, default=50)
    s.add_argument("--p", type=int, default=4)
    s.add_argument("--m", type=int, default=21)
    s.add_argument("--sigma-w", type=float)
    s.add_argument("--sigma-d", type=float)
    s.add_argument("--sigma-e", type=float)
    s.add_argument("--sigma-a", type=float, default=10.0)
    s.add_argument("--table", action="store_true", help="run the Monte Carlo harness and write result tables")
    s.add_argument("--B", type=int, help="Monte Carlo replicates (table mode, default 20)")
    s.add_argument("--bandwidth", type=float, help="smoothing bandwidth for table mode (default 1.2 x spacing)")
    s.add_argument("--workers", type=int, default=1, help="worker processes for table mode")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True, help="output directory")

    f = sub.add_parser("fit", help="fit the model to a long-format dataset CSV")
    f.add_argument("dataset")
    f.add_argument("--out", required=True, help="output directory")
    f.add_argument("--bandwidth", type=float, help="bandwidth in data time units (default 2 x spacing)")
    f.add_argument("--kernel", choices=[k.value for k in Kernel], default=Kernel.EPANECHNIKOV.value)
    f.add_argument("--knots", type=int, default=4, help="interior spline knots L")
    f.add_argument("--eta1", type=float, help="warping penalty (default: data-driven rule)")
    f.add_argument("--eta2", type=float, help="transport penalty (default: data-driven rule)")
    f.add_argument("--draws", type=int, default=1, help="representative draws averaged for the latent curve")
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--truth", help="truth archive from 'simulate'; adds error metrics to the report")

    x = sub.add_parser("xct", help="cross-component transport maps from a fit archive")
    x.add_argument("archive")
    x.add_argument("--out", required=True, help="output directory")
    g = x.add_mutually_exclusive_group(required=True)
    g.add_argument("--pair", type=_id_list, help="component ids j,k")
    g.add_argument("--matrix", action="store_true", help="all p x p transports")
    g.add_argument("--cycle", type=_id_list, help="component ids j,k,l,... of a cycle")
    x.add_argument("--subject", help="subject id for subject-level transports")

    r = sub.add_parser("frechet", help="Fréchet regression of subject transports on a covariate")
    r.add_argument("archive")
    r.add_argument("--from", dest="source", required=True, help="component id j")
    r.add_argument("--to", dest="target", required=True, help="component id k")
    r.add_argument("--covariate-file", required=True, help="CSV with columns subject_id,x")
    r.add_argument("--predict", type=_float_list, default=[], help="covariate values x0[,x1,...]")
    r.add_argument("--out", required=True, help="output directory")
    return p


def _outdir(path) -> Path:
    d = Path(path)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _fmt(v) -> str:
    return repr(float(v))


# -- simulate -----------------------------------------------------------------

def cmd_simulate(args) -> int:
    from .simgen import NOISE_GRID, SimConfig, monte_carlo, simulate_dataset, table_rows, write_table_csv

    sigmas = (args.sigma_w, args.sigma_d, args.sigma_e)
    table = args.table or args.preset == "paper"
    if args.preset == "paper":
        if any(v is not None for v in sigmas):
            raise UsageError("--preset paper fixes the noise grid; drop --sigma-w/--sigma-d/--sigma-e")
    if not table and args.B is not None:
        raise UsageError("--B only applies to table mode (--table or --preset paper)")
    if not table and args.bandwidth is not None:
        raise UsageError("--bandwidth only applies to table mode; pass it to 'fit' instead")
    sw, sd, se = (0.0 if v is None else v for v in sigmas)
    try:
        base = SimConfig(n=args.n, p=args.p, m=args.m, sigma_w=sw, sigma_d=sd, sigma_e=se,
                         sigma_a=args.sigma_a, seed=args.seed)
    except ValueError as e:
        raise UsageError(str(e))
    out = _outdir(args.out)
    if not table:
        raw, truth = simulate_dataset(base)
        head = metadata_line("simulate", args.seed, n=args.n, p=args.p, m=args.m, sigma_w=sw,
                             sigma_d=sd, sigma_e=se, sigma_a=args.sigma_a)
        write_dataset(out / "dataset.csv", raw, header=head)
        save_truth(truth, out / "truth.jsonl")
        logger.info("wrote %s and %s", out / "dataset.csv", out / "truth.jsonl")
        return EXIT_OK

    B = 20 if args.B is None else args.B
    if B < 1:
        raise UsageError("--B must be at least 1")
    if args.workers < 1:
        raise UsageError("--workers must be at least 1")
    if args.preset == "paper":
        cells = list(product(NOISE_GRID["sigma_w"], NOISE_GRID["sigma_d"], NOISE_GRID["sigma_e"]))
    else:
        cells = [(sw, sd, se)]

    def progress(cell, b):
        logger.info("cell (%g, %g, %g): replicate %d/%d", cell.sigma_w, cell.sigma_d, cell.sigma_e, b + 1, B)

    results = monte_carlo(cells, B=B, seed=args.seed, base=base, bandwidth=args.bandwidth, progress=progress,
                          workers=args.workers)
    bw = "default" if args.bandwidth is None else _fmt(args.bandwidth)
    for metric in ("LISE", "HMISE", "XMISE"):
        rows = table_rows(results, base, args.seed, metric)
        head = (f"latent_transport version={__version__} command=simulate seed={args.seed} "
                f"B={B} sigma_a={args.sigma_a} bandwidth={bw}")
        write_table_csv(rows, out / f"table_{metric.lower()}.csv", head)
    logger.info("wrote result tables to %s", out)
    return EXIT_OK


# -- fit ----------------------------------------------------------------------

def _plot_rows(t_unit, domain: Domain, columns):
    t = domain.from_unit(t_unit)
    return [[t[s]] + [c[s] for c in columns] for s in range(t.size)]


def _report(fit, domain: Domain, bandwidth, kernel, metrics=None) -> str:
    lines = [f"latent_transport {__version__} fit report", ""]
    lines.append(f"subjects n = {fit.n}, components p = {fit.p}, grid points = {fit.grid.m}")
    lines.append(f"time domain = [{domain.lo!r}, {domain.hi!r}]")
    lines.append(f"smoothing: kernel = {kernel}, bandwidth = {bandwidth!r} (data time units)")
    lines.append(f"seed = {fit.seed}, knots L = {fit.config.L}, representative draws = {fit.config.draws}")
    lines.append("")
    lines.append("penalties")
    lines.append(f"  eta1 (subject warps)  = {fit.eta1!r}")
    lines.append(f"  eta1 (latent stage)   = {fit.eta1_latent!r}")
    lines.append(f"  eta2 (transports)     = {fit.eta2!r}")
    lines.append(f"  latent renormalization factor = {fit.latent_scale!r}")
    lines.append("")
    lines.append("component tempos (peak time in data units, peak value, transport knot values)")
    for j, cid in enumerate(fit.component_ids):
        g = fit.tempos[j]
        k = int(np.argmax(g.values))
        peak_t = float(domain.from_unit(g.grid.points[k]))
        theta = " ".join(f"{v:.4f}" for v in fit.transport_thetas[j])
        lines.append(f"  {cid}: peak at {peak_t:.4f}, value {g.values[k]:.4f}; theta = {theta}")
    lines.append("")
    counts = np.bincount(np.asarray(fit.representatives).ravel(), minlength=fit.p)
    lines.append("representative components: " + ", ".join(
        f"{cid}: {int(c)}" for cid, c in zip(fit.component_ids, counts)))
    d = fit.diagnostics
    lines.append("")
    lines.append("diagnostics")
    stages = d["component_stages"] + d["latent_stages"] + [d["transport_stage"]]
    for st in stages:
        lines.append(f"  {st['stage']}: {st['pairs']} optimizations, {len(st['not_converged'])} hit the "
                     f"iteration budget, {len(st['degenerate'])} degenerate")
    lines.append(f"  sup |mean inverse subject warp - identity| = {d['mean_inverse_subject_warp_deviation']:.6f}")
    lines.append(f"  sup |mean inverse transport - identity|    = {d['mean_inverse_transport_deviation']:.6f}")
    if metrics:
        lines.append("")
        lines.append("errors against the simulation truth")
        lines.append(f"  LISE x 100  = {100 * metrics['LISE']:.6f}")
        lines.append(f"  HMISE x 100 = {100 * metrics['HMISE']:.6f}")
        lines.append(f"  XMISE       = {metrics['XMISE']:.6f}")
    return "\n".join(lines) + "\n"


def cmd_fit(args) -> int:
    raw, domain, sids, cids = read_dataset(args.dataset)
    width = domain.hi - domain.lo
    if args.bandwidth is None:
        bw_unit = default_bandwidth(raw.grid)
        logger.info("no --bandwidth given; using 2 x grid spacing = %r data time units", bw_unit * width)
    else:
        if not args.bandwidth > 0:
            raise UsageError("--bandwidth must be positive")
        bw_unit = args.bandwidth / width
    if args.knots < 1:
        raise UsageError("--knots must be at least 1")
    for name in ("eta1", "eta2"):
        v = getattr(args, name)
        if v is not None and v < 0:
            raise UsageError(f"--{name} must be nonnegative")
    if args.draws < 1:
        raise UsageError("--draws must be at least 1")
    smooth = SmoothConfig(bw_unit, Kernel(args.kernel))
    sample = MultivariateSample.from_raw(raw, smooth, subject_ids=sids, component_ids=cids)
    cfg = LTMConfig(L=args.knots, eta1=args.eta1, eta2=args.eta2, draws=args.draws)
    fit = fit_ltm(sample, cfg, seed=args.seed)

    out = _outdir(args.out)
    save_fit(fit, out / "fit.jsonl", domain)
    head = metadata_line("fit", args.seed, knots=args.knots, bandwidth=_fmt(bw_unit * width), kernel=args.kernel)
    g = fit.grid
    write_curve_csv(out / "latent.csv", ["t", "latent"], _plot_rows(g.points, domain, [fit.latent.values]), head)
    write_curve_csv(out / "tempos.csv", ["t"] + list(cids),
                    _plot_rows(g.points, domain, [evaluate(c, g.points) for c in fit.tempos]), head)
    psi = [domain.from_unit(evaluate(w, g.points)) for w in fit.component_transports]
    write_curve_csv(out / "transports.csv", ["t"] + list(cids), _plot_rows(g.points, domain, psi), head)
    metrics = None
    if args.truth:
        from .simgen import evaluate_fit

        metrics = evaluate_fit(fit, load_truth(args.truth))
    (out / "report.txt").write_text(_report(fit, domain, bw_unit * width, args.kernel, metrics))
    logger.info("wrote fit archive and plot data to %s", out)
    return EXIT_OK


# -- xct ----------------------------------------------------------------------

def _write_map(path, w, domain: Domain, head: str) -> None:
    t = domain.from_unit(w.grid.points)
    v = domain.from_unit(w.values)
    write_curve_csv(path, ["t", "T"], zip(t, v), head)


def _component(fit, cid) -> int:
    try:
        return fit.component_index(cid)
    except KeyError as e:
        raise ValidationError(e.args[0]) from None


def _subject(fit, sid) -> int:
    try:
        return fit.subject_index(sid)
    except KeyError as e:
        raise ValidationError(e.args[0]) from None


def cmd_xct(args) -> int:
    fit, domain = load_fit(args.archive)
    out = _outdir(args.out)
    i = None if args.subject is None else _subject(fit, args.subject)
    prefix = "" if i is None else f"subject_{args.subject}_"
    head = metadata_line("xct", fit.seed, **({} if i is None else {"subject": args.subject}))
    if args.pair is not None:
        if len(args.pair) != 2:
            raise UsageError("--pair takes exactly two component ids")
        j, k = (_component(fit, c) for c in args.pair)
        T = marginal_xct(fit, j, k) if i is None else subject_xct(fit, i, j, k)
        _write_map(out / f"{prefix}xct_{args.pair[0]}_{args.pair[1]}.csv", T, domain, head)
    elif args.matrix:
        M = TransportMatrix(fit, subject=i).materialize()
        for j, cj in enumerate(fit.component_ids):
            for k, ck in enumerate(fit.component_ids):
                _write_map(out / f"{prefix}xct_{cj}_{ck}.csv", M[j, k], domain, head)
    else:
        if len(args.cycle) < 2:
            raise UsageError("--cycle needs at least two component ids")
        idx = [_component(fit, c) for c in args.cycle]
        dev = cycle_deviation(fit, idx, subject=i)
        print(f"cycle {','.join(args.cycle)}: sup deviation from identity = {dev!r}")
        write_curve_csv(out / f"{prefix}cycle.csv", ["cycle", "deviation"], [[" ".join(args.cycle), dev]], head)
    return EXIT_OK


# -- frechet ------------------------------------------------------------------

def cmd_frechet(args) -> int:
    fit, domain = load_fit(args.archive)
    j, k = _component(fit, args.source), _component(fit, args.target)
    x = read_covariates(args.covariate_file, fit.subject_ids)
    T = [subject_xct(fit, i, j, k) for i in range(fit.n)]
    ff = fit_frechet(T, x)
    out = _outdir(args.out)
    head = metadata_line("frechet", fit.seed, source=args.source, target=args.target)
    rows = []
    for sid, xi, t in zip(fit.subject_ids, x, T):
        rows += [[sid, float(xi), a, b] for a, b in zip(domain.from_unit(t.grid.points), domain.from_unit(t.values))]
    write_curve_csv(out / "frechet_observed.csv", ["subject_id", "x", "t", "T"], rows, head)
    rows = []
    for x0 in args.predict:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", ExtrapolationWarning)
            m = global_frechet_regression(T, x, x0)
        for w in caught:
            logger.warning("%s", w.message)
        cdf = m.cdf
        rows += [[float(x0), a, b] for a, b in zip(domain.from_unit(cdf.grid.points), domain.from_unit(cdf.values))]
    write_curve_csv(out / "frechet_fitted.csv", ["x0", "t", "T"], rows, head)
    r2 = ff.r2
    write_curve_csv(out / "frechet_summary.csv", ["n", "r_squared", "r_squared_unclipped", "clipped", "defined"],
                    [[fit.n, r2.value, r2.raw, int(r2.clipped), int(r2.defined)]], head)
    if r2.defined:
        print(f"Fréchet R^2 = {r2.value:.6f}" + (" (clipped from a negative value)" if r2.clipped else ""))
    else:
        print("Fréchet R^2 undefined: all transports coincide")
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "xct": cmd_xct, "frechet": cmd_frechet}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s: %(message)s", stream=sys.stderr)
    logging.captureWarnings(True)
    try:
        return COMMANDS[args.command](args)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        print(f"{parser.prog}: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (InvariantError, FloatingPointError, np.linalg.LinAlgError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ValueError, KeyError, IndexError, OSError) as e:
        print(f"invalid input: {e}", file=sys.stderr)
        return EXIT_INVALID
    finally:
        logging.captureWarnings(False)


if __name__ == "__main__":
    raise SystemExit(main())
