"""Command-line entry point ``scarlab``.

Exit status: 0 when every gating check of the invoked pipeline passes, 1 when a
check fails, 2 on invalid input or a module error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .basis import BasisError, dimensions, build_momentum_zero_sector, enumerate_basis
from .config import ConfigError, RunConfig
from .operators import OperatorError, build_named, project_to_sector
from .pipelines import PIPELINES, Context, PipelineError, run_pipeline, write_csv

log = logging.getLogger("scarlab")


def _sites(text: str) -> list[int]:
    return [int(s) for s in text.replace(" ", "").split(",") if s]


def _grid(text: str) -> list[int]:
    parts = text.lower().split("x")
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"grid must look like 20x20, got {text!r}")
    return [int(p) for p in parts]


def _common(p: argparse.ArgumentParser, D: bool = True):
    if D:
        p.add_argument("--D", type=int)
        p.add_argument("--j", type=int)
    p.add_argument("--config", help="JSON config; its values override command-line flags")
    p.add_argument("--out", dest="output_dir", help="output directory")
    p.add_argument("--cache", dest="cache_path", help="spectrum cache file")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--emit-plots-data", dest="emit_plots_data", action="store_true", default=None)
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="scarlab", description="Scar diagnostics for blockaded spin-j rings")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("basis", help="print sector dimensions as JSON")
    p.add_argument("--D", type=int, required=True)
    p.add_argument("--j", type=int, default=1)
    p.add_argument("--parity", action="store_true", help="accepted for symmetry with other commands")

    p = sub.add_parser("op", help="write an operator as a coordinate list")
    p.add_argument("--name", required=True, help="H, N, Qy, Qz, Qpm, Qplus, Qminus, R or obs:<spec>")
    p.add_argument("--D", type=int, required=True)
    p.add_argument("--j", type=int, default=1)
    p.add_argument("--sector", choices=["full", "k0"], default="full")
    p.add_argument("--output", help="CSV path (default stdout)")

    p = sub.add_parser("spectrum", help="eigenstate table")
    _common(p)
    p.add_argument("--parity", dest="resolve_parity", action="store_true", default=None)
    p.add_argument("--no-parity", dest="resolve_parity", action="store_false")
    p.add_argument("--obs", action="append", help="observable spec; repeat or separate with ';'")

    p = sub.add_parser("ensemble", help="canonical versus grand-canonical-like deviations")
    _common(p)
    p.add_argument("--targets", default="eigen", help="'eigen' or a CSV file with an E,N header")
    p.add_argument("--obs")
    p.add_argument("--region", type=_sites)

    p = sub.add_parser("ccp", help="cross coherence purity versus DOS")
    _common(p)
    p.add_argument("--region", type=_sites)
    p.add_argument("--percentile", dest="ccp_percentile", type=float)
    p.add_argument("--grid", type=_grid)

    p = sub.add_parser("dynamics", help="quench time series and fluctuations")
    _common(p)
    p.add_argument("--state", choices=["psi1", "psi2", "enumerate"], default="enumerate")
    p.add_argument("--obs", dest="fig3_observable")
    p.add_argument("--tmax", type=float)
    p.add_argument("--dt", type=float)

    p = sub.add_parser("sga", help="spectrum-generating-algebra diagnostics")
    _common(p)
    p.add_argument("--sign", choices=["plus", "minus", "both"], default="both")

    p = sub.add_parser("verify", help="open-system equivalence and exact identities")
    _common(p, D=False)
    p.add_argument("--D", dest="verify_D", type=int, action="append")
    p.add_argument("--c", dest="verify_c", type=float, action="append")
    p.add_argument("--tmax", dest="verify_tmax", type=float)
    p.add_argument("--dt", dest="verify_dt", type=float)

    p = sub.add_parser("run", help="run a figure pipeline")
    p.add_argument("pipeline", choices=PIPELINES)
    _common(p)
    return ap


_NOT_CONFIG = {"command", "config", "verbose", "pipeline", "state", "sign", "targets", "obs", "parity",
               "name", "sector", "output"}


def make_config(args: argparse.Namespace) -> RunConfig:
    flags = {k: v for k, v in vars(args).items() if v is not None and k not in _NOT_CONFIG}
    obs = getattr(args, "obs", None)
    if isinstance(obs, list):
        flags["observables"] = [s for o in obs for s in o.split(";") if s]
    elif isinstance(obs, str):
        flags["fig1_observable"] = obs
    cfg = RunConfig().merged(flags)
    if args.config:
        # the file overrides flags, but only for the keys it sets
        try:
            data = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        cfg = cfg.merged(data)
    return cfg.validate()


def _report(res) -> int:
    for c in res.checks:
        print(c.line())
    print(f"{res.name}: {'PASS' if res.passed else 'FAIL'} -> {res.outdir}")
    return 0 if res.passed else 1


def cmd_basis(args) -> int:
    print(json.dumps(dimensions(args.D, args.j), sort_keys=True))
    return 0


def cmd_op(args) -> int:
    basis = enumerate_basis(args.D, args.j)
    op = build_named(args.name, basis)
    if args.sector == "k0":
        M = project_to_sector(op, build_momentum_zero_sector(basis), check=False).matrix
        r, c = np.nonzero(np.abs(M) > 0)
        vals = M[r, c]
    else:
        coo = op.matrix.tocoo()
        order = np.lexsort((coo.col, coo.row))
        r, c, vals = coo.row[order], coo.col[order], coo.data[order]
    rows = zip(r, c, np.real(vals), np.imag(vals))
    if args.output:
        write_csv(Path(args.output), ["row", "col", "re", "im"], rows)
    else:
        import csv
        w = csv.writer(sys.stdout, lineterminator="\n")
        w.writerow(["row", "col", "re", "im"])
        from .pipelines import fmt
        for row in rows:
            w.writerow([fmt(x) for x in row])
    return 0


def cmd_spectrum(args) -> int:
    from .pipelines import eev_rows
    cfg = make_config(args)
    ctx = Context(cfg)
    header, rows = eev_rows(ctx, cfg.observables)
    out = Path(cfg.output_dir) / "spectrum.csv"
    write_csv(out, header, rows)
    print(f"{len(rows)} states, {len(ctx.model.scars)} scars -> {out}")
    return 0


def cmd_ensemble(args) -> int:
    from . import ensembles as ens
    from .pipelines import ensemble_rows
    cfg = make_config(args)
    ctx = Context(cfg)
    out = Path(cfg.output_dir) / "ensemble.csv"
    if args.targets == "eigen":
        header, rows, _ = ensemble_rows(ctx, cfg.fig1_observable)
    else:
        m = ctx.model
        data = np.genfromtxt(args.targets, delimiter=",", names=True)
        eev = ctx.eev(cfg.fig1_observable)
        header = ["state", "E", "N", "beta", "mu", "canonical_avg", "grand_avg", "flag"]
        rows = []
        for k, (e, n) in enumerate(zip(np.atleast_1d(data["E"]), np.atleast_1d(data["N"]))):
            try:
                c_avg = ens.solve_canonical(m.E, e).average(eev)
            except ens.EnsembleError:
                c_avg = np.nan
            try:
                g = ens.solve_grand_canonical(m.E, m.Nvals, e, n)
                rows.append([k, e, n, g.beta, g.mu, c_avg, g.average(eev), g.flag])
            except ens.EnsembleError as exc:
                rows.append([k, e, n, np.nan, np.nan, c_avg, np.nan, f"error:{exc}"])
    write_csv(out, header, rows)
    print(f"{len(rows)} targets -> {out}")
    return 0


def cmd_pipeline(name: str, args, **kw) -> int:
    cfg = make_config(args)
    return _report(run_pipeline(name, cfg, **kw))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "basis":
            return cmd_basis(args)
        if args.command == "op":
            return cmd_op(args)
        if args.command == "spectrum":
            return cmd_spectrum(args)
        if args.command == "ensemble":
            return cmd_ensemble(args)
        if args.command == "ccp":
            return cmd_pipeline("fig2", args)
        if args.command == "dynamics":
            return cmd_pipeline("fig3", args, states=args.state)
        if args.command == "sga":
            return cmd_pipeline("fig4", args, sign=args.sign)
        if args.command == "verify":
            return cmd_pipeline("verify", args)
        return cmd_pipeline(args.pipeline, args)
    except (ConfigError, BasisError, OperatorError, PipelineError, ValueError, OSError) as exc:
        print(f"scarlab: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
