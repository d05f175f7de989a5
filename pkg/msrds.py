"""
msrds - Main orchestration script
Mean-square dichotomy spectra, particle cross-checks and pullback attractors
of mean-field SDEs, driven by a JSON run file.

Usage:
    msrds spectrum  --config run.json [--out DIR] [--format csv,svg] [--seed N] [--quiet]
    msrds simulate  --config run.json ...
    msrds pullback  --config run.json ...
    msrds bifurcate --config run.json ...
"""
import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
import pandas as pd
import plotext as plt
from rich.console import Console
from rich.logging import RichHandler
from rich.table import Table

import config
from errors import ConfigError, InadmissibleStateError, NumericalError, OutputError
from mc_sim import ModelSpec, ode_reference_path, simulate_ensemble, z_scores
from moment_dynamics import index_map, ms_norm
from pitchfork import Branch, analytic_spectrum, bifurcation_sweep, classify, pullback_run
from results import ResultTable, emit, provenance
from run_config import RunConfig, canonical_json, config_hash, load_config, with_overrides
from spectrum import (
    autonomous_spectrum,
    finite_time_exponents,
    finite_time_spectrum,
    gamma_bound,
    SpectrumEstimate,
)

logger = logging.getLogger("msrds")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4

COMMANDS = ("spectrum", "simulate", "pullback", "bifurcate")


# ---------------------------------------------------------------------------
# Commands (pure: config in, tables out)
# ---------------------------------------------------------------------------

def _spectrum_frame(estimate: SpectrumEstimate) -> pd.DataFrame:
    rows = []
    for k, (lo, hi) in enumerate(estimate.intervals):
        verdict = estimate.verdicts[k] if k < len(estimate.verdicts) else None
        rows.append({
            "lower": lo,
            "upper": hi,
            "method": estimate.method,
            "multiplicity": estimate.multiplicities[k] if k < len(estimate.multiplicities) else 0,
            "admissibility_verdict": verdict.value if verdict is not None else "",
            "stable_dim_below": estimate.stable_dims[k],
            "stable_dim_above": estimate.stable_dims[k + 1],
        })
    columns = ["lower", "upper", "method", "multiplicity", "admissibility_verdict",
               "stable_dim_below", "stable_dim_above"]
    return pd.DataFrame(rows, columns=columns)


def cmd_spectrum(cfg: RunConfig) -> List[ResultTable]:
    """
    Eigen-lift estimate for autonomous models, finite-time estimate when
    enabled (always for schedules), and the closed form for pitchfork models.
    """
    coeffs = cfg.model.coefficients()
    cfg_hash = config_hash(cfg)
    opts = cfg.spectrum
    gamma = gamma_bound(coeffs)
    tables = []

    if coeffs.is_autonomous:
        estimate = autonomous_spectrum(coeffs, merge_tol=opts.merge_tol, proj_tol=opts.proj_tol,
                                       cone_samples=opts.cone_samples)
        tables.append(ResultTable("eigen", _spectrum_frame(estimate),
                                  provenance("spectrum", cfg_hash, None, gamma_bound=gamma)))
    if opts.finite_time or not coeffs.is_autonomous:
        samples = finite_time_exponents(coeffs, T=opts.horizon, n_samples=opts.n_samples, seed=opts.seed)
        estimate = finite_time_spectrum(samples, opts.cluster_width, gamma=gamma)
        tables.append(ResultTable("finite", _spectrum_frame(estimate),
                                  provenance("spectrum", cfg_hash, opts.seed, gamma_bound=gamma,
                                             horizon=opts.horizon, cluster_width=opts.cluster_width)))
    if cfg.model.kind == "pitchfork":
        estimate = analytic_spectrum(cfg.model.params())
        tables.append(ResultTable("analytic", _spectrum_frame(estimate),
                                  provenance("spectrum", cfg_hash, None, gamma_bound=estimate.gamma_bound)))
    return tables


def _pair_labels(d: int) -> List[str]:
    return [f"{i + 1}{j + 1}" for i, j in index_map(d)]


def cmd_simulate(cfg: RunConfig) -> ResultTable:
    """Particle moments with standard errors next to the moment-ODE reference and z-scores."""
    opts = cfg.simulate
    if cfg.model.kind == "linear":
        model = ModelSpec.linear(cfg.model.coefficients())
    else:
        model = ModelSpec.pitchfork(cfg.model.alpha, cfg.model.beta)
    init = opts.initial.state()
    s, t = opts.start, opts.start + opts.horizon

    trajectory = simulate_ensemble(model, init, s, t, opts.dt, opts.N, opts.seed, opts.record_every)
    reference = ode_reference_path(model, init, s, trajectory.times)

    d = model.d
    labels = _pair_labels(d)
    iu = np.triu_indices(d)
    rows = []
    for record, ode in zip(trajectory.records, reference):
        est = record.estimate
        row: Dict[str, float] = {"t": record.time}
        blocks = [
            ("mean", est.state.m, "secmom", est.state.S[iu]),
            ("se_mean", est.se_mean, "se_secmom", est.se_secmom[iu]),
            ("ode_mean", ode.m, "ode_secmom", ode.S[iu]),
            ("z_mean", z_scores(est.state.m, ode.m, est.se_mean),
             "z_secmom", z_scores(est.state.S, ode.S, est.se_secmom)[iu]),
        ]
        for mean_name, means, sec_name, secs in blocks:
            for i in range(d):
                row[f"{mean_name}_{i + 1}"] = float(means[i])
            for label, value in zip(labels, secs):
                row[f"{sec_name}_{label}"] = float(value)
        row["ms_norm"] = ms_norm(est.state)
        row["ode_ms_norm"] = ms_norm(ode)
        rows.append(row)

    header = provenance("simulate", config_hash(cfg), opts.seed, N=opts.N, dt=opts.dt)
    return ResultTable("moments", pd.DataFrame(rows), header)


def _require_pitchfork(cfg: RunConfig, command: str) -> None:
    if cfg.model.kind != "pitchfork":
        raise ConfigError(f"{command} needs a pitchfork model, got kind '{cfg.model.kind}'")
    if cfg.model.beta != 1.0:
        raise ConfigError(f"{command} needs beta = 1, got beta={cfg.model.beta}")


def cmd_pullback(cfg: RunConfig) -> ResultTable:
    """Limits at the fixed end time for each pullback start time."""
    _require_pitchfork(cfg, "pullback")
    opts = cfg.pullback
    params = cfg.model.params()
    run = pullback_run(params, opts.initial.state(), opts.t, opts.start_times, opts.classify_tol,
                       cfg.tolerances.rel_tol, cfg.tolerances.abs_tol)
    frame = pd.DataFrame({
        "s": run.start_times,
        "limit_x": [lim.x for lim in run.limits],
        "limit_y": [lim.y for lim in run.limits],
        "distance": run.distances,
        "classification": [classify(params, lim, opts.classify_tol).value for lim in run.limits],
    })
    header = provenance("pullback", config_hash(cfg), None, t=opts.t,
                        converged_to=run.converged_to.value, monotone=run.monotone)
    return ResultTable("runs", frame, header)


def cmd_bifurcate(cfg: RunConfig) -> ResultTable:
    """Pullback limit and its classification across the alpha grid."""
    _require_pitchfork(cfg, "bifurcate")
    opts = cfg.bifurcate
    rows = bifurcation_sweep(opts.alpha_grid, opts.initial.state(), opts.depth, opts.t, opts.classify_tol)
    frame = pd.DataFrame({
        "alpha": [row.alpha for row in rows],
        "classification": [row.classification.value for row in rows],
        "limit_x": [row.limit.x for row in rows],
        "limit_y": [row.limit.y for row in rows],
        "ms_norm": [row.ms_norm for row in rows],
    })
    header = provenance("bifurcate", config_hash(cfg), None, depth=opts.depth)
    return ResultTable("sweep", frame, header)


PLOTS = {
    "spectrum": {"intervals": True},
    "simulate": {"x": "t", "ys": ["ms_norm", "ode_ms_norm"]},
    "pullback": {"x": "s", "ys": ["limit_x", "limit_y"], "markers": True},
    "bifurcate": {"x": "alpha", "ys": ["ms_norm"], "group_by": "classification", "markers": True},
}


# ---------------------------------------------------------------------------
# Orchestration
# ---------------------------------------------------------------------------

class MsrdsRunner:
    """
    Runs one command for a validated config and writes its outputs.
    """

    def __init__(self, cfg: RunConfig, quiet: bool = False, console: Optional[Console] = None):
        self.cfg = cfg
        self.quiet = quiet
        self.console = console or Console()
        self.out_dir = Path(cfg.output.directory)

    def run(self, command: str) -> List[Path]:
        handler = {
            "spectrum": cmd_spectrum,
            "simulate": cmd_simulate,
            "pullback": cmd_pullback,
            "bifurcate": cmd_bifurcate,
        }[command]
        logger.info("[msrds] %s (config %s)", command, config_hash(self.cfg)[:12])
        result = handler(self.cfg)
        tables = result if isinstance(result, list) else [result]

        written = self.write(command, tables)
        if not self.quiet:
            for table in tables:
                self._print_table(command, table)
            if command == "bifurcate":
                self._preview_bifurcation(tables[0])
        return written

    def write(self, command: str, tables: List[ResultTable]) -> List[Path]:
        written = []
        for table in tables:
            for fmt in self.cfg.output.formats:
                path = self.out_dir / f"{command}_{table.name}.{fmt}"
                written.append(emit(table, fmt, path, PLOTS[command] if fmt == "svg" else None))
        config_path = self.out_dir / f"{command}_config.json"
        try:
            config_path.write_text(json.dumps(json.loads(canonical_json(self.cfg)), indent=2, sort_keys=True) + "\n",
                                   encoding="utf-8")
        except OSError as e:
            raise OutputError(f"cannot write {config_path}: {e.strerror or e}") from e
        written.append(config_path)
        return written

    def _print_table(self, command: str, table: ResultTable) -> None:
        frame = table.frame
        if command == "simulate" and len(frame) > 12:
            frame = pd.concat([frame.head(6), frame.tail(6)])
        shown = [c for c in frame.columns if not (command == "simulate" and c.startswith(("se_", "ode_mean", "ode_secmom")))]
        rich_table = Table(title=f"{command} / {table.name}", show_header=True, header_style="bold cyan")
        for col in shown:
            rich_table.add_column(str(col), justify="right")
        for _, row in frame.iterrows():
            rich_table.add_row(*[_cell_text(row[col]) for col in shown])
        self.console.print(rich_table)

    def _preview_bifurcation(self, table: ResultTable) -> None:
        frame = table.frame
        plt.clear_figure()
        for branch in dict.fromkeys(frame["classification"]):
            rows = frame[frame["classification"] == branch]
            plt.scatter(rows["alpha"].tolist(), rows["ms_norm"].tolist(), label=str(branch))
        plt.title("Pullback limit ms-norm vs alpha")
        plt.xlabel("alpha")
        plt.ylabel("ms-norm")
        plt.plotsize(80, 20)
        self.console.print(plt.build(), markup=False, highlight=False)


def _cell_text(value) -> str:
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.6g}"
    return str(value)


def _parse_formats(text: str) -> List[str]:
    formats = [part.strip() for part in text.split(",") if part.strip()]
    bad = [f for f in formats if f not in ("csv", "svg")]
    if not formats or bad:
        raise argparse.ArgumentTypeError(f"formats must be a subset of csv,svg (got '{text}')")
    return list(dict.fromkeys(formats))


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="JSON run file")
    common.add_argument("--out", default=None, help=f"output directory (default {config.OUTPUT['directory']})")
    common.add_argument("--format", type=_parse_formats, default=None, help="csv, svg or csv,svg")
    common.add_argument("--seed", type=int, default=None, help="unsigned 64-bit seed, overrides the config")
    common.add_argument("--quiet", action="store_true", help="warnings only, no summary tables")

    parser = argparse.ArgumentParser(prog="msrds", description="Mean-square spectra and attractors of mean-field SDEs")
    parser.add_argument("--version", action="version", version=f"msrds {config.VERSION}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("spectrum", parents=[common], help="mean-square dichotomy spectrum")
    sub.add_parser("simulate", parents=[common], help="interacting-particle simulation vs moment ODE")
    sub.add_parser("pullback", parents=[common], help="pullback runs of the reduced pitchfork moments")
    sub.add_parser("bifurcate", parents=[common], help="pullback limits across an alpha grid")
    return parser


def setup_logging(quiet: bool) -> None:
    handler = RichHandler(console=Console(stderr=True), show_time=False, show_path=False, markup=False)
    logging.basicConfig(level=logging.WARNING if quiet else logging.INFO, format="%(message)s",
                        handlers=[handler], force=True)


def main(argv: Optional[List[str]] = None) -> int:
    """
    Entry point; returns the process exit code
    (0 ok, 2 config error, 3 numerical failure, 4 I/O failure).
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_CONFIG
    setup_logging(args.quiet)

    try:
        cfg = load_config(args.config)
        cfg = with_overrides(cfg, seed=args.seed, directory=args.out, formats=args.format)
        logger.info("[config] %s", canonical_json(cfg))
    except ConfigError as e:
        logger.error("[config] %s", e)
        return EXIT_CONFIG

    try:
        written = MsrdsRunner(cfg, quiet=args.quiet).run(args.command)
    except ConfigError as e:
        logger.error("[config] %s", e)
        return EXIT_CONFIG
    except OutputError as e:
        logger.error("[output] %s", e)
        return EXIT_IO
    except (NumericalError, InadmissibleStateError) as e:
        logger.error("[numerics] %s", e)
        return EXIT_NUMERICAL
    except OSError as e:
        logger.error("[output] %s", e)
        return EXIT_IO
    except (ValueError, ArithmeticError, np.linalg.LinAlgError) as e:
        logger.error("[numerics] unexpected failure: %s", e)
        return EXIT_NUMERICAL
    except Exception as e:
        # no other exit codes
        logger.error("[msrds] unexpected %s: %s", type(e).__name__, e)
        return EXIT_NUMERICAL

    for path in written:
        logger.info("[output] %s", path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
