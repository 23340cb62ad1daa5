"""Command line runner: ``mfkit <workflow> --config run.json [--seed S] [--out DIR]``.

Each run directory receives ``manifest.json`` (config echo, seed, version),
a replayable ``config.json``, ``results.csv`` and workflow-specific tables,
plus SVG plots unless ``--no-plots``.  Failures produce ``error.json`` and a nonzero exit status.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .config import WORKFLOWS, RunConfig, _UNSET, load_config
from .costs import Discount, build_game_cost, build_game_cost_lawdep
from .dynamics import simulate_mckean_vlasov
from .errors import ConfigurationError, MFKitError
from .io import emit_csv
from .langevin import compare_mfld_to_mfc, geometric_checkpoints, run_mfld
from .measure import LawBatch
from .models import ModelBundle, make_model
from .noise import TimeGrid, sample_noise_panel
from .policy import make_policy
from .solve import MixtureReport, OptimizerConfig, exploitability, fixed_point_residual, mixture_derivative_check, solve_mfc

__all__ = ["main", "run_workflow", "Setup", "setup"]


class Setup:
    """Everything a workflow needs, resolved from a config and the model defaults."""

    def __init__(self, cfg: RunConfig, threads: int = 1):
        self.cfg = cfg
        self.bundle: ModelBundle = make_model(cfg.model, **cfg.model_params)
        b = self.bundle
        dyn = b.dynamics
        self.grid = TimeGrid(cfg.horizon or b.horizon, cfg.steps or b.n_steps)
        self.particles = cfg.particles or b.n_particles
        self.scenarios = cfg.scenarios or b.n_scenarios
        rate = b.discount if cfg.discount is _UNSET else cfg.discount
        self.discount = None if rate is None else Discount(rate)
        self.panel = sample_noise_panel(self.grid, self.scenarios, self.particles,
                                        (dyn.noise_dim, dyn.common_noise_dim), seed=cfg.seed)
        o = cfg.optimizer
        self.opt = OptimizerConfig(iters=o.iters, step=o.step, decay=o.decay, fd_eps=o.fd_eps, threads=threads)
        self.policy = make_policy(b.family, dyn.state_dim, dyn.control_dim, self.grid.horizon, o.knots,
                                  **b.policy_kwargs)
        if cfg.theta is not None:
            if len(cfg.theta) != self.policy.params.size:
                raise ConfigurationError(f"field 'theta' needs {self.policy.params.size} values")
            self.policy = self.policy.with_params(np.array(cfg.theta))

    def game(self):
        b = self.bundle
        if b.dynamics.law_in_drift:
            return build_game_cost_lawdep(b.cost, b.dynamics)
        return build_game_cost(b.cost)


def setup(cfg: RunConfig, threads: int = 1) -> Setup:
    return Setup(cfg, threads)


# ------------------------------------------------------------------ workflows


def _law_rows(setup: Setup, states, controls):
    """Per (step, scenario): mean and variance of the state plus model diagnostics."""
    b = setup.bundle
    names = sorted(b.diagnostics)
    times = setup.grid.times
    K1, S = states.shape[:2]
    n = states.shape[-1]
    cols = ["step", "t", "scenario"] + [f"mean_x{j}" for j in range(n)] + ["variance"] + names
    rows = []
    for k in range(K1):
        law = LawBatch(states[k], controls[k])
        means, var = law.mean(), law.variance()
        diag = [np.asarray(b.diagnostics[nm](law)) for nm in names]
        for s in range(S):
            rows.append((k, times[k], s, *means[s], var[s], *[float(np.real(d[s])) for d in diag]))
    return cols, rows


def _wf_simulate(st: Setup, out: Path, plots: bool):
    b = st.bundle
    sim = simulate_mckean_vlasov(st.policy, b.dynamics, st.panel, b.x0)
    cols, rows = _law_rows(st, sim.states, sim.controls)
    emit_csv(rows, cols, out / "results.csv")
    if plots:
        _plot_series(out / "variance.svg", rows, cols, "variance")
        for nm in b.diagnostics:
            _plot_series(out / f"{nm}.svg", rows, cols, nm)


def _solve(st: Setup, out: Path, plots: bool):
    b = st.bundle
    rep = solve_mfc(b.dynamics, b.cost, st.policy, st.panel, b.x0, st.opt, st.discount)
    rep.to_csv(out / "trace.csv")
    if plots:
        _plot_trace(out / "cost_trace.svg", rep.trace)
    return rep


def _wf_solve(st: Setup, out: Path, plots: bool):
    rep = _solve(st, out, plots)
    rows = [("cost", rep.cost), ("cost_stderr", rep.cost_stderr)]
    rows += [(f"theta{j}", v) for j, v in enumerate(rep.theta)]
    for key, val in sorted(st.bundle.closed_form.items()):
        rows.append((f"closed_form_{key}", val))
    emit_csv(rows, ("quantity", "value"), out / "results.csv")
    (out / "summary.txt").write_text(rep.summary(), encoding="utf-8")


def _wf_exploitability(st: Setup, out: Path, plots: bool):
    b = st.bundle
    rep = _solve(st, out, plots)
    ex = exploitability(rep.policy, b.dynamics, st.game(), st.panel, b.x0, st.opt, st.discount)
    res = fixed_point_residual(rep.policy, b.dynamics, st.panel, b.x0)
    rep.exploitability, rep.exploitability_stderr, rep.residual = ex.gap, ex.stderr, res
    rows = [("mfc_cost", rep.cost), ("mfc_cost_stderr", rep.cost_stderr), ("J_g_star", ex.J_star),
            ("J_g_best_response", ex.J_best_response), ("gap", ex.gap), ("gap_stderr", ex.stderr),
            ("relative_gap", ex.relative_gap), ("fixed_point_residual", res)]
    emit_csv(rows, ("quantity", "value"), out / "results.csv")
    ex.best_response.to_csv(out / "best_response_trace.csv")
    (out / "summary.txt").write_text(rep.summary(), encoding="utf-8")


def _wf_mixture(st: Setup, out: Path, plots: bool):
    b = st.bundle
    rep = _solve(st, out, plots)
    game = st.game()
    rng = np.random.default_rng([st.cfg.seed, 17])
    table, limits = [], []
    for j in range(st.cfg.mixture.alternatives):
        theta = rep.theta + st.cfg.mixture.spread * rng.standard_normal(rep.theta.size)
        alt = rep.policy.with_params(theta)
        mx = mixture_derivative_check(alt, rep.policy, b.dynamics, b.cost, game, st.cfg.mixture.deltas,
                                      st.panel, b.x0, st.discount)
        table += [(j,) + row for row in mx.table]
        limits.append((j, mx.limit, mx.limit_stderr, mx.game_gap, mx.game_gap_stderr, mx.difference_stderr))
    emit_csv(table, ("alternative",) + MixtureReport.COLUMNS, out / "results.csv")
    emit_csv(limits, ("alternative", "limit", "limit_stderr", "game_gap", "game_gap_stderr",
                      "difference_stderr"), out / "limits.csv")


def _sigma(st: Setup) -> float:
    try:
        return float(st.bundle.params["sigma"])
    except KeyError:
        raise ConfigurationError("model has no scalar 'sigma' parameter") from None


def _wf_mfld(st: Setup, out: Path, plots: bool):
    b = st.bundle
    if b.potential is None:
        raise ConfigurationError(f"model {b.name!r} has no interaction potential for Langevin dynamics")
    n = b.dynamics.state_dim
    panel = sample_noise_panel(st.grid, st.scenarios, st.particles, (n, 0), seed=st.cfg.seed)
    res = run_mfld(b.potential, _sigma(st), panel, b.x0, coupling=b.coupling, state_dim=n,
                   period=b.dynamics.period,
                   checkpoints=geometric_checkpoints(st.grid.n_steps, st.cfg.mfld.checkpoints), tol=st.cfg.mfld.tol)
    res.diagnostics.to_csv(out / "results.csv")
    if plots:
        d = res.diagnostics
        rows = list(d.records())
        _plot_series(out / "free_energy.svg", rows, list(d.COLUMNS), "free_energy", x="t")
        key = "order_param" if b.dynamics.period is not None else "variance"
        _plot_series(out / f"{key}.svg", rows, list(d.COLUMNS), key, x="t")


def _wf_compare(st: Setup, out: Path, plots: bool):
    b = st.bundle
    if b.potential is None:
        raise ConfigurationError(f"model {b.name!r} has no interaction potential")
    if st.discount is None:
        raise ConfigurationError("field 'discount' must be positive for the compare workflow")
    n = b.dynamics.state_dim
    panel = sample_noise_panel(st.grid, st.scenarios, st.particles, (n, 0), seed=st.cfg.seed)
    rep = compare_mfld_to_mfc(b.potential, st.discount.rate, _sigma(st), panel, b.x0, state_dim=n,
                              coupling=b.coupling, cfg=st.opt)
    emit_csv(rep.records(), rep.COLUMNS, out / "results.csv")
    rep.solve.to_csv(out / "trace.csv")
    (out / "summary.txt").write_text(rep.solve.summary(), encoding="utf-8")
    if plots:
        _plot_trace(out / "cost_trace.svg", rep.solve.trace)


_WORKFLOWS = {
    "simulate": _wf_simulate,
    "solve-mfc": _wf_solve,
    "exploitability": _wf_exploitability,
    "mixture-check": _wf_mixture,
    "mfld": _wf_mfld,
    "compare": _wf_compare,
}


# ------------------------------------------------------------------ plots


def _svg(fig, path: Path):
    fig.savefig(path, format="svg", metadata={"Date": None})


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "mfkit"
    return plt


def _plot_trace(path: Path, trace):
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 3.2))
    it = [r[0] for r in trace]
    ax.plot(it, [r[1] for r in trace], lw=1.2)
    ax.set_xlabel("iteration")
    ax.set_ylabel("cost")
    fig.tight_layout()
    _svg(fig, path)
    plt.close(fig)


def _plot_series(path: Path, rows, cols, key, x="t"):
    plt = _pyplot()
    ix, iy = cols.index(x), cols.index(key)
    fig, ax = plt.subplots(figsize=(5, 3.2))
    if "scenario" in cols:
        isc = cols.index("scenario")
        for s in sorted({r[isc] for r in rows}):
            sel = [r for r in rows if r[isc] == s]
            ax.plot([r[ix] for r in sel], [r[iy] for r in sel], lw=1.0, label=f"scenario {s}")
    else:
        ax.plot([r[ix] for r in rows], [r[iy] for r in rows], lw=1.2, marker="o", ms=3)
    ax.set_xlabel(x)
    ax.set_ylabel(key)
    fig.tight_layout()
    _svg(fig, path)
    plt.close(fig)


# ------------------------------------------------------------------ driver


def _error_record(exc: BaseException) -> dict:
    rec = {"error": type(exc).__name__, "message": str(exc)}
    loc = getattr(exc, "location", None)
    if loc is not None:
        rec["location"] = [int(v) if isinstance(v, (int, np.integer)) else str(v) for v in np.atleast_1d(loc)]
    trace = getattr(exc, "trace", None)
    if trace:
        rec["iterations_completed"] = len(trace)
    return rec


def run_workflow(cfg: RunConfig, threads: int = 1, plots: Optional[bool] = None) -> int:
    """Execute ``cfg.workflow`` into ``cfg.output``; returns the exit status."""
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    plots = cfg.plots if plots is None else plots
    manifest = {"mfkit_version": __version__, "workflow": cfg.workflow, "seed": cfg.seed, "config": cfg.echo(),
                "replay": f"mfkit {cfg.workflow} --config config.json"}
    (out / "config.json").write_text(json.dumps(cfg.echo(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    try:
        st = Setup(cfg, threads)
        _WORKFLOWS[cfg.workflow](st, out, plots)
    except (MFKitError, ValueError, ArithmeticError) as exc:
        (out / "error.json").write_text(json.dumps(_error_record(exc), indent=2) + "\n", encoding="utf-8")
        manifest["status"] = "failed"
        _write_manifest(out, manifest)
        return 2 if isinstance(exc, ConfigurationError) else 1
    manifest["status"] = "ok"
    _write_manifest(out, manifest)
    return 0


def _write_manifest(out: Path, manifest: dict):
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _threads(arg: Optional[int]) -> int:
    if arg is not None:
        return arg
    env = os.environ.get("MFKIT_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigurationError(f"MFKIT_THREADS must be an integer, got {env!r}") from None
    return 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mfkit", description="Mean field control and game experiments.")
    p.add_argument("workflow", choices=WORKFLOWS)
    p.add_argument("--config", required=True, help="JSON run configuration")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out", help="override the output directory")
    p.add_argument("--threads", type=int, help="worker threads for optimiser probes (default: MFKIT_THREADS or 1)")
    p.add_argument("--no-plots", action="store_true", help="skip SVG figures")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, workflow=args.workflow)
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigurationError("field 'seed' must be >= 0")
            cfg = cfg.replace(seed=args.seed)
        if args.out:
            cfg = cfg.replace(output=args.out)
        threads = _threads(args.threads)
        if threads < 1:
            raise ConfigurationError("--threads must be >= 1")
    except ConfigurationError as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 2
    status = run_workflow(cfg, threads, plots=False if args.no_plots else None)
    if status:
        print((Path(cfg.output) / "error.json").read_text(encoding="utf-8"), file=sys.stderr, end="")
    return status


if __name__ == "__main__":
    sys.exit(main())
