"""Command-line front end: run, compare, analyze and sweep scenario files.

Exit codes: 0 success, 1 invalid input, 2 divergence-guard abort, 3 I/O error.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import analysis as an
from .config import (ConfigError, ScenarioConfig, header_lines, parse_config,
                     to_sim_config, with_override)
from .dynamics import mass_matrix
from .sim import (DivergenceError, TrajectoryLog, compute_metrics, reference_bounds, run_many,
                  run_scenario)

EXIT_OK, EXIT_INVALID, EXIT_DIVERGED, EXIT_IO = 0, 1, 2, 3

# h values (s) for the structural Hurwitz sweep written by ``analyze``
H_GRID = (1e-4, 2e-4, 5e-4, 1e-3, 2e-3, 5e-3, 1e-2, 2e-2, 5e-2, 1e-1)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage, which would collide with the
    # divergence code; route usage errors to the "invalid input" code.
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def fmt(x) -> str:
    """Shortest representation that round-trips exactly."""
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_csv(path: Path, header: list[str], columns: list[str], rows) -> None:
    lines = list(header) + [",".join(columns)]
    lines += [",".join(fmt(v) for v in row) for row in rows]
    path.write_text("\n".join(lines) + "\n")


# --------------------------------------------------------------------- run
def trajectory_table(log: TrajectoryLog, cfg: ScenarioConfig):
    n = log.q.shape[1]
    idx = range(1, n + 1)
    cols = ["t"] + [f"q{i}" for i in idx] + [f"qd{i}" for i in idx] + \
        [f"qref{i}" for i in idx] + [f"e1_{i}" for i in idx] + [f"u{i}" for i in idx]
    blocks = [log.t[:, None], log.q, log.qd, log.qref, log.e1, log.u]
    if cfg.controller.variant == "integral":
        cols += [f"e0_{i}" for i in idx]
        blocks.append(log.e0)
    if log.zhat is not None:
        cols += [f"qhat_{i}" for i in idx] + [f"qdhat_{i}" for i in idx]
        blocks += [log.qhat, log.qdhat]
    return cols, np.hstack(blocks)


def metrics_row(cfg: ScenarioConfig, log: TrajectoryLog | None, err: DivergenceError | None):
    n = 2
    cols = ["name", "variant", "h", "q_w", "r_w", "diverged", "blowup_time"]
    cols += [f"rms_e1_{i}" for i in range(1, n + 1)]
    cols += [f"steady_state_e1_{i}" for i in range(1, n + 1)]
    cols += [f"max_torque_{i}" for i in range(1, n + 1)]
    cols += ["settling_time", "settled", "energy_u", "torque_limit", "within_torque_limit",
             "ref_bound_r0", "ref_bound_r1", "ref_bound_r2"]
    c = cfg.controller
    row = [cfg.name, c.variant, c.h, c.q_w, c.r_w, err is not None,
           err.t if err is not None else None]
    usable = log if log is not None and len(log) > 0 else None
    if usable is None:
        row += [None] * (3 * n + 8)
        return cols, row
    m = compute_metrics(usable, cfg.metrics.settle_band)
    lim = cfg.metrics.torque_limit
    row += list(m.rms_e1) + list(m.steady_state_e1) + list(m.max_torque)
    row += [m.settling_time, m.settled, m.energy_u, lim,
            None if lim is None else bool(np.all(m.max_torque <= lim))]
    row += list(reference_bounds(usable))
    return cols, row


PLOT_TEMPLATE = '''\
"""Tracking panels for {title}; run with: python {script}"""
import numpy as np
import matplotlib.pyplot as plt

files = {files!r}
fig, ax = plt.subplots(3, 2, figsize=(10, 8), sharex=True)
for path in files:
    with open(path) as fh:
        rows = [ln for ln in fh if not ln.startswith("#")]
    d = np.genfromtxt(rows, delimiter=",", names=True)
    label = path.rsplit("_trajectory.csv", 1)[0]
    for j in (1, 2):
        ax[0, j - 1].plot(d["t"], d[f"q{{j}}"], label=f"{{label}} q{{j}}")
        ax[0, j - 1].plot(d["t"], d[f"qref{{j}}"], "--", label=f"{{label}} qref{{j}}")
        ax[1, j - 1].plot(d["t"], d[f"e1_{{j}}"], label=label)
        ax[2, j - 1].plot(d["t"], d[f"u{{j}}"], label=label)
for j in (0, 1):
    ax[0, j].set_ylabel(f"joint {{j + 1}} position [rad]")
    ax[1, j].set_ylabel("tracking error [rad]")
    ax[2, j].set_ylabel("torque [N m]")
    ax[2, j].set_xlabel("t [s]")
    for a in ax[:, j]:
        a.legend(fontsize="small")
fig.tight_layout()
fig.savefig({png!r})
plt.show()
'''


def plot_script(header: list[str], title: str, script: str, csv_files: list[str]) -> str:
    body = PLOT_TEMPLATE.format(title=title, script=script, files=csv_files,
                                png=script.rsplit(".", 1)[0] + ".png")
    return "\n".join(header) + "\n" + body


def simulate(cfg: ScenarioConfig):
    """Returns (log, divergence) where log is the partial log on divergence."""
    sim_cfg = to_sim_config(cfg)
    try:
        return run_scenario(sim_cfg), None
    except DivergenceError as exc:
        return exc.partial, exc


def cmd_run(cfg: ScenarioConfig, out_dir: Path) -> int:
    log, err = simulate(cfg)
    header = header_lines(cfg, f"nrhc run: {cfg.name}")
    if err is not None:
        header.append(f"# # divergence guard at t = {err.t!r}: {err.reason}")
    cols, data = trajectory_table(log, cfg)
    write_csv(out_dir / f"{cfg.name}_trajectory.csv", header, cols, data)
    mcols, mrow = metrics_row(cfg, log, err)
    write_csv(out_dir / f"{cfg.name}_metrics.csv", header, mcols, [mrow])
    script = f"{cfg.name}_plot.py"
    (out_dir / script).write_text(plot_script(header, cfg.name, script,
                                              [f"{cfg.name}_trajectory.csv"]))
    _print_metrics(mcols, [mrow])
    if err is not None:
        print(f"{cfg.name}: diverged at t = {err.t:.6g} s ({err.reason})", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


def _print_metrics(cols, rows):
    width = max(len(c) for c in cols)
    for k, c in enumerate(cols):
        vals = "  ".join(f"{_short(r[k]):>14}" for r in rows)
        print(f"{c:<{width}}  {vals}")


def _short(v):
    if isinstance(v, (float, np.floating)):
        return f"{v:.6g}"
    return fmt(v) or "-"


# ----------------------------------------------------------------- compare
def cmd_compare(cfgs: list[ScenarioConfig], out_dir: Path, workers=None) -> int:
    if len(cfgs) < 2:
        raise UsageError("compare needs at least two scenario files")
    ref0 = cfgs[0].reference
    for c in cfgs[1:]:
        if c.reference != ref0:
            raise ConfigError(f"{c.name}: reference differs from {cfgs[0].name}; "
                              "compared scenarios must share the reference model")
    names = [c.name for c in cfgs]
    if len(set(names)) != len(names):
        raise ConfigError(f"scenario names must be distinct, got {names}")
    results = run_many([to_sim_config(c) for c in cfgs], workers)
    rows, diverged, csvs = [], False, []
    header = [f"# nrhc compare: {', '.join(names)}"]
    for cfg, res in zip(cfgs, results):
        err = res if isinstance(res, DivergenceError) else None
        log = err.partial if err is not None else res
        diverged |= err is not None
        cols, row = metrics_row(cfg, log, err)
        rows.append(row)
        sub = header_lines(cfg, f"scenario {cfg.name}")
        if err is not None:
            sub.append(f"# # divergence guard at t = {err.t!r}: {err.reason}")
        tcols, data = trajectory_table(log, cfg)
        write_csv(out_dir / f"{cfg.name}_trajectory.csv", sub, tcols, data)
        csvs.append(f"{cfg.name}_trajectory.csv")
    for cfg in cfgs:
        header += [ln.replace("# ", f"# [{cfg.name}] ", 1) for ln in header_lines(cfg)]
    write_csv(out_dir / "compare_metrics.csv", header, cols, rows)
    (out_dir / "compare_plot.py").write_text(
        plot_script(header, "comparison", "compare_plot.py", csvs))
    _print_metrics(cols, rows)
    return EXIT_DIVERGED if diverged else EXIT_OK


# ----------------------------------------------------------------- analyze
STABILITY_COLUMNS = ["matrix_kind", "q1", "q2", "h", "q_w", "r_w", "max_re_eig", "hurwitz",
                     "threshold", "threshold_stmt", "gamma_est", "mu_est", "margin",
                     "lyapunov_residual", "eig_gap", "lambda_max_eps", "b_min",
                     "cond_eps", "cond_b", "cond_hurwitz", "lemma2_consistent"]


def stability_rows(cfg: ScenarioConfig, states, ub: an.UncertaintyBounds):
    c = cfg.controller
    nominal, plant = cfg.nominal.params(), cfg.plant.params()
    rows = []
    for q in states:
        M0, M = mass_matrix(q, nominal), mass_matrix(q, plant)
        base = dict.fromkeys(STABILITY_COLUMNS)
        base.update(q1=q[0], q2=q[1], h=c.h, q_w=c.q_w, r_w=c.r_w,
                    gamma_est=ub.gamma, mu_est=ub.mu)
        lem1 = an.lemma1_check(c.h, c.q_w, c.r_w, M0)
        t1 = an.theorem_bounds(1, c.h, ub, M_nom=M0, q_w=c.q_w, r_w=c.r_w)
        r = dict(base, matrix_kind="A_basic", max_re_eig=lem1.max_re_eig, hurwitz=lem1.hurwitz,
                 threshold=t1.threshold, threshold_stmt=t1.details["threshold_stmt"],
                 margin=t1.margin, lyapunov_residual=t1.details["lyapunov_residual"],
                 eig_gap=lem1.details["eig_gap"])
        rows.append(r)
        lem2 = an.lemma2_check(M, M0, c.h)
        l2 = {k: lem2.details[k] for k in ("lambda_max_eps", "b_min", "cond_eps",
                                            "cond_b", "cond_hurwitz")}
        l2["lemma2_consistent"] = lem2.details["consistent"]
        b = an.b_matrix(M, M0)
        for which, kind in ((2, "B_bar"), (3, "B_tilde")):
            try:
                tb = an.theorem_bounds(which, c.h, ub, M_nom=M0, M_true=M)
            except an.NotHurwitzError:
                # no Lyapunov certificate exists; report the unstable loop as such
                A = (an.closed_loop_B_bar if which == 2 else an.closed_loop_B_tilde)(c.h, b)
                eig = float(np.max(np.linalg.eigvals(A).real))
                rows.append(dict(base, **l2, matrix_kind=kind, max_re_eig=eig, hurwitz=False))
                continue
            rows.append(dict(base, **l2, matrix_kind=kind, max_re_eig=tb.max_re_eig,
                             hurwitz=tb.hurwitz, threshold=tb.threshold, margin=tb.margin,
                             lyapunov_residual=tb.details["lyapunov_residual"]))
    return rows


def hsweep_rows(cfg: ScenarioConfig, states):
    c = cfg.controller
    nominal, plant = cfg.nominal.params(), cfg.plant.params()
    rows = []
    for h in H_GRID:
        worst = {"A_basic": -np.inf, "B_bar": -np.inf, "B_tilde": -np.inf}
        for q in states:
            M0, M = mass_matrix(q, nominal), mass_matrix(q, plant)
            b = an.b_matrix(M, M0)
            for kind, A in (("A_basic", an.closed_loop_A(h, c.q_w, c.r_w, M0)),
                            ("B_bar", an.closed_loop_B_bar(h, b)),
                            ("B_tilde", an.closed_loop_B_tilde(h, b))):
                worst[kind] = max(worst[kind], float(np.max(np.linalg.eigvals(A).real)))
        for kind, v in worst.items():
            rows.append([kind, h, v, v < -an.HURWITZ_TOL])
    return rows


def cmd_analyze(cfg: ScenarioConfig, states, out_dir: Path, seed: int = 0) -> int:
    header = header_lines(cfg, f"nrhc analyze: {cfg.name}")
    if not states:
        states = an.workspace_grid(2, 5)
        header.append("# # states: default workspace grid, 5 points per joint on [-pi, pi)")
    else:
        header.append("# # states: " + "; ".join(",".join(fmt(v) for v in q) for q in states))
    log, err = simulate(cfg)
    friction = to_sim_config(cfg).friction
    ub = an.estimate_gains(log, cfg.nominal.params(), cfg.plant.params(), friction)
    lo, hi = an_mass_bounds(cfg, seed)
    header.append(f"# # trajectory gains: gamma = {ub.gamma!r}, mu = {ub.mu!r}, "
                  f"mass assumption holds = {ub.mass_assumption_holds}"
                  + (f"; run diverged at t = {err.t!r}" if err is not None else ""))
    header.append(f"# # plant inertia eigenvalue range over sampled q (seed {seed}): "
                  f"[{lo!r}, {hi!r}]")
    rows = stability_rows(cfg, states, ub)
    write_csv(out_dir / f"{cfg.name}_stability.csv", header, STABILITY_COLUMNS,
              [[r[k] for k in STABILITY_COLUMNS] for r in rows])
    write_csv(out_dir / f"{cfg.name}_hsweep.csv", header,
              ["matrix_kind", "h", "max_re_eig_over_states", "hurwitz"], hsweep_rows(cfg, states))
    bad = [r for r in rows if not r["hurwitz"]]
    print(f"{cfg.name}: {len(rows)} stability rows, {len(bad)} not Hurwitz")
    for r in bad[:5]:
        print(f"  {r['matrix_kind']} at q = ({r['q1']:.4g}, {r['q2']:.4g}): "
              f"max Re = {r['max_re_eig']:.4g}")
    return EXIT_OK


def an_mass_bounds(cfg: ScenarioConfig, seed: int):
    from .dynamics import mass_bounds
    return mass_bounds(cfg.plant.params(), samples=200, seed=seed)


# ------------------------------------------------------------------- sweep
def cmd_sweep(cfg: ScenarioConfig, param: str, values, out_dir: Path, workers=None) -> int:
    if not values:
        raise UsageError("sweep needs at least one value")
    cfgs = [with_override(cfg, param, v) for v in values]
    results = run_many([to_sim_config(c) for c in cfgs], workers)
    header = header_lines(cfg, f"nrhc sweep: {cfg.name} over {param}")
    header.append(f"# # sweep {param} = " + ", ".join(fmt(v) for v in values))
    rows, first_div = [], None
    for v, c, res in zip(values, cfgs, results):
        err = res if isinstance(res, DivergenceError) else None
        log = err.partial if err is not None else res
        cols, row = metrics_row(c, log, err)
        rows.append([v] + row)
        if err is not None and first_div is None:
            first_div = v
    header.append("# # first diverging value: " + (fmt(first_div) if first_div is not None
                                                    else "none"))
    cols = [param] + cols
    write_csv(out_dir / f"{cfg.name}_sweep.csv", header, cols, rows)
    _print_metrics(cols, rows)
    # divergences are results of a sweep, not failures
    return EXIT_OK


# -------------------------------------------------------------------- main
def _parse_state(text: str) -> np.ndarray:
    try:
        q = np.array([float(v) for v in text.split(",")])
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad state {text!r}; expected q1,q2") from None
    if len(q) != 2 or not np.isfinite(q).all():
        raise argparse.ArgumentTypeError(f"bad state {text!r}; expected two finite numbers")
    return q


def _parse_values(text: str) -> list[float]:
    try:
        return [float(v) for v in text.replace(" ", "").split(",") if v]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad value list {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out-dir", type=Path, default=Path("."),
                        help="directory for output files (default: current)")
    common.add_argument("--seed", type=int, default=0,
                        help="seed for randomized sampling; simulations are deterministic")
    common.add_argument("--workers", type=int, default=None,
                        help="parallel processes for compare/sweep (default: CPU count)")
    p = _Parser(prog="nrhc", description=__doc__.splitlines()[0], parents=[common])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    r = sub.add_parser("run", parents=[common], help="simulate one scenario")
    r.add_argument("file", type=Path)
    c = sub.add_parser("compare", parents=[common], help="simulate scenarios side by side")
    c.add_argument("files", type=Path, nargs="+")
    a = sub.add_parser("analyze", parents=[common], help="frozen-state stability report")
    a.add_argument("file", type=Path)
    a.add_argument("--state", type=_parse_state, action="append", default=[],
                   help="joint angles q1,q2 in rad; repeatable; default: workspace grid")
    s = sub.add_parser("sweep", parents=[common], help="vary one config value")
    s.add_argument("file", type=Path)
    s.add_argument("--param", required=True, help="dotted config path, e.g. controller.h")
    s.add_argument("--values", required=True, type=_parse_values,
                   help="comma-separated values")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out = args.out_dir
    try:
        if args.command == "compare":
            cfgs = [parse_config(f) for f in args.files]
        else:
            cfgs = [parse_config(args.file)]
        out.mkdir(parents=True, exist_ok=True)
        workers = args.workers or os.cpu_count()
        if args.command == "run":
            return cmd_run(cfgs[0], out)
        if args.command == "compare":
            return cmd_compare(cfgs, out, workers)
        if args.command == "analyze":
            return cmd_analyze(cfgs[0], args.state, out, args.seed)
        return cmd_sweep(cfgs[0], args.param, args.values, out, workers)
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except an.ConsistencyError as exc:
        print(f"error: analysis self-check failed: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
