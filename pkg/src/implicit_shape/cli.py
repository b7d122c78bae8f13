"""Command line runner: configured problems, the two built-in examples, gradient checks."""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time

import numpy as np

from .config import (REFERENCE, ConfigError, RunConfig, example_config, nodes_in_box,
                     nodes_on_segment)
from .costs import NormalDerivativeMisfit
from .level_geom import LevelFunction, TraceError, hausdorff_distance, write_curve
from .mesh_fem import build_structured_mesh, read_field, read_mesh, write_field
from .optimizer import (Constraints, OptimizerSettings, run, write_diagnostics,
                        write_history)
from .problem import ShapeProblem, dirichlet_cost
from .validation import validate_gradient

log = logging.getLogger(__name__)

OUTPUT_ENV = "IMPLICIT_SHAPE_OUTPUT"
EXAMPLE_CIRCLE = (0.0, 0.0, 0.5)


def build_problem(cfg: RunConfig):
    """(problem, G0, U0, settings) for a validated config."""
    spec = cfg.mesh_spec()
    if spec[0] == "structured":
        mesh = build_structured_mesh(cfg.rect_tuple, spec[1], spec[2], cfg.pattern)
    else:
        mesh = read_mesh(spec[1])
    problem = ShapeProblem(mesh, source=cfg.source_value(),
                           cost=NormalDerivativeMisfit(cfg.target_function()),
                           epsilon=cfg.epsilon, dt=cfg.dt, scheme=cfg.scheme,
                           u_degree=cfg.u_degree, variation=cfg.variation,
                           period_term=cfg.period_term)
    kind, g = cfg.initial_g_spec()
    if kind == "file":
        G0 = read_field(g, problem.space.n)
    else:
        G0 = problem.space.interpolate(g)
    if cfg.initial_u == "zero":
        U0 = np.zeros(problem.u_space.n)
    else:
        U0 = read_field(cfg.initial_u.split(None, 1)[1], problem.u_space.n)

    nodes = problem.space.nodes
    box = cfg.box(cfg.constraint_negative, "constraint_negative")
    seg = cfg.segment()
    pin = None if cfg.pin_point == "none" else np.array(
        [float(v) for v in cfg.pin_point.split()])
    cons = Constraints(
        negative_nodes=None if box is None else nodes_in_box(nodes, box),
        zero_nodes=None if seg is None else nodes_on_segment(nodes, seg),
        point=pin)
    settings = OptimizerSettings(tol=cfg.tol, direction=cfg.direction,
                                 gamma=cfg.gamma_value(), max_iter=cfg.max_iter,
                                 fallback=cfg.fallback, constraints=cons)
    return problem, G0, U0, settings


def check_initial(problem, G0):
    """The initial level function must be positive on the boundary of D."""
    g = LevelFunction(problem.space, G0)
    if not g.boundary_positive():
        raise ConfigError("initial_g: g must be positive on the boundary of the hold-all")
    if not np.any(G0 < 0):
        raise ConfigError("initial_g: the domain {g < 0} is empty")


def output_dir(cfg: RunConfig):
    return os.environ.get(OUTPUT_ENV) or cfg.output_dir


def run_config(cfg: RunConfig, example=None, out=None):
    """Run a configuration and write all artifacts; returns (result, summary lines)."""
    out = out or output_dir(cfg)
    os.makedirs(out, exist_ok=True)
    for stale in os.listdir(out):
        if stale.startswith("curve_k") and stale.endswith(".txt"):
            os.remove(os.path.join(out, stale))
    cfg.save(os.path.join(out, "config.txt"))
    t0 = time.perf_counter()
    problem, G0, U0, settings = build_problem(cfg)
    check_initial(problem, G0)

    def save_curves(rec, state):
        for c, comp in enumerate(state.boundary):
            write_curve(os.path.join(out, f"curve_k{rec.k:04d}_c{c}.txt"), comp)

    result = run(problem, G0, U0, settings, callback=save_curves)
    elapsed = time.perf_counter() - t0
    write_history(os.path.join(out, "history.csv"), result.history)
    write_diagnostics(os.path.join(out, "diagnostics.txt"), result.history)
    write_field(os.path.join(out, "field_g_final.txt"), result.state.G)
    write_field(os.path.join(out, "field_y_final.txt"), result.state.Y)
    write_field(os.path.join(out, "field_u_final.txt"), result.state.U)
    lines = summarize(problem, result, cfg, example, elapsed)
    with open(os.path.join(out, "summary.txt"), "w") as fh:
        fh.write("\n".join(lines) + "\n")
    if cfg.figures:
        from .report import render_run
        render_run(out, problem.space, result.state.G, result.state.Y, cfg.rect_tuple,
                   EXAMPLE_CIRCLE if example else None)
    return result, lines


def _band(ok):
    return "PASS" if ok else "FAIL"


def summarize(problem, result, cfg, example, elapsed):
    h = result.history
    first, last = h[0], h[-1]
    lines = [
        f"status = {result.status}",
        f"iterations = {last.k}",
        f"runtime_s = {elapsed:.1f}",
        f"initial t1 = {first.breakdown.t1:.6g}  t2 = {first.breakdown.t2:.6g}  "
        f"J = {first.J:.6g}  components = {first.components}",
        f"final   t1 = {last.breakdown.t1:.6g}  t2 = {last.breakdown.t2:.6g}  "
        f"J = {last.J:.6g}  components = {last.components}",
        f"J drop factor = {first.J / last.J:.4g}",
        f"final t2/epsilon = {last.breakdown.t2 / cfg.epsilon:.4g}",
    ]
    if not np.isnan(last.pin_residual):
        lines.append(f"|g(x0)| = {last.pin_residual:.3e}")
    pts = np.vstack([c.points for c in result.state.boundary])
    t = np.linspace(0, 2 * np.pi, 4000)
    cx, cy, r = EXAMPLE_CIRCLE
    circle = np.column_stack([cx + r * np.cos(t), cy + r * np.sin(t)])
    haus = hausdorff_distance(pts, circle)
    lines.append(f"hausdorff to circle (0,0) r=0.5 = {haus:.4g}")
    for label, level in (("Omega_g", result.state.G), ("{y<0}", result.state.Y)):
        try:
            t1, _ = dirichlet_cost(problem, level)
            lines.append(f"boundary cost of the Dirichlet solution in {label} = {t1:.6g}")
        except (TraceError, ValueError) as exc:
            lines.append(f"boundary cost of the Dirichlet solution in {label} = n/a ({exc})")
    if example in REFERENCE:
        ref = REFERENCE[example]
        lo, hi = ref["t2_initial"]
        lines.append(f"reference J initial/final = {ref['reference_J'][0]} / {ref['reference_J'][1]}")
        lines.append(f"{_band(lo <= first.breakdown.t2 <= hi)} initial t2 in [{lo}, {hi}]")
        lines.append(f"{_band(last.breakdown.t2 < ref['t2_final_max'])} final t2 < "
                     f"{ref['t2_final_max']}")
        lines.append(f"{_band(first.J / last.J >= ref['drop_min'])} J drop >= "
                     f"{ref['drop_min']:g}x")
        c0, c1 = ref["components"]
        seen = [r.components for r in h]
        ok = seen[0] == c0 and seen[-1] == c1
        lines.append(f"{_band(ok)} components {c0} -> {c1} (observed {seen[0]} -> {seen[-1]})")
        if example == "1a":
            lines.append(f"{_band(haus <= 0.05)} hausdorff <= 0.05")
    return lines


def cmd_run(args):
    cfg = RunConfig.load(args.config)
    _, lines = run_config(cfg)
    print("\n".join(lines))
    return 0


def cmd_example(args):
    cfg = example_config(args.name, args.set or ())
    _, lines = run_config(cfg, example=args.name)
    print("\n".join(lines))
    return 0


def cmd_validate(args):
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    problem, G0, U0, _ = build_problem(cfg)
    check_initial(problem, G0)
    rows = validate_gradient(problem, G0, U0, seed=cfg.seed)
    for row in rows:
        print(row.line())
    n_fail = sum(not r.passed for r in rows)
    print(f"{len(rows) - n_fail}/{len(rows)} checks passed")
    return 1 if n_fail else 0


def build_parser():
    p = argparse.ArgumentParser(prog="implicit-shape",
                                description="Shape optimization with implicit boundary "
                                            "parametrization and fictitious control.")
    p.add_argument("-v", "--verbose", action="store_true", help="log every iteration")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a configuration file")
    r.add_argument("--config", required=True)
    r.set_defaults(func=cmd_run)

    e = sub.add_parser("example", help="run a built-in example")
    e.add_argument("name", choices=sorted(REFERENCE))
    e.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a configuration key (repeatable)")
    e.set_defaults(func=cmd_example)

    v = sub.add_parser("validate-gradient", help="finite-difference checks of dJ")
    v.add_argument("--config", default=None)
    v.set_defaults(func=cmd_validate)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
