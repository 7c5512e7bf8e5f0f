"""Command-line front end.

Subcommands: generate (standard-form JSON), solve (solution JSON),
check (derivative/coloring self tests), bench (timing CSV plus chart),
sweep (solve over a size grid, CSV plus chart).

Exit codes: 0 success, 1 check failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import math
import random
import sys

from . import benchlib, nlexpr, report
from .ad import NlpEvaluator, forward_dual, gradient, hessian_vector_product
from .coloring import SparsityPattern, color, describe_coloring, recover
from .errors import AmlError
from .model import Model, to_standard_form
from .solve import branch_and_bound, cutting_plane_solve, lp_solve

GENERATE_FAMILIES = ("mincostflow", "lqcp", "fac", "clnlbeam", "quadexample")
SOLVE_FAMILIES = ("mincostflow", "l2ball", "fac")
CHECK_TARGETS = ("pattern5", "clnlbeam", "quadexample", "squareroot", "all")
DEFAULT_METHOD = {"mincostflow": "simplex", "l2ball": "cutting-plane", "fac": "bnb"}
DEFAULT_BENCH_SIZES = {
    "mincostflow": [5],
    "lqcp": [4, 8, 16],
    "fac": [1, 2],
    "clnlbeam": [50, 100, 200],
    "quadexample": [25, 50, 100],
    "l2ball": [2, 4, 8],
}
CONFIG_KEYS = {
    "lqcp": {"a", "dx", "dt", "h2"},
    "clnlbeam": {"alpha", "h"},
}


class UsageError(Exception):
    pass


def _sizes(text, default):
    if not text:
        return list(default)
    try:
        return [int(part) for part in text.split(",") if part]
    except ValueError:
        raise UsageError(f"bad size list {text!r}; want comma-separated integers")


def _load_config(path):
    if not path:
        return {}
    with open(path) as fh:
        cfg = json.load(fh)
    for family, keys in cfg.items():
        allowed = CONFIG_KEYS.get(family)
        if allowed is None:
            raise UsageError(f"config: unknown family {family!r}; "
                             f"known: {sorted(CONFIG_KEYS)}")
        unknown = set(keys) - allowed
        if unknown:
            raise UsageError(f"config: unknown {family} keys {sorted(unknown)}; "
                             f"allowed: {sorted(allowed)}")
    return cfg


def _resolve_family(args, choices):
    family = args.family_pos or args.family
    if not family:
        raise UsageError(f"missing family; choose one of {', '.join(choices)}")
    if family not in choices:
        raise UsageError(f"unknown family {family!r}; choose one of {', '.join(choices)}")
    return family


def _build_for(family, args, config):
    cfg = config.get(family, {})
    if family == "mincostflow":
        return benchlib.build_mincostflow(benchlib.DEFAULT_FLOW_DATA)
    if family == "lqcp":
        n = args.n if args.n is not None else 4
        m = args.m if args.m is not None else n
        return benchlib.build_lqcp(benchlib.LqcpParams(m=m, n=n, **cfg))
    if family == "fac":
        g = args.g if args.g is not None else 1
        f = args.f if args.f is not None else 1
        return benchlib.build_fac(benchlib.FacParams(G=g, F=f))
    if family == "clnlbeam":
        n = args.n if args.n is not None else 5
        return benchlib.build_clnlbeam(benchlib.ClnlbeamParams(n=n, **cfg))
    if family == "quadexample":
        return benchlib.build_quadexample(args.d if args.d is not None else 3)
    if family == "l2ball":
        return benchlib.build_l2ball(args.n if args.n is not None else 2)
    raise UsageError(f"unknown family {family!r}")


def _emit(text, out):
    if out:
        with open(out, "w") as fh:
            fh.write(text)
            if not text.endswith("\n"):
                fh.write("\n")
    else:
        print(text)


def cmd_generate(args):
    family = _resolve_family(args, GENERATE_FAMILIES)
    model = _build_for(family, args, _load_config(args.config))
    _emit(to_standard_form(model).dump_json(), args.out)
    return 0


def cmd_solve(args):
    family = _resolve_family(args, SOLVE_FAMILIES)
    model = _build_for(family, args, {})
    method = args.method or DEFAULT_METHOD[family]
    has_cones = any(c.is_cone for c in model.constraints)
    has_int = any(model.is_integer)
    if method == "simplex" and (has_cones or has_int or model.nl_constraints):
        raise UsageError(f"{family} needs cuts or branching; simplex handles "
                         "pure linear models only")
    if method == "cutting-plane" and has_int:
        raise UsageError(f"{family} has binaries; use --method bnb")
    if method == "simplex":
        result = lp_solve(model, jitter=args.jitter)
    elif method == "cutting-plane":
        result = cutting_plane_solve(model, tol=args.tol, jitter=args.jitter,
                                     trace=args.trace)
    else:
        result = branch_and_bound(model, tol=args.tol, cut_tol=args.tol,
                                  jitter=args.jitter)
    if args.trace and result.trace:
        for it, obj, cuts in result.trace:
            print(f"iter {it}: objective {obj:.9g} cuts {cuts}", file=sys.stderr)
    _emit(json.dumps(result.to_json_dict(), indent=1), args.out)
    return 0


# -- check targets -------------------------------------------------------

def _central_fd(fn, x, j, step):
    hi = list(x)
    lo = list(x)
    hi[j] += step
    lo[j] -= step
    return (fn(hi) - fn(lo)) / (2.0 * step)


def _check_pattern5(rng, lines, dumps, dump):
    entries = [(0, 0), (0, 1), (0, 3), (1, 1), (1, 2), (2, 2), (3, 3), (4, 4)]
    pattern = SparsityPattern(5, entries)
    col = color(pattern)
    dense = [[0.0] * 5 for _ in range(5)]
    for i, j in entries:
        v = rng.uniform(-2.0, 2.0)
        dense[i][j] = dense[j][i] = v
    columns = [
        [sum(dense[r][c] * seed[c] for c in range(5)) for r in range(5)]
        for seed in col.seeds
    ]
    got = recover(col, columns)
    err = max(abs(g - dense[i][j]) for (i, j), g in zip(pattern.entries, got))
    ok = col.k == 2 and err <= 1e-12
    lines.append(("pattern5", ok, f"colors={col.k}, recovery max_abs_err={err:.2e}"))
    if dump:
        dumps.append(describe_coloring(col))
    return ok


def _dense_hess_diag_oracle(model, x, sigma, lam):
    """Beam-model Lagrangian diagonal from the closed-form second
    derivatives (objective cos/quadratic terms plus sin rows).

    Equality rows are ordered linear angle rows first (no curvature)
    then the n sine displacement rows, so displacement row i carries
    multiplier lam[n + i]."""
    n = (model.num_vars // 3) - 1
    params = benchlib.ClnlbeamParams(n=n)
    h = params.resolved_h()
    alpha = params.alpha
    w = 1.0 / (2.0 * n)
    diag = [0.0] * model.num_vars
    for i in range(n):
        for k in (i + 1, i):
            diag[2 * (n + 1) + k] += sigma * h
            diag[k] += sigma * (-alpha * h / 2.0) * math.cos(x[k])
            diag[k] += lam[n + i] * w * math.sin(x[k])
    return diag


def _check_clnlbeam(args, rng, lines, dumps, dump):
    n = args.n if args.n is not None else 5
    model = benchlib.build_clnlbeam(benchlib.ClnlbeamParams(n=n))
    ev = NlpEvaluator.from_model(model)
    pat = ev.hessian_sparsity()
    diagonal = all(i == j for i, j in pat)
    k = ev.hess_coloring.k
    x = [rng.uniform(-0.4, 0.4) for _ in range(model.num_vars)]
    lam = [rng.uniform(-1.0, 1.0) for _ in range(ev.m_g + ev.m_h)]
    got = ev.eval_hessian_lagrangian(x, 1.0, lam)
    oracle = _dense_hess_diag_oracle(model, x, 1.0, lam)
    err = 0.0
    for (i, j), v in zip(pat, got):
        ref = oracle[i]
        err = max(err, abs(v - ref) / max(1.0, abs(ref)))
    grad = ev.eval_grad_objective(x)
    fd_err = 0.0
    for j in rng.sample(range(model.num_vars), min(8, model.num_vars)):
        fd = _central_fd(ev.eval_objective, x, j, 1e-6 * (1.0 + abs(x[j])))
        fd_err = max(fd_err, abs(grad[j] - fd) / max(1.0, abs(fd)))
    ok = diagonal and k == 1 and err <= 1e-8 and fd_err <= 1e-6
    lines.append((
        "clnlbeam",
        ok,
        f"hessian: {'diagonal' if diagonal else 'NOT diagonal'}, colors={k}, "
        f"max_hess_err={err:.2e}, max_fd_err={fd_err:.2e}",
    ))
    if dump:
        dumps.append(describe_coloring(ev.hess_coloring))
    return ok


def _check_quadexample(args, rng, lines, dumps, dump):
    d = args.d if args.d is not None else 3
    model = benchlib.build_quadexample(d)
    ev = NlpEvaluator.from_model(model)
    x = [rng.uniform(0.05, 0.95) for _ in range(model.num_vars)]
    grad = ev.eval_grad_objective(x)
    fd_err = 0.0
    for j in rng.sample(range(model.num_vars), min(10, model.num_vars)):
        fd = _central_fd(ev.eval_objective, x, j, 1e-6 * (1.0 + abs(x[j])))
        fd_err = max(fd_err, abs(grad[j] - fd) / max(1.0, abs(fd)))
    ok = fd_err <= 1e-6
    lines.append(("quadexample", ok, f"d={d}, max_fd_err={fd_err:.2e}"))
    if dump:
        dumps.append(describe_coloring(ev.hess_coloring))
    return ok


def _newton_sqrt(t):
    x = t if t > 1.0 else 1.0
    for _ in range(64):
        nxt = 0.5 * (x + t / x)
        delta = nxt - x
        x = nxt
        if abs(delta) < 1e-14:
            break
    return x


def _check_squareroot(lines):
    model = Model()
    nlexpr.register_function(model, "sqroot", 1, body=_newton_sqrt)
    v = model.add_variable()
    g = nlexpr.GraphBuilder(model)
    graph = g.finish(g.call_user("sqroot", [g.var(v)]))
    val, dot = forward_dual(graph, [4.0], [1.0])
    ok = abs(val - 2.0) <= 1e-12 and abs(dot - 0.25) <= 1e-9
    lines.append((
        "squareroot", ok, f"value={val:.12g}, derivative={dot:.12g}",
    ))
    return ok


def _check_corrupt(rng, lines):
    """Negative control: a deliberately wrong registered derivative must
    be caught by the finite-difference comparison, failing the run."""
    model = Model()
    nlexpr.register_function(
        model, "badsq", 1,
        body=lambda t: t * t,
        autodiff=False,
        derivative=lambda t: 3.0 * t,
    )
    v = model.add_variable()
    g = nlexpr.GraphBuilder(model)
    graph = g.finish(g.call_user("badsq", [g.var(v)]))
    x = [rng.uniform(0.5, 1.5)]
    grad = gradient(graph, x)
    fd = _central_fd(lambda pt: nlexpr.eval_graph(graph, pt), x, 0, 1e-6)
    err = abs(grad[0] - fd) / max(1.0, abs(fd))
    detail = (
        f"planted wrong derivative detected (rel_err={err:.2e})"
        if err > 1e-6
        else f"planted wrong derivative NOT detected (rel_err={err:.2e})"
    )
    lines.append(("corrupt-derivative", False, detail))
    return False


def cmd_check(args):
    target = args.target
    rng = random.Random(args.seed)
    lines = []
    dumps = []
    ok = True
    if target in ("pattern5", "all"):
        ok &= _check_pattern5(rng, lines, dumps, args.dump_coloring)
    if target in ("clnlbeam", "all"):
        ok &= _check_clnlbeam(args, rng, lines, dumps, args.dump_coloring)
    if target in ("quadexample", "all"):
        ok &= _check_quadexample(args, rng, lines, dumps, args.dump_coloring)
    if target in ("squareroot", "all"):
        ok &= _check_squareroot(lines)
    if args.corrupt_derivative:
        ok &= _check_corrupt(rng, lines)
    for name, passed, detail in lines:
        mark = "ok" if passed else "FAIL"
        print(f"check {name}: {mark} ({detail})")
    for text in dumps:
        print(text)
    if not ok:
        failing = [name for name, passed, _ in lines if not passed]
        print(f"failed: {', '.join(failing)}", file=sys.stderr)
        return 1
    return 0


def cmd_bench(args):
    families = args.families or ([args.family_pos] if args.family_pos else None) \
        or ([args.family] if args.family else None)
    if not families:
        raise UsageError(f"missing family; choose from {', '.join(benchlib.FAMILIES)}")
    for family in families:
        if family not in benchlib.FAMILIES:
            raise UsageError(f"unknown family {family!r}; "
                             f"choose from {', '.join(benchlib.FAMILIES)}")
    config = _load_config(args.config)
    specs = []
    for family in families:
        for size in _sizes(args.sizes, DEFAULT_BENCH_SIZES[family]):
            specs.append((family, size))
    try:
        rows = benchlib.timing_harness(specs, config)
    except ValueError as e:
        raise UsageError(str(e))
    out = args.out or "bench.csv"
    csv_rows = [
        (r.family, r.size, f"{r.build_ms:.3f}", f"{r.extract_ms:.3f}",
         "" if r.eval3_ms is None else f"{r.eval3_ms:.3f}")
        for r in rows
    ]
    csv_path, png_path = report.write_report(
        out, ["family", "size", "build_ms", "extract_ms", "eval3_ms"], csv_rows,
        x_col="size", y_cols=["build_ms", "extract_ms", "eval3_ms"],
        title="build and derivative timing", logx=True, logy=True,
        group_col="family" if len(families) > 1 else None,
    )
    print(f"wrote {csv_path} and {png_path}")
    return 0


def cmd_sweep(args):
    family = _resolve_family(args, SOLVE_FAMILIES)
    sizes = _sizes(args.sizes, {"mincostflow": [5], "l2ball": [2, 4, 8],
                                "fac": [1, 2]}[family])
    rows = []
    for size in sizes:
        ns = argparse.Namespace(n=size, m=None, g=size, f=args.f, d=None)
        model = _build_for(family, ns, {})
        method = args.method or DEFAULT_METHOD[family]
        if method == "simplex":
            result = lp_solve(model, jitter=args.jitter)
        elif method == "cutting-plane":
            result = cutting_plane_solve(model, tol=args.tol, jitter=args.jitter)
        else:
            result = branch_and_bound(model, tol=args.tol, cut_tol=args.tol,
                                      jitter=args.jitter)
        obj = "" if result.objective is None else f"{result.objective:.9g}"
        rows.append((family, size, result.status, obj, result.cuts, result.pivots))
    out = args.out or "sweep.csv"
    csv_path, png_path = report.write_report(
        out, ["family", "size", "status", "objective", "cuts", "pivots"], rows,
        x_col="size", y_cols=["objective"], title=f"{family} sweep",
    )
    print(f"wrote {csv_path} and {png_path}")
    return 0


def _add_common(p):
    p.add_argument("--family", help="model family")
    p.add_argument("--n", type=int, help="primary size (grid/horizon/ball dim)")
    p.add_argument("--m", type=int, help="second grid size (lqcp)")
    p.add_argument("--g", type=int, help="customer grid size (fac)")
    p.add_argument("--f", type=int, help="facility count (fac)")
    p.add_argument("--d", type=int, help="expression grid size (quadexample)")
    p.add_argument("--tol", type=float, default=1e-6, help="solver tolerance")
    p.add_argument("--seed", type=int, default=20240601,
                   help="seed for randomized checks")
    p.add_argument("--out", help="output path (default: standard output)")
    p.add_argument("--config", help="JSON file with lqcp/clnlbeam overrides "
                                    "(keys: lqcp.a/dx/dt/h2, clnlbeam.alpha/h)")
    p.add_argument("--jitter", type=float, default=0.0,
                   help="relative objective perturbation for degenerate ties")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="amlkit",
        description="Model-building toolkit: benchmark generators, desk-scale "
                    "solvers, derivative checks, and timing reports.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a standard-form JSON dump "
                       "(nonlinear rows are omitted; bounds and linear rows only "
                       "for clnlbeam)")
    p.add_argument("family_pos", nargs="?", metavar="family",
                   help=f"one of {', '.join(GENERATE_FAMILIES)}")
    p.add_argument("--default", action="store_true",
                   help="use the bundled example data (mincostflow)")
    _add_common(p)
    p.set_defaults(fn=cmd_generate)

    p = sub.add_parser("solve", help="solve a family and print solution JSON")
    p.add_argument("family_pos", nargs="?", metavar="family",
                   help=f"one of {', '.join(SOLVE_FAMILIES)}")
    p.add_argument("--method", choices=["simplex", "cutting-plane", "bnb"],
                   help="override the family default")
    p.add_argument("--trace", action="store_true",
                   help="print per-iteration objective and cut counts to stderr")
    _add_common(p)
    p.set_defaults(fn=cmd_solve)

    p = sub.add_parser("check", help="run derivative and coloring self tests")
    p.add_argument("target", choices=CHECK_TARGETS)
    p.add_argument("--dump-coloring", action="store_true",
                   help="print colors, classes, seeds, and the recovery plan")
    p.add_argument("--corrupt-derivative", action="store_true",
                   help="negative control: plant a wrong derivative and require "
                        "the finite-difference comparison to catch it (exits 1)")
    _add_common(p)
    p.set_defaults(fn=cmd_check)

    p = sub.add_parser("bench", help="run the timing harness, write CSV + PNG")
    p.add_argument("family_pos", nargs="?", metavar="family")
    p.add_argument("--families", nargs="+", help="several families at once")
    p.add_argument("--sizes", help="comma-separated size list")
    _add_common(p)
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("sweep", help="solve over a size grid, write CSV + PNG")
    p.add_argument("family_pos", nargs="?", metavar="family")
    p.add_argument("--sizes", help="comma-separated size list")
    p.add_argument("--method", choices=["simplex", "cutting-plane", "bnb"])
    _add_common(p)
    p.set_defaults(fn=cmd_sweep)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (ValueError, AmlError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
