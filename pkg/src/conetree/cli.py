"""Command line interface.

Exit codes: 0 success, 2 invalid input, 3 no convergence, 4 size cap.
"""

from __future__ import annotations

import argparse
import io
import json
import os
import subprocess
import sys
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import __version__
from .green import (ConvergenceError, SolverConfig, continuation_many, scan_bands,
                    solve_boundary, solve_fixed_point, truncated_gamma_table,
                    extend_to_full_green)
from .operators import load_operator, realize_on_tree
from .oracle import Resolvent, assemble_matrix
from .radial import RadialPotential, solve_radial
from .random_sim import (PotentialSpec, build_two_sphere_context, deviation_curve,
                         kappa_survey, load_run_config)
from .tree import (SizeCapError, ValidationError, build_truncated_tree, check_axioms,
                   load_matrix)

EXIT_OK, EXIT_INVALID, EXIT_NO_CONVERGENCE, EXIT_SIZE_CAP = 0, 2, 3, 4
GRID_CHUNK = 128


def fmt(x) -> str:
    """Fixed 17-significant-digit scientific notation."""
    return f"{float(x):.16e}"


def version_string() -> str:
    """Package version with the git commit when running from a checkout."""
    here = Path(__file__).resolve().parent
    try:
        out = subprocess.run(["git", "-C", str(here), "describe", "--tags", "--always", "--dirty"],
                             capture_output=True, text=True, timeout=5, check=True)
        desc = out.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        desc = ""
    return f"{__version__}+{desc}" if desc else __version__


def resolve_threads(arg) -> int:
    if arg is not None:
        n = arg
    else:
        env = os.environ.get("CONETREE_THREADS", "1")
        try:
            n = int(env)
        except ValueError:
            raise ValidationError(f"CONETREE_THREADS must be an integer, got {env!r}") from None
    if n < 1:
        raise ValidationError("thread count must be positive")
    return n


@contextmanager
def thread_map(n_threads: int):
    """An order-preserving ``map``; threads only change wall time."""
    if n_threads == 1:
        yield map
        return
    with ThreadPoolExecutor(max_workers=n_threads) as pool:
        yield pool.map


def chunked_solver(mapper):
    """continuation_many over fixed-size grid chunks, reassembled in order."""
    def solve(p, E, eta, cfg):
        E = np.asarray(E, dtype=float)
        parts = [E[i:i + GRID_CHUNK] for i in range(0, E.size, GRID_CHUNK)]
        out = list(mapper(lambda part: continuation_many(p, part, eta, cfg), parts))
        return tuple(np.concatenate([o[k] for o in out]) for k in range(3))
    return solve


# -- shared argument handling ------------------------------------------------------

def _config_echo(args) -> dict:
    # output locations and thread count do not change the numbers
    skip = {"func", "threads", "output", "csv"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


def _report(args, payload: dict) -> dict:
    return {"version": version_string(), "command": args.command, "config": _config_echo(args),
            **payload}


def _emit(text: str, path):
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _emit_json(obj, path):
    _emit(json.dumps(obj, indent=2, sort_keys=False) + "\n", path)


def _csv(header, rows) -> str:
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    for row in rows:
        buf.write(",".join(c if isinstance(c, str) else fmt(c) for c in row) + "\n")
    return buf.getvalue()


def _load(args):
    m = load_matrix(args.matrix)
    p = load_operator(args.operator, m)
    return m, p


def _root(args, m) -> int:
    return 0 if args.root_label is None else m.label_index(str(args.root_label))


def _solver_config(args) -> SolverConfig:
    kw = {}
    for name in ("tol", "eta_min", "tau", "align_tol"):
        val = getattr(args, name, None)
        if val is not None:
            kw[name] = val
    return SolverConfig(**kw)


def _grid(args) -> np.ndarray:
    if getattr(args, "grid", None):
        try:
            lo, hi, n = args.grid.split(",")
            args.emin, args.emax, args.points = float(lo), float(hi), int(n)
        except ValueError:
            raise ValidationError("--grid takes emin,emax,points") from None
    if args.emin is None or args.emax is None:
        raise ValidationError("energy window missing: use --grid or --emin/--emax")
    if args.points < 2 or args.emax <= args.emin:
        raise ValidationError("need emin < emax and at least two points")
    return np.linspace(args.emin, args.emax, args.points)


def _complex(text: str) -> complex:
    try:
        return complex(text.replace(" ", "").replace("i", "j"))
    except ValueError:
        raise ValidationError(f"cannot read complex number {text!r}") from None


def _gamma_pairs(values):
    return [[float(v.real), float(v.imag)] for v in values]


def _green_header(m):
    cols = ["E", "eta"]
    for lab in m.labels:
        cols += [f"re_gamma_{lab}", f"im_gamma_{lab}"]
    return cols + ["re_G_root", "im_G_root", "density"]


def _green_rows(E, eta, g, root):
    for e, row in zip(E, g):
        out = [e, eta]
        for v in row:
            out += [v.real, v.imag]
        G = row[root]
        out += [G.real, G.imag, max(G.imag, 0.0) / np.pi]
        yield out


# -- commands -------------------------------------------------------------------

def cmd_check(args, mapper):
    m = load_matrix(args.matrix)
    _emit_json(_report(args, {"labels": list(m.labels), "axioms": check_axioms(m).to_dict()}),
               args.output)


def cmd_solve(args, mapper):
    m, p = _load(args)
    cfg = _solver_config(args)
    if args.boundary:
        gv = solve_boundary(p, args.E, eta_min=args.eta, config=cfg)
    else:
        if args.eta <= 0:
            raise ValidationError("--eta must be positive without --boundary")
        gv = solve_fixed_point(p, complex(args.E, args.eta), config=cfg)
    payload = {"labels": list(m.labels), "gamma": _gamma_pairs(gv.values),
               "residual": gv.residual, "real_limit": gv.real_limit}
    _emit_json(_report(args, payload), args.output)


def cmd_scan(args, mapper):
    m, p = _load(args)
    cfg = _solver_config(args)
    grid = _grid(args)
    scan = scan_bands(p, grid, config=cfg, solver=chunked_solver(mapper))
    root = _root(args, m)
    _emit_json(_report(args, scan.to_dict()), args.output)
    if args.csv:
        _emit(_csv(_green_header(m), _green_rows(grid, cfg.eta_min, scan.gamma, root)), args.csv)


def cmd_density(args, mapper):
    m, p = _load(args)
    if args.eta <= 0:
        raise ValidationError("--eta must be positive")
    grid = _grid(args)
    g, conv, failed = chunked_solver(mapper)(p, grid, args.eta, _solver_config(args))
    if not conv.all():
        bad = int(np.flatnonzero(~conv)[0])
        raise ConvergenceError(f"continuation stalled at E={grid[bad]}, eta={failed[bad]:.3e}")
    _emit(_csv(_green_header(m), _green_rows(grid, args.eta, g, _root(args, m))), args.output)


def cmd_radial(args, mapper):
    m, p = _load(args)
    v = RadialPotential.from_json(args.potential, m)
    res = solve_radial(p, complex(args.E, args.eta), args.lam, v, n_layers=args.layers,
                       tol=args.tol or 1e-12)
    header = ["s"]
    for lab in m.labels:
        header += [f"re_gamma_{lab}", f"im_gamma_{lab}"]
    rows = []
    for s, row in enumerate(res.layers):
        out = [str(s)]
        for val in row:
            out += [val.real, val.imag]
        rows.append(out)
    _emit(_csv(header, rows), args.output)


def _random_settings(args, m):
    cfg = load_run_config(args.spec) if args.spec else {}
    spec = PotentialSpec.from_dict(cfg.get("spec", {}), m)
    if args.seed is not None:
        spec = PotentialSpec(spec.laws, spec.lam, args.seed, spec.target)
    elif "seed" in cfg:
        spec = PotentialSpec(spec.laws, spec.lam, int(cfg["seed"]), spec.target)
    if args.lambdas:
        lams = [float(x) for x in args.lambdas.split(",")]
    else:
        lams = [float(x) for x in cfg.get("lambdas", [spec.lam])]
    if args.E is not None:
        zs = [complex(args.E, args.eta)]
    else:
        zs = [complex(e, eta) for e, eta in cfg.get("z", [[0.0, 1.0]])]
    samples = args.samples if args.samples is not None else int(cfg.get("samples", 1000))
    p_exp = args.p if args.p is not None else float(cfg.get("p", 2.0))
    labels = cfg.get("labels")
    roots = [m.label_index(str(x)) for x in labels] if labels else [_root(args, m)]
    depth = args.depth if args.depth is not None else cfg.get("depth")
    return spec, lams, zs, samples, p_exp, roots, depth


def cmd_random(args, mapper):
    m, p = _load(args)
    spec, lams, zs, samples, p_exp, roots, depth = _random_settings(args, m)
    header = ["E", "eta", "lam", "label", "depth", "samples", "mean", "stderr", "ci3_low",
              "ci3_high", "mean_abs_G_p", "mean_im_G", "seed_gap"]
    rows = []
    for z in zs:
        for root in roots:
            for st in deviation_curve(p, m, root, spec, z, lams, p_exp, samples, depth=depth,
                                      mapper=mapper):
                lo, hi = st.ci()
                rows.append([z.real, z.imag, st.lam, st.root_label, str(st.depth),
                             str(st.n_samples), st.mean, st.stderr, lo, hi,
                             st.mean_abs_green_p, st.mean_im_green, st.seed_gap])
    _emit(_csv(header, rows), args.output)


def cmd_kappa(args, mapper):
    m, p = _load(args)
    root = _root(args, m)
    if args.eta > 0:
        z = complex(args.E, args.eta)
        h = None
    else:
        z = complex(args.E, 0.0)
        gv = solve_boundary(p, args.E, eta_min=0.0)
        if gv.real_limit:
            raise ValidationError(f"E={args.E} is outside the bands; kappa needs Im h > 0")
        h = gv.values
    ctx = build_two_sphere_context(p, m, root, z, h=h)
    survey = kappa_survey(ctx, z, args.lam, args.R, args.samples, args.p, seed=args.seed,
                          mapper=mapper)
    _emit_json(_report(args, {"h": _gamma_pairs(ctx.h), "eps0": ctx.eps0,
                              "permutations_total": ctx.n_perm_total, **survey.to_dict()}),
               args.output)


def cmd_oracle(args, mapper):
    m, p = _load(args)
    z = _complex(args.z)
    if z.imag <= 0:
        raise ValidationError("oracle needs Im z > 0")
    root = _root(args, m)
    tree = build_truncated_tree(m, root, args.depth, vertex_cap=args.max_vertices)
    mat = assemble_matrix(realize_on_tree(p, tree), cap=args.max_vertices)
    res = Resolvent(mat, z)
    table = truncated_gamma_table(p, args.depth, z)
    full = extend_to_full_green(p, tree, table, z)
    col = res.column(0)
    root_diff = abs(col[0] - table[0, tree.root_label])
    # compare the whole root row: G_{o,y} for every vertex y
    path_diff = max(abs(col[y] - full.offdiag(0, y)) for y in range(tree.n_vertices)) \
        if tree.n_vertices <= 5000 else max(
            abs(col[y] - full.offdiag(0, y)) for y in tree.sphere(tree.depth_limit))
    last = tree.n_vertices - 1
    diag_last = abs(res.column(last)[last] - full.G[last])
    payload = {"vertices": tree.n_vertices, "z": [z.real, z.imag],
               "root_recursion": [table[0, tree.root_label].real, table[0, tree.root_label].imag],
               "root_oracle": [col[0].real, col[0].imag],
               "root_abs_diff": float(root_diff), "offdiag_max_abs_diff": float(path_diff),
               "deepest_diag_abs_diff": float(diag_last),
               "max_abs_diff": float(max(root_diff, path_diff, diag_last))}
    _emit_json(_report(args, payload), args.output)


# -- parser ---------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=None,
                        help="worker threads (default: $CONETREE_THREADS or 1)")
    common.add_argument("-o", "--output", default=None, help="output file (default stdout)")

    op = argparse.ArgumentParser(add_help=False)
    op.add_argument("--matrix", required=True, help="substitution matrix JSON")
    op.add_argument("--operator", default="adjacency",
                    help="adjacency | laplacian | normalized | path to operator JSON")
    op.add_argument("--root-label", default=None, help="label name of the root (default: first)")

    parser = argparse.ArgumentParser(prog="conetree", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"conetree {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    s = sub.add_parser("check", parents=[common], help="axiom report for a matrix")
    s.add_argument("matrix")
    s.set_defaults(func=cmd_check)

    s = sub.add_parser("solve", parents=[common, op], help="Gamma at one spectral point")
    s.add_argument("--E", type=float, required=True)
    s.add_argument("--eta", type=float, default=1e-7)
    s.add_argument("--boundary", action="store_true",
                   help="continue from eta=1 down to --eta (0 for the real axis)")
    s.add_argument("--tol", type=float, default=None)
    s.set_defaults(func=cmd_solve)

    s = sub.add_parser("scan", parents=[common, op], help="band scan")
    s.add_argument("--emin", type=float, required=True)
    s.add_argument("--emax", type=float, required=True)
    s.add_argument("--points", type=int, default=2001)
    s.add_argument("--eta-min", dest="eta_min", type=float, default=None)
    s.add_argument("--tau", type=float, default=None)
    s.add_argument("--align-tol", dest="align_tol", type=float, default=None)
    s.add_argument("--csv", default=None, help="also write per-energy values here")
    s.set_defaults(func=cmd_scan)

    s = sub.add_parser("density", parents=[common, op], help="root density of states")
    s.add_argument("--eta", type=float, required=True)
    s.add_argument("--grid", default=None, help="emin,emax,points")
    s.add_argument("--emin", type=float, default=None)
    s.add_argument("--emax", type=float, default=None)
    s.add_argument("--points", type=int, default=2001)
    s.set_defaults(func=cmd_density)

    s = sub.add_parser("radial", parents=[common, op], help="layered radial recursion")
    s.add_argument("--potential", required=True, help="radial potential JSON")
    s.add_argument("--lambda", dest="lam", type=float, required=True)
    s.add_argument("--E", type=float, required=True)
    s.add_argument("--eta", type=float, default=1e-3)
    s.add_argument("--layers", type=int, default=None)
    s.add_argument("--tol", type=float, default=None)
    s.set_defaults(func=cmd_radial)

    s = sub.add_parser("random", parents=[common, op], help="random perturbation deviations")
    s.add_argument("--spec", default=None, help="run configuration JSON")
    s.add_argument("--lambdas", default=None, help="comma separated couplings")
    s.add_argument("--samples", type=int, default=None)
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--p", type=float, default=None)
    s.add_argument("--E", type=float, default=None)
    s.add_argument("--eta", type=float, default=1.0)
    s.add_argument("--depth", type=int, default=None)
    s.set_defaults(func=cmd_random)

    s = sub.add_parser("kappa", parents=[common, op], help="averaged contraction survey")
    s.add_argument("--E", type=float, required=True)
    s.add_argument("--eta", type=float, default=0.0, help="0 uses boundary values")
    s.add_argument("--lambda", dest="lam", type=float, default=0.0)
    s.add_argument("--R", type=float, default=0.1)
    s.add_argument("--samples", type=int, default=10000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--p", type=float, default=2.0)
    s.set_defaults(func=cmd_kappa)

    s = sub.add_parser("oracle", parents=[common, op], help="recursion vs dense solve")
    s.add_argument("--depth", type=int, required=True)
    s.add_argument("--z", required=True, help="complex spectral parameter, e.g. 0.3+0.5j")
    s.add_argument("--max-vertices", dest="max_vertices", type=int, default=20000)
    s.set_defaults(func=cmd_oracle)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        n_threads = resolve_threads(args.threads)
        with thread_map(n_threads) as mapper:
            args.func(args, mapper)
    except (ValidationError, json.JSONDecodeError, OSError, KeyError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except ConvergenceError as exc:
        print(f"no convergence: {exc}", file=sys.stderr)
        return EXIT_NO_CONVERGENCE
    except SizeCapError as exc:
        print(f"size cap: {exc}", file=sys.stderr)
        return EXIT_SIZE_CAP
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
