"""Command-line front end: mesh generation, verification suites,
stability runs and convergence studies.

Every subcommand writes a CSV table and a JSON report (schema
afw3d-report/1) into the output directory and prints a summary; the exit
code is 0 only when every check passed its tolerance.  Identical
configuration and seed produce byte-identical output files, so runtimes
are printed but never written.
"""

import argparse
import os
import sys

import numpy as np

from . import assembly, interp, linalg, monomials as mo, polyspace as ps
from . import stability_lab as sl
from . import tensor_ops
from .mesh import (
    OrderMap,
    build_complex,
    read_mesh,
    unit_cube_mesh,
    validate_order_map,
    write_mesh,
)

SCHEMA = "afw3d-report/1"
R_MAX_CAP = 4

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG_ERROR = 2


class ConfigError(Exception):
    pass


def _load_config_file(path):
    out = {}
    try:
        with open(path) as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected key=value")
                k, v = line.split("=", 1)
                out[k.strip().replace("-", "_")] = v.strip()
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from exc
    return out


def _merged(args, keys):
    """Config-file values filled in wherever the flag was not given."""
    cfg = _load_config_file(args.config) if getattr(args, "config", None) else {}
    merged = {}
    for k in keys:
        v = getattr(args, k, None)
        if v is None and k in cfg:
            v = cfg[k]
        merged[k] = v
    return merged


def _parse_orders(text, n_tets):
    entries = [e for e in text.split(",") if e != ""]
    orders = []
    for i, e in enumerate(entries):
        try:
            v = int(e)
        except ValueError:
            raise ConfigError(f"order list entry for tet {i} is not an integer: {e!r}")
        if v < 0 or v > R_MAX_CAP:
            raise ConfigError(f"order for tet {i} out of range [0, {R_MAX_CAP}]: {v}")
        orders.append(v)
    if len(orders) != n_tets:
        raise ConfigError(
            f"order list has {len(orders)} entries for a mesh with {n_tets} tets"
        )
    return np.array(orders, dtype=np.int64)


def _get_mesh(opts):
    if opts.get("mesh"):
        mesh, tet_orders = read_mesh(opts["mesh"])
        return mesh, tet_orders
    n = int(opts.get("n") or 1)
    return unit_cube_mesh(n), None


def _get_orders(mesh, opts, file_orders=None):
    if opts.get("orders"):
        return OrderMap.from_tet_orders(mesh, _parse_orders(opts["orders"], mesh.n_tets))
    if file_orders is not None:
        return OrderMap.from_tet_orders(mesh, file_orders)
    r = int(opts.get("r") or 0)
    if r < 0 or r > R_MAX_CAP:
        raise ConfigError(f"r out of range [0, {R_MAX_CAP}]: {r}")
    return OrderMap.uniform(mesh, r)


def _material(opts):
    lam = float(opts.get("lame_lambda") if opts.get("lame_lambda") is not None else 1.0)
    mu = float(opts.get("mu") if opts.get("mu") is not None else 1.0)
    try:
        return tensor_ops.Material(lam, mu)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _outdir(opts):
    out = opts.get("out") or "afw3d-out"
    os.makedirs(out, exist_ok=True)
    return out


def _finish(name, opts, checks, rows, columns, extras=None):
    """Write the CSV/JSON pair, print the table, return the exit code."""
    out = _outdir(opts)
    sl.write_csv(os.path.join(out, f"{name}.csv"), rows, columns)
    ok = all(c["pass"] for c in checks)
    report = {
        "schema": SCHEMA,
        "command": name,
        "seed": opts.get("seed"),
        "config": {k: v for k, v in opts.items() if v is not None},
        "checks": checks,
        "rows": rows,
        "pass": bool(ok),
    }
    sl.write_json(os.path.join(out, f"{name}.json"), report)
    width = max((len(c["name"]) for c in checks), default=10)
    for c in checks:
        status = "pass" if c["pass"] else "FAIL"
        print(f"  {c['name']:<{width}}  {c['value']:.3e}  (tol {c['tol']:.1e})  {status}")
    print(f"report: {out}/{name}.json -> {'PASS' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_CHECK_FAILED


def _check(name, value, tol):
    return {"name": name, "value": float(value), "tol": float(tol), "pass": bool(value <= tol)}


def _tol_scale(opts):
    return float(opts.get("tol_scale") or 1.0)


# ---------------------------------------------------------------------------
# subcommands

def cmd_mesh_gen(args):
    opts = _merged(args, ["n", "orders", "out", "seed", "mesh", "r", "config"])
    mesh, _ = _get_mesh(opts)
    tet_orders = None
    if opts.get("orders"):
        tet_orders = _parse_orders(opts["orders"], mesh.n_tets)
    out = _outdir(opts)
    path = os.path.join(out, "mesh.txt")
    write_mesh(path, mesh, tet_orders)
    rows = [dict(vertices=mesh.n_vertices, edges=mesh.n_edges,
                 faces=mesh.n_faces, tets=mesh.n_tets)]
    checks = [_check("euler_characteristic",
                     abs(mesh.n_vertices - mesh.n_edges + mesh.n_faces - mesh.n_tets - 1), 0)]
    print(f"mesh written to {path}")
    return _finish("mesh_gen", opts, checks, rows, ["vertices", "edges", "faces", "tets"])


def cmd_verify_tensor(args):
    opts = _merged(args, ["seed", "out", "tol_scale", "config"])
    seed = int(opts.get("seed") or 0)
    ts = _tol_scale(opts)
    rng = np.random.default_rng(seed)
    checks = []
    # 1: inverse identity
    err = max(
        np.abs(tensor_ops.s1_inv(tensor_ops.s1(W)) - W).max()
        for W in rng.standard_normal((100, 3, 3))
    )
    checks.append(_check("s1_inverse_identity", err, 1e-13 * ts))
    # 2: self-adjointness
    err = 0.0
    for _ in range(100):
        W, Q = rng.standard_normal((2, 3, 3))
        err = max(err, abs(np.sum(tensor_ops.s1(W) * Q) - np.sum(W * tensor_ops.s1(Q))))
    checks.append(_check("s1_by_parts", err, 1e-13 * ts))
    # 3: s2 equals the axial-vector form
    err = max(
        np.abs(tensor_ops.s2(U) - tensor_ops.vec_of_antisym(U.T - U)).max()
        for U in rng.standard_normal((100, 3, 3))
    )
    checks.append(_check("s2_axial_form", err, 1e-13 * ts))
    # 4: div s1 W + s2 curl W = 0 as polynomials
    err = 0.0
    for _ in range(20):
        W = rng.standard_normal((9, mo.count(3, 3)))
        s1W = np.einsum("pq,qn->pn", tensor_ops.S1_MATRIX, W)
        div_s1 = ps.differentiate(s1W, 3, "div")
        curlW = ps.differentiate(W, 3, "curl")
        s2curl = np.einsum("pq,qn->pn", tensor_ops.S2_MATRIX, curlW)
        err = max(err, np.abs(div_s1 + s2curl).max())
    checks.append(_check("div_s1_plus_s2_curl", err, 1e-12 * ts))
    # 5: zero tangential traces force zero normal trace of s1 W
    err = _trace_lemma_error(rng, 10)
    checks.append(_check("tangential_normal_trace", err, 1e-11 * ts))
    # 6: similarity transform of s1 under the edge pullback
    err = 0.0
    for _ in range(100):
        A = rng.standard_normal((3, 3)) + 3 * np.eye(3)
        What = rng.standard_normal((3, 3))
        W = A @ What @ np.linalg.inv(A)
        lhs = tensor_ops.s1(W)
        rhs = np.linalg.inv(A).T @ tensor_ops.s1(What) @ A.T
        err = max(err, np.abs(lhs - rhs).max() / max(1.0, np.abs(rhs).max()))
    checks.append(_check("s1_similarity_transform", err, 1e-12 * ts))
    rows = [dict(check=c["name"], error=c["value"], tol=c["tol"], passed=c["pass"])
            for c in checks]
    return _finish("verify_tensor", opts, checks, rows, ["check", "error", "tol", "passed"])


def _trace_lemma_error(rng, n_samples, deg=3, face=0):
    """Max L2(F) norm of s1(W).n for W with zero tangential traces on F."""
    from . import quadrature

    full = np.eye(9 * mo.count(3, deg)).reshape(-1, 9, mo.count(3, deg))
    tr = ps.trace(full, deg, face, "tangential-face")   # (nb, 3, 2, n2)
    rows = tr.reshape(full.shape[0], -1).T
    combos = linalg.nullspace(rows)
    frame = ps.REF_FACE_FRAMES[face]
    rule = quadrature.rule_for(2, 2 * deg + 2)
    y = rule.points @ (frame.yverts[1:] - frame.yverts[0]) + frame.yverts[0]
    pts3 = frame.to_x(y)
    err = 0.0
    for _ in range(n_samples):
        w = combos.T @ rng.standard_normal(combos.shape[0])
        W = np.einsum("b,bcn->cn", w, full)
        s1W = np.einsum("pq,qn->pn", tensor_ops.S1_MATRIX, W)
        vals = mo.evaluate(s1W.reshape(3, 3, -1), 3, deg, pts3)   # (3,3,q)
        sn = np.einsum("ijq,j->iq", vals, frame.normal)
        norm = np.sqrt(np.sum(rule.weights * np.sum(sn**2, axis=0)) * 2 * frame.area)
        scale = max(np.abs(W).max(), 1.0)
        err = max(err, norm / scale)
    return err


def cmd_verify_spaces(args):
    opts = _merged(args, ["out", "tol_scale", "config"])
    ts = _tol_scale(opts)
    checks = []
    err = max(
        abs(ps.basis_full("lambda3", r).dim - (r + 1) * (r + 2) * (r + 3) // 6)
        for r in range(7)
    )
    checks.append(_check("dim_scalar_spaces", err, 0))
    err = 0
    for r in range(5):
        err = max(err, abs(ps.basis_full("lambda2_minus", r).dim - ps.dim_lambda2_minus(r)))
        err = max(err, abs(ps.basis_full("lambda1_minus", r).dim - ps.dim_lambda1_minus(r)))
    checks.append(_check("dim_trimmed_spaces", err, 0))
    err = max(
        abs(ps.curl_image_basis(r).dim - (2 * r + 5) * r * (r - 1) // 2)
        for r in range(1, 6)
    )
    checks.append(_check("dim_curl_image", err, 0))
    # ring members have vanishing traces
    worst = 0.0
    for r in [2, 3]:
        ring = ps.basis_ring("lambda2_minus", r)
        for f in range(4):
            if ring.dim:
                worst = max(worst, np.abs(ps.trace(ring.coeffs, r, f, "normal")).max())
    checks.append(_check("ring_zero_traces", worst, 1e-12 * ts))
    # variable-order trace degrees
    worst = 0.0
    ro = ps.RefOrders(3, (1, 2, 1, 3), (1, 1, 1, 1, 1, 1))
    b = ps.basis_variable("lambda2", ro)
    for f in range(4):
        tr = ps.trace(b.coeffs, b.deg, f, "normal")
        cut = mo.count(2, ro.faces[f])
        if cut < tr.shape[-1]:
            worst = max(worst, np.abs(tr[:, cut:]).max())
    checks.append(_check("variable_trace_degrees", worst, 1e-11 * ts))
    rows = [dict(check=c["name"], error=c["value"], tol=c["tol"], passed=c["pass"])
            for c in checks]
    return _finish("verify_spaces", opts, checks, rows, ["check", "error", "tol", "passed"])


def cmd_verify_commute(args):
    opts = _merged(args, ["n", "r", "orders", "seed", "out", "tol_scale", "mesh",
                          "samples", "config"])
    seed = int(opts.get("seed") or 0)
    ts = _tol_scale(opts)
    mesh, file_orders = _get_mesh(opts)
    orders = _get_orders(mesh, opts, file_orders)
    n_samples = int(opts.get("samples") or 3)
    res = sl.commuting_diagram_suite(mesh, orders, n_samples=n_samples, seed=seed)
    checks = [
        _check("diagram1_div_full", res["d1"], 1e-9 * ts),
        _check("diagram2_div_trimmed", res["d2"], 1e-9 * ts),
        _check("diagram3_s1_stabilized", res["d3"], 1e-8 * ts),
    ]
    rows = [dict(diagram=c["name"], residual=c["value"], tol=c["tol"], passed=c["pass"])
            for c in checks]
    return _finish("verify_commute", opts, checks, rows,
                   ["diagram", "residual", "tol", "passed"])


def cmd_infsup(args):
    opts = _merged(args, ["r", "orders", "levels", "lame_lambda", "mu", "seed",
                          "out", "tol_scale", "config"])
    ts = _tol_scale(opts)
    material = _material(opts)
    levels = [int(x) for x in str(opts.get("levels") or "1,2").split(",") if x]
    rows = []
    betas = []
    for n in levels:
        mesh = unit_cube_mesh(n)
        orders = _get_orders(mesh, opts)
        system = assembly.assemble(mesh, orders, material, None)
        beta = sl.infsup_constant(mesh, orders, material, system)
        kc = sl.kernel_coercivity(mesh, orders, material, system)
        betas.append(beta)
        rows.append(
            dict(n=n, ndof=system.dofmap.n_total, beta=beta,
                 kernel_ratio=kc.ratio, kernel_dim=kc.kernel_dim)
        )
    checks = [_check("beta_positive", -min(betas), -1e-6)]
    if len(betas) > 1:
        drift = (max(betas) - min(betas)) / max(betas)
        checks.append(_check("beta_drift", drift, 0.20 * ts))
    bound = material.compliance_lower_bound
    worst = min(r["kernel_ratio"] for r in rows if np.isfinite(r["kernel_ratio"]))
    checks.append(_check("kernel_coercivity_gap", bound - worst, 1e-9 * ts))
    return _finish("infsup", opts, checks, rows,
                   ["n", "ndof", "beta", "kernel_ratio", "kernel_dim"])


def cmd_solve(args):
    opts = _merged(args, ["n", "r", "orders", "mesh", "lame_lambda", "mu", "case",
                          "seed", "out", "tol_scale", "config"])
    ts = _tol_scale(opts)
    material = _material(opts)
    mesh, file_orders = _get_mesh(opts)
    orders = _get_orders(mesh, opts, file_orders)
    case_name = opts.get("case") or "taylor"
    if case_name == "patch":
        case = assembly.ManufacturedCase.constant_stress(material)
    elif case_name == "sine":
        case = assembly.ManufacturedCase.sine_cube(material)
    elif case_name == "taylor":
        case = sl.default_convergence_case(material)
    else:
        raise ConfigError(f"unknown case {case_name!r} (patch, sine, taylor)")
    system, sol = assembly.solve_case(mesh, orders, case)
    errs = assembly.error_norms(mesh, orders, sol, case, quad_deg=10)
    out = _outdir(opts)
    assembly.export_solution(os.path.join(out, "solution"), mesh, orders, sol)
    rows = [dict(ndof=system.dofmap.n_total, sigma_l2=errs.sigma_l2,
                 sigma_hdiv=errs.sigma_hdiv, u_l2=errs.u_l2, p_l2=errs.p_l2)]
    checks = []
    if case_name == "patch":
        checks.append(_check("patch_sigma_error", errs.sigma_l2, 1e-10 * ts))
        checks.append(_check("patch_rotation_error", errs.p_l2, 1e-10 * ts))
    else:
        checks.append(_check("solve_finite", 0.0 if np.isfinite(errs.total) else 1.0, 0.5))
    return _finish("solve", opts, checks, rows,
                   ["ndof", "sigma_l2", "sigma_hdiv", "u_l2", "p_l2"])


def cmd_converge(args):
    opts = _merged(args, ["r", "levels", "lame_lambda", "mu", "seed", "out",
                          "tol_scale", "config"])
    ts = _tol_scale(opts)
    material = _material(opts)
    r = int(opts.get("r") or 0)
    n_levels = int(opts.get("levels") or 3)
    levels = [2**k for k in range(n_levels)]
    case = sl.default_convergence_case(material)
    report = sl.convergence_study(case, r, levels=levels)
    rows = [{k: v for k, v in row.items() if k != "runtime"} for row in report.rows]
    last = rows[-1]
    checks = []
    if len(rows) > 1:
        if r == 0:
            checks.append(_check("last_rate_deficit", max(0.9 - last["rate"], 0.0), 0.0))
        else:
            checks.append(
                _check("last_u_rate_deficit", max(1.9 - last["rate_u"], 0.0), 0.0)
            )
        ratios = [row["quasi_ratio"] for row in rows]
        drift = (max(ratios) - min(ratios)) / max(ratios)
        checks.append(_check("quasi_ratio_drift", drift, 0.30 * ts))
    cols = ["n", "h", "ndof", "sigma_l2", "sigma_hdiv", "u_l2", "p_l2", "total",
            "best_total", "quasi_ratio", "rate", "rate_u"]
    return _finish("converge", opts, checks, rows, cols)


# ---------------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="afw3d", description=__doc__)
    sub = p.add_subparsers(dest="command")

    def add_common(sp):
        sp.add_argument("--config", help="key=value file; flags take precedence")
        sp.add_argument("--out", help="output directory (default afw3d-out)")
        sp.add_argument("--seed", type=int, help="random seed, recorded in reports")
        sp.add_argument("--tol-scale", dest="tol_scale", type=float,
                        help="multiply every check tolerance by this factor")
        sp.add_argument("--mesh", help="mesh file (afw3d-mesh v1)")
        sp.add_argument("--n", type=int, help="unit-cube subdivisions")
        sp.add_argument("--r", type=int, help="uniform polynomial order")
        sp.add_argument("--orders", help="comma list of per-tet orders (min rule)")
        sp.add_argument("--lambda", dest="lame_lambda", type=float, help="Lame lambda")
        sp.add_argument("--mu", type=float, help="Lame mu")
        sp.add_argument("--levels", help="refinement levels")
        sp.add_argument("--samples", type=int, help="sampled fields per diagram")

    mesh_p = sub.add_parser("mesh", help="mesh utilities")
    mesh_sub = mesh_p.add_subparsers(dest="subcommand")
    gen = mesh_sub.add_parser("gen", help="generate a unit-cube mesh")
    add_common(gen)
    gen.set_defaults(func=cmd_mesh_gen)

    ver = sub.add_parser("verify", help="verification suites")
    ver_sub = ver.add_subparsers(dest="subcommand")
    for name, fn in (("tensor", cmd_verify_tensor), ("spaces", cmd_verify_spaces),
                     ("commute", cmd_verify_commute)):
        vp = ver_sub.add_parser(name)
        add_common(vp)
        vp.set_defaults(func=fn)

    for name, fn in (("infsup", cmd_infsup), ("solve", cmd_solve),
                     ("converge", cmd_converge)):
        cp = sub.add_parser(name)
        add_common(cp)
        if name == "solve":
            cp.add_argument("--case", help="patch | sine | taylor")
        cp.set_defaults(func=fn)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    func = getattr(args, "func", None)
    if func is None:
        parser.print_help()
        return EXIT_CONFIG_ERROR
    try:
        return func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG_ERROR


if __name__ == "__main__":
    sys.exit(main())
