"""Numerical verification of discrete stability and quasi-optimality.

Measures the inf-sup constant of the mixed form through a Schur
complement eigenproblem, the coercivity of the compliance form on the
discrete constraint kernel, the residuals of the three commuting
diagrams, the constructive stability bound (a minimum-norm lifting of
prescribed divergence and asymmetry data), and h-convergence against
elementwise best-approximation errors.
"""

import json
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import assembly, interp, linalg, monomials as mo, polyspace as ps, tensor_ops
from .interp import FieldSample, Workspace
from .mesh import OrderMap, affine_of, unit_cube_mesh


class InfeasibleConstraints(Exception):
    pass


@dataclass
class StabilityReport:
    levels: list = field(default_factory=list)

    def add(self, **kw):
        self.levels.append(kw)


@dataclass
class ConvergenceReport:
    rows: list = field(default_factory=list)

    def add(self, **kw):
        self.rows.append(kw)


def _hdiv_gram(system):
    Ml2, Mdiv = assembly.assemble_stress_grams(system)
    return (Ml2 + Mdiv).tocsc(), Ml2, Mdiv


def infsup_constant(mesh, orders, material=None, system=None):
    """Discrete inf-sup constant of the divergence/asymmetry form.

    beta_h^2 is the smallest eigenvalue of the Schur complement
    B M_sigma^{-1} B^T against the L2 mass of the multiplier pair.
    """
    material = tensor_ops.Material(1.0, 1.0) if material is None else material
    if system is None:
        system = assembly.assemble(mesh, orders, material, None)
    Mh, _, _ = _hdiv_gram(system)
    B = sp.vstack([system.B1, -system.B2]).tocsr()
    n_s = system.dofmap.n_stress
    if n_s < 800:
        X = np.linalg.solve(Mh.toarray(), B.T.toarray())
    else:
        lu = sp.linalg.splu(Mh)
        X = lu.solve(B.T.toarray())
    S = B @ X
    S = 0.5 * (S + S.T)
    d = assembly.vq_mass_diag(system)
    lam, _ = linalg.sym_generalized_eig_min(S, np.diag(d))
    return float(np.sqrt(max(lam, 0.0)))


@dataclass
class KernelCoercivity:
    ratio: float
    kernel_dim: int
    max_kernel_div: float
    empty: bool


def kernel_coercivity(mesh, orders, material, system=None):
    """min over the discrete constraint kernel of <A tau, tau>/||tau||^2.

    On the kernel the divergence vanishes identically (it is tested
    against a space containing it), so the H(div) norm reduces to L2.
    """
    if system is None:
        system = assembly.assemble(mesh, orders, material, None)
    Mh, Ml2, Mdiv = _hdiv_gram(system)
    C = sp.vstack([system.B1, system.B2]).toarray()
    Z = linalg.nullspace(C)
    if Z.shape[0] == 0:
        return KernelCoercivity(np.nan, 0, 0.0, True)
    A = system.A.toarray()
    ZA = Z @ A @ Z.T
    ZM = Z @ Mh.toarray() @ Z.T
    import scipy.linalg

    w = scipy.linalg.eigh(0.5 * (ZA + ZA.T), 0.5 * (ZM + ZM.T), eigvals_only=True)
    div_norms = np.einsum("ki,ij,kj->k", Z, Mdiv.toarray(), Z)
    return KernelCoercivity(
        ratio=float(w[0]),
        kernel_dim=Z.shape[0],
        max_kernel_div=float(np.sqrt(max(div_norms.max(), 0.0))),
        empty=False,
    )


# ---------------------------------------------------------------------------
# commuting diagrams

def _sample_fields(rmax, n_samples, seed):
    rng = np.random.default_rng(seed)
    deg = rmax + 2
    fields = [
        FieldSample.from_poly(rng.standard_normal((3, 3, mo.count(3, deg))), deg)
        for _ in range(n_samples)
    ]
    transcendental = [
        [["sin(pi*x)*sin(pi*y)", "cos(pi*z)", "x*y*z"],
         ["exp(x-y)", "sin(pi*y)*z", "cos(pi*x)*y"],
         ["x*sin(pi*z)", "y*cos(pi*y)", "exp(-x*z)"]],
        [["cos(x+y+z)", "sin(x-y)", "z*z*cos(x)"],
         ["y*exp(z-1)", "cos(2*y)", "sin(x)*sin(z)"],
         ["x*x*y", "cos(y+z)", "exp(x*y/2)"]],
        [["sin(2*x)*y", "z*cos(y)", "exp(-x)"],
         ["x+cos(z)", "sin(y*z)", "y*y*z"],
         ["cos(x)*cos(y)", "x*z*z", "sin(x+z)"]],
    ]
    fields += [FieldSample.from_sympy(t) for t in transcendental]
    return fields


def commuting_diagram_suite(mesh, orders, n_samples=5, seed=0, ws=None, space=None):
    """Max relative residual of the three commuting diagrams."""
    ws = Workspace(mesh, orders) if ws is None else ws
    space = interp.StressSpace(mesh, orders, ws) if space is None else space
    rmax = int(orders.tet_orders.max())
    fields = _sample_fields(rmax, n_samples, seed)
    res = {"d1": 0.0, "d2": 0.0, "d3": 0.0}
    qd = ws.vol_deg
    for U in fields:
        divU = U.divergence()
        P3div = interp.project_l2_p3(mesh, orders, divU, ws)
        scale = max(interp.l2_norm(mesh, P3div, qd), 1e-30)
        # diagram 1: div of the full-space interpolant
        sig = interp.interp_p2(mesh, orders, U, space, ws)
        r1 = interp.l2_norm(mesh, interp.field_divergence(sig) - P3div, qd) / scale
        # diagram 2: projected div of the trimmed interpolant
        df2 = interp.interp_p2minus_global(mesh, orders, U, ws)
        div2 = FieldSample(
            (3,), lambda pts, t: np.einsum("qijj->qi", df2.as_sample().jacobian(pts, t)), None
        )
        P3div2 = interp.project_l2_p3(mesh, orders, div2, ws)
        r2 = interp.l2_norm(mesh, P3div2 - P3div, qd) / scale
        # diagram 3: trimmed-flux interpolant of S1 of the stabilized
        # edge interpolant
        pbar = interp.interp_p1minus_stabilized(mesh, orders, U, ws)
        lhs = interp.interp_p2minus_global(mesh, orders, pbar.as_sample().apply_s1(), ws)
        rhs = interp.interp_p2minus_global(mesh, orders, U.apply_s1(), ws)
        scale3 = max(interp.l2_norm(mesh, rhs, qd), 1e-30)
        r3 = interp.l2_norm(mesh, lhs - rhs, qd) / scale3
        res["d1"] = max(res["d1"], r1)
        res["d2"] = max(res["d2"], r2)
        res["d3"] = max(res["d3"], r3)
    return res


# ---------------------------------------------------------------------------
# constructive stability bound

def stability_construction_check(mesh, orders, omega, mu_data, material=None, system=None):
    """Minimum-H(div)-norm stress with prescribed divergence and asymmetry.

    omega and mu_data are coefficient vectors against the orthonormal
    element modes of the multiplier spaces (same layout as the solution
    dofs).  Returns (stress dof vector, norm ratio).
    """
    material = tensor_ops.Material(1.0, 1.0) if material is None else material
    if system is None:
        system = assembly.assemble(mesh, orders, material, None)
    Mh, _, _ = _hdiv_gram(system)
    d = assembly.vq_mass_diag(system)
    n_u = system.dofmap.n_disp
    # <mu, v_i> = mass * coefficients in the same basis
    b_mu = d[:n_u] * mu_data
    b_omega = d[n_u:] * omega
    C = sp.vstack([system.B1, -system.B2]).tocsr()
    rhs_c = np.concatenate([b_mu, b_omega])
    n_s = system.dofmap.n_stress
    K = sp.bmat([[Mh, C.T], [C, None]], format="csc")
    rhs = np.concatenate([np.zeros(n_s), rhs_c])
    x = linalg.solve_sparse(K, rhs)
    sigma = x[:n_s]
    feas = np.linalg.norm(C @ sigma - rhs_c) / (1.0 + np.linalg.norm(rhs_c))
    if not np.isfinite(feas) or feas > 1e-8:
        raise InfeasibleConstraints(f"constraint residual {feas:.3e}")
    norm_sigma = float(np.sqrt(sigma @ (Mh @ sigma)))
    norm_mu = float(np.sqrt(np.sum(b_mu * mu_data)))
    norm_omega = float(np.sqrt(np.sum(b_omega * omega)))
    denom = norm_mu + norm_omega
    ratio = norm_sigma / denom if denom > 0 else 0.0
    return sigma, ratio


# ---------------------------------------------------------------------------
# best approximation and convergence studies

def best_approximation_errors(mesh, orders, case, system=None, quad_deg=10):
    """Elementwise/global best-approximation gaps of the exact fields."""
    material = case.material
    if system is None:
        system = assembly.assemble(mesh, orders, material, None)
    ws = system.space.ws
    Mh, _, _ = _hdiv_gram(system)
    space = system.space
    n_s = system.dofmap.n_stress
    rhs = np.zeros(n_s)
    rule = ws.vol_rule
    norm2 = 0.0
    for t in range(mesh.n_tets):
        elem = space.elements[t]
        amap = ws.amaps[t]
        nb = elem.basis.dim
        xq = amap.apply(rule.points)
        wq = rule.weights * amap.det
        sv = case.sigma.value(xq, t)
        fv = case.f.value(xq, t)           # div sigma*
        ref_vals = mo.evaluate(elem.basis.coeffs, 3, elem.deg, rule.points)
        ref_vals = np.moveaxis(ref_vals.reshape(nb, 3, 3, -1), -1, 1)
        phys = np.einsum("bqjk,kl->bqjl", ref_vals, amap.A.T) / amap.det
        divs = ps.differentiate(elem.basis.coeffs, elem.deg, "div")
        div_ref = mo.evaluate(divs, 3, elem.deg - 1, rule.points)
        div_phys = np.moveaxis(div_ref, -1, 1) / amap.det    # (nb,q,3)
        raw = np.einsum("q,bqjl,qjl->b", wq, phys, sv)
        raw += np.einsum("q,bqj,qj->b", wq, div_phys, fv)
        X = linalg.lu_apply(elem.lu, np.eye(nb))
        rhs[elem.dof_ids] += X.T @ raw
        norm2 += np.sum(wq * (np.sum(sv.reshape(len(wq), -1) ** 2, axis=1)
                              + np.sum(fv**2, axis=1)))
    g = linalg.solve_sparse(Mh, rhs)
    best_sigma_sq = max(norm2 - g @ rhs, 0.0)
    pu = interp.project_l2_p3(mesh, orders, case.u, ws)
    pp = interp.project_l2_p3(mesh, orders, case.p, ws)
    best_u = interp.l2_norm(mesh, case.u - pu.as_sample(), quad_deg)
    best_p = interp.l2_norm(mesh, case.p - pp.as_sample(), quad_deg)
    return float(np.sqrt(best_sigma_sq)), best_u, best_p


def convergence_study(case, r, levels=(1, 2, 4), quad_deg=10):
    """Errors, rates and quasi-optimality ratios over uniform refinements."""
    report = ConvergenceReport()
    prev = None
    for n in levels:
        t0 = time.time()
        mesh = unit_cube_mesh(n)
        orders = OrderMap.uniform(mesh, r)
        system, sol = assembly.solve_case(mesh, orders, case)
        errs = assembly.error_norms(mesh, orders, sol, case, quad_deg=quad_deg)
        bs, bu, bp = best_approximation_errors(mesh, orders, case, system, quad_deg)
        best_total = bs + bu + bp
        total = errs.total
        ratio = total / best_total if best_total > 0 else np.nan
        row = dict(
            n=n,
            h=mesh.h_max(),
            ndof=system.dofmap.n_total,
            sigma_l2=errs.sigma_l2,
            sigma_hdiv=errs.sigma_hdiv,
            u_l2=errs.u_l2,
            p_l2=errs.p_l2,
            total=total,
            best_total=best_total,
            quasi_ratio=ratio,
            rate=np.nan if prev is None else float(np.log2(prev["total"] / total)),
            rate_u=np.nan if prev is None else float(np.log2(prev["u_l2"] / errs.u_l2)),
            runtime=time.time() - t0,
        )
        report.add(**row)
        prev = row
    return report


def default_convergence_case(material=None):
    """Smooth displacement whose low-order Taylor content dominates.

    The linear and quadratic parts put the mandated refinement levels in
    the asymptotic regime; the small sine perturbation keeps every error
    component active.  The boundary displacement is nonzero and enters
    through the natural boundary term.
    """
    material = tensor_ops.Material(1.0, 1.0) if material is None else material
    s = "0.01*sin(pi*x)*sin(pi*y)*sin(pi*z)"
    u1 = f"0.4*x + 0.3*y - 0.2*z + 0.5*x**2 + 0.25*x*y - 0.3*y*z + {s}"
    u2 = f"-0.2*x + 0.5*y + 0.1*z + 0.3*y**2 - 0.2*x*z + 0.15*x*y + {s}"
    u3 = f"0.1*x - 0.25*y + 0.6*z + 0.4*z**2 + 0.2*x*z - 0.1*y**2 + {s}"
    return assembly.ManufacturedCase.from_displacement(
        [u1, u2, u3], material, zero_boundary=False
    )


# ---------------------------------------------------------------------------
# machine-readable reports

def write_csv(path, rows, columns):
    lines = [",".join(columns)]
    for row in rows:
        lines.append(",".join(_fmt(row.get(c)) for c in columns))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, float):
        return repr(float(v))
    return str(v)


def write_json(path, obj):
    def clean(o):
        if isinstance(o, dict):
            return {k: clean(v) for k, v in o.items()}
        if isinstance(o, (list, tuple)):
            return [clean(v) for v in o]
        if isinstance(o, (np.integer,)):
            return int(o)
        if isinstance(o, (np.floating, float)):
            v = float(o)
            return v if np.isfinite(v) else None
        return o

    with open(path, "w") as fh:
        json.dump(clean(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")
