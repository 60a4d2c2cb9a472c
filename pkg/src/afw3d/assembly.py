"""Assembly and direct solution of the three-field mixed system.

Stress lives in the H(div)-conforming matrix-valued space of order r+1
(face-shared dofs from interp.StressSpace); displacement and rotation are
elementwise vector polynomials of order r with L2-orthonormal reference
modes, so their mass matrices are det(A) times the identity.  All
bilinear blocks are integrated exactly through reference Gram matrices;
only load and boundary data use quadrature.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import interp, linalg, monomials as mo, polyspace as ps, quadrature, tensor_ops
from .interp import DiscreteField, FieldSample, StressSpace, Workspace
from .mesh import affine_of


class FactorizationBreakdown(Exception):
    pass


@dataclass
class DofMap:
    """Global numbering: [stress | displacement | rotation]."""

    n_stress: int
    n_disp: int
    n_rot: int
    stress_elem_dofs: list     # per tet: global stress dof ids (row order)
    disp_elem_dofs: list       # per tet: global displacement ids
    rot_elem_dofs: list
    face_signs: np.ndarray     # (T, 4) orientation signs of face dofs

    @property
    def n_total(self):
        return self.n_stress + self.n_disp + self.n_rot


@dataclass
class BlockSaddleSystem:
    A: sp.csr_matrix           # <compliance sigma, tau>
    B1: sp.csr_matrix          # <div tau, u>
    B2: sp.csr_matrix          # <s2 tau, q>
    F: np.ndarray              # <f, v>
    G: np.ndarray              # boundary displacement term on stress dofs
    dofmap: DofMap
    space: StressSpace
    material: object
    mesh: object
    orders: object

    def full_matrix(self):
        n_s, n_u = self.dofmap.n_stress, self.dofmap.n_disp
        return sp.bmat(
            [
                [self.A, self.B1.T, -self.B2.T],
                [self.B1, None, None],
                [-self.B2, None, None],
            ],
            format="csc",
        )

    def full_rhs(self):
        return np.concatenate([self.G, self.F, np.zeros(self.dofmap.n_rot)])


def build_dof_map(mesh, orders, space=None):
    """Dof layout for the stress/displacement/rotation triple."""
    space = StressSpace(mesh, orders) if space is None else space
    n_stress = space.n_dofs
    disp, rot = [], []
    off_u = 0
    counts = []
    for t in range(mesh.n_tets):
        nm = mo.count(3, int(orders.tet_orders[t]))
        counts.append(3 * nm)
        disp.append(np.arange(off_u, off_u + 3 * nm, dtype=np.int64))
        off_u += 3 * nm
    n_disp = off_u
    off_p = 0
    for t in range(mesh.n_tets):
        rot.append(np.arange(off_p, off_p + counts[t], dtype=np.int64))
        off_p += counts[t]
    return DofMap(
        n_stress=n_stress,
        n_disp=n_disp,
        n_rot=off_p,
        stress_elem_dofs=[e.dof_ids for e in space.elements],
        disp_elem_dofs=disp,
        rot_elem_dofs=rot,
        face_signs=mesh.tet_face_sign.copy(),
    )


_RAW_CACHE = {}


def _raw_gram_data(ro):
    """Signature-cached exact reference Grams of the stress basis."""
    if ro in _RAW_CACHE:
        return _RAW_CACHE[ro]
    basis = ps.to_matrix_rows(ps.basis_variable("lambda2", ro.shifted(1)))
    deg = ro.tet + 1
    nb = basis.dim
    mats = basis.coeffs.reshape(nb, 3, 3, -1)
    G3 = mo.gram_simplex(3, deg)
    # G4[b, b', q, s] = int sum_p psi_b[p,q] psi_b'[p,s]
    G4 = np.einsum("bpqn,nm,cpsm->bcqs", mats, G3, mats)
    divs = ps.differentiate(basis.coeffs, deg, "div")   # (nb, 3, n3(rt))
    Gd = mo.gram_simplex(3, ro.tet)
    divG = np.einsum("bln,nm,clm->bc", divs, Gd, divs)
    modes = ps.volume_modes(ro.tet)[:, 0, :]            # (nm, n3(rt))
    B1W = np.einsum("bln,nm,jm->blj", divs, Gd, modes)  # (nb, 3, nm)
    modesE = mo.embed(modes, 3, ro.tet, deg)
    W3 = np.einsum("bcn,nm,jm->bcj", basis.coeffs, G3, modesE)  # (nb, 9, nm)
    data = (basis, G4, divG, B1W, W3)
    _RAW_CACHE[ro] = data
    return data


def assemble(mesh, orders, material, f, boundary_g=None, space=None, ws=None):
    """Assemble the symmetric block system of the mixed formulation.

    boundary_g, when given, is the prescribed boundary displacement; it
    enters the first equation as the natural term int_dOmega g . (tau n).
    """
    ws = Workspace(mesh, orders) if ws is None else ws
    space = StressSpace(mesh, orders, ws) if space is None else space
    dofmap = build_dof_map(mesh, orders, space)
    lam, mu = material.lame_lambda, material.lame_mu
    c_tr = lam / (2 * mu * (2 * mu + 3 * lam))

    rowsA, colsA, valsA = [], [], []
    rowsB1, colsB1, valsB1 = [], [], []
    rowsB2, colsB2, valsB2 = [], [], []
    F = np.zeros(dofmap.n_disp)
    G = np.zeros(dofmap.n_stress)
    rule = ws.vol_rule
    for t in range(mesh.n_tets):
        ro = ws.ref_orders(t)
        amap = ws.amaps[t]
        J = amap.det
        basis, G4, divG, B1W, W3 = _raw_gram_data(ro)
        nb = basis.dim
        elem = space.elements[t]
        X = linalg.lu_apply(elem.lu, np.eye(nb))    # dual-basis combinations
        M = amap.A.T @ amap.A
        # <sigma_b, sigma_c> = (1/J) int psihat_b : (psihat_c M)
        M_raw = np.einsum("bcqs,sq->bc", G4, M) / J
        trv = np.einsum("bpqn,pq->bn", basis.coeffs.reshape(nb, 3, 3, -1), amap.A)
        G3 = mo.gram_simplex(3, ro.tet + 1)
        T_raw = (trv @ G3 @ trv.T) / J
        A_raw = M_raw / (2 * mu) - c_tr * T_raw
        A_loc = X.T @ A_raw @ X
        B1_raw = B1W.reshape(nb, -1).T              # ((c,j) c-major, b)
        B1_loc = B1_raw @ X
        # S2(psihat A^T)_c = sum_{p,q,k} S2M[c, 3p+q] A[q,k] psihat[p,k]
        S2M = tensor_ops.S2_MATRIX.reshape(3, 3, 3)
        B2_raw = np.einsum("cpq,qk,bpkj->cjb", S2M, amap.A, W3.reshape(nb, 3, 3, -1))
        B2_loc = B2_raw.reshape(-1, nb) @ X
        sd = elem.dof_ids
        ud = dofmap.disp_elem_dofs[t]
        pd = dofmap.rot_elem_dofs[t]
        rowsA.append(np.repeat(sd, nb)); colsA.append(np.tile(sd, nb))
        valsA.append(A_loc.ravel())
        rowsB1.append(np.repeat(ud, nb)); colsB1.append(np.tile(sd, len(ud)))
        valsB1.append(B1_loc.ravel())
        rowsB2.append(np.repeat(pd, nb)); colsB2.append(np.tile(sd, len(pd)))
        valsB2.append(B2_loc.ravel())
        # load vector
        if f is not None:
            fq = f.value(ws.vol_points(t), t)       # (q, 3)
            modes = ps.volume_modes(ro.tet)[:, 0, :]
            mv = mo.evaluate(modes, 3, ro.tet, rule.points)
            F[ud] += J * np.einsum("q,jq,qc->cj", rule.weights, mv, fq).reshape(-1)
        # natural boundary term
        if boundary_g is not None:
            G_raw = np.zeros(nb)
            for lf in range(4):
                fid = mesh.tet_faces[t][lf]
                if not mesh.boundary_face[fid]:
                    continue
                pts = ws.face_points[fid]
                w = ws.face_weights[fid]
                xhat = amap.pull(pts)
                bref = mo.evaluate(basis.coeffs, 3, ro.tet + 1, xhat)
                bref = np.moveaxis(bref.reshape(nb, 3, 3, -1), -1, 1)
                bphys = np.einsum("bqjk,kl->bqjl", bref, amap.A.T) / J
                n_out = interp._outward_normal(mesh, t, lf)
                bn = np.einsum("bqjl,l->bqj", bphys, n_out)
                gv = boundary_g.value(pts, t)
                G_raw += np.einsum("q,bqj,qj->b", w, bn, gv)
            G[sd] += X.T @ G_raw

    def build(rows, cols, vals, shape):
        return sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=shape,
        ).tocsr()

    n_s = dofmap.n_stress
    A = build(rowsA, colsA, valsA, (n_s, n_s))
    B1 = build(rowsB1, colsB1, valsB1, (dofmap.n_disp, n_s))
    B2 = build(rowsB2, colsB2, valsB2, (dofmap.n_rot, n_s))
    return BlockSaddleSystem(
        A=A, B1=B1, B2=B2, F=F, G=G, dofmap=dofmap, space=space,
        material=material, mesh=mesh, orders=orders,
    )


def assemble_stress_grams(system):
    """(L2 Gram, div Gram) of the stress space in its global dof basis."""
    mesh, orders, ws = system.mesh, system.orders, system.space.ws
    space, dofmap = system.space, system.dofmap
    rowsL, colsL, valsL = [], [], []
    valsD = []
    for t in range(mesh.n_tets):
        ro = ws.ref_orders(t)
        amap = ws.amaps[t]
        basis, G4, divG, B1W, W3 = _raw_gram_data(ro)
        nb = basis.dim
        elem = space.elements[t]
        X = linalg.lu_apply(elem.lu, np.eye(nb))
        M = amap.A.T @ amap.A
        M_raw = np.einsum("bcqs,sq->bc", G4, M) / amap.det
        D_raw = divG / amap.det
        sd = elem.dof_ids
        rowsL.append(np.repeat(sd, nb)); colsL.append(np.tile(sd, nb))
        valsL.append((X.T @ M_raw @ X).ravel())
        valsD.append((X.T @ D_raw @ X).ravel())
    n_s = dofmap.n_stress
    rows = np.concatenate(rowsL); cols = np.concatenate(colsL)
    Ml2 = sp.coo_matrix((np.concatenate(valsL), (rows, cols)), shape=(n_s, n_s)).tocsr()
    Mdiv = sp.coo_matrix((np.concatenate(valsD), (rows, cols)), shape=(n_s, n_s)).tocsr()
    return Ml2, Mdiv


def vq_mass_diag(system):
    """Diagonal of the (block-diagonal) L2 mass on displacement+rotation."""
    mesh = system.mesh
    d = np.zeros(system.dofmap.n_disp + system.dofmap.n_rot)
    for t in range(mesh.n_tets):
        J = system.space.ws.amaps[t].det
        d[system.dofmap.disp_elem_dofs[t]] = J
        d[system.dofmap.n_disp + system.dofmap.rot_elem_dofs[t]] = J
    return d


def solve_saddle(system):
    """Direct factorization of the symmetric indefinite block matrix."""
    K = system.full_matrix()
    rhs = system.full_rhs()
    try:
        x = linalg.solve_sparse(K, rhs)
    except (linalg.SingularMatrix, RuntimeError) as exc:
        raise FactorizationBreakdown(str(exc)) from exc
    resid = np.linalg.norm(K @ x - rhs) / (1.0 + np.linalg.norm(rhs))
    if not np.isfinite(resid) or resid > 1e-9:
        raise FactorizationBreakdown(f"algebraic residual {resid:.3e}")
    return split_solution(system, x)


def split_solution(system, x):
    """(sigma_h, u_h, p_h) DiscreteFields from a solution vector."""
    mesh, orders = system.mesh, system.orders
    dof = system.dofmap
    gs = x[: dof.n_stress]
    gu = x[dof.n_stress : dof.n_stress + dof.n_disp]
    gp = x[dof.n_stress + dof.n_disp :]
    sig_c, u_c, p_c, degs_s, degs_u = [], [], [], [], []
    for t in range(mesh.n_tets):
        elem = system.space.elements[t]
        sig_c.append(system.space.coeffs_from_dofs(t, gs[elem.dof_ids]))
        degs_s.append(elem.deg)
        rt = int(orders.tet_orders[t])
        modes = ps.volume_modes(rt)[:, 0, :]
        nm = modes.shape[0]
        cu = gu[dof.disp_elem_dofs[t]].reshape(3, nm) @ modes
        cp = gp[dof.rot_elem_dofs[t]].reshape(3, nm) @ modes
        u_c.append(cu)
        p_c.append(cp)
        degs_u.append(rt)
    sigma = DiscreteField(mesh, orders, "piola", degs_s, sig_c, space="stress_full")
    u = DiscreteField(mesh, orders, "compose", degs_u, u_c, space="p3_vec")
    p = DiscreteField(mesh, orders, "compose", degs_u, p_c, space="p3_vec")
    return sigma, u, p


# ---------------------------------------------------------------------------
# manufactured cases

@dataclass
class ManufacturedCase:
    """Exact solution data derived symbolically from a displacement."""

    material: object
    u: FieldSample
    sigma: FieldSample
    p: FieldSample
    f: FieldSample
    zero_boundary: bool

    @staticmethod
    def from_displacement(u_exprs, material, zero_boundary=False):
        import sympy as spy

        xyz = spy.symbols("x y z")
        u = [spy.sympify(e) for e in u_exprs]
        grad = [[spy.diff(u[i], xyz[j]) for j in range(3)] for i in range(3)]
        eps = [
            [spy.Rational(1, 2) * (grad[i][j] + grad[j][i]) for j in range(3)]
            for i in range(3)
        ]
        lam, mu = material.lame_lambda, material.lame_mu
        tr_eps = sum(eps[i][i] for i in range(3))
        sigma = [
            [2 * mu * eps[i][j] + (lam * tr_eps if i == j else 0) for j in range(3)]
            for i in range(3)
        ]
        skw = [
            [spy.Rational(1, 2) * (grad[i][j] - grad[j][i]) for j in range(3)]
            for i in range(3)
        ]
        # axial vector of the skew part
        p = [skw[2][1], skw[0][2], skw[1][0]]
        f = [sum(spy.diff(sigma[i][j], xyz[j]) for j in range(3)) for i in range(3)]
        return ManufacturedCase(
            material=material,
            u=FieldSample.from_sympy(u),
            sigma=FieldSample.from_sympy(sigma),
            p=FieldSample.from_sympy(p),
            f=FieldSample.from_sympy(f),
            zero_boundary=zero_boundary,
        )

    @staticmethod
    def sine_cube(material):
        """Smooth displacement vanishing on the unit-cube boundary."""
        e = "sin(pi*x)*sin(pi*y)*sin(pi*z)"
        return ManufacturedCase.from_displacement([e, e, e], material, zero_boundary=True)

    @staticmethod
    def constant_stress(material, eps_matrix=None):
        """Linear displacement: constant stress and rotation, zero load."""
        if eps_matrix is None:
            eps_matrix = np.array([[1.0, 0.3, 0.1], [0.3, 0.8, -0.2], [0.1, -0.2, 0.5]])
        rows = []
        for i in range(3):
            rows.append(
                f"({eps_matrix[i][0]})*x + ({eps_matrix[i][1]})*y + ({eps_matrix[i][2]})*z"
            )
        return ManufacturedCase.from_displacement(rows, material, zero_boundary=False)


def solve_case(mesh, orders, case, ws=None):
    """Assemble and solve the discrete system for a manufactured case."""
    g = None if case.zero_boundary else case.u
    system = assemble(mesh, orders, case.material, case.f, boundary_g=g, ws=ws)
    return system, solve_saddle(system)


@dataclass
class ErrorNorms:
    sigma_l2: float
    sigma_hdiv: float
    u_l2: float
    p_l2: float

    @property
    def total(self):
        return self.sigma_hdiv + self.u_l2 + self.p_l2


def error_norms(mesh, orders, solution, case, quad_deg=None):
    """Norm gaps between the discrete triple and the exact fields."""
    sigma_h, u_h, p_h = solution
    rmax = int(orders.tet_orders.max())
    qd = 2 * rmax + 4 if quad_deg is None else quad_deg
    d_sig = case.sigma - sigma_h.as_sample()
    s_l2 = interp.l2_norm(mesh, d_sig, qd)
    div_h = interp.field_divergence(sigma_h)
    d_div = case.f - div_h.as_sample()
    div_err = interp.l2_norm(mesh, d_div, qd)
    return ErrorNorms(
        sigma_l2=s_l2,
        sigma_hdiv=float(np.hypot(s_l2, div_err)),
        u_l2=interp.l2_norm(mesh, case.u - u_h.as_sample(), qd),
        p_l2=interp.l2_norm(mesh, case.p - p_h.as_sample(), qd),
    )


def export_solution(prefix, mesh, orders, solution, n_sample=2):
    """Text dump of coefficients plus a CSV of sampled field values."""
    sigma_h, u_h, p_h = solution
    with open(f"{prefix}_coeffs.txt", "w") as fh:
        fh.write("afw3d-solution v1\n")
        for name, fld in (("sigma", sigma_h), ("u", u_h), ("p", p_h)):
            fh.write(f"field {name}\n")
            for t in range(mesh.n_tets):
                row = " ".join(repr(float(v)) for v in fld.coeffs[t].ravel())
                fh.write(f"{t} {row}\n")
    rule = quadrature.rule_for(3, n_sample)
    lines = ["tet,x,y,z," + ",".join(f"sigma_{i}{j}" for i in range(3) for j in range(3))
             + ",u_0,u_1,u_2,p_0,p_1,p_2"]
    for t in range(mesh.n_tets):
        amap = affine_of(mesh, t)
        pts = amap.apply(rule.points)
        sv = sigma_h.evaluate_ref(t, rule.points).reshape(len(pts), -1)
        uv = u_h.evaluate_ref(t, rule.points)
        pv = p_h.evaluate_ref(t, rule.points)
        for q in range(len(pts)):
            vals = [t] + list(pts[q]) + list(sv[q]) + list(uv[q]) + list(pv[q])
            lines.append(",".join(repr(float(v)) if isinstance(v, float) else str(v) for v in vals))
    with open(f"{prefix}_samples.csv", "w") as fh:
        fh.write("\n".join(lines) + "\n")
