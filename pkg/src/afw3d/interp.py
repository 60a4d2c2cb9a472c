"""Projection and interpolation operators on tetrahedral meshes.

Implements the elementwise L2 projection, the commuting full-space stress
interpolant, the two trimmed-family moment interpolants (with the
homotopy parameter t that blends curl-image against gradient-complement
auxiliary moments), the Clement patch-average smoother, and the
stabilized combination of the last two.  Physical elements are handled by
pulling fields back to the reference tet; the pullbacks used are the ones
that intertwine each operator with its reference version, so one moment
matrix factorization per order signature serves every element.

A DiscreteField stores, per element, reference-coordinate monomial
coefficients plus a transform kind that says how reference values push
forward to physical ones.
"""

from dataclasses import dataclass, field

import numpy as np

from . import linalg, monomials as mo, polyspace as ps, quadrature, reftet, tensor_ops
from .mesh import affine_of


class SingularMomentSystem(Exception):
    pass


class DimensionMismatch(Exception):
    pass


class NoAdmissibleT(Exception):
    pass


class ConformityViolation(Exception):
    pass


T_GRID = np.arange(65) / 64.0

# whether each reference face frame's normal points out of the reference tet
_REF_OUTWARD_SIGN = np.array(
    [
        1 if np.dot(
            ps.REF_FACE_FRAMES[f].normal,
            reftet.VERTICES[list(reftet.FACE_VERTS[f])].mean(axis=0)
            - reftet.VERTICES.mean(axis=0),
        ) > 0 else -1
        for f in range(4)
    ],
    dtype=np.int64,
)


# ---------------------------------------------------------------------------
# field samples

@dataclass(frozen=True)
class FieldSample:
    """Matrix- or vector-valued field with optional exact derivatives.

    value(points, tet) -> (m, *shape); jacobian adds a trailing axis for
    the derivative direction.  The tet argument is a hint for fields that
    are only piecewise defined (discrete fields); analytic fields ignore
    it.
    """

    shape: tuple
    value_fn: object
    jac_fn: object = None

    def value(self, points, tet=None):
        return self.value_fn(np.atleast_2d(points), tet)

    def jacobian(self, points, tet=None):
        if self.jac_fn is None:
            raise ValueError("field sample carries no derivatives")
        return self.jac_fn(np.atleast_2d(points), tet)

    @staticmethod
    def constant(M):
        M = np.asarray(M, dtype=float)
        shape = M.shape

        def val(pts, tet):
            return np.broadcast_to(M, (len(pts),) + shape).copy()

        def jac(pts, tet):
            return np.zeros((len(pts),) + shape + (3,))

        return FieldSample(shape, val, jac)

    @staticmethod
    def from_poly(coeffs, deg):
        """Polynomial field in physical coordinates; shape from coeffs."""
        coeffs = np.asarray(coeffs, dtype=float)
        shape = coeffs.shape[:-1]
        if shape == (9,):
            shape = (3, 3)
            coeffs = coeffs.reshape(3, 3, -1)

        grads = np.stack(
            [mo.diff(coeffs, 3, deg, ax) for ax in range(3)], axis=-2
        )  # (*shape, 3, n-1)

        def val(pts, tet):
            v = mo.evaluate(coeffs, 3, deg, pts)          # (*shape, m)
            return np.moveaxis(v, -1, 0)

        def jac(pts, tet):
            g = mo.evaluate(grads, 3, max(deg - 1, 0), pts)  # (*shape, 3, m)
            return np.moveaxis(g, -1, 0)

        return FieldSample(shape, val, jac)

    @staticmethod
    def from_sympy(entries):
        """Field from a nested list of sympy expressions in x, y, z."""
        import sympy as sp

        xyz = sp.symbols("x y z")
        arr = np.array(entries, dtype=object)
        shape = arr.shape
        flat = [sp.sympify(e) for e in arr.ravel()]
        fs = [sp.lambdify(xyz, e, "numpy") for e in flat]
        dfs = [
            [sp.lambdify(xyz, sp.diff(e, v), "numpy") for v in xyz] for e in flat
        ]

        def _eval(fn, pts):
            out = fn(pts[:, 0], pts[:, 1], pts[:, 2])
            return np.broadcast_to(np.asarray(out, dtype=float), (len(pts),)).copy()

        def val(pts, tet):
            cols = [_eval(f, pts) for f in fs]
            return np.stack(cols, axis=-1).reshape((len(pts),) + shape)

        def jac(pts, tet):
            cols = [
                np.stack([_eval(d, pts) for d in row], axis=-1) for row in dfs
            ]
            return np.stack(cols, axis=-2).reshape((len(pts),) + shape + (3,))

        return FieldSample(shape, val, jac)

    def __sub__(self, other):
        assert self.shape == other.shape

        def val(pts, tet):
            return self.value(pts, tet) - other.value(pts, tet)

        def jac(pts, tet):
            return self.jacobian(pts, tet) - other.jacobian(pts, tet)

        return FieldSample(self.shape, val, jac if self.jac_fn is not None and other.jac_fn is not None else None)

    def apply_s1(self):
        """Pointwise transpose-minus-trace of a matrix-valued field."""
        assert self.shape == (3, 3)
        eye = np.eye(3)

        def val(pts, tet):
            W = self.value(pts, tet)
            return np.swapaxes(W, -1, -2) - np.einsum("mii->m", W)[:, None, None] * eye

        def jac(pts, tet):
            J = self.jacobian(pts, tet)   # (m,3,3,3)
            return (
                np.swapaxes(J, 1, 2)
                - np.einsum("miik->mk", J)[:, None, None, :] * eye[None, :, :, None]
            )

        return FieldSample((3, 3), val, jac if self.jac_fn is not None else None)

    def divergence(self):
        """Row-wise divergence of a matrix field as a vector sample."""
        assert self.shape == (3, 3)

        def val(pts, tet):
            return np.einsum("mijj->mi", self.jacobian(pts, tet))

        return FieldSample((3,), val, None)


# ---------------------------------------------------------------------------
# discrete fields

# transform kinds: how reference-coordinate coefficients push to physical values
#   compose : u(x) = uhat(xhat)
#   piola   : sigma(x) = (1/det A) sigmahat(xhat) A^T      (row-wise flux map)
#   op2     : U(x) = A^{-T} Uhat(xhat) A^T
#   op1     : W(x) = A What(xhat) A^{-1}
TRANSFORMS = ("compose", "piola", "op2", "op1")


def _push_matrix(kind, amap):
    """(L, R) with value = L @ what @ R for matrix fields (None for compose)."""
    if kind == "compose":
        return None
    if kind == "piola":
        return np.eye(3) / amap.det, amap.A.T
    if kind == "op2":
        return amap.A_inv.T, amap.A.T
    if kind == "op1":
        return amap.A, amap.A_inv
    raise ValueError(kind)


@dataclass
class DiscreteField:
    """Per-element polynomial field on a mesh.

    coeffs[t] has shape (ncomp, nmono(deg[t])) in reference coordinates of
    element t; kind fixes the pushforward.  Vector fields have ncomp 3 and
    matrix fields ncomp 9.
    """

    mesh: object
    orders: object
    kind: str
    degs: list
    coeffs: list
    space: str = ""

    @property
    def shape(self):
        return (3, 3) if self.coeffs[0].shape[0] == 9 else (3,)

    def evaluate_ref(self, t, ref_pts):
        """Physical values at reference points of element t: (m, *shape)."""
        c = self.coeffs[t]
        vals = mo.evaluate(c, 3, self.degs[t], ref_pts)   # (ncomp, m)
        vals = np.moveaxis(vals, -1, 0)
        if c.shape[0] == 3:
            return vals
        W = vals.reshape(-1, 3, 3)
        LR = _push_matrix(self.kind, affine_of(self.mesh, t))
        if LR is None:
            return W
        L, R = LR
        return np.einsum("ij,mjk,kl->mil", L, W, R)

    def jacobian_ref(self, t, ref_pts):
        """Physical derivatives at reference points: (m, *shape, 3)."""
        amap = affine_of(self.mesh, t)
        c = self.coeffs[t]
        deg = self.degs[t]
        dref = np.stack(
            [mo.evaluate(mo.diff(c, 3, deg, ax), 3, max(deg - 1, 0), ref_pts) for ax in range(3)],
            axis=-2,
        )  # (ncomp, 3, m)
        dref = np.moveaxis(dref, -1, 0)   # (m, ncomp, 3ref)
        dphys = np.einsum("mck,kl->mcl", dref, amap.A_inv)
        if c.shape[0] == 3:
            return dphys
        W = dphys.reshape(-1, 3, 3, 3)
        LR = _push_matrix(self.kind, amap)
        if LR is None:
            return W
        L, R = LR
        return np.einsum("ij,mjkl,kn->minl", L, W, R)

    def as_sample(self):
        mesh = self.mesh

        def val(pts, tet):
            amap = affine_of(mesh, tet)
            return self.evaluate_ref(tet, amap.pull(pts))

        def jac(pts, tet):
            amap = affine_of(mesh, tet)
            return self.jacobian_ref(tet, amap.pull(pts))

        return FieldSample(self.shape, val, jac)

    def copy_with(self, coeffs, kind=None, degs=None, space=None):
        return DiscreteField(
            mesh=self.mesh,
            orders=self.orders,
            kind=self.kind if kind is None else kind,
            degs=self.degs if degs is None else degs,
            coeffs=coeffs,
            space=self.space if space is None else space,
        )

    def __sub__(self, other):
        assert self.kind == other.kind
        return self.copy_with(
            [a - b for a, b in zip(self.coeffs, other.coeffs)]
        )


def field_divergence(df):
    """Row-wise divergence of a piola-kind matrix field, as compose-kind.

    The flux transform turns reference divergence into (1/det) times the
    physical one, so the result is exact elementwise.
    """
    assert df.kind == "piola"
    out, degs = [], []
    for t in range(df.mesh.n_tets):
        amap = affine_of(df.mesh, t)
        d = ps.differentiate(df.coeffs[t], df.degs[t], "div") / amap.det
        out.append(d)
        degs.append(max(df.degs[t] - 1, 0))
    return df.copy_with(out, kind="compose", degs=degs, space="p3_vec")


def l2_norm(mesh, sample_or_field, quad_deg, tets=None):
    """L2(Omega) norm; accepts FieldSample (with tet hints) or DiscreteField."""
    rule = quadrature.rule_for(3, quad_deg)
    total = 0.0
    tets = range(mesh.n_tets) if tets is None else tets
    for t in tets:
        amap = affine_of(mesh, t)
        if isinstance(sample_or_field, DiscreteField):
            vals = sample_or_field.evaluate_ref(t, rule.points)
        else:
            vals = sample_or_field.value(amap.apply(rule.points), t)
        total += amap.det * np.sum(rule.weights * np.sum(vals.reshape(len(vals), -1) ** 2, axis=1))
    return float(np.sqrt(total))


def h1_seminorm(mesh, sample, quad_deg, tets=None):
    rule = quadrature.rule_for(3, quad_deg)
    total = 0.0
    tets = range(mesh.n_tets) if tets is None else tets
    for t in tets:
        amap = affine_of(mesh, t)
        if isinstance(sample, DiscreteField):
            jac = sample.jacobian_ref(t, rule.points)
        else:
            jac = sample.jacobian(amap.apply(rule.points), t)
        total += amap.det * np.sum(rule.weights * np.sum(jac.reshape(len(jac), -1) ** 2, axis=1))
    return float(np.sqrt(total))


def h1_norm(mesh, sample, quad_deg, tets=None):
    return float(
        np.hypot(
            l2_norm(mesh, sample, quad_deg, tets), h1_seminorm(mesh, sample, quad_deg, tets)
        )
    )


# ---------------------------------------------------------------------------
# reference moment systems

@dataclass
class MomentSystem:
    """Square moment matrix over a trimmed-space basis at parameter t.

    Rows are grouped face / divergence / auxiliary, in that order; the
    columns follow the reference basis of the target space.
    """

    kind: str                 # "2minus" or "1minus"
    orders: object
    t: float
    matrix: np.ndarray
    groups: dict              # name -> slice
    basis: object             # PolyBasis (matrix-valued)
    lu: object = None

    @property
    def dim(self):
        return self.matrix.shape[0]


def _matrix_basis_cached(tag_builder, orders):
    vec = tag_builder(orders)
    return ps.to_matrix_rows(vec)


def _aux_families(r):
    """(curl-image block, gradient-complement block) embedded at degree r."""
    f = ps.curl_image_basis(r)
    g = ps.complement_g_basis(r)
    k = ps.curl_dim(r)
    nf = mo.count(3, max(r, 0))
    fam_f = np.zeros((k, 9, nf))
    fam_g = np.zeros((k, 9, nf))
    if k:
        fam_f[:, :, : f.coeffs.shape[-1]] = f.coeffs
        fam_g[:, :, : g.coeffs.shape[-1]] = g.coeffs
    return fam_f, fam_g


def _moment_rows_2minus(orders, t):
    rt = orders.tet
    basis = _matrix_basis_cached(lambda o: ps.basis_variable("lambda2_minus", o.shifted(1)), orders)
    deg = rt + 1
    nb = basis.dim
    mats = basis.coeffs.reshape(nb, 3, 3, -1)
    rows = []
    groups = {}
    start = 0
    # face rows: for each face, modes of P_{rF}(F;V)
    for f in range(4):
        rf = orders.faces[f]
        tr = ps.trace_normal(mats, deg, ps.REF_FACE_FRAMES[f], ps._ref_face_subst(f, deg))
        # tr: (nb, 3, n2(deg))
        modes = ps.scalar_face_modes(f, rf)        # (ns, 1, n2(rf))
        if modes.shape[0] == 0:
            continue
        G2 = ps.ref_face_gram(f, deg)
        memb = np.zeros((modes.shape[0], mo.count(2, deg)))
        memb[:, : modes.shape[-1]] = modes[:, 0, :]
        vals = np.einsum("bln,nm,sm->slb", tr, G2, memb)  # (ns, 3, nb)
        rows.append(vals.reshape(-1, nb))
    groups["face"] = slice(0, sum(r.shape[0] for r in rows))
    start = groups["face"].stop
    # divergence rows against zero-mean vector modes
    divs = ps.differentiate(basis.coeffs, deg, "div")     # (nb, 3, n3(rt))
    zm = ps.zero_mean_volume_modes(rt)                    # (nz, 1, n3(rt))
    if zm.shape[0]:
        G3 = mo.gram_simplex(3, rt)
        vals = np.einsum("bln,nm,sm->slb", divs, G3, zm[:, 0, :])
        rows.append(vals.reshape(-1, nb))
        groups["div"] = slice(start, start + 3 * zm.shape[0])
        start = groups["div"].stop
    else:
        groups["div"] = slice(start, start)
    # auxiliary rows against h(t) = (1-t) f + t g
    fam_f, fam_g = _aux_families(rt)
    if fam_f.shape[0]:
        G3b = mo.gram_simplex(3, deg)
        fam = (1.0 - t) * fam_f + t * fam_g
        famE = np.zeros((fam.shape[0], 9, mo.count(3, deg)))
        famE[:, :, : fam.shape[-1]] = fam
        vals = np.einsum("bcn,nm,kcm->kb", basis.coeffs, G3b, famE)
        rows.append(vals)
        groups["aux"] = slice(start, start + fam.shape[0])
    else:
        groups["aux"] = slice(start, start)
    M = np.vstack(rows) if rows else np.zeros((0, nb))
    return M, groups, basis


def _moment_rows_1minus(orders, t):
    rt = orders.tet
    basis = _matrix_basis_cached(
        lambda o: ps.basis_lambda1_minus_edge_zero(o.shifted(2)), orders
    )
    deg = rt + 2
    nb = basis.dim
    mats = basis.coeffs.reshape(nb, 3, 3, -1)
    rows = []
    groups = {}
    # face rows: tangential components against P_{rF}(F;V)
    for f in range(4):
        rf = orders.faces[f]
        tr = ps.trace_tangential(mats, deg, ps.REF_FACE_FRAMES[f], ps._ref_face_subst(f, deg))
        # (nb, 3, 2, n2)
        modes = ps.scalar_face_modes(f, rf)
        if modes.shape[0] == 0:
            continue
        G2 = ps.ref_face_gram(f, deg)
        memb = np.zeros((modes.shape[0], mo.count(2, deg)))
        memb[:, : modes.shape[-1]] = modes[:, 0, :]
        vals = np.einsum("blan,nm,sm->salb", tr, G2, memb)   # (ns,2,3,nb)
        rows.append(vals.reshape(-1, nb))
    groups["face"] = slice(0, sum(r.shape[0] for r in rows))
    start = groups["face"].stop
    # div S1 rows
    s1c = np.einsum("pq,bqn->bpn", tensor_ops.S1_MATRIX, basis.coeffs)
    divs = ps.differentiate(s1c, deg, "div")   # (nb, 3, n3(deg-1))
    zm = ps.zero_mean_volume_modes(rt)
    if zm.shape[0]:
        G3 = mo.gram_simplex(3, deg - 1)
        zmE = np.zeros((zm.shape[0], mo.count(3, deg - 1)))
        zmE[:, : zm.shape[-1]] = zm[:, 0, :]
        vals = np.einsum("bln,nm,sm->slb", divs, G3, zmE)
        rows.append(vals.reshape(-1, nb))
        groups["div"] = slice(start, start + 3 * zm.shape[0])
        start = groups["div"].stop
    else:
        groups["div"] = slice(start, start)
    # auxiliary rows: S1(omega) against h(t)
    fam_f, fam_g = _aux_families(rt)
    if fam_f.shape[0]:
        G3b = mo.gram_simplex(3, deg)
        fam = (1.0 - t) * fam_f + t * fam_g
        famE = np.zeros((fam.shape[0], 9, mo.count(3, deg)))
        famE[:, :, : fam.shape[-1]] = fam
        vals = np.einsum("bcn,nm,kcm->kb", s1c, G3b, famE)
        rows.append(vals)
        groups["aux"] = slice(start, start + fam.shape[0])
    else:
        groups["aux"] = slice(start, start)
    M = np.vstack(rows) if rows else np.zeros((0, nb))
    return M, groups, basis


def build_moment_system_2minus(orders, t):
    """Square matrix of the trimmed-flux interpolation conditions at t."""
    M, groups, basis = _moment_rows_2minus(orders, t)
    if M.shape[0] != M.shape[1]:
        raise DimensionMismatch(
            f"2minus system is {M.shape[0]}x{M.shape[1]} for orders {orders}"
        )
    return MomentSystem("2minus", orders, t, M, groups, basis)


def build_moment_system_1minus(orders, t):
    """Square matrix of the trimmed-edge interpolation conditions at t."""
    M, groups, basis = _moment_rows_1minus(orders, t)
    if M.shape[0] != M.shape[1]:
        raise DimensionMismatch(
            f"1minus system is {M.shape[0]}x{M.shape[1]} for orders {orders}"
        )
    return MomentSystem("1minus", orders, t, M, groups, basis)


def _equilibrated_logdet(M):
    if M.shape[0] == 0:
        return 1, 0.0
    scale = np.abs(M).max(axis=1)
    if np.any(scale == 0.0):
        return 0, -np.inf
    sign, logmag = linalg.det_sign_and_logmag(M / scale[:, None])
    return sign, logmag


_T_CACHE = {}


def select_t(orders):
    """Deterministic homotopy parameter for one order signature.

    Scans t over {j/64} and keeps the t maximizing the smaller of the two
    row-equilibrated log-determinants, so both moment systems are safely
    invertible at the returned value.
    """
    if isinstance(orders, int):
        orders = ps.RefOrders.uniform(orders)
    if orders in _T_CACHE:
        return _T_CACHE[orders]
    M2f, g2, b2 = _moment_rows_2minus(orders, 0.0)
    M2g, _, _ = _moment_rows_2minus(orders, 1.0)
    M1f, g1, b1 = _moment_rows_1minus(orders, 0.0)
    M1g, _, _ = _moment_rows_1minus(orders, 1.0)
    for M, b, name in ((M2f, b2, "2minus"), (M1f, b1, "1minus")):
        if M.shape[0] != M.shape[1]:
            raise DimensionMismatch(
                f"{name} system is {M.shape[0]}x{M.shape[1]} for orders {orders}"
            )
    best_t, best_score = None, -np.inf
    for t in T_GRID:
        score = np.inf
        for Mf, Mg in ((M2f, M2g), (M1f, M1g)):
            M = (1.0 - t) * Mf + t * Mg if Mf.shape[0] else Mf
            sign, logmag = _equilibrated_logdet(M)
            score = min(score, -np.inf if sign == 0 else logmag)
        if score > best_score:
            best_t, best_score = float(t), score
    if best_t is None or not np.isfinite(best_score):
        raise NoAdmissibleT(f"all grid values of t are singular for {orders}")
    _T_CACHE[orders] = best_t
    return best_t


_SYSTEM_CACHE = {}


def reference_systems(orders):
    """(2minus, 1minus) moment systems at the selected t, LU-factored."""
    if orders in _SYSTEM_CACHE:
        return _SYSTEM_CACHE[orders]
    t = select_t(orders)
    sys2 = build_moment_system_2minus(orders, t)
    sys1 = build_moment_system_1minus(orders, t)
    for s in (sys2, sys1):
        try:
            s.lu = linalg.lu_factor(s.matrix)
        except linalg.SingularMatrix as exc:
            raise SingularMomentSystem(
                f"{s.kind} system singular at t={t} for {orders}"
            ) from exc
    _SYSTEM_CACHE[orders] = (sys2, sys1)
    return sys2, sys1


# ---------------------------------------------------------------------------
# shared quadrature context

class Workspace:
    """Per-(mesh, orders) quadrature data shared by all operators.

    Face moments are evaluated at one set of physical points per global
    face, so the two elements sharing a face consume identical samples of
    the input field and elementwise interpolation assembles into a
    conforming global field without any further communication.
    """

    def __init__(self, mesh, orders, quad_margin=6):
        self.mesh = mesh
        self.orders = orders
        self.rmax = int(orders.tet_orders.max())
        self.vol_deg = 2 * (self.rmax + 2) + quad_margin
        self.vol_rule = quadrature.rule_for(3, self.vol_deg)
        self.face_deg = self.vol_deg
        tri = quadrature.rule_for(2, self.face_deg)
        self.tri_rule = tri
        self.amaps = [affine_of(mesh, t) for t in range(mesh.n_tets)]
        self.face_points = []
        self.face_weights = []   # physical surface measure
        for fid in range(mesh.n_faces):
            verts = mesh.vertices[mesh.faces[fid]]
            pts = (
                verts[0]
                + np.outer(tri.points[:, 0], verts[1] - verts[0])
                + np.outer(tri.points[:, 1], verts[2] - verts[0])
            )
            area = 0.5 * np.linalg.norm(
                np.cross(verts[1] - verts[0], verts[2] - verts[0])
            )
            self.face_points.append(pts)
            self.face_weights.append(tri.weights * (area / 0.5))
        self._ref_orders = [orders.ref_orders(mesh, t) for t in range(mesh.n_tets)]
        self._mode_cache = {}

    def ref_orders(self, t):
        return self._ref_orders[t]

    def vol_points(self, t):
        return self.amaps[t].apply(self.vol_rule.points)

    def face_modes_at_ref_points(self, t, local_face, rf):
        """Orthonormal reference-face modes evaluated at the pulled-back
        global quadrature points of the matching global face."""
        key = (t, local_face, rf)
        if key in self._mode_cache:
            return self._mode_cache[key]
        fid = self.mesh.tet_faces[t][local_face]
        amap = self.amaps[t]
        xhat = amap.pull(self.face_points[fid])
        frame = ps.REF_FACE_FRAMES[local_face]
        yhat = frame.to_y(xhat)
        modes = ps.scalar_face_modes(local_face, rf)
        vals = mo.evaluate(modes[:, 0, :], 2, rf, yhat) if modes.shape[0] else np.zeros((0, len(yhat)))
        # reference surface measure: dshat = ds * area(Fhat)/area(F)
        w_ref = self.face_weights[fid] * (frame.area / _face_area(self.mesh, fid))
        out = (vals, w_ref, xhat, fid)
        self._mode_cache[key] = out
        return out


def _face_area(mesh, fid):
    v = mesh.vertices[mesh.faces[fid]]
    return 0.5 * np.linalg.norm(np.cross(v[1] - v[0], v[2] - v[0]))


# ---------------------------------------------------------------------------
# elementwise L2 projection

def project_l2_p3(mesh, orders, f, ws=None):
    """Elementwise L2 projection onto the vector space of order r(T)."""
    ws = Workspace(mesh, orders) if ws is None else ws
    coeffs, degs = [], []
    rule = ws.vol_rule
    for t in range(mesh.n_tets):
        rt = int(orders.tet_orders[t])
        modes = ps.volume_modes(rt)[:, 0, :]          # (nm, n3)
        vals = mo.evaluate(modes, 3, rt, rule.points)  # (nm, q)
        if isinstance(f, DiscreteField):
            fv = f.evaluate_ref(t, rule.points)
        else:
            fv = f.value(ws.vol_points(t), t)          # (q, 3)
        gamma = np.einsum("q,nq,qi->in", rule.weights, vals, fv)
        c = np.einsum("in,nm->im", gamma, modes)       # back to monomials
        coeffs.append(c)
        degs.append(rt)
    return DiscreteField(mesh, orders, "compose", degs, coeffs, space="p3_vec")


# ---------------------------------------------------------------------------
# trimmed-family element interpolants (reference route)

def _pullback_op2(U, amap):
    """Uhat(xhat) = A^T U(x) A^{-T} with matching derivatives."""
    A, Ainv = amap.A, amap.A_inv

    def val(pts_hat, tet=None):
        W = U
        return np.einsum("pa,mab,qb->mpq", A.T, W.value(amap.apply(pts_hat), tet), Ainv)

    def jac(pts_hat, tet=None):
        J = U.jacobian(amap.apply(pts_hat), tet)   # (m,3,3,3) d/dx_l
        Jh = np.einsum("mabl,lk->mabk", J, A)      # d/dxhat_k
        return np.einsum("pa,mabk,qb->mpqk", A.T, Jh, Ainv)

    return FieldSample((3, 3), val, jac)


def _pullback_op1(W, amap):
    """What(xhat) = A^{-1} W(x) A with matching derivatives."""
    A, Ainv = amap.A, amap.A_inv

    def val(pts_hat, tet=None):
        return np.einsum("pa,mab,bq->mpq", Ainv, W.value(amap.apply(pts_hat), tet), A)

    def jac(pts_hat, tet=None):
        J = W.jacobian(amap.apply(pts_hat), tet)
        Jh = np.einsum("mabl,lk->mabk", J, A)
        return np.einsum("pa,mabk,bq->mpqk", Ainv, Jh, A)

    return FieldSample((3, 3), val, jac)


def _rhs_2minus(ws, t, sysm, Uhat):
    """Right-hand side of the 2minus conditions for the pulled-back field."""
    orders = sysm.orders
    deg = orders.tet + 1
    amap = ws.amaps[t]
    rhs = np.zeros(sysm.dim)
    pos = 0
    # face rows
    for f in range(4):
        rf = orders.faces[f]
        modes_vals, w_ref, xhat, fid = ws.face_modes_at_ref_points(t, f, rf)
        if modes_vals.shape[0] == 0:
            continue
        n_hat = ps.REF_FACE_FRAMES[f].normal
        Uv = Uhat.value(xhat, t)                     # (q,3,3)
        Un = np.einsum("mij,j->mi", Uv, n_hat)       # (q,3)
        block = np.einsum("q,sq,qi->si", w_ref, modes_vals, Un)
        take = block.shape[0] * 3
        rhs[pos : pos + take] = block.reshape(-1)
        pos += take
    # div rows
    zm = ps.zero_mean_volume_modes(orders.tet)
    if zm.shape[0]:
        zv = mo.evaluate(zm[:, 0, :], 3, orders.tet, ws.vol_rule.points)
        J = Uhat.jacobian(ws.vol_rule.points, t)     # (q,3,3,3)
        divU = np.einsum("mikk->mi", J)
        block = np.einsum("q,sq,qi->si", ws.vol_rule.weights, zv, divU)
        take = block.size
        rhs[pos : pos + take] = block.reshape(-1)
        pos += take
    # aux rows
    fam_f, fam_g = _aux_families(orders.tet)
    if fam_f.shape[0]:
        fam = (1.0 - sysm.t) * fam_f + sysm.t * fam_g
        hv = mo.evaluate(fam, 3, max(orders.tet, 0), ws.vol_rule.points)  # (k,9,q)
        Uv = Uhat.value(ws.vol_rule.points, t).reshape(-1, 9)             # (q,9)
        block = np.einsum("q,kcq,qc->k", ws.vol_rule.weights, hv, Uv)
        rhs[pos : pos + len(block)] = block
        pos += len(block)
    assert pos == sysm.dim
    return rhs


def _rhs_1minus(ws, t, sysm, What):
    orders = sysm.orders
    amap = ws.amaps[t]
    rhs = np.zeros(sysm.dim)
    pos = 0
    for f in range(4):
        rf = orders.faces[f]
        modes_vals, w_ref, xhat, fid = ws.face_modes_at_ref_points(t, f, rf)
        if modes_vals.shape[0] == 0:
            continue
        frame = ps.REF_FACE_FRAMES[f]
        Wv = What.value(xhat, t)
        Wt = np.einsum("mij,ja->mia", Wv, np.column_stack([frame.t1, frame.t2]))
        block = np.einsum("q,sq,qia->sai", w_ref, modes_vals, Wt)  # (s,2,3)
        take = block.size
        rhs[pos : pos + take] = block.reshape(-1)
        pos += take
    zm = ps.zero_mean_volume_modes(orders.tet)
    if zm.shape[0]:
        zv = mo.evaluate(zm[:, 0, :], 3, orders.tet, ws.vol_rule.points)
        J = What.jacobian(ws.vol_rule.points, t)
        # div S1 W from the jacobian of W
        JS1 = (
            np.swapaxes(J, 1, 2)
            - np.einsum("miik->mk", J)[:, None, None, :] * np.eye(3)[None, :, :, None]
        )
        divS1 = np.einsum("mikk->mi", JS1)
        block = np.einsum("q,sq,qi->si", ws.vol_rule.weights, zv, divS1)
        take = block.size
        rhs[pos : pos + take] = block.reshape(-1)
        pos += take
    fam_f, fam_g = _aux_families(orders.tet)
    if fam_f.shape[0]:
        fam = (1.0 - sysm.t) * fam_f + sysm.t * fam_g
        hv = mo.evaluate(fam, 3, max(orders.tet, 0), ws.vol_rule.points)
        Wv = What.value(ws.vol_rule.points, t)
        S1W = np.swapaxes(Wv, 1, 2) - np.einsum("mii->m", Wv)[:, None, None] * np.eye(3)
        block = np.einsum("q,kcq,qc->k", ws.vol_rule.weights, hv, S1W.reshape(-1, 9))
        rhs[pos : pos + len(block)] = block
        pos += len(block)
    assert pos == sysm.dim
    return rhs


def interp_p2minus(ws, t, U):
    """Element coefficients (9, nmono) of the trimmed-flux interpolant."""
    orders = ws.ref_orders(t)
    sys2, _ = reference_systems(orders)
    Uhat = _pullback_op2(U, ws.amaps[t])
    rhs = _rhs_2minus(ws, t, sys2, Uhat)
    x = linalg.lu_apply(sys2.lu, rhs)
    return np.einsum("b,bcn->cn", x, sys2.basis.coeffs)


def interp_p1minus(ws, t, W):
    """Element coefficients (9, nmono) of the trimmed-edge interpolant."""
    orders = ws.ref_orders(t)
    _, sys1 = reference_systems(orders)
    What = _pullback_op1(W, ws.amaps[t])
    rhs = _rhs_1minus(ws, t, sys1, What)
    x = linalg.lu_apply(sys1.lu, rhs)
    return np.einsum("b,bcn->cn", x, sys1.basis.coeffs)


def interp_p2minus_global(mesh, orders, U, ws=None):
    ws = Workspace(mesh, orders) if ws is None else ws
    per_elem = [interp_p2minus(ws, t, U) for t in range(mesh.n_tets)]
    degs = [int(orders.tet_orders[t]) + 1 for t in range(mesh.n_tets)]
    return elementwise_to_global(mesh, orders, "op2", degs, per_elem, space="p2_minus")


def interp_p1minus_global(mesh, orders, W, ws=None):
    ws = Workspace(mesh, orders) if ws is None else ws
    per_elem = [interp_p1minus(ws, t, W) for t in range(mesh.n_tets)]
    degs = [int(orders.tet_orders[t]) + 2 for t in range(mesh.n_tets)]
    return elementwise_to_global(mesh, orders, "op1", degs, per_elem, space="p1_minus")


# ---------------------------------------------------------------------------
# physical-moment route (cross-check of the pullback identity)

def interp_p2minus_physical(ws, t, U):
    """Assemble and solve the flux moment system directly on element t.

    Same element space (pushed-forward reference basis), but with the
    physically-defined conditions; agrees with interp_p2minus by the
    intertwining property of the pullback.
    """
    orders = ws.ref_orders(t)
    sys2, _ = reference_systems(orders)
    amap = ws.amaps[t]
    basis = sys2.basis
    nb = basis.dim
    deg = orders.tet + 1
    A, Ainv, Ainv_T = amap.A, amap.A_inv, amap.A_inv.T
    rule = ws.vol_rule
    # physical values of the mapped basis at volume points
    ref_vals = mo.evaluate(basis.coeffs, 3, deg, rule.points)   # (nb,9,q)
    ref_vals = np.moveaxis(ref_vals.reshape(nb, 3, 3, -1), -1, 1)  # (nb,q,3,3)
    phys_vals = np.einsum("ij,bqjk,kl->bqil", Ainv_T, ref_vals, A.T)
    rows = []
    rhs = []
    xq = amap.apply(rule.points)
    wq = rule.weights * amap.det
    Uv = U.value(xq, t)
    # face rows: physical frames and monomial test modes
    for f in range(4):
        rf = orders.faces[f]
        if rf < 0:
            continue
        fid = ws.mesh.tet_faces[t][f]
        frame = ps.make_face_frame(ws.mesh.vertices[ws.mesh.faces[fid]])
        pts = ws.face_points[fid]
        w = ws.face_weights[fid]
        y = frame.to_y(pts)
        mv = mo.eval_basis(2, rf, y)                      # (q, ns)
        xhat = amap.pull(pts)
        bref = mo.evaluate(basis.coeffs, 3, deg, xhat)    # (nb,9,q)
        bref = np.moveaxis(bref.reshape(nb, 3, 3, -1), -1, 1)
        bphys = np.einsum("ij,bqjk,kl->bqil", Ainv_T, bref, A.T)
        n_out = _outward_normal(ws.mesh, t, f)
        bn = np.einsum("bqij,j->bqi", bphys, n_out)
        Ufv = U.value(pts, t)
        Un = np.einsum("qij,j->qi", Ufv, n_out)
        for s in range(mv.shape[1]):
            for l in range(3):
                rows.append(np.einsum("q,bq->b", w * mv[:, s], bn[:, :, l]))
                rhs.append(np.sum(w * mv[:, s] * Un[:, l]))
    # div rows: physical centered monomials of degree 1..rt
    rt = orders.tet
    centroid = ws.mesh.tet_vertices(t).mean(axis=0)
    exps = mo.exponents(3, rt)
    divs = ps.differentiate(basis.coeffs, deg, "div")      # (nb,3,n3(rt))
    div_ref = mo.evaluate(divs, 3, rt, rule.points)        # (nb,3,q)
    # physical divergence of the mapped basis: see the pullback chain rule
    div_phys = np.einsum("ij,bjq->biq", Ainv_T, div_ref)
    Ujac = U.jacobian(xq, t)
    divU = np.einsum("qijj->qi", Ujac)
    xc = (xq - centroid) / max(amap.h, 1e-30)
    for e in exps:
        if e.sum() == 0:
            continue
        eta = xc[:, 0] ** e[0] * xc[:, 1] ** e[1] * xc[:, 2] ** e[2]
        for l in range(3):
            rows.append(np.einsum("q,bq->b", rule.weights * eta, div_phys[:, l, :]))
            rhs.append(np.sum(rule.weights * eta * divU[:, l]))
    # aux rows: A h(xhat, t) A^{-1}
    fam_f, fam_g = _aux_families(rt)
    if fam_f.shape[0]:
        fam = (1.0 - sys2.t) * fam_f + sys2.t * fam_g
        hv = mo.evaluate(fam, 3, max(rt, 0), rule.points)   # (k,9,q)
        hv = np.moveaxis(hv.reshape(-1, 3, 3, hv.shape[-1]), -1, 1)
        h_phys = np.einsum("ij,kqjl,lm->kqim", A, hv, Ainv)
        for k in range(h_phys.shape[0]):
            rows.append(
                np.einsum("q,bqij,qij->b", wq, phys_vals, h_phys[k]) / amap.det
            )
            rhs.append(np.einsum("q,qij,qij->", wq, Uv, h_phys[k]) / amap.det)
    C = np.array(rows)
    if C.shape[0] != C.shape[1]:
        raise DimensionMismatch(f"physical system is {C.shape}")
    x = linalg.lu_solve(C, np.array(rhs))
    return np.einsum("b,bcn->cn", x, basis.coeffs)


def _outward_normal(mesh, t, local_face):
    fid = mesh.tet_faces[t][local_face]
    verts = mesh.vertices[mesh.faces[fid]]
    n = np.cross(verts[1] - verts[0], verts[2] - verts[0])
    n = n / np.linalg.norm(n)
    return n * mesh.tet_face_sign[t, local_face]


# ---------------------------------------------------------------------------
# conformity and global assembly of element fields

def elementwise_to_global(mesh, orders, kind, degs, per_elem, space="", tol=1e-10):
    """Glue per-element coefficient arrays into a conforming DiscreteField.

    Checks interface continuity of the relevant trace (normal for flux
    kinds, tangential for the edge kind) at face quadrature points.
    """
    df = DiscreteField(mesh, orders, kind, list(degs), list(per_elem), space=space)
    err, scale = conformity_error(df)
    if err > tol * max(scale, 1.0):
        raise ConformityViolation(
            f"interface trace jump {err:.3e} exceeds {tol:.0e} * {max(scale, 1.0):.3e}"
        )
    return df


def conformity_error(df, n_pts_rule=4):
    """Max interface trace jump and the field scale used to normalize it."""
    mesh = df.mesh
    rule = quadrature.rule_for(2, n_pts_rule)
    worst = 0.0
    scale = 0.0
    for fid in range(mesh.n_faces):
        tets = mesh.face_tets[fid]
        if len(tets) != 2:
            continue
        verts = mesh.vertices[mesh.faces[fid]]
        pts = (
            verts[0]
            + np.outer(rule.points[:, 0], verts[1] - verts[0])
            + np.outer(rule.points[:, 1], verts[2] - verts[0])
        )
        frame = ps.make_face_frame(verts)
        vals = []
        for t in tets:
            amap = affine_of(mesh, t)
            V = df.evaluate_ref(t, amap.pull(pts))
            if df.kind in ("piola", "op2"):
                tr = np.einsum("mij,j->mi", V, frame.normal)
            elif df.kind == "op1":
                tr = np.einsum(
                    "mij,ja->mia", V, np.column_stack([frame.t1, frame.t2])
                )
            else:
                tr = V
            vals.append(tr)
            scale = max(scale, np.abs(V).max())
        worst = max(worst, np.abs(vals[0] - vals[1]).max())
    return worst, scale


# ---------------------------------------------------------------------------
# Clement smoother and the stabilized interpolant

def clement(mesh, W, orders=None, quad_deg=6):
    """Patch-average interpolant onto continuous piecewise linears.

    The vertex value is the mean of W over the union of elements touching
    the vertex (its L2 projection onto constants there).
    """
    rule = quadrature.rule_for(3, quad_deg)
    sums = np.zeros((mesh.n_vertices, 3, 3))
    vols = np.zeros(mesh.n_vertices)
    for t in range(mesh.n_tets):
        amap = affine_of(mesh, t)
        if isinstance(W, DiscreteField):
            vals = W.evaluate_ref(t, rule.points)
        else:
            vals = W.value(amap.apply(rule.points), t)
        integral = amap.det * np.einsum("q,qij->ij", rule.weights, vals)
        vol = amap.det / 6.0
        for v in mesh.tets[t]:
            sums[v] += integral
            vols[v] += vol
    vertex_vals = sums / vols[:, None, None]
    coeffs, degs = [], []
    idx1 = mo.index_of(3, 1)
    for t in range(mesh.n_tets):
        vv = vertex_vals[mesh.tets[t]]      # (4,3,3)
        c = np.zeros((9, mo.count(3, 1)))
        flat = vv.reshape(4, 9)
        c[:, 0] = flat[0]
        c[:, idx1[(1, 0, 0)]] = flat[1] - flat[0]
        c[:, idx1[(0, 1, 0)]] = flat[2] - flat[0]
        c[:, idx1[(0, 0, 1)]] = flat[3] - flat[0]
        coeffs.append(c)
        degs.append(1)
    field = DiscreteField(mesh, orders, "compose", degs, coeffs, space="linear_mat")
    return field


def lift_linear_into_op1(ws, t, lin_field):
    """Coefficients of a continuous linear matrix field in the op1 space."""
    orders = ws.ref_orders(t)
    basis = ps.to_matrix_rows(ps.basis_variable("lambda1_minus", orders.shifted(2)))
    amap = ws.amaps[t]
    # pull back: What(xhat) = A^{-1} W(A xhat + b) A, a linear matrix poly
    c = lin_field.coeffs[t].reshape(3, 3, -1)
    # lin_field is compose-kind: W(x) = What_lin(xhat); same reference coeffs
    What = np.einsum("pa,abn,bq->pqn", amap.A_inv, c, amap.A).reshape(9, -1)
    target = mo.embed(What, 3, 1, orders.tet + 2)
    x = linalg.least_squares(basis.flat().T, target.reshape(-1))
    resid = basis.flat().T @ x - target.reshape(-1)
    if np.abs(resid).max() > 1e-9 * max(1.0, np.abs(target).max()):
        raise SingularMomentSystem("linear field is not representable in the edge space")
    return np.einsum("b,bcn->cn", x, basis.coeffs)


def interp_p1minus_stabilized(mesh, orders, W, ws=None):
    """Edge interpolant of (W - clement W) plus clement W.

    Keeps the tangential-commutation property of the edge interpolant
    while staying uniformly bounded in H1.
    """
    ws = Workspace(mesh, orders) if ws is None else ws
    R = clement(mesh, W, orders)
    Rs = R.as_sample()
    diff = W - Rs if isinstance(W, FieldSample) else W.as_sample() - Rs
    per_elem, degs = [], []
    for t in range(mesh.n_tets):
        c1 = interp_p1minus(ws, t, diff)
        c2 = lift_linear_into_op1(ws, t, R)
        deg = int(orders.tet_orders[t]) + 2
        per_elem.append(c1 + c2)
        degs.append(deg)
    return elementwise_to_global(mesh, orders, "op1", degs, per_elem, space="p1_minus")


# ---------------------------------------------------------------------------
# conforming full-space stress interpolant and its element dof systems

@dataclass
class StressElement:
    """Moment system of one element of the conforming stress space."""

    basis: object            # matrix-valued reference basis (PolyBasis)
    deg: int
    C: np.ndarray            # rows: faces (local 0..3), div, interior
    lu: object
    dof_ids: np.ndarray      # global ids in row order
    face_slices: list        # per local face
    div_slice: slice
    int_slice: slice
    face_mode_coeffs: list   # per local face: test polys in the reference
    mu_counts: list          # scalar mode count per local face


@dataclass
class _InteriorData:
    nbasis: object
    G4: np.ndarray           # (nN, nb, 3, 3): contract with A^T A


class StressSpace:
    """The H(div)-conforming matrix-valued flux space of order r+1.

    Degrees of freedom: per global face, moments of the normal trace
    against P_{r(F)+1}(F;V) in a globally fixed face frame (so the two
    adjacent elements share them, with an orientation sign); per element,
    divergence moments against zero-mean vectors of degree r(T) and L2
    moments against the divergence-free zero-trace subspace.  The element
    shape functions are the dual basis of these functionals.
    """

    def __init__(self, mesh, orders, ws=None):
        self.mesh = mesh
        self.orders = orders
        self.ws = Workspace(mesh, orders) if ws is None else ws
        self.face_frames = [
            ps.make_face_frame(mesh.vertices[mesh.faces[f]]) for f in range(mesh.n_faces)
        ]
        self.face_ndof = np.array(
            [3 * mo.count(2, int(orders.face_orders[f]) + 1) for f in range(mesh.n_faces)]
        )
        self.face_offset = np.concatenate([[0], np.cumsum(self.face_ndof)])
        self.n_face_dofs = int(self.face_offset[-1])
        self._interior_cache = {}
        self.elements = []
        offset = self.n_face_dofs
        for t in range(mesh.n_tets):
            elem, offset = self._build_element(t, offset)
            self.elements.append(elem)
        self.n_dofs = offset

    def _build_element(self, t, offset):
        mesh, orders, ws = self.mesh, self.orders, self.ws
        ro = ws.ref_orders(t)
        rt = ro.tet
        basis = ps.to_matrix_rows(ps.basis_variable("lambda2", ro.shifted(1)))
        deg = rt + 1
        nb = basis.dim
        amap = ws.amaps[t]
        mats = basis.coeffs.reshape(nb, 3, 3, -1)
        rows = []
        dof_ids = []
        face_slices = []
        face_mode_coeffs = []
        mu_counts = []
        pos = 0
        G2 = [ps.ref_face_gram(f, deg) for f in range(4)]
        for f in range(4):
            fid = mesh.tet_faces[t][f]
            rf = int(orders.face_orders[fid]) + 1
            gframe = self.face_frames[fid]
            rframe = ps.REF_FACE_FRAMES[f]
            # global monomial test modes composed with the reference chart
            L2 = np.column_stack([gframe.t1, gframe.t2]).T @ amap.A @ np.column_stack(
                [rframe.t1, rframe.t2]
            )
            c2 = np.column_stack([gframe.t1, gframe.t2]).T @ (
                amap.A @ rframe.origin + amap.b - gframe.origin
            )
            # global-face monomials composed with the reference chart:
            # y_glob = c2 + L2 yhat
            S = mo.substitution_matrix(2, rf, L2, c2)
            mu_ref = mo.embed(S, 2, rf, deg)          # (ns, n2(deg)) in yhat
            sign = mesh.tet_face_sign[t, f] * _REF_OUTWARD_SIGN[f]
            tr = ps.trace_normal(mats, deg, rframe, ps._ref_face_subst(f, deg))
            vals = sign * np.einsum("bln,nm,sm->slb", tr, G2[f], mu_ref)
            rows.append(vals.reshape(-1, nb))
            ns = mu_ref.shape[0]
            face_slices.append(slice(pos, pos + 3 * ns))
            pos += 3 * ns
            base = self.face_offset[fid]
            for s in range(ns):
                for l in range(3):
                    dof_ids.append(base + s * 3 + l)
            face_mode_coeffs.append(mu_ref)
            mu_counts.append(ns)
        # divergence rows
        divs = ps.differentiate(basis.coeffs, deg, "div")
        zm = ps.zero_mean_volume_modes(rt)
        if zm.shape[0]:
            G3r = mo.gram_simplex(3, rt)
            vals = np.einsum("bln,nm,sm->slb", divs, G3r, zm[:, 0, :])
            rows.append(vals.reshape(-1, nb))
        div_slice = slice(pos, pos + 3 * zm.shape[0])
        pos = div_slice.stop
        dof_ids.extend(range(offset, offset + 3 * zm.shape[0]))
        offset += 3 * zm.shape[0]
        # interior rows against the divergence-free zero-trace subspace,
        # mapped through M = A^T A (the physical L2 pairing of two flux maps)
        Nb, G3 = self._interior_data_cached(rt)
        if Nb.dim:
            M = amap.A.T @ amap.A
            Ncoef = Nb.coeffs.reshape(Nb.dim, 3, 3, -1)
            nuM = np.einsum("jpkn,kq->jpqn", Ncoef, M)
            vals = np.einsum("bpqn,nm,jpqm->jb", mats, G3, nuM)
            rows.append(vals)
        int_slice = slice(pos, pos + Nb.dim)
        pos = int_slice.stop
        dof_ids.extend(range(offset, offset + Nb.dim))
        offset += Nb.dim
        C = np.vstack(rows) if rows else np.zeros((0, nb))
        if C.shape[0] != C.shape[1]:
            raise DimensionMismatch(
                f"stress element system is {C.shape[0]}x{C.shape[1]} on tet {t}"
            )
        try:
            lu = linalg.lu_factor(C)
        except linalg.SingularMatrix as exc:
            raise SingularMomentSystem(f"stress element system singular on tet {t}") from exc
        elem = StressElement(
            basis=basis,
            deg=deg,
            C=C,
            lu=lu,
            dof_ids=np.array(dof_ids, dtype=np.int64),
            face_slices=face_slices,
            div_slice=div_slice,
            int_slice=int_slice,
            face_mode_coeffs=face_mode_coeffs,
            mu_counts=mu_counts,
        )
        return elem, offset

    def _interior_data_cached(self, rt):
        if rt not in self._interior_cache:
            ring = ps.basis_ring("lambda2", rt + 1)
            if ring.dim:
                divs = ps.differentiate(ring.coeffs, rt + 1, "div")
                combos = linalg.nullspace(divs.reshape(ring.dim, -1).T)
                N_vec = np.einsum("kb,bcn->kcn", combos, ring.coeffs)
            else:
                N_vec = np.zeros((0, 3, mo.count(3, rt + 1)))
            Nb = ps.to_matrix_rows(
                ps.PolyBasis("divfree_ring", 3, rt + 1, np.ascontiguousarray(N_vec), rt + 1)
            )
            self._interior_cache[rt] = (Nb, mo.gram_simplex(3, rt + 1))
        return self._interior_cache[rt]

    # -- functionals of a field sample (the interpolation right-hand side)

    def element_rhs(self, t, U):
        mesh, ws = self.mesh, self.ws
        elem = self.elements[t]
        amap = ws.amaps[t]
        rhs = np.zeros(elem.C.shape[0])
        for f in range(4):
            fid = mesh.tet_faces[t][f]
            ns = elem.mu_counts[f]
            if ns == 0:
                continue
            gframe = self.face_frames[fid]
            pts = ws.face_points[fid]
            w = ws.face_weights[fid]
            mv = mo.eval_basis(2, int(self.orders.face_orders[fid]) + 1, gframe.to_y(pts))
            Uv = U.value(pts, t)
            Un = np.einsum("qij,j->qi", Uv, gframe.normal)
            block = np.einsum("q,qs,qi->si", w, mv, Un)
            rhs[elem.face_slices[f]] = block.reshape(-1)
        ro = ws.ref_orders(t)
        zm = ps.zero_mean_volume_modes(ro.tet)
        if zm.shape[0]:
            zv = mo.evaluate(zm[:, 0, :], 3, ro.tet, ws.vol_rule.points)
            Uj = U.jacobian(amap.apply(ws.vol_rule.points), t)
            divU = np.einsum("qijj->qi", Uj)
            block = amap.det * np.einsum("q,sq,qi->si", ws.vol_rule.weights, zv, divU)
            rhs[elem.div_slice] = block.reshape(-1)
        Nb, _ = self._interior_data_cached(ro.tet)
        if Nb.dim:
            M = amap.A.T @ amap.A
            Nv = mo.evaluate(Nb.coeffs, 3, ro.tet + 1, ws.vol_rule.points)
            Nv = np.moveaxis(Nv.reshape(Nb.dim, 3, 3, -1), -1, 1)     # (j,q,3,3)
            nuM = np.einsum("jqpk,kl->jqpl", Nv, M)
            Uv = U.value(amap.apply(ws.vol_rule.points), t)
            Upull = amap.det * np.einsum("qab,cb->qac", Uv, amap.A_inv)
            block = np.einsum("q,jqpl,qpl->j", ws.vol_rule.weights, nuM, Upull)
            rhs[elem.int_slice] = block
        return rhs

    # dof layout sizes for external callers
    def element_dof_count(self, t):
        return self.elements[t].C.shape[0]

    def interpolate_element(self, t, U):
        """Monomial coefficients (9, n) of the element interpolant."""
        elem = self.elements[t]
        x = linalg.lu_apply(elem.lu, self.element_rhs(t, U))
        return np.einsum("b,bcn->cn", x, elem.basis.coeffs)

    def coeffs_from_dofs(self, t, dof_values):
        elem = self.elements[t]
        x = linalg.lu_apply(elem.lu, dof_values)
        return np.einsum("b,bcn->cn", x, elem.basis.coeffs)

    def dofs_of_field(self, t, U):
        """Dof values of a smooth field (the interpolation functionals)."""
        return self.element_rhs(t, U)


def interp_p2(mesh, orders, U, space=None, ws=None):
    """Conforming stress interpolant with the divergence-compatibility
    property: elementwise, div of the result is the L2 projection of div U.
    """
    space = StressSpace(mesh, orders, ws) if space is None else space
    per_elem = [space.interpolate_element(t, U) for t in range(mesh.n_tets)]
    degs = [int(orders.tet_orders[t]) + 1 for t in range(mesh.n_tets)]
    return elementwise_to_global(mesh, orders, "piola", degs, per_elem, space="stress_full")
