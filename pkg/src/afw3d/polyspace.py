"""Polynomial spaces on the reference tetrahedron.

Builds explicit bases (coefficient rows over the monomial frame) for the
full, trimmed, ring (zero-trace) and variable-order trace-constrained
families of scalar/vector/matrix polynomial spaces, plus the curl-image
family and its complement used by the auxiliary interpolation moments.

Space tags follow the exterior-calculus naming:

==================  =========================================dim==========
lambda3             scalar polynomials P_r(T)
lambda3_vec         vector polynomials P_r(T;V)
lambda2             vector polynomials P_r(T;V) seen as flux fields
lambda2_minus       P_{r-1}(T;V) + x P_{r-1}(T)          (RT family)
lambda1_minus       P_{r-1}(T;V) + x ^ P_{r-1}(T;V)      (Nedelec family)
==================  ==================================================

Variable-order constraints restrict normal face traces (lambda2 family),
tangential face/edge traces (lambda1 family) subsimplex by subsimplex;
they are imposed as moments against L2-orthogonal complements of the
target trace spaces, which turns every space definition into one null
space computation.  All rank decisions happen at linalg.TOL.rank.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import linalg, monomials as mo, reftet
from .mesh import NonMonotoneOrder

VECTOR_TAGS = ("lambda3_vec", "lambda2", "lambda2_minus", "lambda1_minus")


@dataclass(frozen=True)
class RefOrders:
    """Polynomial orders on the subsimplexes of the reference tet."""

    tet: int
    faces: tuple
    edges: tuple

    def __post_init__(self):
        if len(self.faces) != 4 or len(self.edges) != 6:
            raise ValueError("need 4 face orders and 6 edge orders")
        for i, fv in enumerate(reftet.FACE_VERTS):
            if self.faces[i] > self.tet:
                raise NonMonotoneOrder(f"face {i} order exceeds tet order")
        for i in range(4):
            for j in reftet.FACE_EDGES[i]:
                if self.edges[j] > self.faces[i]:
                    raise NonMonotoneOrder(
                        f"edge {j} order exceeds order of face {i}"
                    )

    @staticmethod
    def uniform(r):
        return RefOrders(r, (r,) * 4, (r,) * 6)

    def shifted(self, k):
        return RefOrders(
            self.tet + k,
            tuple(f + k for f in self.faces),
            tuple(e + k for e in self.edges),
        )

    @property
    def is_uniform(self):
        return all(f == self.tet for f in self.faces) and all(
            e == self.tet for e in self.edges
        )


@dataclass(frozen=True)
class FaceFrame:
    """Orthonormal in-plane frame and 2D coordinates of a triangle."""

    origin: np.ndarray
    t1: np.ndarray
    t2: np.ndarray
    normal: np.ndarray
    yverts: np.ndarray   # (3, 2): vertices in frame coordinates
    area: float

    def to_y(self, x):
        d = np.atleast_2d(x) - self.origin
        return np.column_stack([d @ self.t1, d @ self.t2])

    def to_x(self, y):
        y = np.atleast_2d(y)
        return self.origin + np.outer(y[:, 0], self.t1) + np.outer(y[:, 1], self.t2)


def make_face_frame(verts):
    """Right-handed frame on the plane of a vertex triple."""
    verts = np.asarray(verts, dtype=float)
    v0, v1, v2 = verts
    t1 = v1 - v0
    t1 = t1 / np.linalg.norm(t1)
    w = v2 - v0
    t2 = w - (w @ t1) * t1
    t2 = t2 / np.linalg.norm(t2)
    n = np.cross(t1, t2)
    d = verts - v0
    yv = np.column_stack([d @ t1, d @ t2])
    area = 0.5 * abs(np.linalg.det(yv[1:] - yv[0]))
    return FaceFrame(origin=v0.copy(), t1=t1, t2=t2, normal=n, yverts=yv, area=area)


REF_FACE_FRAMES = tuple(
    make_face_frame(reftet.VERTICES[list(fv)]) for fv in reftet.FACE_VERTS
)


@dataclass(frozen=True)
class EdgeFrame:
    origin: np.ndarray
    tangent: np.ndarray
    length: float


def make_edge_frame(verts):
    verts = np.asarray(verts, dtype=float)
    d = verts[1] - verts[0]
    length = float(np.linalg.norm(d))
    return EdgeFrame(origin=verts[0].copy(), tangent=d / length, length=length)


REF_EDGE_FRAMES = tuple(
    make_edge_frame(reftet.VERTICES[list(ev)]) for ev in reftet.EDGE_VERTS
)


@dataclass(frozen=True)
class PolyBasis:
    """Rows of polynomial coefficients spanning one space."""

    tag: str
    ncomp: int
    deg: int
    coeffs: np.ndarray   # (nb, ncomp, nmono)
    orders: object = None

    @property
    def dim(self):
        return self.coeffs.shape[0]

    def flat(self):
        return self.coeffs.reshape(self.dim, -1)


def _mk(tag, ncomp, deg, coeffs, orders=None):
    coeffs = np.ascontiguousarray(coeffs, dtype=float)
    coeffs.setflags(write=False)
    return PolyBasis(tag=tag, ncomp=ncomp, deg=deg, coeffs=coeffs, orders=orders)


# ---------------------------------------------------------------------------
# traces

@lru_cache(maxsize=None)
def _ref_face_subst(face, deg):
    fr = REF_FACE_FRAMES[face]
    L = np.column_stack([fr.t1, fr.t2])
    return mo.substitution_matrix(3, deg, L, fr.origin)


def _face_subst(frame, deg):
    L = np.column_stack([frame.t1, frame.t2])
    return mo.substitution_matrix(3, deg, L, frame.origin)


def trace_normal(coeffs, deg, frame, subst=None):
    """Normal component on a face: (..., 3, n3) -> (..., n2)."""
    S = _face_subst(frame, deg) if subst is None else subst
    c = np.asarray(coeffs, dtype=float)
    return np.einsum("...jn,nm,j->...m", c, S, frame.normal)


def trace_tangential(coeffs, deg, frame, subst=None):
    """Tangential components on a face: (..., 3, n3) -> (..., 2, n2)."""
    S = _face_subst(frame, deg) if subst is None else subst
    c = np.asarray(coeffs, dtype=float)
    T = np.column_stack([frame.t1, frame.t2])
    return np.einsum("...jn,nm,ja->...am", c, S, T)


def trace_edge_tangential(coeffs, deg, frame):
    """Tangential component along an edge: (..., 3, n3) -> (..., n1)."""
    S = mo.substitution_matrix(3, deg, frame.tangent.reshape(3, 1), frame.origin)
    c = np.asarray(coeffs, dtype=float)
    return np.einsum("...jn,nm,j->...m", c, S, frame.tangent)


def trace(basis_or_coeffs, deg, sub, kind):
    """Trace polynomial of a vector/matrix field on a reference subsimplex.

    kind is one of 'normal', 'tangential-face', 'tangential-edge'; sub is
    the local face index (normal/tangential-face) or edge index.
    """
    c = basis_or_coeffs.coeffs if isinstance(basis_or_coeffs, PolyBasis) else basis_or_coeffs
    c = np.asarray(c, dtype=float)
    if c.shape[-2] == 9:
        c = c.reshape(c.shape[:-2] + (3, 3, c.shape[-1]))
    if kind == "normal":
        return trace_normal(c, deg, REF_FACE_FRAMES[sub], _ref_face_subst(sub, deg))
    if kind == "tangential-face":
        return trace_tangential(c, deg, REF_FACE_FRAMES[sub], _ref_face_subst(sub, deg))
    if kind == "tangential-edge":
        return trace_edge_tangential(c, deg, REF_EDGE_FRAMES[sub])
    raise ValueError(f"unknown trace kind {kind!r}")


# ---------------------------------------------------------------------------
# grams and orthonormal mode sets

def face_gram(frame, deg):
    """Gram matrix of 2D monomials over the frame's triangle."""
    L = (frame.yverts[1:] - frame.yverts[0]).T
    S = mo.substitution_matrix(2, deg, L, frame.yverts[0])
    G_unit = mo.gram_simplex(2, deg)
    jac = abs(np.linalg.det(L))
    return jac * (S @ G_unit @ S.T)


@lru_cache(maxsize=None)
def ref_face_gram(face, deg):
    return face_gram(REF_FACE_FRAMES[face], deg)


def edge_gram(length, deg):
    a = np.arange(deg + 1)
    return length ** (a[:, None] + a[None, :] + 1) / (a[:, None] + a[None, :] + 1)


def _inner(X, Y, G):
    return np.einsum("pcn,nm,qcm->pq", X, G, Y)


def _chol(G):
    try:
        return np.linalg.cholesky(G)
    except np.linalg.LinAlgError:
        w, V = np.linalg.eigh(0.5 * (G + G.T))
        w = np.maximum(w, 1e-15 * w.max())
        return V * np.sqrt(w)


def _orthonormalize(X, G, rtol=None):
    """L2-orthonormal combinations of the rows of X (rank-revealing)."""
    X = np.asarray(X, dtype=float)
    if X.shape[0] == 0:
        return X.copy()
    if np.abs(X).max() <= linalg.RANK_ABS_FLOOR:
        return np.zeros((0,) + X.shape[1:])
    rtol = linalg.TOL.rank if rtol is None else rtol
    L = _chol(G)
    W = np.einsum("pcn,nm->pcm", X, L).reshape(X.shape[0], -1)
    U, s, _ = np.linalg.svd(W, full_matrices=False)
    rank = int(np.sum(s > rtol * s[0])) if s.size and s[0] > 0 else 0
    combos = U[:, :rank] / s[:rank]
    return np.einsum("pk,pcn->kcn", combos, X)


def _l2_complement(big, sub, G, expected=None):
    """Orthonormal basis of the L2-orthogonal complement of sub in big."""
    big = np.asarray(big, dtype=float)
    if sub is None or np.size(sub) == 0:
        return _orthonormalize(big, G)
    sub_on = _orthonormalize(sub, G)

    def project_off(X):
        return X - np.einsum("pk,kcn->pcn", _inner(X, sub_on, G), sub_on)

    comp = _orthonormalize(project_off(big), G)
    # second projection pass pushes the in-subspace contamination from
    # eps*cond down to machine level, so downstream rank cuts stay clean
    comp = _orthonormalize(project_off(comp), G)
    if expected is not None and comp.shape[0] != expected:
        raise AssertionError(
            f"complement dimension {comp.shape[0]} != expected {expected}"
        )
    return comp


@lru_cache(maxsize=None)
def scalar_face_modes(face, deg):
    """L2(F)-orthonormal scalar polynomial modes on a reference face."""
    if deg < 0:
        return np.zeros((0, 1, mo.count(2, 0)))
    eye = np.eye(mo.count(2, deg))[:, None, :]
    return _orthonormalize(eye, ref_face_gram(face, deg))


@lru_cache(maxsize=None)
def volume_modes(deg):
    """L2(T)-orthonormal scalar modes on the reference tet."""
    eye = np.eye(mo.count(3, deg))[:, None, :]
    return _orthonormalize(eye, mo.gram_simplex(3, deg))


@lru_cache(maxsize=None)
def zero_mean_volume_modes(deg):
    """Orthonormal basis of P_deg(T) / R (zero-mean scalar modes)."""
    eye = np.eye(mo.count(3, deg))[:, None, :]
    const = np.zeros((1, 1, mo.count(3, deg)))
    const[0, 0, 0] = 1.0
    return _l2_complement(eye, const, mo.gram_simplex(3, deg))


# ---------------------------------------------------------------------------
# full and trimmed spaces

def _vector_monomial_basis(deg, target_deg=None):
    """e_i * monomial for all i, monomials of degree <= deg."""
    target_deg = deg if target_deg is None else target_deg
    n = mo.count(3, deg)
    N = mo.count(3, target_deg)
    out = np.zeros((3 * n, 3, N))
    for i in range(3):
        out[i * n : (i + 1) * n, i, :n] = np.eye(n)
    return out


def _position_times_scalars(deg_s, target_deg):
    """x * m for scalar monomials m of degree <= deg_s; frame deg_s + 1."""
    n = mo.count(3, deg_s)
    out = np.zeros((n, 3, mo.count(3, target_deg)))
    x_coeffs = np.zeros((3, mo.count(3, 1)))
    idx1 = mo.index_of(3, 1)
    for j in range(3):
        x_coeffs[j, idx1[tuple(1 if k == j else 0 for k in range(3))]] = 1.0
    eye = np.eye(n)
    for j in range(3):
        prod = mo.mul(eye, deg_s, x_coeffs[j], 1, 3)
        out[:, j, : prod.shape[-1]] = prod
    return out


def _cross_position_vectors(deg_s, target_deg):
    """x ^ (e_i m) for scalar monomials m of degree <= deg_s."""
    n = mo.count(3, deg_s)
    out = np.zeros((3 * n, 3, mo.count(3, target_deg)))
    x_coeffs = np.zeros((3, mo.count(3, 1)))
    idx1 = mo.index_of(3, 1)
    for j in range(3):
        x_coeffs[j, idx1[tuple(1 if k == j else 0 for k in range(3))]] = 1.0
    eye = np.eye(n)
    eps = np.zeros((3, 3, 3))
    for i, j, k, s in [(0, 1, 2, 1), (1, 2, 0, 1), (2, 0, 1, 1),
                       (0, 2, 1, -1), (1, 0, 2, -1), (2, 1, 0, -1)]:
        eps[i, j, k] = s
    for i in range(3):  # field e_i * m
        for c in range(3):  # output component (x ^ e_i m)_c = eps_cji x_j m
            acc = np.zeros((n, mo.count(3, deg_s + 1)))
            for j in range(3):
                if eps[c, j, i] != 0.0:
                    acc += eps[c, j, i] * mo.mul(eye, deg_s, x_coeffs[j], 1, 3)
            out[i * n : (i + 1) * n, c, : acc.shape[-1]] = acc
    return out


def _independent_subset(span, expected=None):
    rows = linalg.independent_rows(span.reshape(span.shape[0], -1))
    picked = span[rows]
    if expected is not None and picked.shape[0] != expected:
        raise AssertionError(
            f"space dimension {picked.shape[0]} != analytic count {expected}"
        )
    return picked


def dim_full(r):
    return mo.count(3, r)


def dim_lambda2_minus(r):
    return r * (r + 1) * (r + 3) // 2 if r >= 0 else 0


def dim_lambda1_minus(r):
    return r * (r + 2) * (r + 3) // 2 if r >= 0 else 0


@lru_cache(maxsize=None)
def basis_full(tag, r):
    """Spanning, independent basis of an unconstrained space at order r."""
    if r < 0:
        raise ValueError("order must be nonnegative")
    if tag == "lambda3":
        return _mk(tag, 1, r, np.eye(mo.count(3, r))[:, None, :], r)
    if tag in ("lambda3_vec", "lambda2"):
        return _mk(tag, 3, r, _vector_monomial_basis(r), r)
    if tag == "lambda2_minus":
        if r == 0:
            return _mk(tag, 3, 0, np.zeros((0, 3, 1)), r)
        span = np.concatenate(
            [_vector_monomial_basis(r - 1, r), _position_times_scalars(r - 1, r)]
        )
        picked = _independent_subset(span, dim_lambda2_minus(r))
        return _mk(tag, 3, r, picked, r)
    if tag == "lambda1_minus":
        if r == 0:
            return _mk(tag, 3, 0, np.zeros((0, 3, 1)), r)
        span = np.concatenate(
            [_vector_monomial_basis(r - 1, r), _cross_position_vectors(r - 1, r)]
        )
        picked = _independent_subset(span, dim_lambda1_minus(r))
        return _mk(tag, 3, r, picked, r)
    raise ValueError(f"unknown space tag {tag!r}")


def to_matrix_rows(basis):
    """Matrix-valued space whose rows live in the given vector space."""
    nb, _, n = basis.coeffs.shape
    out = np.zeros((3 * nb, 9, n))
    for i in range(3):
        for j in range(3):
            out[i * nb : (i + 1) * nb, 3 * i + j, :] = basis.coeffs[:, j, :]
    return _mk(basis.tag + "_mat", 9, basis.deg, out, basis.orders)


# ---------------------------------------------------------------------------
# differentiation

def differentiate(coeffs, deg, op):
    """Exact grad/curl/div on coefficient arrays (..., ncomp, n).

    grad: scalar -> vector, vector -> matrix (rows are component
    gradients); curl and div act row-wise on matrix-valued fields.
    """
    if isinstance(coeffs, PolyBasis):
        coeffs = coeffs.coeffs
    c = np.asarray(coeffs, dtype=float)
    ncomp = c.shape[-2]
    D = [mo.diff_matrix(3, deg, ax) for ax in range(3)]
    if op == "grad":
        if ncomp == 1:
            return np.stack([c[..., 0, :] @ D[ax] for ax in range(3)], axis=-2)
        if ncomp == 3:
            rows = [c[..., i, :] @ D[j] for i in range(3) for j in range(3)]
            return np.stack(rows, axis=-2)
    if op == "div":
        if ncomp == 3:
            return (c[..., 0, :] @ D[0] + c[..., 1, :] @ D[1] + c[..., 2, :] @ D[2])[
                ..., None, :
            ]
        if ncomp == 9:
            m = c.reshape(c.shape[:-2] + (3, 3, c.shape[-1]))
            rows = [
                m[..., i, 0, :] @ D[0] + m[..., i, 1, :] @ D[1] + m[..., i, 2, :] @ D[2]
                for i in range(3)
            ]
            return np.stack(rows, axis=-2)
    if op == "curl":
        if ncomp == 3:
            return np.stack(
                [
                    c[..., 2, :] @ D[1] - c[..., 1, :] @ D[2],
                    c[..., 0, :] @ D[2] - c[..., 2, :] @ D[0],
                    c[..., 1, :] @ D[0] - c[..., 0, :] @ D[1],
                ],
                axis=-2,
            )
        if ncomp == 9:
            m = c.reshape(c.shape[:-2] + (3, 3, c.shape[-1]))
            rows = []
            for i in range(3):
                rows += [
                    m[..., i, 2, :] @ D[1] - m[..., i, 1, :] @ D[2],
                    m[..., i, 0, :] @ D[2] - m[..., i, 2, :] @ D[0],
                    m[..., i, 1, :] @ D[0] - m[..., i, 0, :] @ D[1],
                ]
            return np.stack(rows, axis=-2)
    raise ValueError(f"operator {op!r} incompatible with {ncomp} components")


# ---------------------------------------------------------------------------
# ring (zero-trace) spaces

def _nullspace_basis(basis, rows, tag, orders=None):
    combos = linalg.nullspace(rows)
    coeffs = np.einsum("kp,pcn->kcn", combos, basis.coeffs)
    return _mk(tag, basis.ncomp, basis.deg, coeffs, orders)


@lru_cache(maxsize=None)
def basis_ring(tag, r):
    """Subspace with vanishing traces on the whole boundary."""
    if tag == "lambda0":
        full = basis_full("lambda3", r)
        rows = []
        for f in range(4):
            S = _ref_face_subst(f, r)
            tr = full.coeffs[:, 0, :] @ S   # (nb, n2)
            rows.append(tr.T)
        return _nullspace_basis(full, np.vstack(rows), "lambda0_ring", r)
    if tag in ("lambda2", "lambda2_minus"):
        full = basis_full(tag, r)
        if full.dim == 0:
            return _mk(tag + "_ring", 3, full.deg, full.coeffs, r)
        rows = []
        for f in range(4):
            tr = trace(full.coeffs, r, f, "normal")   # (nb, n2)
            rows.append(tr.T)
        return _nullspace_basis(full, np.vstack(rows), tag + "_ring", r)
    if tag == "lambda1_minus":
        full = basis_full(tag, r)
        if full.dim == 0:
            return _mk(tag + "_ring", 3, full.deg, full.coeffs, r)
        rows = []
        for f in range(4):
            tr = trace(full.coeffs, r, f, "tangential-face")  # (nb, 2, n2)
            rows.append(tr.reshape(full.dim, -1).T)
        return _nullspace_basis(full, np.vstack(rows), tag + "_ring", r)
    raise ValueError(f"unknown ring tag {tag!r}")


# ---------------------------------------------------------------------------
# variable-order trace-constrained spaces

@lru_cache(maxsize=None)
def _scalar_complement_on_face(face, deg_big, deg_small):
    """Moments matrix rows: kill the part of a face-scalar above deg_small."""
    if deg_small >= deg_big:
        return np.zeros((0, mo.count(2, deg_big)))
    G = ref_face_gram(face, deg_big)
    big = np.eye(mo.count(2, deg_big))[:, None, :]
    if deg_small < 0:
        comp = _orthonormalize(big, G)
    else:
        sub = np.zeros((mo.count(2, deg_small), 1, mo.count(2, deg_big)))
        sub[:, 0, : mo.count(2, deg_small)] = np.eye(mo.count(2, deg_small))
        comp = _l2_complement(big, sub, G)
    # rows act on trace coefficient vectors: moments against complement
    return np.einsum("kcn,nm->km", comp, G)


@lru_cache(maxsize=None)
def _face_trimmed_tangent_basis(face, d):
    """2D trimmed (rotational) family on a reference face at order d.

    Spanned by P_{d-1}(F; R^2) and rot(y) P_{d-1}(F) with rot(y) = (-y2, y1);
    this is the tangential-trace space of the 3D trimmed Lambda^1 family.
    """
    if d <= 0:
        return np.zeros((0, 2, mo.count(2, max(d, 0))))
    n = mo.count(2, d - 1)
    N = mo.count(2, d)
    vec = np.zeros((2 * n, 2, N))
    for i in range(2):
        vec[i * n : (i + 1) * n, i, :n] = np.eye(n)
    y_coeffs = np.zeros((2, mo.count(2, 1)))
    idx1 = mo.index_of(2, 1)
    y_coeffs[0, idx1[(1, 0)]] = 1.0
    y_coeffs[1, idx1[(0, 1)]] = 1.0
    eye = np.eye(n)
    rot = np.zeros((n, 2, N))
    rot[:, 0, :] = -mo.mul(eye, d - 1, y_coeffs[1], 1, 2)
    rot[:, 1, :] = mo.mul(eye, d - 1, y_coeffs[0], 1, 2)
    span = np.concatenate([vec, rot])
    expected = d * (d + 2)
    return _independent_subset(span, expected)


@lru_cache(maxsize=None)
def _tangent_complement_on_face(face, deg_big, d_small):
    """Moment rows killing the part of a tangential trace inside the
    order-deg_big trimmed face family but outside the order-d_small one.

    Tangential traces of the 3D trimmed family live in the face family of
    the same order, so the complement is taken within that family; this
    keeps every constraint row genuinely active.
    """
    if d_small >= deg_big:
        return np.zeros((0, 2, mo.count(2, deg_big)))
    G = ref_face_gram(face, deg_big)
    big = _face_trimmed_tangent_basis(face, deg_big)
    sub_small = _face_trimmed_tangent_basis(face, d_small)
    if sub_small.shape[0]:
        sub = np.zeros((sub_small.shape[0], 2, mo.count(2, deg_big)))
        sub[:, :, : sub_small.shape[-1]] = sub_small
    else:
        sub = None
    comp = _l2_complement(big, sub, G, expected=deg_big * (deg_big + 2) - max(d_small, 0) * (d_small + 2))
    return np.einsum("kcn,nm->kcm", comp, G)


@lru_cache(maxsize=None)
def _edge_complement(edge, deg_big, deg_small):
    """Moment rows killing the edge-trace part above deg_small."""
    if deg_small >= deg_big:
        return np.zeros((0, deg_big + 1))
    L = REF_EDGE_FRAMES[edge].length
    G = edge_gram(L, deg_big)
    big = np.eye(deg_big + 1)[:, None, :]
    if deg_small < 0:
        comp = _orthonormalize(big, G)
    else:
        sub = np.zeros((deg_small + 1, 1, deg_big + 1))
        sub[:, 0, : deg_small + 1] = np.eye(deg_small + 1)
        comp = _l2_complement(big, sub, G)
    return np.einsum("kcn,nm->km", comp, G)


def _degree_band(coeffs2d, lo, hi):
    """Coefficients of a 2D/1D trace with total degree in (lo, hi]."""
    return coeffs2d[..., mo.count(2, lo) : mo.count(2, hi)]


def _radial_rows(tr, deg):
    """Coefficients of y . h for the homogeneous degree-deg part h of a
    2-component face trace; vanishing is equivalent to h in rot(y) H_{deg-1}.
    """
    n_lo = mo.count(2, deg - 1)
    n_hi = mo.count(2, deg)
    h = np.zeros(tr.shape[:-2] + (2, n_hi))
    h[..., :, n_lo:n_hi] = tr[..., :, n_lo:n_hi]
    y = np.zeros((2, mo.count(2, 1)))
    idx1 = mo.index_of(2, 1)
    y[0, idx1[(1, 0)]] = 1.0
    y[1, idx1[(0, 1)]] = 1.0
    prod = mo.mul(h[..., 0, :], deg, y[0], 1, 2) + mo.mul(h[..., 1, :], deg, y[1], 1, 2)
    # y . h is homogeneous of degree deg + 1
    return prod[..., mo.count(2, deg) :]


@lru_cache(maxsize=None)
def basis_variable(tag, orders):
    """Trace-constrained subspace of basis_full(tag, orders.tet).

    All constraints reduce to exact linear conditions on trace
    coefficients (degree cuts, plus the radial condition that pins the
    tangential-trace family), so the null-space computation never sees
    quadrature or orthogonalization noise.
    """
    rt = orders.tet
    full = basis_full(tag, rt)
    if full.dim == 0:
        return _mk(tag + "_var", full.ncomp, full.deg, full.coeffs, orders)
    rows = []
    if tag == "lambda2":
        for f in range(4):
            if orders.faces[f] >= rt:
                continue
            tr = trace(full.coeffs, rt, f, "normal")
            rows.append(_degree_band(tr[:, None, :], orders.faces[f], rt)[:, 0, :])
    elif tag == "lambda2_minus":
        # normal traces have exact degree <= rt - 1
        for f in range(4):
            if orders.faces[f] - 1 >= rt - 1:
                continue
            tr = trace(full.coeffs, rt, f, "normal")
            rows.append(
                _degree_band(tr[:, None, :], orders.faces[f] - 1, rt - 1)[:, 0, :]
            )
    elif tag == "lambda1_minus":
        for f in range(4):
            rf = orders.faces[f]
            if rf >= rt:
                continue
            tr = trace(full.coeffs, rt, f, "tangential-face")  # (nb, 2, n2)
            # order-0 face family is {0}: kill everything incl. constants
            band = _degree_band(tr, rf if rf >= 1 else -1, rt)
            rows.append(band.reshape(full.dim, -1))
            if rf >= 1:
                rows.append(_radial_rows(tr, rf))
        # edge traces have exact degree <= rt - 1
        for e in range(6):
            if orders.edges[e] - 1 >= rt - 1:
                continue
            tr = trace(full.coeffs, rt, e, "tangential-edge")
            rows.append(tr[:, max(orders.edges[e], 0) : rt])
    else:
        raise ValueError(f"unknown variable-order tag {tag!r}")
    rows = [r for r in rows if r.shape[-1]]
    if not rows:
        return _mk(tag + "_var", full.ncomp, full.deg, full.coeffs.copy(), orders)
    rows = np.hstack(rows).T   # (nconstraints, nb)
    return _nullspace_basis(full, rows, tag + "_var", orders)


@lru_cache(maxsize=None)
def basis_lambda1_minus_edge_zero(orders):
    """Variable-order trimmed Lambda^1 members with zero edge traces."""
    base = basis_variable("lambda1_minus", orders)
    if base.dim == 0:
        return base
    rows = []
    for e in range(6):
        tr = trace(base.coeffs, base.deg, e, "tangential-edge")
        rows.append(tr.T)
    return _nullspace_basis(base, np.vstack(rows), "lambda1_minus_edge0", orders)


# ---------------------------------------------------------------------------
# curl image and its gradient complement

def curl_dim(r):
    """dim of the curl image of the order-(r+1) zero-trace matrix family."""
    return (2 * r + 5) * r * (r - 1) // 2 if r >= 2 else 0


@lru_cache(maxsize=None)
def curl_image_basis(r):
    """Matrix-valued basis of curl(ring Lambda^1 family at order r+1)."""
    ring = basis_ring("lambda1_minus", r + 1)
    k = curl_dim(r)
    if ring.dim == 0 or k == 0:
        return _mk("curl_image", 9, max(r, 0), np.zeros((0, 9, mo.count(3, max(r, 0)))), r)
    curls = differentiate(ring.coeffs, r + 1, "curl")   # (nb, 3, n_r)
    vec = _independent_subset(curls, k // 3)
    nb = vec.shape[0]
    out = np.zeros((3 * nb, 9, vec.shape[-1]))
    for i in range(3):
        for j in range(3):
            out[i * nb : (i + 1) * nb, 3 * i + j, :] = vec[:, j, :]
    assert out.shape[0] == k
    return _mk("curl_image", 9, r, out, r)


@lru_cache(maxsize=None)
def complement_g_basis(r):
    """k matrix fields completing row-wise gradients to P_{r-1}(T;M).

    Built L2-orthogonal to every gradient of the order-r vector family, so
    the direct sum with the gradient image is the whole space.
    """
    k = curl_dim(r)
    deg = max(r - 1, 0)
    if k == 0:
        return _mk("grad_complement", 9, deg, np.zeros((0, 9, mo.count(3, deg))), r)
    vec = basis_full("lambda3_vec", r)
    grads = differentiate(vec.coeffs, r, "grad")        # (nb, 9, n_{r-1})
    n = mo.count(3, r - 1)
    full = np.zeros((9 * n, 9, n))
    for c in range(9):
        full[c * n : (c + 1) * n, c, :] = np.eye(n)
    G = mo.gram_simplex(3, r - 1)
    comp = _l2_complement(full, grads, G, expected=k)
    return _mk("grad_complement", 9, r - 1, comp, r)
