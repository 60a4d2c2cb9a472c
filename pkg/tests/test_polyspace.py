import numpy as np
import pytest

from afw3d import linalg, monomials as mo, polyspace as ps, reftet
from afw3d.mesh import NonMonotoneOrder


def test_scalar_dims():
    for r in range(7):
        assert ps.basis_full("lambda3", r).dim == (r + 1) * (r + 2) * (r + 3) // 6


def test_trimmed_dims():
    assert ps.basis_full("lambda1_minus", 1).dim == 6
    assert ps.basis_full("lambda2_minus", 2).dim == 15
    for r in range(5):
        assert ps.basis_full("lambda2_minus", r).dim == ps.dim_lambda2_minus(r)
        assert ps.basis_full("lambda1_minus", r).dim == ps.dim_lambda1_minus(r)


def test_trimmed_independence_by_rank():
    # derived oracle: numerical rank of the spanning coefficients
    b = ps.basis_full("lambda1_minus", 1)
    assert np.linalg.matrix_rank(b.flat()) == 6
    b = ps.basis_full("lambda2_minus", 2)
    assert np.linalg.matrix_rank(b.flat()) == 15


def test_ring_dims():
    assert ps.basis_ring("lambda0", 1).dim == 0
    for r, want in [(1, 0), (2, 6), (3, 20)]:
        assert ps.basis_ring("lambda2", r).dim == want
    for r, want in [(2, 3), (3, 12)]:
        assert ps.basis_ring("lambda2_minus", r).dim == want


def test_ring_zero_normal_traces(rng):
    b = ps.basis_ring("lambda2_minus", 3)
    for f in range(4):
        tr = ps.trace(b.coeffs, 3, f, "normal")
        assert np.abs(tr).max() < 1e-12


def test_ring_lambda1_zero_tangential():
    b = ps.basis_ring("lambda1_minus", 3)
    for f in range(4):
        tr = ps.trace(b.coeffs, 3, f, "tangential-face")
        assert np.abs(tr).max() < 1e-12
    for e in range(6):
        tr = ps.trace(b.coeffs, 3, e, "tangential-edge")
        assert np.abs(tr).max() < 1e-12


def test_curl_image_dims():
    for r in range(1, 6):
        assert ps.curl_image_basis(r).dim == (2 * r + 5) * r * (r - 1) // 2
    assert ps.curl_image_basis(1).dim == 0
    assert ps.curl_image_basis(2).dim == 9
    assert ps.curl_image_basis(3).dim == 33


def test_complement_g_properties():
    assert ps.complement_g_basis(1).dim == 0
    g = ps.complement_g_basis(2)
    assert g.dim == 9
    vec = ps.basis_full("lambda3_vec", 2)
    grads = ps.differentiate(vec.coeffs, 2, "grad")
    G = mo.gram_simplex(3, 1)
    ip = np.einsum("pcn,nm,qcm->pq", g.coeffs, G, grads)
    assert np.abs(ip).max() < 1e-12
    stack = np.concatenate([g.flat(), grads.reshape(grads.shape[0], -1)])
    assert linalg.row_rank(stack) == 9 * mo.count(3, 1)


def test_variable_uniform_equals_full():
    for tag in ["lambda2", "lambda2_minus", "lambda1_minus"]:
        for r in [0, 1, 2, 3]:
            b = ps.basis_variable(tag, ps.RefOrders.uniform(r))
            assert b.dim == ps.basis_full(tag, r).dim


def test_variable_lambda2_dim_via_constraint_rank():
    # derived oracle: dimension equals 30 minus the constraint rank
    ro = ps.RefOrders(2, (1, 1, 1, 1), (1,) * 6)
    full = ps.basis_full("lambda2", 2)
    rows = []
    for f in range(4):
        tr = ps.trace(full.coeffs, 2, f, "normal")
        rows.append(tr[:, mo.count(2, 1):])
    R = np.hstack(rows).T
    rank = np.linalg.matrix_rank(R)
    assert ps.basis_variable("lambda2", ro).dim == 30 - rank


def test_variable_lambda1_zero_edge_order():
    ro = ps.RefOrders(1, (0, 0, 0, 0), (0,) * 6)
    b = ps.basis_variable("lambda1_minus", ro)
    for e in range(6):
        tr = ps.trace(b.coeffs, b.deg, e, "tangential-edge")
        if b.dim:
            assert np.abs(tr).max() < 1e-12


def test_variable_trace_degrees():
    ro = ps.RefOrders(3, (1, 2, 1, 3), (1,) * 6)
    b = ps.basis_variable("lambda2", ro)
    for f in range(4):
        tr = ps.trace(b.coeffs, b.deg, f, "normal")
        cut = mo.count(2, ro.faces[f])
        if cut < tr.shape[-1]:
            assert np.abs(tr[:, cut:]).max() < 1e-11


def test_variable_lambda1_face_family(rng):
    # tangential traces stay in the face family of the face order
    ro = ps.RefOrders(3, (2, 3, 1, 2), (1, 1, 1, 1, 1, 1))
    b = ps.basis_variable("lambda1_minus", ro)
    for f in range(4):
        d = ro.faces[f]
        tr = ps.trace(b.coeffs, b.deg, f, "tangential-face")
        fam = ps._face_trimmed_tangent_basis(f, d)
        G = ps.ref_face_gram(f, b.deg)
        famE = np.zeros((fam.shape[0], 2, mo.count(2, b.deg)))
        if fam.shape[0]:
            famE[:, :, : fam.shape[-1]] = fam
        on = ps._orthonormalize(famE, G)
        proj = np.einsum("pcn,nm,qcm->pq", tr, G, on) if on.shape[0] else np.zeros((b.dim, 0))
        res = tr - np.einsum("pk,kcn->pcn", proj, on)
        nrm = np.sqrt(np.abs(np.einsum("pcn,nm,pcm->p", res, G, res)))
        assert nrm.max() < 1e-10


def test_nonmonotone_rejected():
    with pytest.raises(NonMonotoneOrder):
        ps.RefOrders(1, (2, 1, 1, 1), (1,) * 6)
    with pytest.raises(NonMonotoneOrder):
        ps.RefOrders(2, (1, 1, 1, 1), (2, 1, 1, 1, 1, 1))


def test_differentiate_identities(rng):
    # div(x, y, z) = 3
    xyz = np.zeros((3, mo.count(3, 1)))
    idx = mo.index_of(3, 1)
    for j, e in enumerate([(1, 0, 0), (0, 1, 0), (0, 0, 1)]):
        xyz[j, idx[e]] = 1.0
    d = ps.differentiate(xyz, 1, "div")
    assert d.shape == (1, 1) and abs(d[0, 0] - 3.0) < 1e-15
    # curl grad p = 0 for random cubic p
    p = rng.standard_normal((1, mo.count(3, 3)))
    g = ps.differentiate(p, 3, "grad")
    cg = ps.differentiate(g, 2, "curl")
    assert np.abs(cg).max() < 1e-14
    # div curl W = 0 row-wise
    W = rng.standard_normal((9, mo.count(3, 3)))
    cw = ps.differentiate(W, 3, "curl")
    dc = ps.differentiate(cw, 2, "div")
    assert np.abs(dc).max() < 1e-13


def test_trace_constant_normal():
    c = np.array([[1.0], [2.0], [3.0]])  # constant vector field
    for f in range(4):
        tr = ps.trace(c, 0, f, "normal")
        frame = ps.REF_FACE_FRAMES[f]
        assert abs(tr[0] - np.dot([1, 2, 3], frame.normal)) < 1e-15


def test_trimmed_flux_trace_degree():
    # the position-times-scalar part has face-trace degree <= r-1
    r = 3
    b = ps.basis_full("lambda2_minus", r)
    for f in range(4):
        tr = ps.trace(b.coeffs, r, f, "normal")
        assert np.abs(tr[:, mo.count(2, r - 1):]).max() < 1e-13


def test_exact_sequence_div_onto():
    for r in [0, 1, 2]:
        rt = ps.basis_full("lambda2_minus", r + 1)
        divs = ps.differentiate(rt.coeffs, r + 1, "div")
        assert linalg.row_rank(divs.reshape(rt.dim, -1)) == mo.count(3, r)


def test_exact_sequence_curl_inclusions():
    for r in [0, 1]:
        ned = ps.basis_full("lambda1_minus", r + 2)
        curls = ps.differentiate(ned.coeffs, r + 2, "curl")
        # into the full vector space of degree r+1
        tgt = ps.basis_full("lambda2", r + 1).flat()
        stack = np.vstack([tgt, curls.reshape(ned.dim, -1)])
        assert linalg.row_rank(stack) == linalg.row_rank(tgt)
        # into the trimmed space of the same order r+2
        tgt2 = ps.basis_full("lambda2_minus", r + 2).flat()
        curls_emb = mo.embed(curls, 3, r + 1, r + 2)
        stack2 = np.vstack([tgt2, curls_emb.reshape(ned.dim, -1)])
        assert linalg.row_rank(stack2) == linalg.row_rank(tgt2)


def test_basis_cache_is_immutable():
    b = ps.basis_full("lambda2_minus", 2)
    with pytest.raises(ValueError):
        b.coeffs[0, 0, 0] = 1.0
