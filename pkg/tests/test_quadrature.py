from math import factorial

import numpy as np
import pytest

from afw3d import quadrature
from afw3d.monomials import exponents


def simplex_moment(e):
    """Independent closed form: prod a_i! / (|a| + d)!."""
    num = 1.0
    for a in e:
        num *= factorial(int(a))
    return num / factorial(int(sum(e)) + len(e))


MEASURE = {1: 1.0, 2: 0.5, 3: 1.0 / 6.0}


@pytest.mark.parametrize("dim", [1, 2, 3])
@pytest.mark.parametrize("degree", [0, 1, 2, 3, 5, 8, 12])
def test_monomial_exactness(dim, degree):
    rule = quadrature.rule_for(dim, degree)
    assert abs(rule.weights.sum() - MEASURE[dim]) < 1e-14
    assert (rule.weights > 0).all()
    for e in exponents(dim, degree):
        vals = np.prod(rule.points ** np.asarray(e), axis=1)
        got = rule.weights @ vals
        assert abs(got - simplex_moment(e)) < 1e-13


def test_specific_values():
    r3 = quadrature.rule_for(3, 3)
    v = r3.weights @ np.prod(r3.points, axis=1)
    assert abs(v - 1.0 / 720.0) < 1e-15
    r2 = quadrature.rule_for(2, 2)
    v = r2.weights @ (r2.points[:, 0] ** 2)
    assert abs(v - 1.0 / 12.0) < 1e-15


def test_degree_cap():
    with pytest.raises(quadrature.DegreeTooHigh):
        quadrature.rule_for(3, quadrature.MAX_DEGREE + 1)
