import numpy as np
import pytest

from roughfilter.tensor_group import (
    GroupElement,
    TensorElement,
    dilate,
    geometric_defect,
    group_distance,
    group_exp,
    group_exp_tensor,
    group_inv,
    group_log,
    group_mul,
    homogeneous_norm,
    identity_element,
    scale_tensor,
)


def random_group_element(rng, d):
    # product of exps is geometric by construction
    g = identity_element(d)
    for _ in range(3):
        g = group_mul(g, group_exp(rng.standard_normal(d)))
    return g


def test_identity_and_inverse():
    rng = np.random.default_rng(0)
    for d in (1, 2, 3):
        g = random_group_element(rng, d)
        e = identity_element(d)
        for h in (group_mul(e, g), group_mul(g, e)):
            assert np.allclose(h.level1, g.level1, atol=1e-14)
            assert np.allclose(h.level2, g.level2, atol=1e-14)
        gi = group_mul(g, group_inv(g))
        assert np.max(np.abs(gi.level1)) < 1e-12
        assert np.max(np.abs(gi.level2)) < 1e-12


def test_mul_dimension_mismatch():
    with pytest.raises(ValueError):
        group_mul(identity_element(2), identity_element(3))


def test_associativity():
    rng = np.random.default_rng(1)
    for d in (1, 2, 3):
        for _ in range(50):
            a, b, c = (random_group_element(rng, d) for _ in range(3))
            lhs = group_mul(group_mul(a, b), c)
            rhs = group_mul(a, group_mul(b, c))
            scale = 1.0 + np.max(np.abs(lhs.level2))
            assert np.max(np.abs(lhs.level1 - rhs.level1)) <= 1e-12 * scale
            assert np.max(np.abs(lhs.level2 - rhs.level2)) <= 1e-12 * scale


def test_exp_basis_product_cross_entry():
    a = group_exp(np.array([1.0, 0.0]))
    b = group_exp(np.array([0.0, 1.0]))
    ab = group_mul(a, b)
    assert ab.level2[0, 1] == pytest.approx(1.0, abs=1e-15)
    assert ab.level2[1, 0] == pytest.approx(0.0, abs=1e-15)


def test_exp_of_zero_and_basis():
    e = group_exp(np.zeros(3))
    assert np.all(e.level1 == 0) and np.all(e.level2 == 0)
    g = group_exp(np.array([1.0, 0.0]))
    assert g.level2[0, 0] == pytest.approx(0.5)
    assert np.all(g.level2[1:] == 0) and g.level2[0, 1] == 0


def test_exp_log_round_trip():
    rng = np.random.default_rng(2)
    for d in (1, 2, 3):
        for _ in range(100):
            v = rng.standard_normal(d)
            assert np.max(np.abs(group_log(group_exp(v)).level1 - v)) < 1e-12
            assert np.max(np.abs(group_log(group_exp(v)).level2)) < 1e-12
            g = random_group_element(rng, d)
            back = group_exp_tensor(group_log(g))
            assert np.max(np.abs(back.level1 - g.level1)) < 1e-12
            assert np.max(np.abs(back.level2 - g.level2)) < 1e-12


def test_log_of_identity_is_zero():
    t = group_log(identity_element(2))
    assert t.scalar == 0 and np.all(t.level1 == 0) and np.all(t.level2 == 0)


def test_scale_tensor():
    t = TensorElement(0.0, np.array([1.0, 2.0]), np.eye(2))
    s = scale_tensor(t, -0.5)
    assert np.allclose(s.level1, [-0.5, -1.0]) and np.allclose(s.level2, -0.5 * np.eye(2))


def test_homogeneous_norm_properties():
    rng = np.random.default_rng(3)
    assert homogeneous_norm(identity_element(3)) == 0.0
    for _ in range(50):
        v = rng.standard_normal(3)
        assert homogeneous_norm(group_exp(v)) == pytest.approx(np.linalg.norm(v))
        g = random_group_element(rng, 3)
        n = homogeneous_norm(g)
        assert homogeneous_norm(dilate(g, 2.0)) == pytest.approx(2.0 * n, rel=1e-12)
        assert n > 0 or np.max(np.abs(g.level1)) == 0


def test_norm_detects_pure_area():
    # nonzero antisymmetric level-2 with zero level-1 must have positive norm
    A = np.array([[0.0, 0.3], [-0.3, 0.0]])
    g = GroupElement(np.zeros(2), A)
    assert homogeneous_norm(g) == pytest.approx(np.sqrt(2 * np.linalg.norm(A)))


def test_group_distance_symmetric_in_norm_scale():
    rng = np.random.default_rng(4)
    a = random_group_element(rng, 2)
    b = random_group_element(rng, 2)
    assert group_distance(a, a) < 1e-12
    assert group_distance(a, b) > 0


def test_geometric_defect_zero_on_exp_products():
    rng = np.random.default_rng(5)
    for d in (1, 2, 3):
        g = random_group_element(rng, d)
        assert geometric_defect(g) < 1e-12


def test_validation_rejects_bad_input():
    with pytest.raises(ValueError):
        GroupElement(np.array([np.nan, 0.0]))
    with pytest.raises(ValueError):
        GroupElement(np.zeros(2), np.zeros((3, 3)))
    with pytest.raises(ValueError):
        group_exp_tensor(TensorElement(1.0, np.zeros(2), np.zeros((2, 2))))
