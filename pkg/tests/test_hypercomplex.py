import math

import numpy as np
import pytest

from hypercomplex import (
    ConjugationKind, DegenerateInputError, DualNumber, DualQuaternion, PreconditionViolation,
    Quaternion, RigidTransform, apply_rigid, dmul, dq_conj, dq_normalize_6dof,
    dq_normalize_6dof_array, dq_self_product, dqmul, dqmul_array, dual_number_matrix,
    dual_quaternion_matrix, hamilton_matrix, is_unit_dual_quaternion, make_rigid, q_from_polar,
    q_rotate, qconj, qconj_array, qdot, qmul, qmul_array, qnorm, rigid_translation, rotation_matrix,
)

N_PAIRS = 10_000


def random_quaternion(rng):
    return Quaternion.from_array(rng.normal(size=4))


def random_unit(rng):
    v = rng.normal(size=4)
    return Quaternion.from_array(v / np.linalg.norm(v))


def assert_q_close(actual, expected, tol=1e-12):
    np.testing.assert_allclose(actual.as_array(), np.asarray(expected, dtype=float), atol=tol)


# =========================
# 四元数
# =========================

def test_qmul_unit_rules():
    i, j, k = Quaternion(0, 1, 0, 0), Quaternion(0, 0, 1, 0), Quaternion(0, 0, 0, 1)
    assert_q_close(qmul(i, j), k.as_array())
    for a, b in [(i, j), (i, k), (j, k)]:
        assert qmul(a, b) == -qmul(b, a)


def test_qmul_identity_and_known_product():
    q = Quaternion(1, 2, 3, 4)
    assert qmul(q, Quaternion.identity()) == q
    assert_q_close(qmul(q, Quaternion(5, 6, 7, 8)), [-60, 12, 30, 24])


def test_qmul_matches_matrix_form():
    rng = np.random.default_rng(0)
    qs, ps = rng.normal(size=(N_PAIRS, 4)), rng.normal(size=(N_PAIRS, 4))
    matrices = np.stack([hamilton_matrix(Quaternion.from_array(q)) for q in qs])
    scalar = np.array([qmul(Quaternion.from_array(q), Quaternion.from_array(p)).as_array()
                       for q, p in zip(qs, ps)])
    np.testing.assert_allclose(np.einsum("nij,nj->ni", matrices, ps), scalar, rtol=0, atol=1e-12)
    np.testing.assert_allclose(qmul_array(qs, ps), scalar, rtol=0, atol=1e-12)


def test_qmul_associative_and_norm_multiplicative():
    rng = np.random.default_rng(1)
    a, b, c = (rng.normal(size=(N_PAIRS, 4)) for _ in range(3))
    np.testing.assert_allclose(qmul_array(qmul_array(a, b), c), qmul_array(a, qmul_array(b, c)),
                               rtol=1e-12, atol=1e-12)
    norm = np.linalg.norm
    np.testing.assert_allclose(norm(qmul_array(a, b), axis=-1), norm(a, axis=-1) * norm(b, axis=-1), rtol=1e-12)
    for n in range(0, N_PAIRS, 97):
        x, y = Quaternion.from_array(a[n]), Quaternion.from_array(b[n])
        assert qnorm(qmul(x, y)) == pytest.approx(qnorm(x) * qnorm(y), rel=1e-12)


def test_qconj():
    q = Quaternion(1, 2, 3, 4)
    assert_q_close(qconj(q), [1, -2, -3, -4])
    assert qconj(qconj(q)) == q
    rng = np.random.default_rng(2)
    q = random_quaternion(rng)
    assert_q_close(qmul(q, qconj(q)), [qnorm(q) ** 2, 0, 0, 0], tol=1e-12)


def test_qnorm_examples():
    assert qnorm(Quaternion(0, 3, 0, 4)) == 5.0
    assert qnorm(Quaternion.identity()) == 1.0


def test_q_from_polar():
    assert_q_close(q_from_polar(0.0, (1, 0, 0)), [1, 0, 0, 0])
    assert_q_close(q_from_polar(math.pi / 2, (1, 0, 0)), [0, 1, 0, 0])
    rng = np.random.default_rng(3)
    for _ in range(50):
        u = rng.normal(size=3)
        u /= np.linalg.norm(u)
        assert qnorm(q_from_polar(rng.uniform(-math.pi, math.pi), u)) == pytest.approx(1.0, abs=1e-12)


def test_q_from_polar_rejects_non_unit_axis():
    with pytest.raises(PreconditionViolation):
        q_from_polar(0.3, (1, 1, 0))


def test_quaternion_rejects_non_finite():
    with pytest.raises(PreconditionViolation):
        Quaternion(float("nan"), 0, 0, 0)


def test_q_rotate_examples():
    np.testing.assert_allclose(q_rotate(Quaternion.identity(), (0.3, -1, 2)), (0.3, -1, 2), atol=1e-12)
    np.testing.assert_allclose(q_rotate(Quaternion(0, 1, 0, 0), (0, 1, 0)), (0, -1, 0), atol=1e-12)
    # 夹心积旋转 2θ
    q = q_from_polar(math.pi / 4, (0, 0, 1))
    np.testing.assert_allclose(q_rotate(q, (1, 0, 0)), (0, 1, 0), atol=1e-12)


def test_q_rotate_is_isometry_and_matches_matrix():
    rng = np.random.default_rng(4)
    for _ in range(200):
        q = random_unit(rng)
        v, w = rng.normal(size=3), rng.normal(size=3)
        rv, rw = np.array(q_rotate(q, v)), np.array(q_rotate(q, w))
        np.testing.assert_allclose(rv, rotation_matrix(q) @ v, atol=1e-9)
        assert np.linalg.norm(rv) == pytest.approx(np.linalg.norm(v), abs=1e-9)
        assert rv @ rw == pytest.approx(v @ w, abs=1e-9)


def test_q_rotate_requires_unit():
    with pytest.raises(PreconditionViolation):
        q_rotate(Quaternion(2, 0, 0, 0), (1, 0, 0))


# =========================
# 对偶数与对偶四元数
# =========================

def test_dmul_examples():
    assert dmul(DualNumber(1, 2), DualNumber(3, 4)) == DualNumber(3, 10)
    assert dmul(DualNumber(7, -2), DualNumber(1, 0)) == DualNumber(7, -2)
    assert dmul(DualNumber(0, 1), DualNumber(0, 1)) == DualNumber(0, 0)
    a, b = DualNumber(1.5, -2.0), DualNumber(0.5, 3.0)
    product = dual_number_matrix(a) @ np.array([b.primal, b.dual])
    assert tuple(product) == (dmul(a, b).primal, dmul(a, b).dual)


def test_dqmul_examples():
    rng = np.random.default_rng(5)
    q, p = random_quaternion(rng), random_quaternion(rng)
    out = dqmul(DualQuaternion(q, Quaternion.zero()), DualQuaternion(p, Quaternion.zero()))
    assert out.primal == qmul(q, p)
    assert out.dual == Quaternion.zero()

    out = dqmul(DualQuaternion(Quaternion.zero(), q), DualQuaternion(Quaternion.zero(), p))
    assert_q_close(out.primal, [0, 0, 0, 0])
    assert_q_close(out.dual, [0, 0, 0, 0])

    a = DualQuaternion(Quaternion(1, 0, 0, 0), Quaternion(0, 1, 0, 0))
    b = DualQuaternion(Quaternion(0, 0, 1, 0), Quaternion(0, 0, 0, 1))
    out = dqmul(a, b)
    assert_q_close(out.primal, [0, 0, 1, 0])
    assert_q_close(out.dual, [0, 0, 0, 2])


def test_dqmul_matches_block_matrix_and_is_associative():
    rng = np.random.default_rng(6)
    a, b, c = (rng.normal(size=(N_PAIRS, 8)) for _ in range(3))
    matrices = np.stack([dual_quaternion_matrix(DualQuaternion.from_array(x)) for x in a])
    assert np.all(matrices[:, :4, 4:] == 0.0)
    scalar = np.array([dqmul(DualQuaternion.from_array(x), DualQuaternion.from_array(y)).as_array()
                       for x, y in zip(a, b)])
    np.testing.assert_allclose(np.einsum("nij,nj->ni", matrices, b), scalar, rtol=0, atol=1e-12)
    np.testing.assert_allclose(dqmul_array(a, b), scalar, rtol=0, atol=1e-12)
    np.testing.assert_allclose(dqmul_array(dqmul_array(a, b), c), dqmul_array(a, dqmul_array(b, c)),
                               rtol=1e-12, atol=1e-12)


def test_dq_conj_kinds():
    a = DualQuaternion.from_array([1, 2, 3, 4, 5, 6, 7, 8])
    np.testing.assert_array_equal(dq_conj(a, ConjugationKind.FIRST).as_array(), [1, -2, -3, -4, 5, -6, -7, -8])
    np.testing.assert_array_equal(dq_conj(a, "second").as_array(), [1, -2, -3, -4, -5, 6, 7, 8])
    for kind in ConjugationKind:
        assert dq_conj(dq_conj(a, kind), kind) == a
    for x in np.random.default_rng(10).normal(size=(N_PAIRS, 8)):
        sample = DualQuaternion.from_array(x)
        for kind in ConjugationKind:
            assert dq_conj(dq_conj(sample, kind), kind) == sample


def test_dq_normalize_6dof_example():
    a = DualQuaternion.from_array([2, 0, 0, 0, 3, 5, 0, 0])
    out = dq_normalize_6dof(a)
    np.testing.assert_allclose(out.as_array(), [1, 0, 0, 0, 0, 5, 0, 0], atol=1e-12)
    assert is_unit_dual_quaternion(out)


def test_dq_normalize_6dof_fixed_point_and_property():
    unit = make_rigid(RigidTransform(q_from_polar(0.4, (0, 1, 0)), (1.0, -2.0, 0.5)))
    np.testing.assert_allclose(dq_normalize_6dof(unit).as_array(), unit.as_array(), atol=1e-12)

    rng = np.random.default_rng(7)
    samples = rng.normal(size=(N_PAIRS, 8))
    for x in samples:
        out = dq_normalize_6dof(DualQuaternion.from_array(x))
        assert abs(qdot(out.primal, out.primal) - 1.0) < 1e-9
        assert abs(qdot(out.primal, out.dual)) < 1e-9
        np.testing.assert_allclose(dq_normalize_6dof(out).as_array(), out.as_array(), rtol=0, atol=1e-9)

    primal, dual = dq_normalize_6dof_array(samples[:, :4], samples[:, 4:])
    np.testing.assert_allclose(np.sum(primal * primal, axis=-1), 1.0, rtol=0, atol=1e-9)
    np.testing.assert_allclose(np.sum(primal * dual, axis=-1), 0.0, rtol=0, atol=1e-9)
    again = dq_normalize_6dof_array(primal, dual)
    np.testing.assert_allclose(again[0], primal, rtol=0, atol=1e-9)
    np.testing.assert_allclose(again[1], dual, rtol=0, atol=1e-9)


def test_dq_self_product():
    a = DualQuaternion.from_array([1, 2, 3, 4, 5, 6, 7, 8])
    assert dq_self_product(a) == DualNumber(30.0, 140.0)
    unit = make_rigid(RigidTransform(q_from_polar(1.1, (0, 0, 1)), (3.0, 0.0, -1.0)))
    product = dq_self_product(unit)
    assert product.primal == pytest.approx(1.0)
    assert product.dual == pytest.approx(0.0, abs=1e-12)


def test_dq_normalize_6dof_degenerate_primal_raises():
    with pytest.raises(DegenerateInputError):
        dq_normalize_6dof(DualQuaternion.from_array([1e-8, 0, 0, 0, 1, 1, 1, 1]))


def test_make_rigid_examples():
    sigma = make_rigid(RigidTransform(Quaternion.identity(), (1, 2, 3)))
    np.testing.assert_allclose(sigma.as_array(), [1, 0, 0, 0, 0, 0.5, 1, 1.5], atol=1e-12)
    identity = make_rigid(RigidTransform(Quaternion.identity(), (0, 0, 0)))
    np.testing.assert_allclose(identity.as_array(), DualQuaternion.identity().as_array(), atol=1e-12)


def test_rigid_transform_requires_unit_rotation():
    with pytest.raises(PreconditionViolation):
        RigidTransform(Quaternion(1, 1, 0, 0), (0, 0, 0))


def test_apply_rigid_examples():
    identity = make_rigid(RigidTransform(Quaternion.identity(), (0, 0, 0)))
    np.testing.assert_allclose(apply_rigid(identity, (0.1, 0.2, 0.3)), (0.1, 0.2, 0.3), atol=1e-12)
    sigma = make_rigid(RigidTransform(Quaternion.identity(), (1, 2, 3)))
    np.testing.assert_allclose(apply_rigid(sigma, (0, 0, 0)), (1, 2, 3), atol=1e-12)


def test_apply_rigid_matches_rotation_plus_translation():
    rng = np.random.default_rng(8)
    for _ in range(1000):
        q = random_unit(rng)
        t = rng.uniform(-5, 5, size=3)
        v = rng.uniform(-5, 5, size=3)
        sigma = make_rigid(RigidTransform(q, tuple(t)))
        assert is_unit_dual_quaternion(sigma)
        np.testing.assert_allclose(apply_rigid(sigma, v), rotation_matrix(q) @ v + t, atol=1e-9)
        np.testing.assert_allclose(rigid_translation(sigma), t, atol=1e-9)


def test_apply_rigid_rejects_non_unit():
    with pytest.raises(PreconditionViolation):
        apply_rigid(DualQuaternion.from_array([2, 0, 0, 0, 0, 0, 0, 0]), (1, 0, 0))


# =========================
# 向量化形式
# =========================

def test_array_forms_match_scalar_forms():
    rng = np.random.default_rng(9)
    a, b = rng.normal(size=(5, 8)), rng.normal(size=(5, 8))
    products = dqmul_array(a, b)
    quats = qmul_array(a[:, :4], b[:, :4])
    for n in range(5):
        expected = dqmul(DualQuaternion.from_array(a[n]), DualQuaternion.from_array(b[n])).as_array()
        np.testing.assert_allclose(products[n], expected, atol=1e-12)
        np.testing.assert_allclose(quats[n], expected[:4], atol=1e-12)
        np.testing.assert_array_equal(qconj_array(a[n, :4]), qconj(Quaternion.from_array(a[n, :4])).as_array())


def test_normalize_array_guard_passes_through():
    primal = np.array([[0.0, 0.0, 0.0, 0.0], [2.0, 0.0, 0.0, 0.0]])
    dual = np.array([[1.0, 2.0, 3.0, 4.0], [3.0, 5.0, 0.0, 0.0]])
    out_p, out_d = dq_normalize_6dof_array(primal, dual)
    np.testing.assert_array_equal(out_p[0], primal[0])
    np.testing.assert_array_equal(out_d[0], dual[0])
    np.testing.assert_allclose(out_p[1], [1, 0, 0, 0], atol=1e-12)
    np.testing.assert_allclose(out_d[1], [0, 5, 0, 0], atol=1e-12)
