import numpy as np
import pytest
from hypothesis import given, strategies as st

from lrgeo.lp import (EQ, GE, INFEASIBLE, LE, OPTIMAL, UNBOUNDED, LpInstance,
                      MalformedInstanceError, dual_objective, from_lp_text, make_instance,
                      primal_violation, recession_ray, solve, to_lp_text)


def test_min_x_at_least_one():
    out = solve(make_instance([1.0], [([1.0], GE, 1.0)]))
    assert out.status == OPTIMAL
    assert out.primal[0] == pytest.approx(1.0)
    assert out.dual[0] == pytest.approx(1.0)


def test_unbounded_with_ray():
    inst = make_instance([-1.0])
    out = solve(inst)
    assert out.status == UNBOUNDED
    assert out.certificate is not None
    assert out.certificate[0] > 0
    assert inst.objective @ out.certificate < 0


def test_infeasible():
    out = solve(make_instance([0.0], [([1.0], LE, -1.0)]))
    assert out.status == INFEASIBLE


def test_unbounded_ray_recession_conditions():
    # min -x - y  s.t. x - y <= 1, y >= 0: ray must satisfy d_x - d_y <= 0
    inst = make_instance([-1.0, -1.0], [([1.0, -1.0], LE, 1.0)])
    out = solve(inst)
    assert out.status == UNBOUNDED
    d = out.certificate
    assert d[0] - d[1] <= 1e-12 and np.all(d >= -1e-12)
    assert inst.objective @ d < 0


def test_recession_ray_none_when_bounded():
    assert recession_ray(make_instance([1.0], [([1.0], GE, 1.0)])) is None


def test_hand_lp_with_equality_and_bounds():
    # min 2a + 3b  s.t. a + b = 4, a <= 3 (bound), b >= 0 -> a = 3, b = 1, obj 9
    inst = make_instance([2.0, 3.0], [([1.0, 1.0], EQ, 4.0)], bounds=[(0, 3), (0, None)])
    out = solve(inst)
    assert out.objective_value == pytest.approx(9.0)
    np.testing.assert_allclose(out.primal, [3.0, 1.0], atol=1e-9)
    assert out.dual[0] == pytest.approx(3.0)
    assert dual_objective(inst, out) == pytest.approx(9.0)


def test_duals_are_rhs_sensitivities():
    inst = make_instance([1.0, 2.0], [([1.0, 1.0], GE, 2.0), ([1.0, -1.0], LE, 1.0)])
    base = solve(inst)
    for r in range(2):
        rhs = inst.rhs.copy()
        rhs[r] += 1e-4
        moved = solve(LpInstance(inst.objective, inst.matrix, inst.senses, rhs,
                                 inst.lower, inst.upper))
        fd = (moved.objective_value - base.objective_value) / 1e-4
        assert base.dual[r] == pytest.approx(fd, abs=1e-6)


def test_malformed():
    with pytest.raises(MalformedInstanceError):
        make_instance([1.0, 2.0], [([1.0], GE, 1.0)])
    with pytest.raises(MalformedInstanceError):
        make_instance([np.nan])
    with pytest.raises(MalformedInstanceError):
        make_instance([1.0], [([1.0], "<>", 1.0)])
    with pytest.raises(MalformedInstanceError):
        make_instance([1.0], [([np.inf], GE, 1.0)])


def test_lp_text_example():
    inst = make_instance([1.0, -2.5], [([1.0, 1.0], LE, 4.0), ([1.0, 0.0], GE, 0.5)],
                         bounds=[(0, None), (-1, 3)])
    text = to_lp_text(inst)
    assert "Minimize" in text and "Subject To" in text
    back = from_lp_text(text)
    np.testing.assert_array_equal(back.matrix.toarray(), inst.matrix.toarray())
    np.testing.assert_array_equal(back.lower, inst.lower)
    np.testing.assert_array_equal(back.upper, inst.upper)
    assert solve(back).objective_value == pytest.approx(solve(inst).objective_value, abs=1e-9)


def random_lp(seed, n, m):
    r = np.random.default_rng(seed)
    A = r.normal(size=(m, n))
    A[r.random((m, n)) < 0.4] = 0.0
    x0 = r.uniform(0, 2, n)
    senses = r.choice([LE, GE, EQ], size=m, p=[0.45, 0.45, 0.1])
    ax = A @ x0
    rhs = np.where(senses == LE, ax + r.uniform(0, 1, m),
                   np.where(senses == GE, ax - r.uniform(0, 1, m), ax))
    c = r.uniform(0.1, 2, n)
    return LpInstance(c, A, senses.astype(object), rhs, np.zeros(n), np.full(n, 5.0))


@given(st.integers(0, 10 ** 6), st.integers(1, 8), st.integers(1, 8))
def test_strong_duality_and_feasibility(seed, n, m):
    inst = random_lp(seed, n, m)
    out = solve(inst)
    assert out.status == OPTIMAL
    assert primal_violation(inst, out.primal) <= 1e-8
    obj = out.objective_value
    assert abs(obj - dual_objective(inst, out)) <= 1e-6 * (1 + abs(obj))
    # dual sign conventions for a minimization
    assert np.all(out.dual[inst.senses == GE] >= -1e-8)
    assert np.all(out.dual[inst.senses == LE] <= 1e-8)


@given(st.integers(0, 10 ** 6), st.integers(1, 6), st.integers(1, 6))
def test_text_roundtrip(seed, n, m):
    inst = random_lp(seed, n, m)
    back = from_lp_text(to_lp_text(inst))
    a, b = solve(inst), solve(back)
    assert a.status == b.status
    assert a.objective_value == pytest.approx(b.objective_value, abs=1e-9)


def test_deterministic():
    inst = random_lp(5, 6, 5)
    a, b = solve(inst), solve(inst)
    np.testing.assert_array_equal(a.primal, b.primal)
