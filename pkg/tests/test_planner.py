import json
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from perchsim.planner import (BoundaryState, IllConditionedWarning, PlannerError,
                              Trajectory, allocate_times, evaluate, plan_single,
                              plan_waypoints, sample, segment_snap_cost, snap_cost)

from oracles import dense_min_snap


def random_problem(rng, n_wp=None, axes=3):
    n_wp = int(rng.integers(3, 6)) if n_wp is None else n_wp
    pts = rng.uniform(-3, 3, size=(n_wp, axes))
    durations = list(rng.uniform(0.5, 3.0, size=n_wp - 1))
    return pts, durations


def plan_points(pts, durations, start=None, end=None):
    start = start or BoundaryState(pts[0])
    end = end or BoundaryState(pts[-1])
    return plan_waypoints(start, end, pts[1:-1], durations)


def knot_mismatch(traj):
    worst = 0.0
    for a, b in zip(traj.segments, traj.segments[1:]):
        for k in range(4):
            worst = max(worst, float(np.max(np.abs(a.derivative(a.duration, k)
                                                   - b.derivative(0.0, k)))))
    return worst


def test_rest_to_rest_matches_analytic_profile():
    T = 2.5
    seg = plan_single(BoundaryState([0.0]), BoundaryState([1.0]), T)
    for tau in np.linspace(0, 1, 101):
        expected = 35 * tau**4 - 84 * tau**5 + 70 * tau**6 - 20 * tau**7
        assert seg.derivative(tau * T)[0] == pytest.approx(expected, abs=1e-9)


def test_single_segment_meets_boundary_states():
    rng = np.random.default_rng(2)
    for _ in range(20):
        a = BoundaryState(*rng.normal(size=(4, 3)))
        b = BoundaryState(*rng.normal(size=(4, 3)))
        T = float(rng.uniform(0.2, 5))
        seg = plan_single(a, b, T)
        for k in range(4):
            np.testing.assert_allclose(seg.derivative(0.0, k), a.derivatives()[k], atol=1e-9)
            np.testing.assert_allclose(seg.derivative(T, k), b.derivatives()[k], atol=1e-9)


def test_snap_cost_matches_dense_qp():
    rng = np.random.default_rng(0)
    for _ in range(20):
        pts, durs = random_problem(rng)
        traj = plan_points(pts, durs)
        ref = dense_min_snap(pts, durs)
        assert snap_cost(traj) == pytest.approx(ref, rel=1e-6)


def test_dense_qp_with_nonzero_end_derivatives():
    rng = np.random.default_rng(1)
    pts, durs = random_problem(rng, 4)
    sd = rng.normal(size=(4, 3))
    ed = rng.normal(size=(4, 3))
    start = BoundaryState(pts[0], *sd[1:])
    end = BoundaryState(pts[-1], *ed[1:])
    traj = plan_points(pts, durs, start, end)
    assert snap_cost(traj) == pytest.approx(dense_min_snap(pts, durs, sd, ed), rel=1e-6)


def test_continuity_and_waypoints():
    rng = np.random.default_rng(4)
    for _ in range(20):
        pts, durs = random_problem(rng)
        traj = plan_points(pts, durs)
        assert knot_mismatch(traj) <= 1e-9
        for t, p in zip(traj.knot_times, pts):
            np.testing.assert_allclose(evaluate(traj, float(t)), p, atol=1e-9)


def test_perturbing_free_derivatives_never_helps():
    rng = np.random.default_rng(6)
    pts, durs = random_problem(rng, 4)
    traj = plan_points(pts, durs)
    best = snap_cost(traj)
    knots = [[seg.derivative(0.0, k) for k in range(4)] for seg in traj.segments]
    knots.append([traj.segments[-1].derivative(durs[-1], k) for k in range(4)])
    knots = np.array(knots)
    for _ in range(200):
        pert = knots.copy()
        pert[1:-1, 1:] += rng.normal(scale=10 ** rng.uniform(-6, 0), size=pert[1:-1, 1:].shape)
        segs = [plan_single(BoundaryState(*pert[s]), BoundaryState(*pert[s + 1]), T)
                for s, T in enumerate(durs)]
        assert snap_cost(Trajectory(segs, pts)) >= best * (1 - 1e-12)


def test_sampled_derivatives_match_finite_differences():
    rng = np.random.default_rng(8)
    pts, durs = random_problem(rng, 4)
    traj = plan_points(pts, durs)
    h = 1e-5
    for t in np.linspace(0.1, traj.total_duration - 0.1, 25):
        for k in range(4):
            fd = (evaluate(traj, t + h, k) - evaluate(traj, t - h, k)) / (2 * h)
            np.testing.assert_allclose(evaluate(traj, t, k + 1), fd, rtol=1e-5, atol=1e-4)


@settings(max_examples=30, deadline=None)
@given(c=st.floats(0.2, 5.0))
def test_time_scaling_of_rest_to_rest_cost(c):
    pts = np.array([[0.0, 0, 0], [1, 2, 0], [2, 0, 1], [3, 1, 1]])
    durs = [1.0, 1.5, 0.8]
    base = snap_cost(plan_points(pts, durs))
    scaled = snap_cost(plan_points(pts, [c * T for T in durs]))
    assert scaled == pytest.approx(base / c**7, rel=1e-8)


def test_axes_are_independent():
    rng = np.random.default_rng(10)
    pts, durs = random_problem(rng, 5)
    full = plan_points(pts, durs)
    for ax in range(3):
        single = plan_points(pts[:, [ax]], durs)
        for s_full, s_one in zip(full.segments, single.segments):
            np.testing.assert_allclose(s_full.coefficients[ax], s_one.coefficients[0],
                                       rtol=1e-12, atol=1e-12)


def test_no_waypoints_is_single_segment():
    a, b = BoundaryState([0, 0, 0]), BoundaryState([1, 2, 3])
    traj = plan_waypoints(a, b, [], [2.0])
    np.testing.assert_array_equal(traj.segments[0].coefficients,
                                  plan_single(a, b, 2.0).coefficients)


def test_rest_to_rest_midpoint_is_arithmetic_midpoint():
    traj = plan_waypoints(BoundaryState([0, 1, 2]), BoundaryState([4, -1, 3]), [], [3.0])
    np.testing.assert_allclose(evaluate(traj, 1.5), [2, 0, 2.5], atol=1e-12)


def test_knot_time_belongs_to_earlier_segment():
    pts = np.array([[0.0], [1.0], [3.0]])
    traj = plan_points(pts, [1.0, 2.0])
    seg0 = traj.segments[0]
    np.testing.assert_array_equal(evaluate(traj, 1.0, 4), seg0.derivative(1.0, 4))


def test_allocate_times():
    assert allocate_times([[0, 0, 0], [3, 4, 0], [3, 4, 0.1]], 1.0, 0.5) == [5.0, 0.5]
    with pytest.raises(PlannerError):
        allocate_times([[0, 0, 0], [0, 0, 0]], 1.0)
    with pytest.raises(PlannerError):
        allocate_times([[0, 0, 0], [1, 0, 0]], 0.0)


def test_input_validation():
    a, b = BoundaryState([0, 0]), BoundaryState([1, 1])
    with pytest.raises(PlannerError):
        plan_waypoints(a, b, [[0.5, 0.5]], [1.0])
    with pytest.raises(PlannerError):
        plan_single(a, b, 0.0)
    with pytest.raises(PlannerError):
        plan_single(a, BoundaryState([1, 1, 1]), 1.0)
    with pytest.raises(PlannerError):
        BoundaryState([0, 0], velocity=[1, 2, 3])
    with pytest.raises(PlannerError):
        BoundaryState([np.nan])
    traj = plan_waypoints(a, b, [], [1.0])
    with pytest.raises(PlannerError):
        evaluate(traj, 1.5)
    with pytest.raises(PlannerError):
        evaluate(traj, 0.5, 5)


def test_extreme_duration_ratio_warns():
    pts = np.array([[0.0], [1.0], [2.0]])
    with pytest.warns(IllConditionedWarning):
        plan_points(pts, [1e-3, 10.0])
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        plan_points(pts, [1.0, 10.0])


def test_json_round_trip():
    rng = np.random.default_rng(12)
    pts, durs = random_problem(rng, 4)
    traj = plan_points(pts, durs)
    text = traj.to_json()
    assert json.loads(text)["format"] == "perchsim-trajectory/1"
    back = Trajectory.from_dict(json.loads(text))
    for s0, s1 in zip(traj.segments, back.segments):
        np.testing.assert_array_equal(s0.coefficients, s1.coefficients)
        assert s0.duration == s1.duration
    np.testing.assert_array_equal(back.waypoints, traj.waypoints)


def test_sample_shape_and_segment_cost_sum():
    rng = np.random.default_rng(13)
    pts, durs = random_problem(rng, 3)
    traj = plan_points(pts, durs)
    out = sample(traj, [0.0, 0.5, traj.total_duration])
    assert out.shape == (3, 5, 3)
    assert snap_cost(traj) == pytest.approx(sum(segment_snap_cost(s) for s in traj.segments))
