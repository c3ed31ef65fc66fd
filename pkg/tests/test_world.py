import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from activemap.world import (FIXTURES, ROBOT_RADIUS, Action, AgentPose,
                             EnvironmentParseError, EnvironmentValidationError,
                             analytic_sdf, apply_action, ground_truth_boundary_samples,
                             load_environment, load_fixture, raycast_depth, sample_free_pose,
                             wrap_angle)

from oracles import brute_sdf, point_segment_distance, shoelace

SQUARE = "boundary: 0 0  10 0  10 10  0 10  0 0\n"


def ngon_world(n, r=1.0):
    pts = [(r * math.cos(2 * math.pi * k / n), r * math.sin(2 * math.pi * k / n)) for k in range(n)]
    pts.append(pts[0])
    return load_environment("boundary: " + "  ".join(f"{x!r} {y!r}" for x, y in pts))


# -- loading -------------------------------------------------------------------

def test_square_has_one_polygon():
    w = load_environment(SQUARE)
    assert len(w.boundary) == 4
    assert w.obstacles == ()


def test_obstacle_outside_boundary_is_rejected():
    text = SQUARE + "obstacle: 20 20  21 20  21 21  20 21  20 20\n"
    with pytest.raises(EnvironmentValidationError, match="obstacle 0"):
        load_environment(text)


def test_two_room_fixture_area_matches_shoelace():
    w = load_fixture("two_room")
    assert len(w.obstacles) == 1
    # hand computation: 12 x 6 room minus a 0.2 x 4 wall
    assert w.free_area() == pytest.approx(12 * 6 - 0.2 * 4, abs=1e-12)
    expected = shoelace(w.boundary.tolist()) - shoelace(w.obstacles[0].tolist())
    assert w.free_area() == pytest.approx(expected, abs=1e-12)


def test_parse_error_reports_line_number():
    with pytest.raises(EnvironmentParseError) as exc:
        load_environment("# header\n" + SQUARE + "obstacle: 1 2 x 4\n")
    assert exc.value.line_no == 3


def test_open_polygon_rejected():
    with pytest.raises(EnvironmentValidationError, match="open"):
        load_environment("boundary: 0 0  1 0  1 1  0 1\n")


def test_self_intersecting_polygon_rejected():
    with pytest.raises(EnvironmentValidationError, match="self-intersecting"):
        load_environment("boundary: 0 0  4 4  4 0  0 1  0 0\n")


def test_orientation_is_normalized():
    # boundary given clockwise, obstacle counter-clockwise
    w = load_environment("boundary: 0 0  0 4  4 4  4 0  0 0\n"
                         "obstacle: 1 1  2 1  2 2  1 2  1 1\n")
    assert shoelace(w.boundary.tolist()) == 16
    signed = lambda p: 0.5 * float(np.dot(p[:, 0], np.roll(p[:, 1], -1)) - np.dot(np.roll(p[:, 0], -1), p[:, 1]))
    assert signed(w.boundary) > 0 and signed(w.obstacles[0]) < 0


@pytest.mark.parametrize("name", FIXTURES)
def test_fixtures_load(name):
    w = load_fixture(name)
    assert w.free_area() > 0
    assert np.isfinite(w.segments).all()


# -- sensing -------------------------------------------------------------------

def test_perpendicular_wall_depth_exact():
    w = load_environment("boundary: 0 0  6 0  6 10  0 10  0 0\n")
    obs = raycast_depth(w, AgentPose(5.0, 5.0, 0.0), n_rays=129)
    assert obs.depths[64] == 1.0


def test_depth_clamped_at_max_range():
    w = load_environment("boundary: 0 0  100 0  100 10  0 10  0 0\n")
    obs = raycast_depth(w, AgentPose(5.0, 5.0, 0.0), fov=math.radians(10), n_rays=5, max_range=6.0)
    assert (obs.depths == 6.0).all()
    assert len(obs.endpoints()) == 0


def test_regular_64gon_depths_near_unit():
    w = ngon_world(64)
    obs = raycast_depth(w, AgentPose(0.0, 0.0, 0.0), fov=2 * math.pi, n_rays=360)
    # every ray hits between the apothem cos(pi/64) and the circumradius 1
    assert np.all(np.abs(obs.depths - 1.0) <= 0.005)
    assert obs.depths.min() >= math.cos(math.pi / 64) - 1e-12


def test_ray_zero_is_at_heading_minus_half_fov():
    w = load_fixture("empty_room")
    obs = raycast_depth(w, AgentPose(4, 3, 0.3), n_rays=7)
    ang = obs.ray_angles()
    assert ang[0] == pytest.approx(0.3 - math.pi / 4)
    assert np.allclose(np.diff(ang), math.pi / 2 / 6)


poses = st.tuples(st.sampled_from(FIXTURES), st.integers(0, 2 ** 31 - 1),
                  st.floats(-math.pi, math.pi, allow_nan=False))


@settings(max_examples=30, deadline=None)
@given(poses)
def test_hit_endpoints_lie_on_walls(args):
    name, seed, heading = args
    w = load_fixture(name)
    p = sample_free_pose(w, np.random.default_rng(seed))
    obs = raycast_depth(w, AgentPose(p.x, p.y, heading), n_rays=32)
    assert np.all((obs.depths > 0) & (obs.depths <= obs.max_range))
    for q in obs.endpoints():
        d = min(point_segment_distance(q, a, b) for a, b in w.segments)
        assert d <= 1e-6


# -- kinematics ----------------------------------------------------------------

def test_turn_left_ten_degrees():
    w = load_fixture("empty_room")
    p, hit = apply_action(w, AgentPose(4, 3, 0.0), Action.TURN_LEFT)
    assert not hit
    assert p.heading == pytest.approx(math.radians(10), abs=1e-9)
    assert (p.x, p.y) == (4, 3)


def test_forward_into_wall_is_rejected():
    w = load_fixture("empty_room")
    start = AgentPose(8 - ROBOT_RADIUS - 0.01, 3.0, 0.0)
    p, hit = apply_action(w, start, Action.MOVE_FORWARD)
    assert hit and p == start


def test_forward_moves_one_step():
    w = load_fixture("empty_room")
    p, hit = apply_action(w, AgentPose(4, 3, math.pi / 2), Action.MOVE_FORWARD)
    assert not hit
    assert p.y == pytest.approx(3.065) and p.x == pytest.approx(4.0)


def test_thirty_six_turns_close_the_circle():
    w = load_fixture("empty_room")
    p = AgentPose(4, 3, 0.7)
    for _ in range(36):
        p, _ = apply_action(w, p, Action.TURN_LEFT)
    assert abs(wrap_angle(p.heading - 0.7)) <= 1e-9


def test_heading_stays_in_half_open_range():
    assert wrap_angle(math.pi) == -math.pi
    assert -math.pi <= wrap_angle(7.0) < math.pi


@settings(max_examples=15, deadline=None)
@given(st.sampled_from(FIXTURES), st.integers(0, 10 ** 6),
       st.lists(st.sampled_from([Action.MOVE_FORWARD] * 3 + [Action.TURN_LEFT, Action.TURN_RIGHT]),
                min_size=1, max_size=120))
def test_actions_keep_clearance(name, seed, actions):
    w = load_fixture(name)
    p = sample_free_pose(w, np.random.default_rng(seed))
    for a in actions:
        p, _ = apply_action(w, p, a)
        assert analytic_sdf(w, p.position) >= ROBOT_RADIUS


def test_simulation_is_bit_deterministic():
    w = load_fixture("apartment")
    rng = np.random.default_rng(3)
    acts = rng.choice([0, 0, 0, 1, 2], size=200)

    def run():
        p = sample_free_pose(w, np.random.default_rng(9))
        out = []
        for a in acts:
            p, _ = apply_action(w, p, Action(int(a)))
            out.append(raycast_depth(w, p, n_rays=16).depths)
        return np.concatenate(out)

    assert run().tobytes() == run().tobytes()


# -- ground truth --------------------------------------------------------------

def test_square_center_distance():
    assert analytic_sdf(load_environment(SQUARE), [5.0, 5.0]) == 5.0


def test_point_on_wall_is_zero():
    assert abs(analytic_sdf(load_environment(SQUARE), [10.0, 3.3])) <= 1e-9


@pytest.mark.parametrize("name", ["two_room", "apartment", "office"])
def test_sdf_matches_brute_force(name):
    w = load_fixture(name)
    x0, y0, x1, y1 = w.bounds
    pts = np.random.default_rng(1).uniform([x0 - 1, y0 - 1], [x1 + 1, y1 + 1], size=(100, 2))
    got = analytic_sdf(w, pts)
    ref = [brute_sdf(p, w.boundary.tolist(), [o.tolist() for o in w.obstacles]) for p in pts]
    assert np.allclose(got, ref, rtol=0, atol=1e-12)


def test_boundary_samples_square_count():
    pts = ground_truth_boundary_samples(load_environment(SQUARE), 1.0)
    assert len(pts) == 40


@pytest.mark.parametrize("name", FIXTURES)
def test_boundary_samples_on_walls(name):
    w = load_fixture(name)
    pts = ground_truth_boundary_samples(w, 0.1)
    assert np.all(np.abs(analytic_sdf(w, pts)) <= 1e-9)


def test_boundary_sample_gaps_bounded_for_non_divisible_lengths():
    w = load_environment("boundary: 0 0  3.7 0  3.7 2.3  0 2.3  0 0\n")
    spacing = 0.3
    pts = ground_truth_boundary_samples(w, spacing)
    # walk the perimeter: arc-length parameter of every sample
    per = 2 * (3.7 + 2.3)
    s = []
    for x, y in pts:
        if y == 0:
            s.append(x)
        elif x == 3.7:
            s.append(3.7 + y)
        elif y == 2.3:
            s.append(3.7 + 2.3 + (3.7 - x))
        else:
            s.append(2 * 3.7 + 2.3 + (2.3 - y))
    s = np.sort(s)
    gaps = np.diff(np.concatenate([s, [s[0] + per]]))
    assert gaps.max() <= spacing + 1e-9
