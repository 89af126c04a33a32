import math

import numpy as np
import pytest

from bhsim.vehicle import (
    Geofence,
    UavParams,
    UavState,
    UnknownMount,
    clamp_to_geofence,
    geofence_from_arena,
    ned_to_world,
    rotation_body_to_vehicle,
    rotation_camera_to_body,
    step_uav,
    wrap_angle,
    world_to_ned,
)
from bhsim.world import Arena


def _uav(**kw):
    base = dict(id=0, position=(0.0, 0.0, 0.0))
    base.update(kw)
    return UavState(**base)


def test_step_zero_command_from_rest_holds_position():
    out = step_uav(_uav(), (0.0, 0.0, 0.0), 0.0, 0.05)
    assert out.position == (0.0, 0.0, 0.0)
    assert out.velocity == (0.0, 0.0, 0.0)


def test_first_order_lag_matches_exact_discretization():
    # Oracle: closed-form first order response v = cmd * (1 - exp(-dt/tau)).
    params = UavParams(tau=0.3)
    out = step_uav(_uav(), (2.0, 0.0, 0.0), 0.0, 0.3, params)
    expected = 2.0 * (1.0 - math.exp(-1.0))
    assert out.velocity[0] == pytest.approx(expected, abs=1e-9)
    assert out.position[0] == pytest.approx(expected * 0.3, abs=1e-9)


def test_yaw_pure_integration():
    out = step_uav(_uav(), (0.0, 0.0, 0.0), 0.5, 1.0)
    assert out.yaw == pytest.approx(0.5)


def test_yaw_rate_clamped():
    out = step_uav(_uav(), (0.0, 0.0, 0.0), 99.0, 1.0, UavParams(yaw_rate_max=1.5))
    assert out.yaw == pytest.approx(1.5)


def test_speed_never_exceeds_v_max():
    params = UavParams(v_max=2.0)
    state = _uav()
    rng = np.random.default_rng(7)
    for _ in range(2000):
        cmd = tuple(rng.uniform(-10, 10, size=3))
        state = step_uav(state, cmd, float(rng.uniform(-3, 3)), 0.05, params)
        assert state.speed <= 2.0 + 1e-9


def test_camera_mount_permutation():
    r1 = rotation_camera_to_body("forward")
    assert np.allclose(r1 @ np.array([0.0, 0.0, 1.0]), [1.0, 0.0, 0.0])
    assert np.allclose(r1 @ np.array([1.0, 0.0, 0.0]), [0.0, 1.0, 0.0])
    assert np.allclose(r1.T @ r1, np.eye(3), atol=1e-12)
    assert np.linalg.det(r1) == pytest.approx(1.0, abs=1e-12)


def test_unknown_mount_raises():
    with pytest.raises(UnknownMount):
        rotation_camera_to_body("sideways")


def test_yaw_rotation_identity_and_quarter_turn():
    assert np.allclose(rotation_body_to_vehicle(0.0), np.eye(3), atol=1e-15)
    out = rotation_body_to_vehicle(math.pi / 2) @ np.array([1.0, 0.0, 0.0])
    assert np.allclose(out, [0.0, 1.0, 0.0], atol=1e-12)


def test_yaw_rotation_group_property():
    rng = np.random.default_rng(3)
    for _ in range(200):
        a, b = rng.uniform(-math.pi, math.pi, size=2)
        lhs = rotation_body_to_vehicle(a) @ rotation_body_to_vehicle(b)
        rhs = rotation_body_to_vehicle(a + b)
        assert np.allclose(lhs, rhs, atol=1e-12)


def test_rotation_products_stay_orthonormal_over_many_compositions():
    # Composing a million small yaw rotations must not drift off the
    # rotation group by more than 1e-9.
    rng = np.random.default_rng(11)
    acc = np.eye(3)
    step_angles = rng.uniform(-0.1, 0.1, size=1_000_000)
    for a in step_angles:
        c, s = math.cos(a), math.sin(a)
        acc = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]) @ acc
    assert np.max(np.abs(acc.T @ acc - np.eye(3))) < 1e-9
    assert np.linalg.det(acc) == pytest.approx(1.0, abs=1e-9)


def test_ned_world_round_trip():
    v = (1.0, -2.0, 3.0)
    assert world_to_ned(ned_to_world(v)) == v
    assert ned_to_world(v) == (1.0, -2.0, -3.0)


def test_wrap_angle_range():
    assert wrap_angle(math.pi) == pytest.approx(math.pi)
    assert wrap_angle(-math.pi) == pytest.approx(math.pi)
    assert wrap_angle(3 * math.pi / 2) == pytest.approx(-math.pi / 2)
    assert wrap_angle(0.25) == pytest.approx(0.25)


FENCE = Geofence(lo=(0.0, 0.0, 0.0), hi=(10.0, 10.0, 6.0))


def test_clamp_interior_passes_through():
    cmd = (1.0, -1.0, 0.5)
    assert clamp_to_geofence((5.0, 5.0, 3.0), cmd, FENCE, 1.0, 2.0) == cmd


def test_clamp_zeroes_outward_component_at_face():
    out = clamp_to_geofence((9.0, 5.0, 3.0), (2.0, 0.3, -0.2), FENCE, 1.0, 2.0)
    assert out == (0.0, 0.3, -0.2)


def test_clamp_outside_points_toward_center_at_v_max():
    # Oracle: unit vector toward the box center scaled to v_max.
    pos = (11.0, 5.0, 3.0)
    out = clamp_to_geofence(pos, (5.0, 5.0, 5.0), FENCE, 1.0, 2.0)
    center = FENCE.center
    direction = np.array(center) - np.array(pos)
    expected = 2.0 * direction / np.linalg.norm(direction)
    assert np.allclose(out, expected, atol=1e-12)
    assert math.hypot(*out) == pytest.approx(2.0)


def test_geofence_from_arena_soft_band_is_effective_volume():
    arena = Arena()
    fence = geofence_from_arena(arena)
    assert fence.lo == (4.0, 4.0, 0.0)
    assert fence.hi == (96.0, 36.0, 6.0)


def test_geofence_invariant_under_clamped_random_walk():
    # With clamping active the fence is never crossed, even under
    # adversarial random commands.
    fence = geofence_from_arena(Arena())
    params = UavParams()
    state = _uav(position=(50.0, 20.0, 3.0))
    rng = np.random.default_rng(5)
    for _ in range(5000):
        cmd = tuple(rng.uniform(-4, 4, size=3))
        cmd = clamp_to_geofence(state.position, cmd, fence, 1.0, params.v_max)
        state = step_uav(state, cmd, 0.0, 0.05, params)
        assert fence.contains(state.position)
