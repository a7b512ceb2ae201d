import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ra3c.actions import ControlCommand
from ra3c.sim import (CarParams, CrashReason, Env, RenderConfig, Track, TrackError, arc_track, frame_signal,
                      generate_track, heading_error, physics_step, render_frontview, spawn, straight_track)
from ra3c.sim.render import RAIL, ROAD, SKY, render_labels

GAS = ControlCommand(0.0, 1.0)
COAST = ControlCommand(0.0, 0.0)


def drive(state, track, cmd, n, params=CarParams()):
    events = []
    for _ in range(n):
        state, ev = physics_step(state, cmd, track, params=params)
        events.append(ev)
        if ev.terminal:
            break
    return state, events


# ---- tracks


def test_generate_is_deterministic():
    a = generate_track(7, 2000, 0.5).to_text()
    b = generate_track(7, 2000, 0.5).to_text()
    assert a == b
    assert generate_track(8, 2000, 0.5).to_text() != a


def test_easy_track_clamps():
    t = generate_track(3, 3000, 0.0)
    assert np.abs(t.kappa).max() <= 1 / 200 + 1e-12
    assert np.all(t.mu == 1.0)


@pytest.mark.parametrize("seed", range(4))
def test_hard_track_has_hairpin(seed):
    t = generate_track(seed, 2000, 1.0)
    assert np.abs(t.kappa).max() >= 1 / 15 - 1e-12


def test_track_invariants():
    t = generate_track(1, 2500, 0.7)
    assert np.all(np.diff(t.s) > 0) and np.diff(t.s).max() <= 2.0
    assert len(t.checkpoints) >= 2 and t.checkpoints[0] == 0
    assert t.width.min() >= 3 and t.width.max() <= 12 and np.abs(t.e).max() <= 0.12
    assert t.mu.min() > 0 and t.mu.max() <= 1


def test_generate_rejects_bad_parameters():
    with pytest.raises(TrackError):
        generate_track(0, 150, 0.5)
    with pytest.raises(TrackError):
        generate_track(0, 2000, 1.5)
    with pytest.raises(TrackError):
        generate_track(0, 2000, 1.0, road_width=2.0)


def test_track_text_roundtrip(tmp_path):
    t = generate_track(5, 1200, 0.4)
    path = tmp_path / "t.trk"
    t.save(path)
    u = Track.load(path)
    assert u.to_text() == t.to_text()
    assert path.read_text().splitlines()[0].split()[0] == "track-v1"


def test_track_file_errors(tmp_path):
    for text in ("", "track-v2 1 1 1\n", "track-v1 10 5 0\n0 0 0 8 0 0 1\n"):
        with pytest.raises(TrackError):
            Track.from_text(text)


def test_project_inverts_point_at():
    t = generate_track(2, 1500, 0.6)
    rng = np.random.default_rng(0)
    for _ in range(200):
        s = rng.uniform(1, t.length - 1)
        d = rng.uniform(-3, 3)
        x, y = t.point_at(s, d)
        s2, d2 = t.project(x, y, s)
        x2, y2 = t.point_at(s2, d2)
        assert math.hypot(x - x2, y - y2) < 1e-6


# ---- spawn / signal


def test_spawn_contract():
    t = generate_track(1, 1000, 0.3)
    for k in range(len(t.checkpoints)):
        st_ = spawn(t, k)
        assert st_.speed == 0 and st_.d == 0 and abs(heading_error(st_, t)) < 1e-12
    assert spawn(t, 0).s == 0
    with pytest.raises(ValueError):
        spawn(t, len(t.checkpoints))


def test_frame_signal_sign_convention():
    t = straight_track(400)
    st0 = spawn(t, 0)
    x, y = t.point_at(50.0, -1.5)
    left = replace(st0, x=x, y=y, s=50.0, d=-1.5)
    assert frame_signal(left, t).d == -1.5
    assert y > 0  # the track runs along +x, so its left side is +y
    rotated = replace(st0, heading=st0.heading + math.pi / 2)
    assert frame_signal(rotated, t).alpha == pytest.approx(math.pi / 2)


# ---- physics


def test_straight_acceleration_is_symmetric():
    t = straight_track(600)
    s = spawn(t, 0)
    prev = 0.0
    for _ in range(120):
        s, ev = physics_step(s, GAS, t)
        assert s.speed > prev and s.d == pytest.approx(0.0, abs=1e-12)
        prev = s.speed


def test_coasting_loses_speed():
    t = straight_track(2000)
    s, _ = drive(spawn(t, 0), t, GAS, 150)
    prev = s.speed
    for _ in range(60):
        s, _ = physics_step(s, COAST, t)
        assert s.speed < prev
        prev = s.speed


def test_proportional_steering_tracks_an_arc():
    t = arc_track(120.0, 800, width=8.0)
    params = CarParams()
    s = spawn(t, 0)
    worst = 0.0
    for i in range(300):
        sig = frame_signal(s, t)
        feed = -math.atan(params.wheelbase * t.kappa_at(s.s)) / math.radians(params.max_steer_deg)
        steer = float(np.clip(1.5 * sig.alpha - 0.3 * sig.d + feed, -1, 1))
        s, ev = physics_step(s, ControlCommand(steer, 1.0 if s.speed < 15 else 0.0), t, params=params)
        if s.s > 40:
            worst = max(worst, abs(s.d))
    assert worst < 0.5 and not ev.terminal


def test_low_adherence_produces_slip():
    dry = arc_track(40.0, 600, width=10.0, mu=1.0)
    wet = arc_track(40.0, 600, width=10.0, mu=0.3)

    def max_slip(track):
        s = replace(spawn(track, 0), speed=20.0)
        worst = 0.0
        for _ in range(90):
            sig = frame_signal(s, track)
            steer = float(np.clip(1.0 * sig.alpha - 0.3 * sig.d - 0.6, -1, 1))
            s, ev = physics_step(s, ControlCommand(steer, 0.5), track)
            worst = max(worst, abs(s.slip_angle))
            if ev.terminal:
                break
        return worst

    assert max_slip(wet) > 0.01 and max_slip(wet) > max_slip(dry)


def test_handbrake_turn_rotates_faster():
    t = straight_track(800, width=12)
    base = replace(spawn(t, 0), speed=15.0)
    a, _ = drive(base, t, ControlCommand(1.0, 0.0), 10)
    b, _ = drive(base, t, ControlCommand(1.0, 0.0, 0, 1), 10)
    assert abs(b.heading - base.heading) > abs(a.heading - base.heading)


def test_hit_clamps_and_slows():
    t = straight_track(800, width=6)
    s = replace(spawn(t, 0), speed=20.0)
    for _ in range(200):
        before = s.speed
        s, ev = physics_step(s, ControlCommand(1.0, 0.5), t)
        if ev.hit:
            assert abs(s.d) == pytest.approx(3.0)
            assert s.speed < 0.65 * before
            break
    else:
        pytest.fail("car never reached the rail")


def test_stall_crash_and_terminal_state():
    t = straight_track(400)
    s, events = drive(spawn(t, 0), t, COAST, 400)
    assert events[-1].crash and events[-1].crash_reason is CrashReason.STALLED
    assert len(events) == 150
    with pytest.raises(RuntimeError):
        physics_step(s, GAS, t)


def test_wrong_way_crash():
    t = straight_track(600, width=12)
    s = spawn(t, 1)
    s = replace(s, heading=s.heading + math.pi)
    s, events = drive(s, t, ControlCommand(0.0, 0.5), 200)
    assert events[-1].crash_reason is CrashReason.WRONG_WAY


def test_checkpoint_and_finish_events():
    t = straight_track(420, width=8)
    s, events = drive(spawn(t, 0), t, GAS, 3000)
    assert [e.checkpoint for e in events if e.checkpoint is not None] == [1, 2]
    assert events[-1].finished and not events[-1].crash


def test_non_finite_state_rejected():
    t = straight_track(400)
    with pytest.raises(ValueError):
        physics_step(replace(spawn(t, 0), speed=float("nan")), GAS, t)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.integers(0, 31), min_size=1, max_size=120), st.integers(0, 3))
def test_determinism_and_projection_consistency(actions, seed):
    t = generate_track(seed, 800, 0.6)
    runs = []
    for _ in range(2):
        env = Env(t, RenderConfig(16, 16))
        env.reset(0)
        states = []
        for a in actions:
            env.step(a)
            st_ = env.state
            x, y = t.point_at(st_.s, st_.d)
            assert math.hypot(x - st_.x, y - st_.y) < 1e-6
            assert st_.speed >= 0
            states.append((st_.x, st_.y, st_.heading, st_.speed))
            if env.done:
                break
        runs.append(states)
    assert runs[0] == runs[1]


@settings(max_examples=25, deadline=None)
@given(st.floats(0.5, 50), st.floats(-0.3, 0.3))
def test_zero_gas_never_gains_energy(v0, alpha):
    t = straight_track(1500, width=12)
    s = replace(spawn(t, 2), speed=v0)
    s = replace(s, heading=s.heading + alpha)
    prev = s.speed
    for _ in range(60):
        s, ev = physics_step(s, ControlCommand(0.0, 0.0), t)
        assert s.speed <= prev + 1e-12
        prev = s.speed
        if ev.terminal:
            break


# ---- rendering


def test_render_shape_range_determinism():
    t = generate_track(4, 1000, 0.5)
    s = spawn(t, 1)
    a = render_frontview(s, t, RenderConfig())
    assert a.shape == (3, 84, 84) and a.dtype == np.float32 and a.min() >= 0 and a.max() <= 1
    assert np.array_equal(a, render_frontview(s, t, RenderConfig()))


def test_centered_view_is_symmetric():
    t = straight_track(600)
    f = render_frontview(spawn(t, 0), t, RenderConfig(48, 48))
    assert np.array_equal(f, f[:, :, ::-1])


def test_offsets_mirror():
    t = straight_track(600)
    base = spawn(t, 0)
    frames = []
    for d in (1.7, -1.7):
        x, y = t.point_at(base.s, d)
        frames.append(render_frontview(replace(base, x=x, y=y, d=d), t, RenderConfig(48, 48)))
    assert np.array_equal(frames[0], frames[1][:, :, ::-1])


def test_labels_partition_the_view():
    t = straight_track(600)
    labels = render_labels(spawn(t, 0), t, RenderConfig(48, 48))
    assert (labels[0] == SKY).all() and (labels[-1, 24] == ROAD)
    assert (labels == RAIL).any()


def test_env_requires_reset_and_stops_after_crash():
    env = Env(straight_track(400), RenderConfig(16, 16))
    with pytest.raises(RuntimeError):
        env.step(14)
    obs = env.reset(0)
    assert obs.frame.shape == (3, 16, 16) and obs.prev_action is None and obs.episode == 1
    obs = env.step(14)
    assert obs.prev_action == 14 and obs.step == 1
    while not env.done:
        env.step(31)  # brake
    with pytest.raises(RuntimeError):
        env.step(14)
