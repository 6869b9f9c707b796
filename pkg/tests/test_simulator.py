import numpy as np
import pytest

from velometer.config import ImuConfig, SimConfig
from velometer.events import ImuData
from velometer.geometry import BodyKinematics, motion_flow
from velometer.imu import ImuBias, preintegrate
from velometer.rotations import quat_to_matrix, rotation_angle
from velometer.simulator import (StraightTrajectory, default_rig,
                                 exact_observations, generate_events,
                                 generate_imu, generate_stereo_events,
                                 ground_truth, make_scene, make_trajectory,
                                 tilted_edge_scene, true_depth_at)

GRAVITY = np.array([0.0, 0.0, -9.81])


def small_cfg(**kw):
    return SimConfig(jitter_std=0.0, spurious_rate=0.0, **kw)


def lateral_traj(speed, duration):
    """Camera at origin looking along world +z, translating along world +x.

    With identity orientation the camera frame coincides with the world
    frame, so `tilted_edge_scene` coordinates are directly visible.
    """
    return StraightTrajectory(np.zeros(3), np.array([speed, 0.0, 0.0]),
                              np.eye(3), duration)


class TestTrajectories:
    def test_const_vel_kinematics(self):
        traj = make_trajectory("const-vel", speed=2.0, duration=1.0)
        assert np.allclose(traj.velocity_body(0.3), [0, 0, 2.0])
        assert np.allclose(traj.omega_body(0.5), 0.0)
        assert np.allclose(traj.accel_world(0.1), 0.0)

    def test_corridor_targets(self):
        traj = make_trajectory("corridor", duration=1.0)
        assert abs(np.linalg.norm(traj.velocity_world(0.2)) - 5.68) < 1e-9
        assert abs(np.linalg.norm(traj.omega_body(0.2)) - 0.66) < 1e-9
        # body velocity is forward (z) throughout
        for t in (0.0, 0.4, 0.9):
            vb = traj.velocity_body(t)
            assert abs(vb[2] - 5.68) < 1e-9
            assert np.allclose(vb[:2], 0.0, atol=1e-9)

    def test_spin_targets(self):
        traj = make_trajectory("spin", duration=0.5)
        assert abs(np.linalg.norm(traj.velocity_world(0.1)) - 4.94) < 1e-9
        assert abs(np.linalg.norm(traj.omega_body(0.1)) - 13.3) < 1e-9

    def test_numeric_differentiation_consistency(self):
        # world velocity equals d(position)/dt; body omega matches R' = R [w]x
        for preset in ("const-vel", "corridor", "spin", "boxes"):
            traj = make_trajectory(preset, duration=1.0)
            h = 1e-6
            for t in (0.2, 0.7):
                fd_v = (traj.position(t + h) - traj.position(t - h)) / (2 * h)
                assert np.allclose(fd_v, traj.velocity_world(t), atol=1e-6)
                r0 = traj.rotation(t)
                r1 = traj.rotation(t + h)
                w_hat = r0.T @ (r1 - r0) / h
                w = np.array([w_hat[2, 1], w_hat[0, 2], w_hat[1, 0]])
                assert np.allclose(w, traj.omega_body(t), atol=1e-4)

    def test_rotation_orthonormal(self):
        for preset in ("corridor", "spin"):
            traj = make_trajectory(preset, duration=1.0)
            for t in (0.0, 0.5, 1.0):
                r = traj.rotation(t)
                assert np.allclose(r @ r.T, np.eye(3), atol=1e-12)
                assert abs(np.linalg.det(r) - 1.0) < 1e-12


class TestEventGeneration:
    def test_static_camera_no_events(self):
        cfg = small_cfg()
        rig = default_rig(cfg)
        traj = lateral_traj(0.0, 0.5)
        scene = tilted_edge_scene(depth=2.0)
        ev = generate_events(scene, traj, rig, cfg)
        assert len(ev) == 0

    def test_vertical_edge_crossing_times(self):
        # camera translating +x at 0.5 m/s, vertical edge at depth 2 m:
        # at each event the projected edge column equals the event column
        cfg = small_cfg()
        rig = default_rig(cfg)
        speed = 0.5
        traj = lateral_traj(speed, 1.2)
        scene = tilted_edge_scene(depth=2.0, tilt_deg=0.0, length=2.0,
                                  contrast=0.5)
        ev = generate_events(scene, traj, rig, cfg)
        assert len(ev) > 0
        assert np.all(np.diff(ev["t"]) >= 0)
        intr = rig.left
        for rec in ev[:: max(1, len(ev) // 50)]:
            t = rec["t"]
            p = traj.position(t)
            cam = np.array([0.0, 0.0, 2.0]) - p   # point on the edge
            u = intr.f * cam[0] / cam[2] + intr.cx
            assert abs(u - rec["x"]) < 1.0

    def test_crossing_times_match_closed_form(self):
        # single pixel, pure x-translation: crossing time of column u is
        # t = (x_edge - Z*(u - cx)/f) / v  with camera at origin moving +x
        cfg = small_cfg()
        rig = default_rig(cfg)
        intr = rig.left
        speed = 0.5
        traj = lateral_traj(speed, 1.2)
        scene = tilted_edge_scene(depth=2.0, tilt_deg=0.0, contrast=0.5)
        ev = generate_events(scene, traj, rig, cfg)
        ev = ev[ev["y"] == 130]
        assert len(ev) > 3
        z = 2.0
        for rec in ev:
            u = rec["x"]
            # camera x at crossing: cam_x = -p_x(t); u = f*(-p_x)/z + cx
            t_pred = -(u - intr.cx) * z / (intr.f * speed)
            assert abs(rec["t"] - t_pred) < 1e-9

    def test_contrast_threshold_event_count(self):
        cfg1 = small_cfg(contrast_threshold=0.5)
        cfg2 = small_cfg(contrast_threshold=1.0)
        rig = default_rig(cfg1)
        traj = lateral_traj(0.5, 1.0)
        scene = tilted_edge_scene(depth=2.0, tilt_deg=20.0, contrast=1.0)
        ev1 = generate_events(scene, traj, rig, cfg1)
        ev2 = generate_events(scene, traj, rig, cfg2)
        assert len(ev1) == 2 * len(ev2)

    def test_events_sorted_and_in_bounds(self):
        cfg = SimConfig(jitter_std=1e-4, spurious_rate=1000.0)
        rig = default_rig(cfg)
        traj = make_trajectory("corridor", speed=3.0, omega=0.6, duration=0.4)
        scene = make_scene("corridor", traj, cfg, np.random.default_rng(0))
        ev = generate_events(scene, traj, rig, cfg, np.random.default_rng(1))
        assert len(ev) > 0
        assert np.all(np.diff(ev["t"]) >= 0)
        assert ev["x"].min() >= 0 and ev["x"].max() < cfg.width
        assert ev["y"].min() >= 0 and ev["y"].max() < cfg.height
        assert set(np.unique(ev["p"])).issubset({-1, 1})

    def test_event_rate_grows_with_speed(self):
        cfg = small_cfg()
        rig = default_rig(cfg)
        rng = np.random.default_rng(2)
        traj_slow = make_trajectory("const-vel", speed=1.0, duration=0.5)
        traj_fast = make_trajectory("const-vel", speed=2.0, duration=0.5)
        scene = make_scene("const-vel", traj_fast, cfg, rng)
        n_slow = len(generate_events(scene, traj_slow, rig, cfg))
        n_fast = len(generate_events(scene, traj_fast, rig, cfg))
        assert n_fast > n_slow

    def test_stereo_depth_disparity_consistency(self):
        # noise-free projections: x_left - x_right == f*b/Z at matched points
        cfg = small_cfg()
        rig = default_rig(cfg)
        traj = lateral_traj(1.0, 0.2)
        scene = tilted_edge_scene(depth=2.0, tilt_deg=15.0)
        t = 0.1
        from velometer.simulator import _project_scene_points
        pl, zl, _, el = _project_scene_points(scene, traj, rig, t, "left")
        pr, zr, _, er = _project_scene_points(scene, traj, rig, t, "right")
        m = min(len(pl), len(pr))
        for i in range(m):
            if el[i] != er[i]:
                continue
            # same sample index on the same edge: identical 3D point
            disp = pl[i, 0] - pr[i, 0]
            assert abs(zl[i] * disp - rig.left.f * rig.baseline) < 1e-9


class TestImuGeneration:
    def test_stationary_reading(self):
        traj = make_trajectory("const-vel", speed=0.0, duration=0.2)
        imu, ba, bw = generate_imu(traj, ImuConfig(), GRAVITY,
                                   np.random.default_rng(0), noise=False)
        # specific force of a stationary sensor: -R^T g = +9.81 up (body y down)
        r = traj.rotation(0.0)
        expected = -r.T @ GRAVITY
        assert np.allclose(imu.accel, expected[None, :], atol=1e-12)
        assert np.allclose(imu.gyro, 0.0)

    def test_integration_recovers_velocity(self):
        traj = make_trajectory("corridor", speed=3.0, omega=0.8, duration=0.6)
        imu = traj.ideal_imu(200.0, GRAVITY)
        t0, t1 = 0.2, 0.45
        pre = preintegrate(imu, t0, t1, ImuBias(),
                           ImuConfig(rate_hz=200.0))
        r0 = traj.rotation(t0)
        v_pred = (traj.velocity_world(t0) + GRAVITY * pre.dt
                  + r0 @ pre.delta_v)
        assert np.allclose(v_pred, traj.velocity_world(t1), atol=2e-5)
        r_rel = r0.T @ traj.rotation(t1)
        assert rotation_angle(quat_to_matrix(pre.delta_q).T @ r_rel) < 1e-5

    def test_noise_statistics(self):
        traj = make_trajectory("const-vel", speed=0.0, duration=50.0)
        cfg = ImuConfig()
        imu, _, _ = generate_imu(traj, cfg, GRAVITY, np.random.default_rng(7))
        clean = traj.ideal_imu(cfg.rate_hz, GRAVITY)
        resid_a = imu.accel - clean.accel
        resid_w = imu.gyro - clean.gyro
        # remove the (growing) bias random walk by differencing
        da = np.diff(resid_a, axis=0) / np.sqrt(2.0)
        dw = np.diff(resid_w, axis=0) / np.sqrt(2.0)
        assert abs(da.std() - cfg.acc_noise) / cfg.acc_noise < 0.05
        assert abs(dw.std() - cfg.gyro_noise) / cfg.gyro_noise < 0.05

    def test_bias_walk_scale(self):
        traj = make_trajectory("const-vel", speed=0.0, duration=50.0)
        cfg = ImuConfig()
        rng = np.random.default_rng(11)
        _, ba, bw = generate_imu(traj, cfg, GRAVITY, rng)
        n = len(ba)
        expected = cfg.acc_bias_std * np.sqrt(n)
        assert 0.2 * expected < np.abs(ba[-1]).max() < 5 * expected


class TestGroundTruthAndBypass:
    def test_ground_truth_rate(self):
        traj = make_trajectory("const-vel", speed=1.0, duration=1.0)
        gt = ground_truth(traj, rate=200.0)
        assert len(gt.t) >= 200
        assert np.allclose(np.diff(gt.t), 1.0 / 200.0)

    def test_exact_observations_match_flow_equation(self):
        cfg = small_cfg()
        rig = default_rig(cfg)
        traj = make_trajectory("corridor", speed=3.0, omega=0.8, duration=0.5)
        scene = make_scene("corridor", traj, cfg, np.random.default_rng(3))
        obs = exact_observations(scene, traj, rig, 0.25, count=40)
        assert len(obs) >= 10
        kin = BodyKinematics(v=traj.velocity_body(0.25),
                             omega=traj.omega_body(0.25))
        for o in obs:
            full = motion_flow(rig.left, (o.flow.x, o.flow.y), kin, o.depth)
            # n^T flow must equal the stored magnitude up to pixel rounding
            proj = o.flow.direction @ full
            assert proj > 0
            assert abs(proj - o.flow.magnitude) < 0.15 * abs(o.flow.magnitude) + 2.0

    def test_true_depth_at_edge_pixels(self):
        cfg = small_cfg()
        rig = default_rig(cfg)
        traj = lateral_traj(1.0, 0.2)
        scene = tilted_edge_scene(depth=2.0, tilt_deg=10.0)
        obs = exact_observations(scene, traj, rig, 0.1, count=10)
        px = [(o.flow.x, o.flow.y) for o in obs]
        depths = true_depth_at(scene, traj, rig, 0.1, px)
        for o, z in zip(obs, depths):
            assert np.isfinite(z)
            assert abs(z - o.depth) < 0.05
