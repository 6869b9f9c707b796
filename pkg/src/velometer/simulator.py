"""Synthetic stereo event-camera / IMU data with exact ground truth.

Scenes are wireframes: 3D line segments, each carrying a signed
log-intensity step. As the camera moves, the projected segment sweeps the
image plane; every time it crosses a pixel center, the pixel accumulates the
edge's full step, firing floor(|step| / C) events for contrast threshold C.
Crossing instants are found analytically (bisection on the signed distance
between the pixel and the moving projected line), so event timestamps,
depths and flows are exact up to the configured refinement tolerance.
Gaussian timestamp jitter and uniform spurious events can be added on top.

Trajectories are closed-form (straight line or circular arc with the body
z-axis tracking the tangent), so velocity, acceleration, angular rate and
orientation are available exactly at any time.
"""

from dataclasses import dataclass

import numpy as np

from .config import ImuConfig, SimConfig
from .events import EVENT_DTYPE, ImuData, make_events
from .geometry import CameraIntrinsics, StereoRig, BodyKinematics, motion_flow
from .normal_flow import NormalFlowMeasurement
from .rotations import axis_angle_matrices, hat, matrix_to_quat
from .stereo import FlowDepthObservation


# --------------------------------------------------------------------------
# trajectories
# --------------------------------------------------------------------------

class StraightTrajectory:
    """Constant world velocity, constant orientation."""

    def __init__(self, p0, v_world, r0, duration):
        self.p0 = np.asarray(p0, dtype=float)
        self.v_world = np.asarray(v_world, dtype=float)
        self.r0 = np.asarray(r0, dtype=float)
        self.duration = float(duration)

    def pose_batch(self, ts):
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        r = np.broadcast_to(self.r0, (len(ts), 3, 3))
        p = self.p0[None] + ts[:, None] * self.v_world[None]
        return r, p

    def position(self, t):
        return self.p0 + t * self.v_world

    def rotation(self, t):
        return self.r0.copy()

    def velocity_world(self, t):
        return self.v_world.copy()

    def accel_world(self, t):
        return np.zeros(3)

    def omega_body(self, t):
        return np.zeros(3)

    def velocity_body(self, t):
        return self.r0.T @ self.v_world

    def max_speed(self):
        return float(np.linalg.norm(self.v_world))

    def ideal_imu(self, rate, gravity):
        return _ideal_imu(self, rate, gravity)


class CircularTrajectory:
    """Circular arc at constant speed; orientation co-rotates with the arc."""

    def __init__(self, center, radius_vec, omega_world, r0, duration):
        self.center = np.asarray(center, dtype=float)
        self.radius_vec = np.asarray(radius_vec, dtype=float)
        self.omega_world = np.asarray(omega_world, dtype=float)
        self.r0 = np.asarray(r0, dtype=float)
        self.duration = float(duration)
        self._rate = float(np.linalg.norm(self.omega_world))
        self._axis = self.omega_world / self._rate

    def _spin(self, ts):
        return axis_angle_matrices(self._axis, np.asarray(ts, dtype=float) * self._rate)

    def pose_batch(self, ts):
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        rot = self._spin(ts)
        r = rot @ self.r0[None]
        p = self.center[None] + np.einsum("kij,j->ki", rot, self.radius_vec)
        return r, p

    def position(self, t):
        return self.pose_batch([t])[1][0]

    def rotation(self, t):
        return self.pose_batch([t])[0][0]

    def velocity_world(self, t):
        rel = self.position(t) - self.center
        return np.cross(self.omega_world, rel)

    def accel_world(self, t):
        rel = self.position(t) - self.center
        return np.cross(self.omega_world, np.cross(self.omega_world, rel))

    def omega_body(self, t):
        return self.rotation(t).T @ self.omega_world

    def velocity_body(self, t):
        return self.rotation(t).T @ self.velocity_world(t)

    def max_speed(self):
        return self._rate * float(np.linalg.norm(self.radius_vec))

    def ideal_imu(self, rate, gravity):
        return _ideal_imu(self, rate, gravity)


def _ideal_imu(traj, rate, gravity):
    """Noise-free IMU stream over the trajectory duration."""
    gravity = np.asarray(gravity, dtype=float)
    n = int(round(traj.duration * rate))
    ts = np.arange(n + 1) / rate
    rs, _ = traj.pose_batch(ts)
    accels = np.empty((len(ts), 3))
    gyros = np.empty((len(ts), 3))
    for k, t in enumerate(ts):
        accels[k] = rs[k].T @ (traj.accel_world(t) - gravity)
        gyros[k] = traj.omega_body(t)
    return ImuData(ts, accels, gyros)


def _look_rotation(forward, up_world=(0.0, 0.0, 1.0)):
    """World-from-body rotation: body z along `forward`, body y downward."""
    z = np.asarray(forward, dtype=float)
    z = z / np.linalg.norm(z)
    x = np.cross(z, np.asarray(up_world, dtype=float))
    if np.linalg.norm(x) < 1e-9:
        raise ValueError("forward direction parallel to up; pick another frame")
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    return np.column_stack([x, y, z])


def make_trajectory(preset, speed=None, omega=None, duration=3.0):
    """Kinematic presets; speed (m/s) / omega (rad/s) default per preset."""
    if preset == "const-vel":
        speed = 2.0 if speed is None else speed
        v_world = np.array([speed, 0.0, 0.0])
        r0 = _look_rotation([1.0, 0.0, 0.0])
        return StraightTrajectory(np.zeros(3), v_world, r0, duration)
    if preset in ("corridor", "boxes"):
        if preset == "corridor":
            speed = 5.68 if speed is None else speed
            omega = 0.66 if omega is None else omega
        else:
            speed = 2.77 if speed is None else speed
            omega = 2.05 if omega is None else omega
        radius = speed / omega
        w_world = np.array([0.0, 0.0, omega])
        radius_vec = np.array([radius, 0.0, 0.0])
        tangent = np.cross(w_world, radius_vec)
        r0 = _look_rotation(tangent)
        return CircularTrajectory(np.zeros(3), radius_vec, w_world, r0, duration)
    if preset == "spin":
        speed = 4.94 if speed is None else speed
        omega = 13.3 if omega is None else omega
        radius = speed / omega
        w_world = np.array([0.0, -omega, 0.0])    # vertical circle in x-z
        radius_vec = np.array([radius, 0.0, 0.0])
        tangent = np.cross(w_world, radius_vec)
        tangent /= np.linalg.norm(tangent)
        y_body = radius_vec / np.linalg.norm(radius_vec)   # "down" = outward
        x_body = np.cross(y_body, tangent)
        r0 = np.column_stack([x_body, y_body, tangent])
        return CircularTrajectory(np.zeros(3), radius_vec, w_world, r0, duration)
    raise ValueError(f"unknown preset {preset!r}")


# --------------------------------------------------------------------------
# scenes
# --------------------------------------------------------------------------

@dataclass
class Scene:
    """Wireframe scene: segment endpoints (E,2,3) and signed log steps (E,)."""

    edges: np.ndarray
    contrast: np.ndarray

    def __post_init__(self):
        self.edges = np.asarray(self.edges, dtype=float)
        self.contrast = np.asarray(self.contrast, dtype=float)
        if self.edges.ndim != 3 or self.edges.shape[1:] != (2, 3):
            raise ValueError("edges must have shape (E, 2, 3)")

    def __len__(self):
        return len(self.edges)


def _filter_edges(edges, contrast, traj, min_clearance=0.2, n_samples=40):
    """Drop edges that come too close to the camera path."""
    ts = np.linspace(0.0, traj.duration, n_samples)
    _, ps = traj.pose_batch(ts)
    mids = 0.5 * (edges[:, 0] + edges[:, 1])
    keep = np.ones(len(edges), dtype=bool)
    for p in ps:
        for pts in (edges[:, 0], edges[:, 1], mids):
            keep &= np.linalg.norm(pts - p[None], axis=1) > min_clearance
    return edges[keep], contrast[keep]


def _check_coverage(scene, traj, cfg: SimConfig, min_front=3, n_samples=30):
    """Every sampled camera pose must see at least `min_front` edges."""
    ts = np.linspace(0.0, traj.duration, n_samples)
    rs, ps = traj.pose_batch(ts)
    for r, p in zip(rs, ps):
        z0 = (scene.edges[:, 0] - p) @ r[:, 2]
        z1 = (scene.edges[:, 1] - p) @ r[:, 2]
        if np.sum((z0 > cfg.z_near) & (z1 > cfg.z_near)) < min_front:
            raise ValueError("scene leaves the camera without visible edges")
    return scene


def _draw_contrast(rng, n, threshold):
    mag = rng.uniform(threshold, 3.0 * threshold, n)
    sign = rng.choice([-1.0, 1.0], n)
    return mag * sign


def make_scene(preset, traj, cfg: SimConfig, rng, n_edges=None):
    """Scene matching a trajectory preset; edges are filtered for clearance."""
    c = cfg.contrast_threshold
    if preset == "const-vel":
        n = 45 if n_edges is None else n_edges
        length = traj.duration * traj.max_speed()
        xs = rng.uniform(1.5, length + 5.0, n)
        ys = rng.uniform(-2.5, 2.5, n)
        zs = rng.uniform(-1.6, 1.6, n)
        ang = rng.uniform(0, np.pi, n)
        elen = rng.uniform(0.4, 1.4, n)
        p0 = np.stack([xs, ys, zs], axis=1)
        d = np.stack([np.zeros(n), np.cos(ang), np.sin(ang)], axis=1)
        edges = np.stack([p0 - 0.5 * elen[:, None] * d,
                          p0 + 0.5 * elen[:, None] * d], axis=1)
    elif preset in ("corridor", "boxes"):
        radius = np.linalg.norm(traj.radius_vec)
        arc = np.linalg.norm(traj.omega_world) * traj.duration
        if preset == "corridor":
            n = 70 if n_edges is None else n_edges
            phis = rng.uniform(-0.3, arc + 1.2, n)
            wall = rng.choice([-1.0, 1.0], n)
            rad = radius + wall * rng.uniform(0.9, 1.6, n)
            vertical = rng.random(n) < 0.7
            base_z = rng.uniform(-1.2, 0.8, n)
            elen = rng.uniform(0.4, 1.4, n)
            p0 = np.stack([rad * np.cos(phis), rad * np.sin(phis), base_z], axis=1)
            d_vert = np.stack([np.zeros(n), np.zeros(n), np.ones(n)], axis=1)
            d_tang = np.stack([-np.sin(phis), np.cos(phis), np.zeros(n)], axis=1)
            d = np.where(vertical[:, None], d_vert, d_tang)
            edges = np.stack([p0, p0 + elen[:, None] * d], axis=1)
        else:
            n = 26 if n_edges is None else n_edges
            phis = rng.uniform(0, 2 * np.pi, n)
            rad = radius + rng.choice([-1.0, 1.0], n) * rng.uniform(0.8, 2.2, n)
            rad = np.abs(rad)
            centers = np.stack([rad * np.cos(phis), rad * np.sin(phis),
                                rng.uniform(-0.8, 0.8, n)], axis=1)
            edges = []
            for ctr in centers:
                size = rng.uniform(0.15, 0.4)
                lo, hi = ctr - size / 2, ctr + size / 2
                corners = np.array([[x, y, z] for x in (lo[0], hi[0])
                                    for y in (lo[1], hi[1]) for z in (lo[2], hi[2])])
                idx = [(0, 1), (2, 3), (4, 5), (6, 7), (0, 2), (1, 3),
                       (4, 6), (5, 7), (0, 4), (1, 5), (2, 6), (3, 7)]
                edges.extend(corners[list(pair)] for pair in idx)
            edges = np.asarray(edges)
    elif preset == "spin":
        n = 22 if n_edges is None else n_edges
        phis = rng.uniform(0, 2 * np.pi, n)       # angle in the spin plane
        rad = rng.uniform(1.8, 3.2, n)
        lateral = rng.uniform(-1.0, 1.0, n)
        p0 = np.stack([rad * np.cos(phis), lateral, rad * np.sin(phis)], axis=1)
        d = rng.normal(size=(n, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        elen = rng.uniform(0.2, 0.45, n)
        edges = np.stack([p0 - 0.5 * elen[:, None] * d,
                          p0 + 0.5 * elen[:, None] * d], axis=1)
    else:
        raise ValueError(f"unknown preset {preset!r}")

    contrast = _draw_contrast(rng, len(edges), c)
    edges, contrast = _filter_edges(edges, contrast, traj)
    scene = Scene(edges, contrast)
    return _check_coverage(scene, traj, cfg)


def tilted_edge_scene(depth=2.0, tilt_deg=30.0, length=3.0, contrast=1.0,
                      n_edges=1, spacing=0.5):
    """Parallel tilted edges on a fronto-parallel plane (test scenes)."""
    t = np.deg2rad(tilt_deg)
    d = np.array([np.sin(t), np.cos(t), 0.0])   # mostly vertical, tilted
    edges = []
    for i in range(n_edges):
        off = (i - (n_edges - 1) / 2) * spacing
        p0 = np.array([off, 0.0, depth]) - 0.5 * length * d
        edges.append([p0, p0 + length * d])
    contrasts = np.full(n_edges, contrast) * np.where(
        np.arange(n_edges) % 2 == 0, 1.0, -1.0)
    return Scene(np.asarray(edges), contrasts)


# --------------------------------------------------------------------------
# event generation
# --------------------------------------------------------------------------

def _camera_positions(traj, ts, offset_x):
    rs, ps = traj.pose_batch(ts)
    if offset_x != 0.0:
        ps = ps + rs[:, :, 0] * offset_x
    return rs, ps


def _project_edges(rs, ps, edges, intr, z_near):
    """Project all edge endpoints at all poses.

    Returns (a, b, valid): a, b are (K, E, 2) pixel positions, valid (K, E)
    requires both endpoints in front of the camera.
    """
    rel0 = edges[None, :, 0, :] - ps[:, None, :]
    rel1 = edges[None, :, 1, :] - ps[:, None, :]
    c0 = np.einsum("kji,kej->kei", rs, rel0)
    c1 = np.einsum("kji,kej->kei", rs, rel1)
    valid = (c0[..., 2] > z_near) & (c1[..., 2] > z_near)
    z0 = np.where(valid, c0[..., 2], 1.0)
    z1 = np.where(valid, c1[..., 2], 1.0)
    a = np.stack([intr.f * c0[..., 0] / z0 + intr.cx,
                  intr.f * c0[..., 1] / z0 + intr.cy], axis=-1)
    b = np.stack([intr.f * c1[..., 0] / z1 + intr.cx,
                  intr.f * c1[..., 1] / z1 + intr.cy], axis=-1)
    return a, b, valid


def _estimate_px_speed(traj, edges, intr, cfg, offset_x):
    ts = np.linspace(0.0, traj.duration, 240)
    rs, ps = _camera_positions(traj, ts, offset_x)
    a, b, valid = _project_edges(rs, ps, edges, intr, cfg.z_near)
    ok = valid[1:] & valid[:-1]
    in_img = ((a[..., 0] > -50) & (a[..., 0] < intr.width + 50)
              & (a[..., 1] > -50) & (a[..., 1] < intr.height + 50))
    ok &= in_img[1:] | in_img[:-1]
    dt = ts[1] - ts[0]
    speeds = []
    for pts in (a, b):
        d = np.linalg.norm(pts[1:] - pts[:-1], axis=-1)
        if np.any(ok):
            speeds.append(np.max(np.where(ok, d, 0.0)) / dt)
    return max(max(speeds, default=1.0), 1.0)


def _ragged_pixel_grid(x0, x1, y0, y1):
    """Flattened integer pixel grids for many bounding boxes at once."""
    wx = x1 - x0 + 1
    wy = y1 - y0 + 1
    counts = wx * wy
    total = int(counts.sum())
    if total == 0:
        return (np.empty(0, np.int64),) * 3
    owner = np.repeat(np.arange(len(counts)), counts)
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    local = np.arange(total) - starts[owner]
    px = x0[owner] + local % wx[owner]
    py = y0[owner] + local // wx[owner]
    return owner, px, py


def _signed_distance(px, py, a, b):
    """Signed distance of pixels to the line through a-b plus edge parameter."""
    ux = b[:, 0] - a[:, 0]
    uy = b[:, 1] - a[:, 1]
    ln = np.hypot(ux, uy)
    ln = np.where(ln < 1e-12, 1.0, ln)
    nx, ny = -uy / ln, ux / ln
    dx = px - a[:, 0]
    dy = py - a[:, 1]
    d = nx * dx + ny * dy
    s = (ux * dx + uy * dy) / (ln * ln)
    return d, s


def generate_events(scene: Scene, traj, rig: StereoRig, cfg: SimConfig,
                    rng=None, camera="left"):
    """Event stream of one camera over the trajectory (sorted, in bounds)."""
    rng = rng or np.random.default_rng(cfg.seed)
    intr = rig.left if camera == "left" else rig.right
    offset_x = 0.0 if camera == "left" else rig.baseline
    if len(scene) == 0:
        return np.empty(0, dtype=EVENT_DTYPE)

    px_speed = _estimate_px_speed(traj, scene.edges, intr, cfg, offset_x)
    dt = max(min(cfg.px_step / (2.0 * px_speed), 2e-3), 2e-6)
    n_steps = int(np.ceil(traj.duration / dt))
    ts = np.linspace(0.0, traj.duration, n_steps + 1)
    dt = ts[1] - ts[0]

    cand_px, cand_py, cand_lo, cand_hi = [], [], [], []
    cand_edge, cand_sign = [], []

    chunk = 256
    for k0 in range(0, n_steps, chunk):
        k1 = min(k0 + chunk, n_steps)
        sub = ts[k0:k1 + 1]
        rs, ps = _camera_positions(traj, sub, offset_x)
        a, b, valid = _project_edges(rs, ps, scene.edges, intr, cfg.z_near)
        step_ok = valid[:-1] & valid[1:]
        # bounding boxes over both endpoints at both step ends
        xs = np.stack([a[:-1, :, 0], b[:-1, :, 0], a[1:, :, 0], b[1:, :, 0]])
        ys = np.stack([a[:-1, :, 1], b[:-1, :, 1], a[1:, :, 1], b[1:, :, 1]])
        x0 = np.clip(np.floor(xs.min(axis=0)) - 1, 0, intr.width - 1).astype(np.int64)
        x1 = np.clip(np.ceil(xs.max(axis=0)) + 1, 0, intr.width - 1).astype(np.int64)
        y0 = np.clip(np.floor(ys.min(axis=0)) - 1, 0, intr.height - 1).astype(np.int64)
        y1 = np.clip(np.ceil(ys.max(axis=0)) + 1, 0, intr.height - 1).astype(np.int64)
        inside = (np.ceil(xs.max(axis=0)) >= 0) & (np.floor(xs.min(axis=0)) <= intr.width - 1) \
            & (np.ceil(ys.max(axis=0)) >= 0) & (np.floor(ys.min(axis=0)) <= intr.height - 1)
        step_ok = step_ok & inside
        sk, se = np.nonzero(step_ok)
        if len(sk) == 0:
            continue
        owner, px, py = _ragged_pixel_grid(x0[sk, se], x1[sk, se],
                                           y0[sk, se], y1[sk, se])
        if len(owner) == 0:
            continue
        ek = se[owner]
        kk = sk[owner]
        d0, s0 = _signed_distance(px, py, a[kk, ek], b[kk, ek])
        # a pixel can only be crossed if it starts within one step's motion
        # of the line; prefilter before the second (costly) distance pass
        motion = np.maximum(
            np.linalg.norm(a[sk + 1, se] - a[sk, se], axis=-1),
            np.linalg.norm(b[sk + 1, se] - b[sk, se], axis=-1))[owner]
        near = (np.abs(d0) <= motion + 1.5) & (s0 > -0.02) & (s0 < 1.02)
        if not np.any(near):
            continue
        owner, px, py, ek, kk, d0 = (arr[near] for arr in
                                     (owner, px, py, ek, kk, d0))
        d1, s1 = _signed_distance(px, py, a[kk + 1, ek], b[kk + 1, ek])
        hit = (d0 * d1 < 0) & (s1 > -0.02) & (s1 < 1.02)
        if not np.any(hit):
            continue
        cand_px.append(px[hit])
        cand_py.append(py[hit])
        cand_lo.append(sub[kk[hit]])
        cand_hi.append(sub[kk[hit] + 1])
        cand_edge.append(ek[hit])
        cand_sign.append(np.sign(d0[hit]))

    if not cand_px:
        return np.empty(0, dtype=EVENT_DTYPE)

    px = np.concatenate(cand_px).astype(float)
    py = np.concatenate(cand_py).astype(float)
    lo = np.concatenate(cand_lo)
    hi = np.concatenate(cand_hi)
    eid = np.concatenate(cand_edge)
    sign_lo = np.concatenate(cand_sign)

    def dist_at(tq):
        rs, ps = _camera_positions(traj, tq, offset_x)
        e0 = scene.edges[eid, 0]
        e1 = scene.edges[eid, 1]
        rel0 = e0 - ps
        rel1 = e1 - ps
        c0 = np.einsum("kji,kj->ki", rs, rel0)
        c1 = np.einsum("kji,kj->ki", rs, rel1)
        z0 = np.maximum(c0[:, 2], 1e-6)
        z1 = np.maximum(c1[:, 2], 1e-6)
        ax = intr.f * c0[:, 0] / z0 + intr.cx
        ay = intr.f * c0[:, 1] / z0 + intr.cy
        bx = intr.f * c1[:, 0] / z1 + intr.cx
        by = intr.f * c1[:, 1] / z1 + intr.cy
        ux, uy = bx - ax, by - ay
        ln = np.hypot(ux, uy)
        ln = np.where(ln < 1e-12, 1.0, ln)
        return (-uy * (px - ax) + ux * (py - ay)) / ln

    # with timestamp jitter applied afterwards, refining crossings far below
    # the jitter scale buys nothing
    tol = 1e-12 if cfg.jitter_std == 0.0 else min(1e-6, 0.01 * cfg.jitter_std)
    n_iter = int(np.clip(np.ceil(np.log2(dt / tol)), 10, 60))
    t_lo, t_hi = lo.copy(), hi.copy()
    for _ in range(n_iter):
        tm = 0.5 * (t_lo + t_hi)
        dm = dist_at(tm)
        same = np.sign(dm) == sign_lo
        t_lo = np.where(same, tm, t_lo)
        t_hi = np.where(same, t_hi, tm)
    t_star = 0.5 * (t_lo + t_hi)

    # a step edge delivers its whole log-intensity change at the crossing
    # instant, so every threshold multiple fires there
    contrast = scene.contrast[eid]
    n_ev = np.maximum(np.floor(np.abs(contrast) / cfg.contrast_threshold
                               + 1e-9).astype(int), 0)
    pol = (np.sign(contrast) * (-sign_lo)).astype(np.int8)
    pol[pol == 0] = 1

    total = int(n_ev.sum())
    if total == 0:
        return np.empty(0, dtype=EVENT_DTYPE)
    owner = np.repeat(np.arange(len(n_ev)), n_ev)
    t_ev = t_star[owner]
    x_ev = px[owner].astype(np.int32)
    y_ev = py[owner].astype(np.int32)
    p_ev = pol[owner]

    if cfg.jitter_std > 0:
        t_ev = t_ev + rng.normal(0.0, cfg.jitter_std, total)
    if cfg.spurious_rate > 0:
        n_sp = rng.poisson(cfg.spurious_rate * traj.duration)
        t_sp = rng.uniform(0.0, traj.duration, n_sp)
        x_sp = rng.integers(0, intr.width, n_sp).astype(np.int32)
        y_sp = rng.integers(0, intr.height, n_sp).astype(np.int32)
        p_sp = rng.choice(np.array([-1, 1], dtype=np.int8), n_sp)
        t_ev = np.concatenate([t_ev, t_sp])
        x_ev = np.concatenate([x_ev, x_sp])
        y_ev = np.concatenate([y_ev, y_sp])
        p_ev = np.concatenate([p_ev, p_sp])

    keep = (t_ev >= 0.0) & (t_ev <= traj.duration)
    t_ev, x_ev, y_ev, p_ev = t_ev[keep], x_ev[keep], y_ev[keep], p_ev[keep]
    order = np.argsort(t_ev, kind="stable")
    return make_events(t_ev[order], x_ev[order], y_ev[order], p_ev[order])


def generate_stereo_events(scene, traj, rig, cfg: SimConfig, rng=None):
    rng = rng or np.random.default_rng(cfg.seed)
    rng_l, rng_r = rng.spawn(2)
    left = generate_events(scene, traj, rig, cfg, rng_l, camera="left")
    right = generate_events(scene, traj, rig, cfg, rng_r, camera="right")
    return left, right


# --------------------------------------------------------------------------
# IMU generation and ground truth
# --------------------------------------------------------------------------

def generate_imu(traj, imu_cfg: ImuConfig, gravity, rng=None, noise=True):
    """Noisy IMU stream plus the true per-sample biases.

    Noise and bias-step standard deviations are per-sample values at the
    configured rate; biases start at zero and follow a random walk.
    """
    rng = rng or np.random.default_rng(0)
    clean = _ideal_imu(traj, imu_cfg.rate_hz, gravity)
    n = len(clean)
    if not noise:
        zero = np.zeros((n, 3))
        return clean, zero, zero
    steps_a = rng.normal(0.0, imu_cfg.acc_bias_std, (n, 3))
    steps_w = rng.normal(0.0, imu_cfg.gyro_bias_std, (n, 3))
    steps_a[0] = 0.0
    steps_w[0] = 0.0
    bias_a = np.cumsum(steps_a, axis=0)
    bias_w = np.cumsum(steps_w, axis=0)
    accel = clean.accel + bias_a + rng.normal(0.0, imu_cfg.acc_noise, (n, 3))
    gyro = clean.gyro + bias_w + rng.normal(0.0, imu_cfg.gyro_noise, (n, 3))
    return ImuData(clean.t, accel, gyro), bias_a, bias_w


@dataclass
class GroundTruth:
    t: np.ndarray
    v_body: np.ndarray
    omega_body: np.ndarray
    quat_wb: np.ndarray
    bias_acc: np.ndarray = None
    bias_gyro: np.ndarray = None


def ground_truth(traj, rate=200.0, bias_acc=None, bias_gyro=None):
    n = int(round(traj.duration * rate))
    ts = np.arange(n + 1) / rate
    rs, _ = traj.pose_batch(ts)
    v_body = np.stack([traj.velocity_body(t) for t in ts])
    omega = np.stack([traj.omega_body(t) for t in ts])
    quats = np.stack([matrix_to_quat(r) for r in rs])
    return GroundTruth(t=ts, v_body=v_body, omega_body=omega, quat_wb=quats,
                       bias_acc=bias_acc, bias_gyro=bias_gyro)


def default_rig(cfg: SimConfig):
    intr = CameraIntrinsics(f=cfg.f, cx=cfg.cx, cy=cfg.cy,
                            width=cfg.width, height=cfg.height)
    return StereoRig(left=intr, right=intr, baseline=cfg.baseline)


# --------------------------------------------------------------------------
# exact observations (estimator bypass) and depth queries
# --------------------------------------------------------------------------

def _project_scene_points(scene, traj, rig, t, camera="left", per_edge=24):
    """Sample points along every edge; project at time t.

    Returns (px (M,2), depth (M,), tangent2d (M,2), edge index (M,)).
    """
    intr = rig.left if camera == "left" else rig.right
    offset_x = 0.0 if camera == "left" else rig.baseline
    rs, ps = _camera_positions(traj, np.array([t]), offset_x)
    r, p = rs[0], ps[0]
    svals = (np.arange(per_edge) + 0.5) / per_edge
    pts = (scene.edges[:, None, 0, :] * (1 - svals)[None, :, None]
           + scene.edges[:, None, 1, :] * svals[None, :, None])   # (E,S,3)
    cam = np.einsum("ji,esj->esi", r, pts - p[None, None, :])
    z = cam[..., 2]
    ok = z > 1e-3
    with np.errstate(divide="ignore", invalid="ignore"):
        u = intr.f * cam[..., 0] / z + intr.cx
        v = intr.f * cam[..., 1] / z + intr.cy
    ok &= (u >= 1) & (u <= intr.width - 2) & (v >= 1) & (v <= intr.height - 2)
    # projected tangent per edge point: derivative of projection along the edge
    e_dir = scene.edges[:, 1] - scene.edges[:, 0]
    d_cam = np.einsum("ji,ej->ei", r, e_dir)
    tan_u = intr.f * (d_cam[:, None, 0] * z - cam[..., 0] * d_cam[:, None, 2]) / z ** 2
    tan_v = intr.f * (d_cam[:, None, 1] * z - cam[..., 1] * d_cam[:, None, 2]) / z ** 2
    eidx = np.broadcast_to(np.arange(len(scene))[:, None], z.shape)
    sel = np.nonzero(ok)
    px = np.stack([u[sel], v[sel]], axis=1)
    tangent = np.stack([tan_u[sel], tan_v[sel]], axis=1)
    return px, z[sel], tangent, eidx[sel]


def exact_observations(scene, traj, rig, t, count=60, camera="left"):
    """Noise-free flow/depth observations straight from geometry.

    Observations are exactly consistent with the projected-flow model at the
    stored integer pixel: the edge point is slid along the edge until it
    projects onto the pixel center, the normal is the unit normal of the
    projected edge oriented с the temporal gradient (the side the edge moves
    toward), and the magnitude is the projection of the true motion flow.
    """
    px, depth, tangent, eidx = _project_scene_points(scene, traj, rig, t, camera)
    if len(px) == 0:
        return []
    intr = rig.left if camera == "left" else rig.right
    offset_x = 0.0 if camera == "left" else rig.baseline
    rs, ps = _camera_positions(traj, np.array([t]), offset_x)
    r, p = rs[0], ps[0]
    v_cam = traj.velocity_body(t)
    omega = traj.omega_body(t)
    if camera == "right":
        v_cam = v_cam + np.cross(omega, np.array([rig.baseline, 0.0, 0.0]))
    kin = BodyKinematics(v=v_cam, omega=omega)
    take = np.unique(np.round(np.linspace(0, len(px) - 1,
                                          min(count, len(px)))).astype(int))
    out = []
    seen = set()
    for i in take:
        pix = np.round(px[i])
        e0, e1 = scene.edges[eidx[i]]
        cam0 = r.T @ (e0 - p)
        d_cam = r.T @ (e1 - e0)

        def project(s_val):
            c = cam0 + s_val * d_cam
            return np.array([intr.f * c[0] / c[2] + intr.cx,
                             intr.f * c[1] / c[2] + intr.cy]), c

        # slide the edge parameter until the point projects at the pixel center
        s = 0.5
        for _ in range(8):
            proj, cam = project(s)
            tan2d = np.array([
                intr.f * (d_cam[0] * cam[2] - cam[0] * d_cam[2]) / cam[2] ** 2,
                intr.f * (d_cam[1] * cam[2] - cam[1] * d_cam[2]) / cam[2] ** 2])
            norm2 = float(tan2d @ tan2d)
            if norm2 < 1e-12:
                break
            ds = float((pix - proj) @ tan2d) / norm2
            s = float(np.clip(s + ds, 0.0, 1.0))
        proj, cam = project(s)
        if np.linalg.norm(proj - pix) > 0.6 or cam[2] <= 1e-3:
            continue
        if not (1 <= pix[0] <= intr.width - 2 and 1 <= pix[1] <= intr.height - 2):
            continue
        key = (int(pix[0]), int(pix[1]))
        if key in seen:
            continue
        seen.add(key)
        tan2d /= np.sqrt(norm2)
        n = np.array([-tan2d[1], tan2d[0]])
        z = float(cam[2])
        flow = motion_flow(intr, pix, kin, z)
        mag = float(n @ flow)
        if mag < 0:
            n, mag = -n, -mag
        if mag < 1e-6:
            continue
        m = NormalFlowMeasurement(
            t=float(t), x=int(pix[0]), y=int(pix[1]),
            direction=n, magnitude=mag, grad=n / max(mag, 1e-12),
            fit_rms=0.0, event_t=float(t), polarity=1)
        out.append(FlowDepthObservation(flow=m, depth=z, weight=1.0))
    return out


def export_dataset(out_dir, preset, cfg: SimConfig, imu_cfg: ImuConfig,
                   gravity, seed=0, speed=None, omega=None, duration=3.0,
                   imu_noise=True):
    """Generate and write a complete dataset; deterministic given the seed.

    Writes event CSVs for both cameras, the IMU stream, calibration,
    ground-truth velocity/orientation/bias CSVs, and a manifest with the
    seed, the parameters and per-file checksums.
    """
    import os

    from . import dataio

    os.makedirs(out_dir, exist_ok=True)
    rng = np.random.default_rng(seed)
    rng_scene, rng_events, rng_imu = rng.spawn(3)
    traj = make_trajectory(preset, speed=speed, omega=omega, duration=duration)
    scene = make_scene(preset, traj, cfg, rng_scene)
    rig = default_rig(cfg)
    ev_left, ev_right = generate_stereo_events(scene, traj, rig, cfg, rng_events)
    imu, bias_a, bias_w = generate_imu(traj, imu_cfg, gravity, rng_imu,
                                       noise=imu_noise)
    gt = ground_truth(traj, rate=imu_cfg.rate_hz, bias_acc=bias_a,
                      bias_gyro=bias_w)

    paths = {
        "events_left": os.path.join(out_dir, "events_left.csv"),
        "events_right": os.path.join(out_dir, "events_right.csv"),
        "imu": os.path.join(out_dir, "imu.csv"),
        "calib": os.path.join(out_dir, "calib.cfg"),
        "gt_velocity": os.path.join(out_dir, "gt_velocity.csv"),
        "gt_orientation": os.path.join(out_dir, "gt_orientation.csv"),
        "gt_bias": os.path.join(out_dir, "gt_bias.csv"),
    }
    dataio.write_events_csv(paths["events_left"], ev_left)
    dataio.write_events_csv(paths["events_right"], ev_right)
    dataio.write_imu_csv(paths["imu"], imu)
    dataio.write_calibration(paths["calib"], rig)
    dataio.write_velocity_csv(paths["gt_velocity"], gt.t, gt.v_body)
    dataio.write_orientation_csv(paths["gt_orientation"], gt.t, gt.quat_wb)
    bias_both = np.concatenate([bias_a, bias_w], axis=1)
    t_ns = np.round(gt.t * 1e9).astype(np.int64)
    with open(paths["gt_bias"], "w") as fh:
        for i in range(len(t_ns)):
            vals = ",".join(f"{v:.12e}" for v in bias_both[i])
            fh.write(f"{t_ns[i]},{vals}\n")

    entries = [
        ("seed", seed), ("preset", preset),
        ("speed", traj.max_speed()),
        ("duration", duration),
        ("contrast_threshold", cfg.contrast_threshold),
        ("jitter_std", cfg.jitter_std),
        ("spurious_rate", cfg.spurious_rate),
        ("imu_rate_hz", imu_cfg.rate_hz),
        ("imu_noise", imu_noise),
        ("events_left", len(ev_left)),
        ("events_right", len(ev_right)),
    ]
    manifest = os.path.join(out_dir, "manifest.txt")
    dataio.write_manifest(manifest, entries, sorted(paths.values()))
    return paths | {"manifest": manifest}


def true_depth_at(scene, traj, rig, t, pixels, camera="left", max_px_dist=1.5):
    """Ground-truth depth at given pixels: depth of the nearest projected edge."""
    px, depth, _, _ = _project_scene_points(scene, traj, rig, t, camera,
                                            per_edge=160)
    pixels = np.atleast_2d(np.asarray(pixels, dtype=float))
    out = np.full(len(pixels), np.nan)
    if len(px) == 0:
        return out
    for i, q in enumerate(pixels):
        d2 = np.sum((px - q[None]) ** 2, axis=1)
        j = int(np.argmin(d2))
        if d2[j] <= max_px_dist ** 2:
            out[i] = depth[j]
    return out


__all__ = [
    "CircularTrajectory", "StraightTrajectory", "Scene", "GroundTruth",
    "make_trajectory", "make_scene", "tilted_edge_scene", "generate_events",
    "generate_stereo_events", "generate_imu", "ground_truth", "default_rig",
    "exact_observations", "true_depth_at",
]
