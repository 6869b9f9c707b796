"""Sliding-window MAP estimation of the velocity spline and IMU biases.

Two residual families are stacked into one damped Gauss-Newton problem:

  * normal-flow rows: measured flow speed minus the speed predicted from the
    spline velocity, the depth and the bias-corrected gyro rate, whitened by
    a fixed flow standard deviation and per-observation quality weights,
    optionally robustified with a Huber loss;
  * pre-integration rows: measured velocity increment minus the increment
    predicted from the spline at both interval ends and the gravity
    direction, whitened by the propagated measurement covariance.

States are the spline control points plus one accelerometer/gyro bias pair
per spline segment; a weak random-walk tie couples neighboring biases and a
wide prior keeps unobserved biases bounded. Orientation is not estimated: it
comes from gyro integration and only feeds the gravity direction and the
rotational flow component.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from .config import PipelineConfig
from .events import ImuData, SequencingError
from .geometry import CameraIntrinsics, StereoRig
from .imu import (ImuBias, OrientationTrack, Preintegration, preintegrate,
                  split_intervals)
from .initializer import InitializationError, ransac_initialize
from .rotations import hat, quat_to_matrix, right_jacobian_so3
from .spline import VelocitySpline

DV_STD_FLOOR = 1e-5     # m/s, keeps whitening finite for noise-free config


def _flow_rows(intr: CameraIntrinsics, xs, ys, directions):
    """Batched n^T A and n^T B rows of the projected-flow model."""
    xr = xs - intr.cx
    yr = ys - intr.cy
    f = intr.f
    nx, ny = directions[:, 0], directions[:, 1]
    a_rows = np.stack([-f * nx, -f * ny, nx * xr + ny * yr], axis=1)
    b_rows = np.stack([
        nx * xr * yr / f + ny * (f + yr * yr / f),
        -nx * (f + xr * xr / f) - ny * xr * yr / f,
        nx * yr - ny * xr,
    ], axis=1)
    return a_rows, b_rows


@dataclass
class FlowBlock:
    """All flow observations of one batch (they share a timestamp)."""

    t: float
    a_rows: np.ndarray       # (K, 3) n^T A
    nb_rows: np.ndarray      # (K, 3) effective n^T B (camera offset folded in)
    depth: np.ndarray        # (K,)
    magnitude: np.ndarray    # (K,)
    weight: np.ndarray       # (K,)
    gyro_raw: np.ndarray     # (3,) raw gyro interpolated at t
    pixels: np.ndarray = None

    def __len__(self):
        return len(self.depth)


def make_flow_block(observations, t, gyro_raw, intr: CameraIntrinsics,
                    cam_offset=0.0):
    """Vectorize a list of FlowDepthObservation into one block.

    `cam_offset` is the camera center's x offset in the body frame (nonzero
    for right-camera flows); it folds the lever-arm velocity into the
    rotational term.
    """
    xs = np.array([float(o.flow.x) for o in observations])
    ys = np.array([float(o.flow.y) for o in observations])
    dirs = np.stack([o.flow.direction for o in observations])
    a_rows, b_rows = _flow_rows(intr, xs, ys, dirs)
    depth = np.array([o.depth for o in observations])
    if cam_offset != 0.0:
        lever = hat(np.array([cam_offset, 0.0, 0.0]))
        b_rows = b_rows - (a_rows / depth[:, None]) @ lever
    return FlowBlock(
        t=float(t), a_rows=a_rows, nb_rows=b_rows, depth=depth,
        magnitude=np.array([o.flow.magnitude for o in observations]),
        weight=np.array([o.weight for o in observations]),
        gyro_raw=np.asarray(gyro_raw, dtype=float),
        pixels=np.stack([xs, ys], axis=1))


def huber_weights(r, delta):
    """IRLS weights and robust cost for a Huber loss on whitened residuals."""
    a = np.abs(r)
    w = np.where(a <= delta, 1.0, delta / np.maximum(a, 1e-300))
    rho = np.where(a <= delta, r * r, 2.0 * delta * a - delta * delta)
    return w, rho


@dataclass
class OptimizeReport:
    cost_before: float
    cost_after: float
    iterations: int
    converged: bool
    lambda_final: float


@dataclass
class RunReport:
    init_time: float = None
    init_attempts: int = 0
    batches: int = 0
    flows: int = 0
    observations: int = 0
    imu_intervals: int = 0
    lm_iterations: int = 0
    optimizations: int = 0
    cost_drops: list = field(default_factory=list)
    wall_time: float = 0.0
    data_duration: float = 0.0

    def to_text(self):
        lines = [
            f"init_time_s: {self.init_time}",
            f"init_attempts: {self.init_attempts}",
            f"batches: {self.batches}",
            f"flow_measurements: {self.flows}",
            f"flow_depth_observations: {self.observations}",
            f"imu_intervals: {self.imu_intervals}",
            f"optimizations: {self.optimizations}",
            f"lm_iterations: {self.lm_iterations}",
            f"wall_time_s: {self.wall_time:.3f}",
            f"data_duration_s: {self.data_duration:.3f}",
        ]
        if self.data_duration > 0 and self.wall_time > 0:
            lines.append(f"realtime_factor: {self.wall_time / self.data_duration:.3f}")
        if self.cost_drops:
            drops = np.asarray(self.cost_drops)
            lines.append(f"mean_cost_drop: {drops.mean():.6g}")
        return "\n".join(lines) + "\n"


class Estimator:
    """Owns the spline window, the buffers and the optimization."""

    def __init__(self, rig: StereoRig, config: PipelineConfig):
        self.rig = rig
        self.cfg = config
        self.gravity = config.gravity_vec()
        self.spline: VelocitySpline = None
        self.orientation: OrientationTrack = None
        self.imu: ImuData = None
        self.flow_blocks = []
        self.preints = []
        self.status = "uninitialized"
        self.rng = np.random.default_rng(config.estimator.seed)
        self.last_batch_t = -np.inf
        self.last_preint_end = None
        self.velocity_samples = []       # (t, v) emitted at the output rate
        self._next_emit_idx = 0
        self.report = RunReport()

    # ------------------------------------------------------------------
    # data feeding
    # ------------------------------------------------------------------

    def set_initial_orientation(self, t0, q0):
        self.orientation = OrientationTrack(t0, q0, self.gravity)

    def feed_imu(self, imu: ImuData):
        if self.imu is None:
            self.imu = imu
        else:
            if imu.t[0] < self.imu.t[-1] - 1e-12:
                raise SequencingError("IMU chunk overlaps already-fed data")
            self.imu = ImuData(np.concatenate([self.imu.t, imu.t]),
                               np.vstack([self.imu.accel, imu.accel]),
                               np.vstack([self.imu.gyro, imu.gyro]))
        if self.orientation is None:
            raise RuntimeError("set_initial_orientation before feeding IMU")
        self.orientation.extend(self.imu)

    # ------------------------------------------------------------------
    # residual builders
    # ------------------------------------------------------------------

    def current_bias(self, t=None):
        if self.spline is None:
            return ImuBias()
        if t is None:
            return self.spline.biases[-1]
        return self.spline.bias_at(t)

    def _flow_sigma_scale(self, block: FlowBlock):
        cfg = self.cfg.estimator
        sigma = np.maximum(cfg.flow_sigma, cfg.flow_sigma_rel * block.magnitude)
        return block.weight / sigma

    def flow_residual_block(self, block: FlowBlock, control_points=None,
                            biases=None):
        """Whitened flow residuals and Jacobians for one block.

        Returns (r (K,), jac_cp (K, 12), jac_bw (K, 3), segment index).
        """
        sp = self.spline
        cp = sp.control_points if control_points is None else control_points
        bs = sp.biases if biases is None else biases
        j, w = sp.weights(block.t)
        v = w @ cp[j:j + 4]
        omega = block.gyro_raw - bs[j].gyro
        scale = self._flow_sigma_scale(block)
        pred = block.a_rows @ v / block.depth + block.nb_rows @ omega
        r = (block.magnitude - pred) * scale
        a_scaled = -(block.a_rows / block.depth[:, None]) * scale[:, None]
        jac_cp = (a_scaled[:, None, :] * w[None, :, None]).reshape(len(block), 12)
        jac_bw = block.nb_rows * scale[:, None]
        return r, jac_cp, jac_bw, j

    def build_normal_flow_residual(self, obs, cam_offset=0.0):
        """Single-observation residual (value, 12 control-point Jacobians,
        gyro-bias Jacobian, segment index)."""
        gyro_raw = self.imu.interp_gyro(obs.t)
        block = make_flow_block([obs], obs.t, gyro_raw, self.rig.left, cam_offset)
        r, jac_cp, jac_bw, j = self.flow_residual_block(block)
        return float(r[0]), jac_cp[0], jac_bw[0], j

    def imu_residual(self, pre: Preintegration, control_points=None,
                     biases=None):
        """Whitened pre-integration residual and Jacobians.

        Returns (r (3,), jac_cp0 (3,12), seg0, jac_cp1 (3,12), seg1,
        jac_bias (3,6), bias segment index).
        """
        if pre.dt < self.cfg.estimator.min_imu_dt:
            raise ValueError(f"interval of {pre.dt}s too short")
        sp = self.spline
        cp = sp.control_points if control_points is None else control_points
        bs = sp.biases if biases is None else biases
        t_mid = 0.5 * (pre.t0 + pre.t1)
        seg_b, _ = sp.segment_of(t_mid)
        j0, w0 = sp.weights(pre.t0)
        j1, w1 = sp.weights(pre.t1)
        v0 = w0 @ cp[j0:j0 + 4]
        v1 = w1 @ cp[j1:j1 + 4]
        bias = bs[seg_b]
        dv, dq, phi = pre.corrected(bias)
        rot = quat_to_matrix(dq)
        g_hat = -self.orientation.gravity_in_body(pre.t0)
        e = dv - (rot @ v1 + g_hat * pre.dt - v0)
        l_mat = np.linalg.cholesky(pre.cov + (DV_STD_FLOOR ** 2) * np.eye(3))
        l_inv = np.linalg.inv(l_mat)
        r = l_inv @ e
        jac_cp0 = (l_inv[:, None, :] * w0[None, :, None]).reshape(3, 12)
        lr = -l_inv @ rot
        jac_cp1 = (lr[:, None, :] * w1[None, :, None]).reshape(3, 12)
        jac_ba = l_inv @ pre.jac_dv_ba
        jac_bw = l_inv @ (pre.jac_dv_bw
                          + rot @ hat(v1) @ right_jacobian_so3(phi) @ pre.jac_dq_bw)
        jac_bias = np.concatenate([jac_ba, jac_bw], axis=1)
        return r, jac_cp0, j0, jac_cp1, j1, jac_bias, seg_b

    build_imu_residual = imu_residual

    # ------------------------------------------------------------------
    # optimization
    # ------------------------------------------------------------------

    def _pack(self):
        cp = self.spline.control_points
        bs = np.concatenate([np.concatenate([b.accel, b.gyro])
                             for b in self.spline.biases])
        return np.concatenate([cp.ravel(), bs])

    def _unpack(self, x):
        n = self.spline.num_controls
        cp = x[:3 * n].reshape(n, 3)
        biases = []
        for k in range(self.spline.num_segments):
            raw = x[3 * n + 6 * k:3 * n + 6 * k + 6]
            biases.append(ImuBias(raw[:3].copy(), raw[3:].copy()))
        return cp, biases

    def _assemble(self, x, anchor=None):
        """Stacked whitened residual, Jacobian and robust cost at state x.

        `anchor` optionally ties every control point to a reference value
        with a wide prior, giving otherwise-unconstrained directions a
        diagonal and bounding excursions of barely-observed tail states.
        """
        est_cfg = self.cfg.estimator
        sp = self.spline
        n = sp.num_controls
        m = sp.num_segments
        ncols = 3 * n + 6 * m
        cp, biases = self._unpack(x)

        rows_r = []
        rows_j = []
        cost = 0.0

        if anchor is not None and est_cfg.anchor_sigma > 0:
            inv = 1.0 / est_cfg.anchor_sigma
            r = (cp - anchor).ravel() * inv
            jmat = np.zeros((3 * n, ncols))
            jmat[:, :3 * n] = np.eye(3 * n) * inv
            cost += float(r @ r)
            rows_r.append(r)
            rows_j.append(jmat)

        for block in self.flow_blocks:
            r, jac_cp, jac_bw, j = self.flow_residual_block(block, cp, biases)
            jmat = np.zeros((len(block), ncols))
            jmat[:, 3 * j:3 * j + 12] = jac_cp
            col = 3 * n + 6 * j
            jmat[:, col + 3:col + 6] = jac_bw
            if est_cfg.robust:
                w, rho = huber_weights(r, est_cfg.huber_delta)
                cost += float(rho.sum())
                sw = np.sqrt(w)
                r = r * sw
                jmat = jmat * sw[:, None]
            else:
                cost += float(r @ r)
            rows_r.append(r)
            rows_j.append(jmat)

        for pre in self.preints:
            r, jc0, j0, jc1, j1, jb, seg = self.imu_residual(pre, cp, biases)
            jmat = np.zeros((3, ncols))
            jmat[:, 3 * j0:3 * j0 + 12] += jc0
            jmat[:, 3 * j1:3 * j1 + 12] += jc1
            col = 3 * n + 6 * seg
            jmat[:, col:col + 6] += jb
            cost += float(r @ r)
            rows_r.append(r)
            rows_j.append(jmat)

        imu_cfg = self.cfg.imu
        if est_cfg.bias_tie and m > 1:
            n_seg_samples = max(self.cfg.spline.knot_dt * imu_cfg.rate_hz, 1.0)
            sig_a = imu_cfg.acc_bias_std * np.sqrt(n_seg_samples)
            sig_w = imu_cfg.gyro_bias_std * np.sqrt(n_seg_samples)
            inv = np.concatenate([np.full(3, 1.0 / sig_a), np.full(3, 1.0 / sig_w)])
            for k in range(m - 1):
                b0 = np.concatenate([biases[k].accel, biases[k].gyro])
                b1 = np.concatenate([biases[k + 1].accel, biases[k + 1].gyro])
                r = (b1 - b0) * inv
                jmat = np.zeros((6, ncols))
                c0 = 3 * n + 6 * k
                jmat[:, c0:c0 + 6] = -np.diag(inv)
                jmat[:, c0 + 6:c0 + 12] = np.diag(inv)
                cost += float(r @ r)
                rows_r.append(r)
                rows_j.append(jmat)

        inv_prior = np.concatenate([np.full(3, 1.0 / est_cfg.bias_prior_acc),
                                    np.full(3, 1.0 / est_cfg.bias_prior_gyro)])
        for k in range(m):
            b = np.concatenate([biases[k].accel, biases[k].gyro])
            r = b * inv_prior
            jmat = np.zeros((6, ncols))
            c0 = 3 * n + 6 * k
            jmat[:, c0:c0 + 6] = np.diag(inv_prior)
            cost += float(r @ r)
            rows_r.append(r)
            rows_j.append(jmat)

        return np.concatenate(rows_r), np.vstack(rows_j), cost

    def optimize(self, max_iters=None, lambda0=None) -> OptimizeReport:
        """Damped Gauss-Newton on the current window; state kept on failure."""
        est_cfg = self.cfg.estimator
        max_iters = est_cfg.lm_max_iters if max_iters is None else max_iters
        lam = est_cfg.lm_lambda0 if lambda0 is None else lambda0

        if self.cfg.estimator.reintegrate:
            self._reintegrate_window()

        x = self._pack()
        anchor = self.spline.control_points.copy()
        n_cp = 3 * self.spline.num_controls
        r, jmat, cost = self._assemble(x, anchor)
        cost0 = cost
        iters = 0
        converged = False
        while iters < max_iters:
            iters += 1
            g = jmat.T @ r
            h = jmat.T @ jmat
            d = np.diag(h).copy() + 1e-9
            accepted = False
            while lam <= est_cfg.lm_lambda_max:
                try:
                    step = np.linalg.solve(h + lam * np.diag(d), -g)
                except np.linalg.LinAlgError:
                    lam *= 10.0
                    continue
                if np.linalg.norm(step) < est_cfg.step_tol:
                    converged = True
                    accepted = True
                    break
                # trust region: reject steps that move any state implausibly far
                if (np.max(np.abs(step[:n_cp])) > est_cfg.max_step_velocity
                        or np.max(np.abs(step[n_cp:]), initial=0.0)
                        > est_cfg.max_step_bias):
                    lam *= 10.0
                    continue
                x_new = x + step
                r_new, j_new, cost_new = self._assemble(x_new, anchor)
                if cost_new < cost:
                    rel_drop = (cost - cost_new) / max(cost, 1e-300)
                    x, r, jmat, cost = x_new, r_new, j_new, cost_new
                    lam = max(lam / 10.0, 1e-12)
                    accepted = True
                    if rel_drop < est_cfg.cost_tol:
                        converged = True
                    break
                lam *= 10.0
            if not accepted:
                break
            if converged:
                break

        success = converged or cost < cost0 or iters == 0
        if cost <= cost0:
            cp, biases = self._unpack(x)
            self.spline.control_points = cp
            self.spline.biases = biases
        self.report.lm_iterations += iters
        self.report.optimizations += 1
        self.report.cost_drops.append(cost0 - cost)
        return OptimizeReport(cost_before=cost0, cost_after=min(cost, cost0),
                              iterations=iters, converged=bool(success),
                              lambda_final=lam)

    def _reintegrate_window(self):
        redone = []
        for pre in self.preints:
            t_mid = 0.5 * (pre.t0 + pre.t1)
            seg, _ = self.spline.segment_of(t_mid)
            redone.append(preintegrate(self.imu, pre.t0, pre.t1,
                                       self.spline.biases[seg], self.cfg.imu))
        self.preints = redone

    # ------------------------------------------------------------------
    # incremental interface
    # ------------------------------------------------------------------

    def _try_initialize(self, observations, t):
        est_cfg = self.cfg.estimator
        self.report.init_attempts += 1
        gyro = self.imu.interp_gyro(t)
        omega = gyro - self.current_bias().gyro
        result = ransac_initialize(observations, omega, self.rig.left,
                                   est_cfg, self.rng)
        dt = self.cfg.spline.knot_dt
        self.spline = VelocitySpline(
            t - 3.0 * dt, dt, np.tile(result.velocity, (4, 1)))
        self.last_preint_end = t
        self.status = "initialized"
        if self.report.init_time is None:
            self.report.init_time = t
        return result

    def _extend_preints(self, t_to):
        knots = self.spline.knots()
        t_from = self.last_preint_end
        if t_to <= t_from + self.cfg.estimator.min_imu_dt:
            return
        for a, b in split_intervals(t_from, t_to, self.cfg.imu.preint_dt, knots):
            if b - a < self.cfg.estimator.min_imu_dt:
                continue
            t_mid = 0.5 * (a + b)
            seg, _ = self.spline.segment_of(t_mid)
            pre = preintegrate(self.imu, a, b, self.spline.biases[seg],
                               self.cfg.imu)
            self.preints.append(pre)
            self.last_preint_end = b
            self.report.imu_intervals += 1

    def _emit_velocity(self, t_to):
        hz = self.cfg.estimator.output_hz
        t_to = t_to - self.cfg.estimator.output_lag
        while True:
            t = self._next_emit_idx / hz
            if t > t_to or t >= self.spline.t_max:
                break
            if t >= self.spline.t_min:
                self.velocity_samples.append((t, self.spline.velocity(t)))
            self._next_emit_idx += 1

    def finalize(self):
        """Emit the remaining lagged samples after the last batch."""
        if self.status == "tracking":
            self._emit_velocity(self.last_batch_t
                                + self.cfg.estimator.output_lag)

    def step(self, observations, t_batch):
        """Ingest one batch of flow/depth observations stamped at t_batch.

        IMU data через feed_imu must already cover t_batch. Returns the
        OptimizeReport, or None while initialization has not succeeded.
        """
        if t_batch <= self.last_batch_t:
            raise SequencingError(
                f"batch at {t_batch} not after previous {self.last_batch_t}")
        if self.imu is None or self.imu.t[-1] < t_batch - 1e-9:
            raise SequencingError("IMU data does not cover the batch time")
        self.last_batch_t = t_batch
        self.report.batches += 1
        self.report.observations += len(observations)

        if self.status == "uninitialized":
            if len(observations) < 3:
                return None
            try:
                self._try_initialize(observations, t_batch)
            except InitializationError:
                return None

        self.spline.extend_to(t_batch + 1e-9,
                              max_dv=self.cfg.spline.max_extrap_dv)
        if observations:
            gyro_raw = self.imu.interp_gyro(t_batch)
            self.flow_blocks.append(make_flow_block(
                observations, t_batch, gyro_raw, self.rig.left))
        self._extend_preints(t_batch)
        report = self.optimize()
        self.status = "tracking"
        self._emit_velocity(t_batch)

        horizon = t_batch - self.cfg.spline.window_segments * self.cfg.spline.knot_dt
        if horizon > self.spline.t_min:
            before = self.spline.num_controls
            self.spline.drop_oldest(horizon)
            if self.spline.num_controls < before:
                t_min = self.spline.t_min
                self.preints = [p for p in self.preints if p.t0 >= t_min - 1e-9]
                self.flow_blocks = [b for b in self.flow_blocks
                                    if b.t >= t_min - 1e-9]
        return report

    def velocity_track(self):
        if not self.velocity_samples:
            return np.empty(0), np.empty((0, 3))
        ts = np.array([s[0] for s in self.velocity_samples])
        vs = np.stack([s[1] for s in self.velocity_samples])
        return ts, vs
