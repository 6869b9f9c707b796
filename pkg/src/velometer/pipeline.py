"""Offline pipeline: events + IMU in, velocity track + run report out.

Batches the left event stream by count, keeps per-polarity time surfaces for
both cameras, extracts normal flow from the left camera, attaches stereo
depth by block matching against the right surface, and feeds the estimator.
The right camera's flow can optionally contribute residuals too (lever-arm
corrected); by default it only serves depth.
"""

import time

import numpy as np

from .config import PipelineConfig
from .estimator import Estimator, make_flow_block
from .events import EventBatch, ImuData, batch_by_count
from .geometry import StereoRig
from .normal_flow import process_batch
from .rotations import quat_between, quat_identity
from .stereo import associate
from .time_surface import SurfacePair


class EstimationFailure(RuntimeError):
    """The pipeline never reached tracking state."""


def static_initial_orientation(imu: ImuData, gravity, window=0.5):
    """Roll/pitch from averaged specific force over an assumed-static window.

    A resting accelerometer measures -R^T g; the returned world-from-body
    quaternion maps that direction onto -g (yaw is unobservable and left
    zero).
    """
    mask = imu.t <= imu.t[0] + window
    mean_acc = imu.accel[mask].mean(axis=0)
    g = np.asarray(gravity, dtype=float)
    if np.linalg.norm(mean_acc) < 1e-6:
        return quat_identity()
    # want R @ mean_acc == -g  =>  rotate mean_acc onto -g
    return quat_between(mean_acc, -g)


class VelocityPipeline:
    def __init__(self, rig: StereoRig, config: PipelineConfig = None):
        self.rig = rig
        self.cfg = config or PipelineConfig()
        w, h = rig.left.width, rig.left.height
        self.left_surfaces = SurfacePair.create(w, h)
        self.right_surfaces = SurfacePair.create(w, h)
        self.estimator = Estimator(rig, self.cfg)
        self.flow_log = []          # (t, measurement) for the debug dump

    def run(self, events_left, events_right, imu: ImuData, q0=None,
            keep_flow_log=False):
        """Process complete streams; returns (times, velocities, report)."""
        cfg = self.cfg
        est = self.estimator
        t_start = time.perf_counter()
        if q0 is None:
            q0 = static_initial_orientation(imu, cfg.gravity_vec())
        est.set_initial_orientation(imu.t[0], q0)
        est.feed_imu(imu)

        batches = batch_by_count(events_left, cfg.flow.batch_size)
        right_cursor = 0
        right_t = events_right["t"] if len(events_right) else np.empty(0)
        for batch_idx, batch in enumerate(batches):
            if batch.t_end > imu.t[-1]:
                break
            # bring the right camera's surfaces up to this batch's window
            hi = int(np.searchsorted(right_t, batch.t_end, side="right"))
            right_batch = None
            if hi > right_cursor:
                chunk = events_right[right_cursor:hi]
                right_batch = EventBatch(chunk, float(chunk["t"][0]),
                                         max(float(chunk["t"][-1]), batch.t_end))
                self.right_surfaces.update(right_batch)
                right_cursor = hi
            self.left_surfaces.update(batch)
            if batch_idx < cfg.flow.warmup_batches:
                continue    # surfaces need history before plane fits mean much

            flows = process_batch(batch, self.left_surfaces, cfg.flow)
            window = (batch.t_start, batch.t_end)
            obs = associate(flows, self.left_surfaces.combined(),
                            self.right_surfaces.combined(), window,
                            self.rig, cfg.depth)
            est.report.flows += len(flows)
            if keep_flow_log:
                self.flow_log.extend(flows)

            extra_blocks = []
            if cfg.estimator.use_right_flows and right_batch is not None:
                extra_blocks = self._right_flow_blocks(right_batch, window)
            est.step(obs, batch.t_end)
            if est.status == "tracking":
                est.flow_blocks.extend(extra_blocks)

        est.finalize()
        est.report.wall_time = time.perf_counter() - t_start
        if len(events_left):
            est.report.data_duration = float(events_left["t"][-1]
                                             - events_left["t"][0])
        ts, vs = est.velocity_track()
        if est.status != "tracking" or len(ts) == 0:
            raise EstimationFailure("pipeline never reached tracking state")
        return ts, vs, est.report

    def _right_flow_blocks(self, right_batch, window):
        """Normal flow on the right camera, depth matched back to the left."""
        cfg = self.cfg
        flows = process_batch(right_batch, self.right_surfaces, cfg.flow)
        if not flows:
            return []
        obs = associate(flows, self.right_surfaces.combined(),
                        self.left_surfaces.combined(), window,
                        self.rig, cfg.depth, reverse=True)
        if not obs:
            return []
        t = window[1]
        gyro_raw = self.estimator.imu.interp_gyro(t)
        return [make_flow_block(obs, t, gyro_raw, self.rig.right,
                                cam_offset=self.rig.baseline)]
