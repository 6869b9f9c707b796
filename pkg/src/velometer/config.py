"""Dataclass configuration for the whole pipeline.

All knobs can be overridden with dotted keys, e.g. ``flow.mode=benosman`` or
``spline.knot_dt=0.05``, either from the command line or from a plain
``key = value`` text file.
"""

from dataclasses import dataclass, field, fields, replace

import numpy as np


@dataclass
class FlowConfig:
    batch_size: int = 45000          # events per batch
    border_margin: int = 5           # px, events closer to a border are culled
    min_neighbors: int = 15          # keep an event only with > this many valid neighbors
    time_dev_frac: float = 0.05      # allowed |t - mean(neighbor t)| as fraction of batch duration
    patch_radius: int = 2            # 5x5 neighborhood
    min_grad: float = 1e-4           # s/px, gradients below reject the measurement
    max_flow: float = 5000.0         # px/s, magnitudes above reject the measurement
    mode: str = "corrected"          # "corrected" | "benosman"
    min_batch_duration: float = 1e-6
    max_measurements: int = 800      # per-batch cap on plane fits (evenly subsampled)
    min_plane_points: int = 6
    refit_rms_factor: float = 2.0    # robust re-fit discards residuals > factor * rms
    warmup_batches: int = 1          # batches that only build the surfaces


@dataclass
class DepthConfig:
    max_disparity: int = 48
    block: int = 17
    score_min: float = 0.7
    margin: float = 1.1              # best score must exceed second peak by this ratio
    min_disparity: int = 1
    min_valid_frac: float = 0.5
    value_scale: float = 0.15        # rmse (window units) at which score drops to 1/e


@dataclass
class ImuConfig:
    rate_hz: float = 200.0
    # per-sample standard deviations at rate_hz
    acc_noise: float = 1.86e-2       # m/s^2
    gyro_noise: float = 1.86e-3      # rad/s
    acc_bias_std: float = 4.33e-3    # m/s^2, per-sample bias random-walk step
    gyro_bias_std: float = 2.66e-4   # rad/s
    preint_dt: float = 0.03          # s, pre-integration interval
    max_gap_factor: float = 2.0      # reject intervals with sample gaps > factor / rate
    bias_max: float = 1.0            # sanity bound on bias magnitudes


@dataclass
class SplineConfig:
    knot_dt: float = 0.1             # s between knots
    window_segments: int = 10        # segments kept in the sliding window
    max_extrap_dv: float = 10.0      # m/s, cap on the extrapolated increment per knot


@dataclass
class EstimatorConfig:
    flow_sigma: float = 10.0         # px/s, fixed normal-flow measurement std
    flow_sigma_rel: float = 0.04     # plane-fit error grows with flow speed
    robust: bool = True
    huber_delta: float = 2.0         # in whitened units
    lm_lambda0: float = 1e-4
    lm_lambda_max: float = 1e8
    lm_max_iters: int = 10
    cost_tol: float = 1e-6
    step_tol: float = 1e-8
    ransac_eps: float = 15.0         # px/s inlier threshold for the linear initializer
    ransac_eps_frac: float = 0.05    # relative part of the inlier threshold
    ransac_conf: float = 0.99
    ransac_max_iters: int = 200
    min_inlier_ratio: float = 0.3
    cond_max: float = 1e6            # singular-value ratio flagged as rank deficient
    seed: int = 0
    output_hz: float = 75.0
    output_lag: float = 0.1          # s, emit only states refined by later batches
    max_step_velocity: float = 20.0  # m/s, trust-region cap per LM step and control point
    max_step_bias: float = 0.5       # cap on bias moves per LM step
    anchor_sigma: float = 0.0        # m/s, optional prior tying control points to
                                     # the state at optimize entry (0 disables)
    use_right_flows: bool = False
    bias_tie: bool = True            # random-walk tie between consecutive segment biases
    bias_prior_acc: float = 0.1      # weak zero prior, m/s^2
    bias_prior_gyro: float = 0.02    # rad/s
    reintegrate: bool = False        # re-integrate IMU with current bias each iteration
    min_imu_dt: float = 1e-3         # reject degenerate pre-integration intervals


@dataclass
class SimConfig:
    width: int = 346
    height: int = 260
    f: float = 230.0
    cx: float = 173.0
    cy: float = 130.0
    baseline: float = 0.1            # m (not stated by the data model; exposed here)
    contrast_threshold: float = 0.5  # log-intensity step that triggers one event
    jitter_std: float = 1e-4         # s, per-event timestamp jitter
    spurious_rate: float = 0.0       # Hz, uniformly random noise events over the array
    z_near: float = 0.25             # m, geometry closer than this is skipped
    px_step: float = 3.0             # max projected motion per coarse sweep step
    seed: int = 0


@dataclass
class PipelineConfig:
    gravity: tuple = (0.0, 0.0, -9.81)   # world-frame gravity, z up
    flow: FlowConfig = field(default_factory=FlowConfig)
    depth: DepthConfig = field(default_factory=DepthConfig)
    imu: ImuConfig = field(default_factory=ImuConfig)
    spline: SplineConfig = field(default_factory=SplineConfig)
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    sim: SimConfig = field(default_factory=SimConfig)

    def gravity_vec(self):
        return np.asarray(self.gravity, dtype=float)


def _coerce(current, text):
    if isinstance(current, bool):
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"cannot parse boolean from {text!r}")
    if isinstance(current, int):
        return int(text)
    if isinstance(current, float):
        return float(text)
    if isinstance(current, tuple):
        return tuple(float(v) for v in text.split(","))
    return text


def apply_override(cfg: PipelineConfig, key: str, value: str):
    """Set one dotted-key option, e.g. apply_override(cfg, "flow.mode", "benosman")."""
    parts = key.split(".")
    target = cfg
    for part in parts[:-1]:
        if not any(f.name == part for f in fields(target)):
            raise KeyError(f"unknown config section {part!r} in {key!r}")
        target = getattr(target, part)
    leaf = parts[-1]
    if not any(f.name == leaf for f in fields(target)):
        raise KeyError(f"unknown config key {key!r}")
    setattr(target, leaf, _coerce(getattr(target, leaf), value))


def load_overrides(cfg: PipelineConfig, path):
    """Apply `key = value` lines from a file; '#' starts a comment."""
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            apply_override(cfg, key, value)
    return cfg


def clone_config(cfg: PipelineConfig) -> PipelineConfig:
    return replace(
        cfg,
        flow=replace(cfg.flow),
        depth=replace(cfg.depth),
        imu=replace(cfg.imu),
        spline=replace(cfg.spline),
        estimator=replace(cfg.estimator),
        sim=replace(cfg.sim),
    )
