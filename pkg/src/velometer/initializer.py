"""Linear bootstrap of the body velocity from one batch of observations.

Each flow/depth pair contributes one linear constraint on v:

    (n^T A) v = Z * (magnitude - n^T B omega)

Three independent rows determine v; RANSAC over minimal triples makes the
solve robust to flow or depth outliers. Residuals are expressed in px/s
(row residual divided by Z) so the inlier threshold has flow units.
"""

from dataclasses import dataclass

import numpy as np

from .config import EstimatorConfig
from .geometry import CameraIntrinsics, flow_matrices


class InitializationError(RuntimeError):
    def __init__(self, reason, message=None):
        super().__init__(message or reason)
        self.reason = reason


@dataclass
class InitResult:
    velocity: np.ndarray
    inliers: np.ndarray      # indices into the observation list
    rms: float               # px/s over the inliers
    iterations: int


def constraint_rows(observations, omega, intr: CameraIntrinsics):
    """Stack (a_rows, rhs, depths): a_rows @ v = rhs, residual scaled by 1/Z."""
    a_rows = np.empty((len(observations), 3))
    rhs = np.empty(len(observations))
    depths = np.empty(len(observations))
    omega = np.asarray(omega, dtype=float)
    for i, obs in enumerate(observations):
        a, b = flow_matrices(intr, (obs.flow.x, obs.flow.y))
        n = obs.flow.direction
        a_rows[i] = n @ a
        rhs[i] = obs.depth * (obs.flow.magnitude - n @ (b @ omega))
        depths[i] = obs.depth
    return a_rows, rhs, depths


def _condition_ratio(mat):
    s = np.linalg.svd(mat, compute_uv=False)
    if s[-1] <= 0:
        return np.inf
    return s[0] / s[-1]


def ransac_initialize(observations, omega, intr: CameraIntrinsics,
                      cfg: EstimatorConfig = None, rng=None) -> InitResult:
    """RANSAC over 3-observation minimal solves; raises InitializationError.

    Failure reasons: "too_few_observations", "rank_deficient" (all usable
    systems have a singular-value ratio beyond cfg.cond_max, e.g. every flow
    coming from one straight edge), "low_inlier_ratio".
    """
    cfg = cfg or EstimatorConfig()
    rng = rng or np.random.default_rng(cfg.seed)
    k = len(observations)
    if k < 3:
        raise InitializationError("too_few_observations",
                                  f"need at least 3 observations, got {k}")
    a_rows, rhs, depths = constraint_rows(observations, omega, intr)
    mags = np.array([o.flow.magnitude for o in observations])
    # plane-fit error grows with flow speed: loosen the gate accordingly
    eps = np.maximum(cfg.ransac_eps, cfg.ransac_eps_frac * mags)

    def residuals(v):
        return (a_rows @ v - rhs) / depths

    best_inliers = None
    best_count = 0
    best_rms = np.inf
    max_iters = cfg.ransac_max_iters
    iters_needed = max_iters
    it = 0
    while it < min(max_iters, iters_needed):
        it += 1
        sample = rng.choice(k, size=3, replace=False)
        m = a_rows[sample]
        if _condition_ratio(m) > cfg.cond_max:
            continue
        v = np.linalg.solve(m, rhs[sample])
        res = np.abs(residuals(v))
        inliers = res < eps
        count = int(inliers.sum())
        if count < 3:
            continue
        rms = float(np.sqrt(np.mean(res[inliers] ** 2)))
        if count > best_count or (count == best_count and rms < best_rms):
            best_count = count
            best_inliers = inliers
            best_rms = rms
            ratio = count / k
            if ratio >= 1.0 - 1e-12:
                break
            denom = np.log(max(1.0 - ratio ** 3, 1e-12))
            iters_needed = int(np.ceil(np.log(1.0 - cfg.ransac_conf) / denom))

    if best_inliers is None:
        if _condition_ratio(a_rows) > cfg.cond_max:
            raise InitializationError("rank_deficient",
                                      "observations do not span the velocity space")
        raise InitializationError("low_inlier_ratio", "no consensus found")

    idx = np.flatnonzero(best_inliers)
    m = a_rows[idx]
    if _condition_ratio(m) > cfg.cond_max:
        raise InitializationError("rank_deficient",
                                  "inlier system is rank deficient")
    v, *_ = np.linalg.lstsq(m, rhs[idx], rcond=None)
    res = np.abs(residuals(v))
    inliers = res < eps
    idx = np.flatnonzero(inliers)
    if len(idx) / k < cfg.min_inlier_ratio:
        raise InitializationError(
            "low_inlier_ratio",
            f"inlier ratio {len(idx) / k:.2f} below {cfg.min_inlier_ratio}")
    rms = float(np.sqrt(np.mean(res[idx] ** 2)))
    return InitResult(velocity=v, inliers=idx, rms=rms, iterations=it)
