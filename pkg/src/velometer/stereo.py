"""Instantaneous stereo depth by block matching on time surfaces.

For a static scene the disparity of a point is fixed by its depth, so the
same edge point crosses a left pixel and its disparity-shifted right pixel
at the same instant: matched blocks agree in their window-normalized
timestamp values, not merely in their pattern. The similarity is therefore
an RMSE-based score on those values,

    score = exp(-rmse / value_scale),

computed over pixels stamped inside the window in both cameras. A
mean/scale-normalizing correlation would be blind to a uniform shift of a
timestamp ramp and hence disparity-ambiguous along single straight edges.
The best integer disparity must clear an absolute score threshold and a
ratio margin over the second-best peak, and is refined by a parabolic fit
over the score triplet.
"""

from dataclasses import dataclass

import numpy as np

from .config import DepthConfig
from .geometry import StereoRig
from .normal_flow import NormalFlowMeasurement
from .time_surface import TimeSurface


@dataclass
class DepthEstimate:
    x: int
    y: int
    depth: float        # m, along the optical axis
    disparity: float    # px, refined; depth * disparity == f * baseline
    score: float        # match confidence in [0, 1]


@dataclass
class FlowDepthObservation:
    """A normal-flow measurement with its depth: the estimator's visual input."""

    flow: NormalFlowMeasurement
    depth: float
    weight: float       # in (0, 1], from match score and plane-fit residual

    @property
    def t(self):
        return self.flow.t


def _normalize(surface: TimeSurface, window):
    t0, t1 = window
    valid = surface.valid_mask(t0, t1)
    vals = np.where(valid, (surface.stamps - t0) / (t1 - t0), 0.0)
    return vals, valid


def match_block(left: TimeSurface, right: TimeSurface, px, window, rig: StereoRig,
                cfg: DepthConfig = None):
    """Match one left pixel against the same row of the right surface.

    Returns a DepthEstimate, or None when no acceptable correlation peak
    exists. The pixel must be far enough from the borders for the block to
    fit; violating that is a caller error.
    """
    cfg = cfg or DepthConfig()
    x, y = int(px[0]), int(px[1])
    half = cfg.block // 2
    w, h = left.width, left.height
    if not (half <= x < w - half and half <= y < h - half):
        raise ValueError(f"pixel ({x}, {y}) too close to the border for a "
                         f"{cfg.block}x{cfg.block} block")
    res = match_blocks(left, right, np.array([x]), np.array([y]), window, rig, cfg)
    return res[0]


def match_blocks(left: TimeSurface, right: TimeSurface, xs, ys, window,
                 rig: StereoRig, cfg: DepthConfig, reverse=False):
    """Vectorized block matching at many reference pixels; None per failure.

    With reverse=False the reference is the left camera and the match is
    searched at x - d in the right surface; reverse=True flips the roles
    (right-camera reference, search at x + d in `right`, which then holds
    the left surface).
    """
    half = cfg.block // 2
    lv, lm = _normalize(left, window)
    rv, rm = _normalize(right, window)
    k = len(xs)
    disps = np.arange(cfg.min_disparity, cfg.max_disparity + 1)
    d = len(disps)
    off = np.arange(-half, half + 1)
    block_px = cfg.block * cfg.block

    blk = cfg.block
    pys = np.broadcast_to(ys[:, None, None] + off[None, :, None], (k, blk, blk))
    pxs = np.broadcast_to(xs[:, None, None] + off[None, None, :], (k, blk, blk))
    lpatch = lv[pys, pxs].reshape(k, -1)                  # (K, P)
    lmask = lm[pys, pxs].reshape(k, -1)

    # target patches for every disparity
    shift = disps if not reverse else -disps
    rx = pxs[:, None, :, :] - shift[None, :, None, None]  # (K, D, B, B)
    ry = np.broadcast_to(pys[:, None, :, :], rx.shape)
    feasible = (rx.min(axis=(2, 3)) >= 0) & (rx.max(axis=(2, 3)) <= right.width - 1)
    rxc = np.clip(rx, 0, right.width - 1)
    rpatch = rv[ry, rxc].reshape(k, d, -1)                # (K, D, P)
    rmask = rm[ry, rxc].reshape(k, d, -1)

    both = lmask[:, None, :] & rmask                      # (K, D, P)
    n = both.sum(axis=2)
    enough = (n >= cfg.min_valid_frac * block_px) & feasible & (n >= 4)

    nf = np.maximum(n, 1).astype(float)
    diff = np.where(both, lpatch[:, None, :] - rpatch, 0.0)
    rmse = np.sqrt(np.einsum("kdp,kdp->kd", diff, diff) / nf)
    scores = np.where(enough, np.exp(-rmse / cfg.value_scale), -np.inf)

    out = []
    f = rig.left.f
    fb = f * rig.baseline
    for i in range(k):
        s = scores[i]
        best = int(np.argmax(s))
        best_score = s[best]
        if not np.isfinite(best_score) or best_score < cfg.score_min:
            out.append(None)
            continue
        masked = s.copy()
        masked[max(best - 1, 0):best + 2] = -np.inf
        second = masked.max()
        if np.isfinite(second) and second > 0 and best_score < cfg.margin * second:
            out.append(None)
            continue
        disp = float(disps[best])
        if (0 < best < d - 1 and best_score < 1.0 - 1e-9
                and np.isfinite(s[best - 1]) and np.isfinite(s[best + 1])):
            denom = s[best - 1] - 2.0 * s[best] + s[best + 1]
            if denom < -1e-12:
                delta = 0.5 * (s[best - 1] - s[best + 1]) / denom
                disp += float(np.clip(delta, -0.5, 0.5))
        out.append(DepthEstimate(x=int(xs[i]), y=int(ys[i]),
                                 depth=fb / disp, disparity=disp,
                                 score=float(np.clip(best_score, 0.0, 1.0))))
    return out


def associate(flows, left: TimeSurface, right: TimeSurface, window,
              rig: StereoRig, cfg: DepthConfig = None, reverse=False):
    """Attach stereo depth to normal-flow measurements.

    Flows that cannot be matched (border, no events on the right, weak or
    ambiguous correlation) are dropped. Weight combines the match score with
    the plane-fit quality: score * exp(-fit_rms / batch_duration).
    """
    cfg = cfg or DepthConfig()
    if not flows:
        return []
    half = cfg.block // 2
    w, h = left.width, left.height
    usable = [m for m in flows
              if half <= m.x < w - half and half <= m.y < h - half]
    if not usable:
        return []
    xs = np.array([m.x for m in usable])
    ys = np.array([m.y for m in usable])
    matches = match_blocks(left, right, xs, ys, window, rig, cfg, reverse)
    tau = window[1] - window[0]
    out = []
    for m, est in zip(usable, matches):
        if est is None:
            continue
        weight = est.score * float(np.exp(-m.fit_rms / tau))
        if weight <= 0:
            continue
        out.append(FlowDepthObservation(flow=m, depth=est.depth,
                                        weight=min(weight, 1.0)))
    return out
