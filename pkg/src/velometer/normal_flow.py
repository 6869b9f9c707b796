"""Normal flow from local plane fits on the time surface.

An edge sweeping the sensor stamps a ramp of timestamps into the time
surface. The spatial gradient of that ramp (s/px) points along the edge's
direction of travel, and its inverse norm is the speed of the edge along its
normal. The front end therefore:

  1. selects events with a well-populated, temporally consistent neighborhood,
  2. fits a plane t = a*x + b*y + c to the same-polarity surface patch,
  3. converts the gradient (a, b) into a unit direction and a magnitude.

The "benosman" mode replaces step 3 with the component-wise reciprocal of the
gradient, an older formulation kept as a comparison baseline; it yields the
same direction only for diagonal gradients and overestimates the magnitude
otherwise.
"""

from dataclasses import dataclass

import numpy as np

from .config import FlowConfig
from .events import EventBatch
from .time_surface import SurfacePair, TimeSurface


@dataclass
class NormalFlowMeasurement:
    t: float                 # timestamp of the measurement (batch end)
    x: int
    y: int
    direction: np.ndarray    # unit 2-vector along the temporal gradient
    magnitude: float         # px/s, non-negative
    grad: np.ndarray         # s/px temporal gradient, kept for diagnostics
    fit_rms: float           # s, rms of the plane fit
    event_t: float           # time of the originating event (diagnostics)
    polarity: int


def _box_sum(img, radius):
    """Sum of each (2r+1)^2 window, same shape as img (zero-padded)."""
    r = radius
    h, w = img.shape
    pad = np.zeros((h + 2 * r, w + 2 * r))
    pad[r:r + h, r:r + w] = img
    ii = np.zeros((h + 2 * r + 1, w + 2 * r + 1))
    ii[1:, 1:] = pad.cumsum(axis=0).cumsum(axis=1)
    k = 2 * r + 1
    return (ii[k:, k:][:h, :w] - ii[:h, k:][:, :w]
            - ii[k:, :w][:h] + ii[:h, :w])


def select_candidates(batch: EventBatch, surfaces: SurfacePair, cfg: FlowConfig):
    """Indices of batch events that pass the three culling rules.

    Rules (surface must already be updated through the batch):
      1. at least `border_margin` px away from every image border;
      2. more than `min_neighbors` valid same-polarity neighbors in the
         5x5 patch (valid = stamped within the batch window, center excluded);
      3. event time within `time_dev_frac` * duration of the mean neighbor
         stamp.
    """
    ev = batch.events
    t0, t1 = batch.t_start, batch.t_end
    w, h = surfaces.pos.width, surfaces.pos.height
    m = cfg.border_margin
    keep = ((ev["x"] >= m) & (ev["x"] < w - m)
            & (ev["y"] >= m) & (ev["y"] < h - m))

    r = cfg.patch_radius
    for pol in (1, -1):
        surf = surfaces.for_polarity(pol)
        valid = surf.valid_mask(t0, t1)
        stamps = np.where(valid, surf.stamps, 0.0)
        n_valid = _box_sum(valid.astype(float), r)
        t_sum = _box_sum(stamps, r)

        sel = keep & (ev["p"] == pol)
        if not np.any(sel):
            continue
        xs, ys = ev["x"][sel], ev["y"][sel]
        center_valid = valid[ys, xs]
        neighbors = n_valid[ys, xs] - center_valid
        ok = neighbors > cfg.min_neighbors
        mean_t = np.zeros(len(xs))
        nz = neighbors > 0
        mean_t[nz] = ((t_sum[ys, xs] - stamps[ys, xs] * center_valid)[nz]
                      / neighbors[nz])
        ok &= np.abs(ev["t"][sel] - mean_t) <= cfg.time_dev_frac * batch.duration
        idx = np.flatnonzero(sel)
        keep[idx[~ok]] = False

    return np.flatnonzero(keep)


def _patch_design(radius):
    r = radius
    dy, dx = np.mgrid[-r:r + 1, -r:r + 1]
    return np.column_stack([dx.ravel(), dy.ravel(), np.ones((2 * r + 1) ** 2)])


def _solve3(n_mats, rhs):
    """Batched 3x3 solve via the adjugate; returns (coef, ok) with a det guard."""
    a = n_mats
    det = (a[:, 0, 0] * (a[:, 1, 1] * a[:, 2, 2] - a[:, 1, 2] * a[:, 2, 1])
           - a[:, 0, 1] * (a[:, 1, 0] * a[:, 2, 2] - a[:, 1, 2] * a[:, 2, 0])
           + a[:, 0, 2] * (a[:, 1, 0] * a[:, 2, 1] - a[:, 1, 1] * a[:, 2, 0]))
    scale = np.abs(a).sum(axis=(1, 2)) + 1e-300
    ok = np.abs(det) > 1e-10 * scale ** 3
    inv_det = np.where(ok, det, 1.0)
    adj = np.empty_like(a)
    adj[:, 0, 0] = a[:, 1, 1] * a[:, 2, 2] - a[:, 1, 2] * a[:, 2, 1]
    adj[:, 0, 1] = a[:, 0, 2] * a[:, 2, 1] - a[:, 0, 1] * a[:, 2, 2]
    adj[:, 0, 2] = a[:, 0, 1] * a[:, 1, 2] - a[:, 0, 2] * a[:, 1, 1]
    adj[:, 1, 0] = a[:, 1, 2] * a[:, 2, 0] - a[:, 1, 0] * a[:, 2, 2]
    adj[:, 1, 1] = a[:, 0, 0] * a[:, 2, 2] - a[:, 0, 2] * a[:, 2, 0]
    adj[:, 1, 2] = a[:, 0, 2] * a[:, 1, 0] - a[:, 0, 0] * a[:, 1, 2]
    adj[:, 2, 0] = a[:, 1, 0] * a[:, 2, 1] - a[:, 1, 1] * a[:, 2, 0]
    adj[:, 2, 1] = a[:, 0, 1] * a[:, 2, 0] - a[:, 0, 0] * a[:, 2, 1]
    adj[:, 2, 2] = a[:, 0, 0] * a[:, 1, 1] - a[:, 0, 1] * a[:, 1, 0]
    coef = np.einsum("kab,kb->ka", adj, rhs) / inv_det[:, None]
    return coef, ok


def fit_planes(surface: TimeSurface, xs, ys, window, cfg: FlowConfig):
    """Vectorized plane fits at pixels (xs, ys) of one polarity surface.

    Returns (grads (K,2), rms (K,), ok (K,)). Fits use only patch pixels
    stamped within the window; one robust re-fit discards points whose
    residual exceeds `refit_rms_factor` times the rms of the first pass.
    """
    t0, t1 = window
    r = cfg.patch_radius
    x_des = _patch_design(r)                      # (P, 3)
    off = np.arange(-r, r + 1)
    pys = ys[:, None, None] + off[None, :, None]  # (K, 2r+1, 2r+1)
    pxs = xs[:, None, None] + off[None, None, :]
    tv = surface.stamps[pys, pxs].reshape(len(xs), -1)      # (K, P)
    valid = (tv >= t0) & (tv <= t1)
    tv = np.where(valid, tv - t1, 0.0)            # shift for conditioning

    def solve(mask):
        n_mats = np.einsum("kp,pa,pb->kab", mask.astype(float), x_des, x_des)
        rhs = np.einsum("kp,pa->ka", mask * tv, x_des)
        coef, ok = _solve3(n_mats, rhs)
        res = np.einsum("pa,ka->kp", x_des, coef) - tv
        npts = mask.sum(axis=1)
        ok &= npts >= cfg.min_plane_points
        sq = np.where(mask, res, 0.0) ** 2
        rms = np.sqrt(sq.sum(axis=1) / np.maximum(npts, 1))
        return coef, res, rms, ok

    coef, res, rms, ok = solve(valid)
    thresh = cfg.refit_rms_factor * rms
    keep = valid & (np.abs(res) <= thresh[:, None] + 1e-18)
    redo = ok & (keep.sum(axis=1) < valid.sum(axis=1)) & (rms > 0)
    if np.any(redo):
        coef2, _, rms2, ok2 = solve(keep)
        coef[redo] = coef2[redo]
        rms[redo] = rms2[redo]
        ok &= ~redo | ok2
    return coef[:, :2], rms, ok


def fit_plane(surface: TimeSurface, px, window, cfg: FlowConfig = None):
    """Single-pixel plane fit; returns (grad (2,), rms) or None on failure."""
    cfg = cfg or FlowConfig()
    xs = np.array([int(px[0])])
    ys = np.array([int(px[1])])
    grads, rms, ok = fit_planes(surface, xs, ys, window, cfg)
    if not ok[0]:
        return None
    return grads[0], float(rms[0])


def normal_flow_from_gradient(grad, cfg: FlowConfig = None):
    """Unit direction and speed of the normal flow from a temporal gradient.

    The direction is the gradient direction and the speed its inverse norm.
    Returns None for gradients too small (near-infinite flow) or flows above
    the configured maximum.
    """
    cfg = cfg or FlowConfig()
    grad = np.asarray(grad, dtype=float)
    gnorm = float(np.hypot(grad[0], grad[1]))
    if gnorm <= cfg.min_grad:
        return None
    magnitude = 1.0 / gnorm
    if magnitude > cfg.max_flow:
        return None
    return grad / gnorm, magnitude


def benosman_flow_from_gradient(grad, cfg: FlowConfig = None):
    """Comparison baseline: component-wise reciprocal of the gradient.

    Kept only to demonstrate that inverting the components does not produce
    the normal flow (it agrees with the correct formula only when both
    components are equal).
    """
    cfg = cfg or FlowConfig()
    grad = np.asarray(grad, dtype=float)
    if float(np.hypot(grad[0], grad[1])) <= cfg.min_grad:
        return None
    with np.errstate(divide="ignore"):
        w = 1.0 / grad
    if not np.all(np.isfinite(w)):
        return None
    magnitude = float(np.hypot(w[0], w[1]))
    if magnitude > cfg.max_flow or magnitude <= 0:
        return None
    return w / magnitude, magnitude


def process_batch(batch: EventBatch, surfaces: SurfacePair, cfg: FlowConfig):
    """Full per-batch front end: cull, fit planes, convert to normal flow.

    Surfaces must already be updated through the batch. Individual failures
    (bad fits, out-of-range flows) drop the measurement silently. All
    measurements carry the batch end time; the raw event time is kept as a
    diagnostic field.
    """
    if batch.duration < cfg.min_batch_duration:
        return []
    idx = select_candidates(batch, surfaces, cfg)
    if len(idx) == 0:
        return []
    if len(idx) > cfg.max_measurements:
        take = np.unique(np.round(
            np.linspace(0, len(idx) - 1, cfg.max_measurements)).astype(int))
        idx = idx[take]

    converter = (normal_flow_from_gradient if cfg.mode == "corrected"
                 else benosman_flow_from_gradient)
    window = (batch.t_start, batch.t_end)
    out = []
    ev = batch.events
    for pol in (1, -1):
        sub = idx[ev["p"][idx] == pol]
        if len(sub) == 0:
            continue
        xs = ev["x"][sub].astype(np.int64)
        ys = ev["y"][sub].astype(np.int64)
        grads, rms, ok = fit_planes(surfaces.for_polarity(pol), xs, ys, window, cfg)
        for k in np.flatnonzero(ok):
            flow = converter(grads[k], cfg)
            if flow is None:
                continue
            direction, magnitude = flow
            out.append(NormalFlowMeasurement(
                t=batch.t_end, x=int(xs[k]), y=int(ys[k]),
                direction=direction, magnitude=float(magnitude),
                grad=grads[k].copy(), fit_rms=float(rms[k]),
                event_t=float(ev["t"][sub[k]]), polarity=pol))
    out.sort(key=lambda mm: (mm.event_t, mm.x, mm.y, mm.polarity))
    return out
