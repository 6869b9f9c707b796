"""Time surfaces: per-pixel timestamp of the most recent event.

Untouched pixels carry -inf ("never"). The front end keeps one surface per
polarity per camera, because events of opposite polarity belong to opposite
sides of an edge and would corrupt local plane fits.
"""

from dataclasses import dataclass

import numpy as np

from .events import EventBatch, SequencingError

NEVER = -np.inf


class TimeSurface:
    def __init__(self, width, height, t_ref=0.0):
        self.width = width
        self.height = height
        self.stamps = np.full((height, width), NEVER)
        self.polarity = np.zeros((height, width), dtype=np.int8)
        self.t_ref = float(t_ref)

    def copy(self):
        ts = TimeSurface(self.width, self.height, self.t_ref)
        ts.stamps = self.stamps.copy()
        ts.polarity = self.polarity.copy()
        return ts

    def valid_mask(self, t0, t1):
        """Pixels whose latest stamp falls within [t0, t1]."""
        return (self.stamps >= t0) & (self.stamps <= t1)


def _latest_per_pixel(events, width):
    """Indices of the last (most recent) event per distinct pixel."""
    keys = events["y"].astype(np.int64) * width + events["x"]
    # reversed stream: first occurrence per key == latest event overall
    rev = keys[::-1]
    _, first_rev = np.unique(rev, return_index=True)
    return len(events) - 1 - first_rev


def update_time_surface(ts: TimeSurface, batch: EventBatch) -> TimeSurface:
    """Write each event's timestamp/polarity at its pixel; latest wins.

    Batches must arrive in order: the batch may not start before the
    surface's reference time.
    """
    if batch.t_start < ts.t_ref - 1e-12:
        raise SequencingError(
            f"batch starts at {batch.t_start} before surface t_ref {ts.t_ref}")
    ev = batch.events
    if np.any(ev["x"] < 0) or np.any(ev["x"] >= ts.width) \
            or np.any(ev["y"] < 0) or np.any(ev["y"] >= ts.height):
        raise ValueError("event outside image bounds")
    idx = _latest_per_pixel(ev, ts.width)
    ts.stamps[ev["y"][idx], ev["x"][idx]] = ev["t"][idx]
    ts.polarity[ev["y"][idx], ev["x"][idx]] = ev["p"][idx]
    ts.t_ref = batch.t_end
    return ts


@dataclass
class SurfacePair:
    """Per-polarity surfaces of one camera."""

    pos: TimeSurface
    neg: TimeSurface

    @classmethod
    def create(cls, width, height):
        return cls(TimeSurface(width, height), TimeSurface(width, height))

    def for_polarity(self, p):
        return self.pos if p > 0 else self.neg

    def update(self, batch: EventBatch):
        ev = batch.events
        for pol, surf in ((1, self.pos), (-1, self.neg)):
            sel = ev["p"] == pol
            if np.any(sel):
                sub = ev[sel]
                surf_batch = EventBatch(sub, batch.t_start, batch.t_end)
                update_time_surface(surf, surf_batch)
            else:
                surf.t_ref = batch.t_end

    def combined(self):
        """Latest-of-either-polarity surface (used for stereo matching)."""
        out = TimeSurface(self.pos.width, self.pos.height,
                          max(self.pos.t_ref, self.neg.t_ref))
        newer = self.neg.stamps > self.pos.stamps
        out.stamps = np.where(newer, self.neg.stamps, self.pos.stamps)
        out.polarity = np.where(newer, self.neg.polarity, self.pos.polarity).astype(np.int8)
        return out
