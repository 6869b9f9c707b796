"""File formats: CSV streams with integer-nanosecond timestamps.

  events:      t_ns,x,y,p        p in {0,1} encoding polarity -1/+1
  imu:         t_ns,ax,ay,az,wx,wy,wz          SI units
  velocity:    t_ns,vx,vy,vz                   m/s
  orientation: t_ns,qw,qx,qy,qz                world-from-body quaternion
  calibration: `key = value` lines (left.f, left.cx, ..., baseline)

All writers are deterministic: fixed float formatting, no dict iteration.
"""

import hashlib
import os

import numpy as np

from .events import ImuData, make_events
from .geometry import CameraIntrinsics, StereoRig


class ParseError(RuntimeError):
    def __init__(self, path, line, message):
        super().__init__(f"{path}:{line}: {message}")
        self.path = str(path)
        self.line = line


def _to_ns(t):
    return np.round(np.asarray(t, dtype=float) * 1e9).astype(np.int64)


def _from_ns(t_ns):
    return np.asarray(t_ns, dtype=np.int64) * 1e-9


def write_events_csv(path, events):
    t_ns = _to_ns(events["t"])
    p01 = (events["p"] > 0).astype(np.int64)
    with open(path, "w") as fh:
        for i in range(len(events)):
            fh.write(f"{t_ns[i]},{events['x'][i]},{events['y'][i]},{p01[i]}\n")


def read_events_csv(path):
    try:
        data = np.loadtxt(path, delimiter=",", dtype=np.int64, ndmin=2)
    except ValueError as exc:
        raise ParseError(path, _find_bad_line(path, 4), str(exc)) from exc
    if data.size == 0:
        return make_events(np.empty(0), np.empty(0, np.int32),
                           np.empty(0, np.int32), np.empty(0, np.int8))
    if data.shape[1] != 4:
        raise ParseError(path, 1, f"expected 4 columns, got {data.shape[1]}")
    t = _from_ns(data[:, 0])
    if np.any(np.diff(t) < 0):
        bad = int(np.flatnonzero(np.diff(t) < 0)[0]) + 2
        raise ParseError(path, bad, "events not sorted by timestamp")
    p = np.where(data[:, 3] > 0, 1, -1).astype(np.int8)
    return make_events(t, data[:, 1].astype(np.int32),
                       data[:, 2].astype(np.int32), p)


def _find_bad_line(path, ncols):
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.strip().split(",")
            if len(parts) != ncols:
                return lineno
            for p in parts:
                try:
                    float(p)
                except ValueError:
                    return lineno
    return 0


def write_imu_csv(path, imu: ImuData):
    t_ns = _to_ns(imu.t)
    with open(path, "w") as fh:
        for i in range(len(imu.t)):
            a = imu.accel[i]
            w = imu.gyro[i]
            fh.write(f"{t_ns[i]},{a[0]:.12e},{a[1]:.12e},{a[2]:.12e},"
                     f"{w[0]:.12e},{w[1]:.12e},{w[2]:.12e}\n")


def read_imu_csv(path):
    try:
        data = np.loadtxt(path, delimiter=",", ndmin=2)
    except (ValueError, OSError) as exc:
        raise ParseError(path, _find_bad_line(path, 7), str(exc)) from exc
    if data.shape[1] != 7:
        raise ParseError(path, 1, f"expected 7 columns, got {data.shape[1]}")
    return ImuData(_from_ns(data[:, 0].astype(np.int64)),
                   data[:, 1:4], data[:, 4:7])


def write_velocity_csv(path, t, v):
    t_ns = _to_ns(t)
    v = np.asarray(v, dtype=float)
    with open(path, "w") as fh:
        for i in range(len(t_ns)):
            fh.write(f"{t_ns[i]},{v[i, 0]:.15e},{v[i, 1]:.15e},{v[i, 2]:.15e}\n")


def read_velocity_csv(path):
    try:
        data = np.loadtxt(path, delimiter=",", ndmin=2)
    except (ValueError, OSError) as exc:
        raise ParseError(path, _find_bad_line(path, 4), str(exc)) from exc
    if data.size == 0:
        raise ParseError(path, 1, "empty velocity file")
    if data.shape[1] != 4:
        raise ParseError(path, 1, f"expected 4 columns, got {data.shape[1]}")
    return _from_ns(data[:, 0].astype(np.int64)), data[:, 1:4]


def write_orientation_csv(path, t, quats):
    t_ns = _to_ns(t)
    q = np.asarray(quats, dtype=float)
    with open(path, "w") as fh:
        for i in range(len(t_ns)):
            fh.write(f"{t_ns[i]},{q[i, 0]:.15e},{q[i, 1]:.15e},"
                     f"{q[i, 2]:.15e},{q[i, 3]:.15e}\n")


def read_orientation_csv(path):
    try:
        data = np.loadtxt(path, delimiter=",", ndmin=2)
    except (ValueError, OSError) as exc:
        raise ParseError(path, _find_bad_line(path, 5), str(exc)) from exc
    if data.shape[1] != 5:
        raise ParseError(path, 1, f"expected 5 columns, got {data.shape[1]}")
    return _from_ns(data[:, 0].astype(np.int64)), data[:, 1:5]


def write_calibration(path, rig: StereoRig):
    lines = []
    for name, intr in (("left", rig.left), ("right", rig.right)):
        lines.append(f"{name}.f = {intr.f!r}")
        lines.append(f"{name}.cx = {intr.cx!r}")
        lines.append(f"{name}.cy = {intr.cy!r}")
        lines.append(f"{name}.width = {intr.width}")
        lines.append(f"{name}.height = {intr.height}")
    lines.append(f"baseline = {rig.baseline!r}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_calibration(path):
    values = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ParseError(path, lineno, "expected key = value")
            key, val = (s.strip() for s in line.split("=", 1))
            try:
                values[key] = float(val)
            except ValueError as exc:
                raise ParseError(path, lineno, f"bad number {val!r}") from exc

    def intr(prefix):
        try:
            return CameraIntrinsics(
                f=values[f"{prefix}.f"], cx=values[f"{prefix}.cx"],
                cy=values[f"{prefix}.cy"], width=int(values[f"{prefix}.width"]),
                height=int(values[f"{prefix}.height"]))
        except KeyError as exc:
            raise ParseError(path, 0, f"missing calibration key {exc}") from exc

    if "baseline" not in values:
        raise ParseError(path, 0, "missing calibration key baseline")
    return StereoRig(left=intr("left"), right=intr("right"),
                     baseline=values["baseline"])


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(path, entries, file_paths):
    """Manifest: `key = value` lines plus per-file line counts and hashes."""
    lines = [f"{k} = {v}" for k, v in entries]
    for fp in file_paths:
        name = os.path.basename(fp)
        with open(fp) as fh:
            count = sum(1 for _ in fh)
        lines.append(f"file.{name}.lines = {count}")
        lines.append(f"file.{name}.sha256 = {sha256_file(fp)}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_manifest(path):
    out = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if "=" not in line:
                raise ParseError(path, lineno, "expected key = value")
            key, val = (s.strip() for s in line.split("=", 1))
            out[key] = val
    return out
