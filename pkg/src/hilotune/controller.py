"""Assist-as-needed path controller.

The controller projects the current hip-knee pose onto a closed reference
curve, applies a deadband around the curve, and renders an impedance
torque from the residual error. Angles are radians everywhere inside the
package; degrees appear only in path files and UI-facing output.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

U_MAX = 40.0  # Nm, per-joint torque saturation
DEFAULT_C_CR = 10.0  # critical damping coefficient
DEFAULT_DEADBAND_RAD = math.radians(1.5)

HIP_LIMITS = (math.radians(-30.0), math.radians(120.0))
KNEE_LIMITS = (math.radians(0.0), math.radians(120.0))

DEFAULT_PATH_POINTS = 1000

# Two-harmonic fit (degrees) to a textbook hip/knee gait cycle, with the
# loading-response knee flexion peak kept shallow (~15 deg vs ~50 deg in
# swing). phase 0 corresponds to heel strike.
_HIP_HARMONICS = (10.5, (18.393294, -0.063421), (2.390908, 1.878554))
_KNEE_HARMONICS = (20.455, (17.600481, 2.024004), (11.894296, -2.393841))


class PathError(ValueError):
    """Reference path file or geometry is invalid."""


def _gait_angles_deg(phase):
    """Synthetic hip and knee angles (degrees) at gait phase in [0, 1)."""
    h0, (h1, p1), (h2, p2) = _HIP_HARMONICS
    k0, (q1, r1), (q2, r2) = _KNEE_HARMONICS
    two_pi = 2.0 * np.pi
    hip = h0 + h1 * np.cos(two_pi * phase + p1) + h2 * np.cos(2 * two_pi * phase + p2)
    knee = k0 + q1 * np.cos(two_pi * phase + r1) + q2 * np.cos(2 * two_pi * phase + r2)
    return hip, knee


class ReferencePath:
    """Closed piecewise-linear curve in the hip-knee plane (radians).

    Precomputes per-segment data so that closest-point queries are a
    single vectorized pass over all segments.
    """

    def __init__(self, points_rad):
        pts = np.asarray(points_rad, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise PathError(f"expected an (i, 2) array of angles, got shape {pts.shape}")
        if pts.shape[0] < 3:
            raise PathError(f"a closed path needs at least 3 points, got {pts.shape[0]}")
        if not np.all(np.isfinite(pts)):
            raise PathError("path contains non-finite angles")
        hip, knee = pts[:, 0], pts[:, 1]
        if hip.min() < HIP_LIMITS[0] - 1e-12 or hip.max() > HIP_LIMITS[1] + 1e-12:
            raise PathError(
                f"hip angles outside [{math.degrees(HIP_LIMITS[0]):.0f}, "
                f"{math.degrees(HIP_LIMITS[1]):.0f}] deg"
            )
        if knee.min() < KNEE_LIMITS[0] - 1e-12 or knee.max() > KNEE_LIMITS[1] + 1e-12:
            raise PathError(
                f"knee angles outside [{math.degrees(KNEE_LIMITS[0]):.0f}, "
                f"{math.degrees(KNEE_LIMITS[1]):.0f}] deg"
            )
        nxt = np.roll(pts, -1, axis=0)
        seg = nxt - pts
        seg_len = np.hypot(seg[:, 0], seg[:, 1])
        if np.any(seg_len == 0.0):
            raise PathError("consecutive path points must be distinct (cyclically)")

        self.points = pts
        self._seg_start = pts
        self._seg_delta = seg
        self._seg_len2 = (seg**2).sum(axis=1)
        self._seg_len = seg_len
        self._cum_len = np.concatenate(([0.0], np.cumsum(seg_len)))
        self.total_length = float(self._cum_len[-1])

    @property
    def size(self) -> int:
        return self.points.shape[0]

    def nearest(self, q_act) -> tuple[np.ndarray, float]:
        """Closest point on the curve (not merely the closest vertex).

        Returns the projected point and its arclength fraction in [0, 1).
        Exact ties between segments resolve to the lower fraction.
        """
        q = np.asarray(q_act, dtype=float)
        rel = q - self._seg_start
        t = (rel * self._seg_delta).sum(axis=1) / self._seg_len2
        t = np.clip(t, 0.0, 1.0)
        proj = self._seg_start + t[:, None] * self._seg_delta
        d2 = ((q - proj) ** 2).sum(axis=1)
        j = int(np.argmin(d2))
        frac = (self._cum_len[j] + t[j] * self._seg_len[j]) / self.total_length
        return proj[j], float(frac % 1.0)

    def interpolate(self, phase: float) -> np.ndarray:
        """Point at index fraction phase in [0, 1), linear between vertices.

        Path points are treated as uniformly spaced in gait phase, which
        holds for the shipped synthetic path and is the documented
        convention for user-supplied files.
        """
        u = (phase % 1.0) * self.size
        idx = int(u)
        frac = u - idx
        a = self.points[idx]
        b = self.points[(idx + 1) % self.size]
        return (1.0 - frac) * a + frac * b

    def segment_arrays(self) -> tuple:
        """Flat per-segment geometry for compiled consumers:
        (start_x, start_y, delta_x, delta_y, len2, len, cum_len_at_start, total_len)."""
        return (
            self._seg_start[:, 0],
            self._seg_start[:, 1],
            self._seg_delta[:, 0],
            self._seg_delta[:, 1],
            self._seg_len2,
            self._seg_len,
            self._cum_len[:-1],
            self.total_length,
        )

    def bounding_box(self) -> tuple[float, float, float, float]:
        """(hip_min, hip_max, knee_min, knee_max) in radians."""
        return (
            float(self.points[:, 0].min()),
            float(self.points[:, 0].max()),
            float(self.points[:, 1].min()),
            float(self.points[:, 1].max()),
        )

    # -- file I/O: first line is the point count, then "hip_deg, knee_deg" --

    @classmethod
    def from_file(cls, path) -> "ReferencePath":
        return _parse_path_text(Path(path).read_text(), str(path))

    def to_file(self, path) -> None:
        deg = np.degrees(self.points)
        lines = [str(self.size)]
        lines += [f"{float(h)!r}, {float(k)!r}" for h, k in deg]
        Path(path).write_text("\n".join(lines) + "\n")


def synthetic_gait_path(n_points: int = DEFAULT_PATH_POINTS) -> ReferencePath:
    """The shipped default reference path: a two-harmonic gait loop."""
    phase = np.arange(n_points) / n_points
    hip, knee = _gait_angles_deg(phase)
    return ReferencePath(np.radians(np.stack([hip, knee], axis=1)))


def default_path() -> ReferencePath:
    """Load the packaged default path file."""
    from importlib.resources import files

    text = files("hilotune.data").joinpath("default_path.txt").read_text()
    return _parse_path_text(text, "packaged default path")


def _parse_path_text(text: str, label: str) -> ReferencePath:
    lines = [ln.strip() for ln in text.splitlines()]
    lines = [ln for ln in lines if ln and not ln.startswith("#")]
    if not lines:
        raise PathError(f"{label}: empty path data")
    try:
        count = int(lines[0])
    except ValueError:
        raise PathError(f"{label}: first line must be the point count, got {lines[0]!r}")
    rows = lines[1:]
    if len(rows) != count:
        raise PathError(f"{label}: header says {count} points but data has {len(rows)}")
    pts = np.empty((count, 2))
    for i, row in enumerate(rows):
        parts = row.split(",")
        if len(parts) != 2:
            raise PathError(f"{label}: line {i + 2}: expected 'hip_deg, knee_deg'")
        try:
            pts[i] = [float(parts[0]), float(parts[1])]
        except ValueError:
            raise PathError(f"{label}: line {i + 2}: non-numeric angle")
    return ReferencePath(np.radians(pts))


def deadband_error(q_ref, q_act, r_db: float) -> np.ndarray:
    """Componentwise deadband-filtered tracking error.

    The raw error is q_ref - q_act; inside the band the output is zero,
    outside it the band radius is subtracted so the error is continuous
    at the boundary.
    """
    raw = np.asarray(q_ref, dtype=float) - np.asarray(q_act, dtype=float)
    out = np.zeros_like(raw)
    above = raw > r_db
    below = raw < -r_db
    out[above] = raw[above] - r_db
    out[below] = raw[below] + r_db
    return out


def damping_from_stiffness(K, c_cr: float) -> np.ndarray:
    """Critically coupled damping, B = c_cr * sqrt(K), componentwise."""
    K = np.asarray(K, dtype=float)
    if np.any(K < 0.0):
        raise ValueError(f"stiffness must be non-negative, got {K}")
    return c_cr * np.sqrt(K)


@dataclass(frozen=True)
class ImpedanceGains:
    """Per-joint stiffness and damping with B = c_cr * sqrt(K) enforced."""

    K: np.ndarray
    B: np.ndarray
    c_cr: float

    def __post_init__(self):
        object.__setattr__(self, "K", np.asarray(self.K, dtype=float))
        object.__setattr__(self, "B", np.asarray(self.B, dtype=float))
        if np.any(self.K < 0.0):
            raise ValueError(f"stiffness must be non-negative, got {self.K}")
        expected = self.c_cr * np.sqrt(self.K)
        if not np.array_equal(self.B, expected):
            raise ValueError("damping must equal c_cr * sqrt(K) componentwise")

    @classmethod
    def from_stiffness(cls, K, c_cr: float = DEFAULT_C_CR) -> "ImpedanceGains":
        K = np.asarray(K, dtype=float)
        return cls(K=K, B=damping_from_stiffness(K, c_cr), c_cr=c_cr)


@dataclass(frozen=True)
class TorqueCommand:
    u: np.ndarray
    saturated: np.ndarray


def impedance_torque(gains: ImpedanceGains, dq, dq_dot) -> TorqueCommand:
    """u = K dq + B dq_dot, saturated to +/- U_MAX per joint."""
    raw = gains.K * np.asarray(dq, dtype=float) + gains.B * np.asarray(dq_dot, dtype=float)
    saturated = np.abs(raw) > U_MAX
    return TorqueCommand(u=np.clip(raw, -U_MAX, U_MAX), saturated=saturated)


def error_rate(dq_current, dq_previous, dt: float) -> np.ndarray:
    """Backward finite difference of the deadband error.

    dq_previous is None on the first sample of a trial, which yields a
    zero rate.
    """
    if dt <= 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    cur = np.asarray(dq_current, dtype=float)
    if dq_previous is None:
        return np.zeros_like(cur)
    return (cur - np.asarray(dq_previous, dtype=float)) / dt
