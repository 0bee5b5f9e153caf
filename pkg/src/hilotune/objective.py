"""Assist-as-needed trial cost.

One evaluation window yields three normalized, weighted terms: mean
squared assistance torque (robot effort), mean squared deadband tracking
error, and the summed joint stiffness. Each term equals its weight when
the corresponding signal sits at its expected maximum, so the weights
directly set the relative importance of the terms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .controller import U_MAX

K_MAX = 400.0  # Nm/rad, maximum expected stiffness
DQ_MAX_RAD = math.radians(2.0)  # maximum expected trajectory error

DEFAULT_WEIGHTS = (3.0, 1.0, 0.1)


@dataclass(frozen=True)
class CostWeights:
    w1: float  # effort
    w2: float  # tracking
    w3: float  # stiffness

    def __post_init__(self):
        if self.w1 < 0 or self.w2 < 0 or self.w3 < 0:
            raise ValueError("weights must be non-negative")
        if self.w1 == 0 and self.w2 == 0 and self.w3 == 0:
            raise ValueError("at least one weight must be positive")


@dataclass(frozen=True)
class ScaleFactors:
    J1: float
    J2: float
    J3: float

    def __post_init__(self):
        if self.J1 <= 0 or self.J2 <= 0 or self.J3 <= 0:
            raise ValueError("scale factors must be strictly positive")


def default_scales(n_optimized_joints: int) -> ScaleFactors:
    """Scales that normalize each term to 1 at its expected maximum.

    The quadratic terms are scaled by the squared norm of the max vector
    over the controlled joints; the stiffness term by the sum of the
    per-joint maxima.
    """
    if not 1 <= n_optimized_joints <= 4:
        raise ValueError(f"joint count must be in 1..4, got {n_optimized_joints}")
    return ScaleFactors(
        J1=n_optimized_joints * U_MAX**2,
        J2=n_optimized_joints * DQ_MAX_RAD**2,
        J3=n_optimized_joints * K_MAX,
    )


@dataclass(frozen=True)
class TrialLog:
    """Per-step record of one evaluation window.

    u_series holds the N-1 torque vectors applied between the N recorded
    samples; e_series holds the N deadband-error vectors; K is the
    stiffness vector under test.
    """

    dt: float
    u_series: np.ndarray  # (N-1, joints)
    e_series: np.ndarray  # (N, joints)
    K: np.ndarray  # (joints,)

    def __post_init__(self):
        object.__setattr__(self, "u_series", np.asarray(self.u_series, dtype=float))
        object.__setattr__(self, "e_series", np.asarray(self.e_series, dtype=float))
        object.__setattr__(self, "K", np.asarray(self.K, dtype=float))
        if self.dt <= 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        n = self.e_series.shape[0]
        if n < 2:
            raise ValueError(f"a trial needs at least 2 samples, got {n}")
        if self.u_series.shape[0] != n - 1:
            raise ValueError(
                f"expected {n - 1} torque samples for {n} error samples, "
                f"got {self.u_series.shape[0]}"
            )
        if self.u_series.shape[1] != self.e_series.shape[1]:
            raise ValueError("torque and error series disagree on joint count")

    @property
    def n_steps(self) -> int:
        return self.e_series.shape[0]

    @property
    def duration_s(self) -> float:
        return self.n_steps * self.dt

    def to_text(self) -> str:
        """Delimited export: header carries K and dt, one row per step.

        The final row has no torque sample (torques live between steps),
        so its torque fields are empty.
        """
        joints = self.e_series.shape[1]
        lines = [
            f"# K = {', '.join(repr(float(k)) for k in self.K)}",
            f"# dt = {self.dt!r}",
            "t," + ",".join(f"u_{j}" for j in range(joints)) + ","
            + ",".join(f"e_{j}" for j in range(joints)),
        ]
        for i in range(self.n_steps):
            t = i * self.dt
            u = (
                ",".join(repr(float(v)) for v in self.u_series[i])
                if i < self.n_steps - 1
                else "," * (joints - 1)
            )
            e = ",".join(repr(float(v)) for v in self.e_series[i])
            lines.append(f"{t!r},{u},{e}")
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class CostBreakdown:
    effort_term: float
    tracking_term: float
    stiffness_term: float

    @property
    def total(self) -> float:
        return self.effort_term + self.tracking_term + self.stiffness_term

    def as_dict(self) -> dict:
        return {
            "effort": self.effort_term,
            "tracking": self.tracking_term,
            "stiffness": self.stiffness_term,
            "total": self.total,
        }


def evaluate(log: TrialLog, weights: CostWeights, scales: ScaleFactors) -> CostBreakdown:
    """Trial cost: w1/J1 * mean(u'u) + w2/J2 * mean(e'e) + w3/J3 * sum(K).

    The effort mean runs over the N-1 torque samples, the tracking mean
    over the N error samples; only the sample values matter, not dt.
    """
    n = log.n_steps
    effort = (weights.w1 / scales.J1) * float((log.u_series**2).sum()) / (n - 1)
    tracking = (weights.w2 / scales.J2) * float((log.e_series**2).sum()) / n
    stiffness = (weights.w3 / scales.J3) * float(log.K.sum())
    return CostBreakdown(effort_term=effort, tracking_term=tracking, stiffness_term=stiffness)


def trim_transient(raw_log: TrialLog, discard_s: float) -> TrialLog:
    """Drop the first discard_s seconds of a trial (stiffness-change bias).

    The trimmed log keeps the trailing samples; torque samples are
    dropped in lockstep so the N-1/N relationship is preserved.
    """
    if discard_s < 0:
        raise ValueError(f"discard duration must be non-negative, got {discard_s}")
    drop = int(round(discard_s / raw_log.dt))
    if drop == 0:
        return raw_log
    if drop >= raw_log.n_steps - 1:
        raise ValueError(
            f"cannot discard {discard_s} s from a {raw_log.duration_s} s trial"
        )
    return TrialLog(
        dt=raw_log.dt,
        u_series=raw_log.u_series[drop:],
        e_series=raw_log.e_series[drop:],
        K=raw_log.K,
    )
