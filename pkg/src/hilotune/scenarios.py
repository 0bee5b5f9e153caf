"""Multi-subject study scenarios.

A scenario file is JSON with a name and one session config per subject.
The shipped day-effect scenario produces a characteristic outcome of
multi-day assisted-gait experiments: subjects improve from day 1 to
day 2 (practice-driven learning of their gait deviation), while
co-adaptation and behavioural variability wash out any systematic
difference between the baseline, best-found and final-mean controllers.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .analysis import RmTable
from .plant import HumanParams, _FIXTURE_BASE
from .protocol import SessionConfig, ValidationReport

ANOVA_CONDITIONS = ("baseline", "best", "last_mean")


def day_effect_scenario(
    n_subjects: int = 6,
    base_seed: int = 2000,
    tau_learn: float = 11200.0,
    gamma_coadapt: float = 0.6,
) -> list[SessionConfig]:
    """One session config per simulated subject.

    Subjects share the slow-cadence walker of the known-optimum fixture
    but differ in deviation size, responsiveness to assistance, and motor
    noise. Deviations are large and admittance high, so the cost
    landscape around the baseline stiffness is nearly flat and which
    controller wins varies from subject to subject, while every subject's
    deviation shrinks with practice. tau_learn is set so the deviation at
    the day-2 validation is roughly 60% of its day-1 value; the slow
    noise makes single trials unreliable fitness measurements, mimicking
    behavioural variability.
    """
    jitter = np.random.default_rng(base_seed)
    configs = []
    for i in range(n_subjects):
        human = HumanParams(
            b0=math.radians(float(jitter.uniform(9.5, 13.5))),
            bias_phase_center=_FIXTURE_BASE["bias_phase_center"],
            bias_phase_width=_FIXTURE_BASE["bias_phase_width"],
            h_adm=float(jitter.uniform(3.0e-3, 4.5e-3)),
            adm_tau_s=1.3,
            noise_std=math.radians(float(jitter.uniform(0.5, 0.9))),
            noise_corner_hz=float(jitter.uniform(0.03, 0.06)),
            tau_learn=tau_learn,
            gamma_coadapt=gamma_coadapt,
            T_gait=_FIXTURE_BASE["T_gait"],
        )
        configs.append(SessionConfig(human=human, master_seed=base_seed + i))
    return configs


def save_scenario(configs: list[SessionConfig], name: str, destination) -> None:
    doc = {"name": name, "subjects": [c.to_dict() for c in configs]}
    Path(destination).write_text(json.dumps(doc, indent=2))


def load_scenario(source) -> tuple[str, list[SessionConfig]]:
    doc = json.loads(Path(source).read_text())
    return doc["name"], [SessionConfig.from_dict(d) for d in doc["subjects"]]


def table_from_reports(
    per_subject_reports: list[list[ValidationReport]],
    conditions: tuple = ANOVA_CONDITIONS,
) -> RmTable:
    """(subjects, conditions, days) cost table from validation reports.

    Each cell is the mean total cost over that day's validation rounds.
    The no-assistance condition is excluded by default so the controller
    factor compares actual controllers (baseline, best, last mean); the
    second within-subject factor is the day.
    """
    n_days = len(per_subject_reports[0])
    values = np.empty((len(per_subject_reports), len(conditions), n_days))
    for si, reports in enumerate(per_subject_reports):
        if len(reports) != n_days:
            raise ValueError(f"subject {si} has {len(reports)} reports, expected {n_days}")
        for di, report in enumerate(reports):
            for ci, cond in enumerate(conditions):
                costs = [cb.total for cb in report.results[cond]]
                values[si, ci, di] = float(np.mean(costs))
    return RmTable(
        values=values,
        condition_labels=conditions,
        time_labels=tuple(f"day{practice + 1}" for practice in range(n_days)),
    )
