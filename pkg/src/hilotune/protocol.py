"""Continuous multi-day optimization protocol.

Each day runs a fixed number of generations (one bout of back-to-back
one-minute trials per generation, followed by a rest break) and ends
with randomized validation trials. The optimizer state carries over
between days unreset. All state needed to resume mid-session round-trips
exactly through versioned JSON snapshots, including the positions of the
per-concern random streams.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import cmaes, plant
from .controller import (
    DEFAULT_C_CR,
    DEFAULT_DEADBAND_RAD,
    ReferencePath,
    U_MAX,
    damping_from_stiffness,
    default_path,
)
from .objective import CostBreakdown, CostWeights, TrialLog, default_scales, evaluate, trim_transient
from ._kernel import noise_series, phase_series, simulate_trial

SNAPSHOT_VERSION = 1

VALIDATION_CONDITIONS = ("none", "baseline", "best", "last_mean")

# rng stream labels; fixed so one concern's consumption can never shift
# another's draws
_STREAM_SAMPLER = 1
_STREAM_PLANT = 2
_STREAM_VALIDATION = 3

JOINT_NAMES = ("left_hip", "left_knee", "right_hip", "right_knee")


class SnapshotError(Exception):
    """Base class for snapshot load failures."""


class SnapshotVersionError(SnapshotError):
    """Snapshot was written by an incompatible version."""


class SnapshotCorruptError(SnapshotError):
    """Snapshot file is unreadable or structurally broken."""


@dataclass(frozen=True)
class SessionConfig:
    """Complete description of one experiment session."""

    days: int = 2
    generations_per_day: int = 5
    lam: int = 7
    trial_s: float = 60.0
    discard_s: float = 15.0
    break_s: float = 300.0
    validation_trial_s: float = 180.0
    validation_rounds: int = 3
    k_baseline: float = 200.0
    k_fixed_leg: float = 50.0
    optimized_joints: tuple = ("right_hip", "right_knee")
    r_db: float = DEFAULT_DEADBAND_RAD
    c_cr: float = DEFAULT_C_CR
    weights: tuple = (3.0, 1.0, 0.1)
    control_hz: float = 100.0
    day_gap_s: float = 16 * 3600.0
    decay_during_day_gap: bool = False
    mode: str = "batch"
    human: plant.HumanParams | None = field(default_factory=plant.HumanParams)
    master_seed: int = 0
    cma_overrides: dict = field(default_factory=dict)
    path_file: str | None = None

    def __post_init__(self):
        if self.days < 1:
            raise ValueError("config field 'days' must be >= 1")
        if self.generations_per_day < 1:
            raise ValueError("config field 'generations_per_day' must be >= 1")
        if self.lam < 2:
            raise ValueError("config field 'lam' must be >= 2")
        for name in ("trial_s", "break_s", "validation_trial_s", "control_hz"):
            if getattr(self, name) <= 0:
                raise ValueError(f"config field {name!r} must be positive")
        if self.discard_s < 0:
            raise ValueError("config field 'discard_s' must be non-negative")
        if self.trial_s <= self.discard_s:
            raise ValueError("config field 'trial_s' must exceed 'discard_s'")
        if self.validation_trial_s <= self.discard_s:
            raise ValueError("config field 'validation_trial_s' must exceed 'discard_s'")
        if self.validation_rounds < 1:
            raise ValueError("config field 'validation_rounds' must be >= 1")
        if self.mode not in ("batch", "live"):
            raise ValueError(f"config field 'mode' must be 'batch' or 'live', got {self.mode!r}")
        joints = tuple(self.optimized_joints)
        object.__setattr__(self, "optimized_joints", joints)
        for j in joints:
            if j not in JOINT_NAMES:
                raise ValueError(f"config field 'optimized_joints': unknown joint {j!r}")
        if len(joints) != 2 or joints[0].split("_")[0] != joints[1].split("_")[0]:
            raise ValueError(
                "config field 'optimized_joints' must name the hip and knee of one leg"
            )
        if self.mode == "batch" and self.human is None:
            raise ValueError("config field 'human' is required in batch mode")
        if "lam" in self.cma_overrides:
            raise ValueError("config field 'cma_overrides' may not set 'lam'; use the top-level field")
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))

    @property
    def n_joints(self) -> int:
        return len(self.optimized_joints)

    @property
    def dt(self) -> float:
        return 1.0 / self.control_hz

    def cost_weights(self) -> CostWeights:
        return CostWeights(*self.weights)

    def to_dict(self) -> dict:
        return {
            "days": self.days,
            "generations_per_day": self.generations_per_day,
            "lam": self.lam,
            "trial_s": self.trial_s,
            "discard_s": self.discard_s,
            "break_s": self.break_s,
            "validation_trial_s": self.validation_trial_s,
            "validation_rounds": self.validation_rounds,
            "k_baseline": self.k_baseline,
            "k_fixed_leg": self.k_fixed_leg,
            "optimized_joints": list(self.optimized_joints),
            "r_db": self.r_db,
            "c_cr": self.c_cr,
            "weights": list(self.weights),
            "control_hz": self.control_hz,
            "day_gap_s": self.day_gap_s,
            "decay_during_day_gap": self.decay_during_day_gap,
            "mode": self.mode,
            "human": None if self.human is None else self.human.to_dict(),
            "master_seed": self.master_seed,
            "cma_overrides": dict(self.cma_overrides),
            "path_file": self.path_file,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SessionConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        d = dict(d)
        if d.get("human") is not None:
            d["human"] = plant.HumanParams.from_dict(d["human"])
        if "optimized_joints" in d:
            d["optimized_joints"] = tuple(d["optimized_joints"])
        if "weights" in d:
            d["weights"] = tuple(d["weights"])
        return cls(**d)


@dataclass(frozen=True)
class ValidationReport:
    """Costs for the four fixed conditions over the randomized rounds."""

    day: int
    orders: list  # per round, the condition names in executed order
    results: dict  # condition -> list of CostBreakdown (one per round)
    stiffness_used: dict  # condition -> stiffness vector

    def __post_init__(self):
        if set(self.results) != set(VALIDATION_CONDITIONS):
            raise ValueError(f"expected conditions {VALIDATION_CONDITIONS}")

    def to_dict(self) -> dict:
        return {
            "day": self.day,
            "orders": self.orders,
            "results": {c: [cb.as_dict() for cb in v] for c, v in self.results.items()},
            "stiffness_used": {c: list(v) for c, v in self.stiffness_used.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ValidationReport":
        return cls(
            day=d["day"],
            orders=[list(o) for o in d["orders"]],
            results={
                c: [
                    CostBreakdown(v["effort"], v["tracking"], v["stiffness"])
                    for v in vals
                ]
                for c, vals in d["results"].items()
            },
            stiffness_used={c: np.array(v) for c, v in d["stiffness_used"].items()},
        )


@dataclass
class SessionState:
    """Everything needed to continue a session from any trial boundary."""

    config: SessionConfig
    cma_params: cmaes.CmaParams
    cma: cmaes.CmaState
    archive: cmaes.SampleArchive
    human: plant.HumanState | None
    day: int = 0
    gen_in_day: int = 0
    trial_in_gen: int = 0
    pending: np.ndarray | None = None  # (lam, n) candidates of the open generation
    pending_results: list | None = None  # per-candidate (fitness, timestamp) or None
    clock_s: float = 0.0
    rng_sampler: np.random.Generator = None
    rng_validation: np.random.Generator = None
    reports: list = field(default_factory=list)
    cost_log: list = field(default_factory=list)  # per-trial cost breakdowns
    path: ReferencePath = None

    @property
    def generation(self) -> int:
        return self.cma.g


def _stream(master_seed: int, label: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence((master_seed, label))))


def load_reference_path(config: SessionConfig) -> ReferencePath:
    if config.path_file is None:
        return default_path()
    return ReferencePath.from_file(config.path_file)


def new_session(config: SessionConfig) -> SessionState:
    params = cmaes.default_params(
        config.n_joints, lam=config.lam, **config.cma_overrides
    )
    human_state = None
    if config.human is not None:
        human_state = plant.HumanState.fresh(config.human, _stream(config.master_seed, _STREAM_PLANT))
    return SessionState(
        config=config,
        cma_params=params,
        cma=cmaes.initial_state(params),
        archive=cmaes.SampleArchive(),
        human=human_state,
        rng_sampler=_stream(config.master_seed, _STREAM_SAMPLER),
        rng_validation=_stream(config.master_seed, _STREAM_VALIDATION),
        path=load_reference_path(config),
    )


# --- trial execution --------------------------------------------------------


def _simulate_trial(session: SessionState, K, duration_s: float):
    """Run one closed-loop trial of the simulated walker.

    Returns (raw_log, trimmed_log, new_human_state); the session itself
    is not touched, so callers can commit atomically.
    """
    cfg = session.config
    hp = cfg.human
    hs = session.human
    path = session.path
    dt = cfg.dt
    n = int(round(duration_s * cfg.control_hz))
    K = np.asarray(K, dtype=float)
    B = damping_from_stiffness(K, cfg.c_cr)

    # precomputed open-loop part of the walker: phase, reference, bump, noise
    phases = phase_series(hs.phase, dt / hp.T_gait, n)
    size = path.size
    u_idx = phases * size
    idx = u_idx.astype(np.int64)
    frac = u_idx - idx
    pts = path.points
    ref = (1.0 - frac)[:, None] * pts[idx] + frac[:, None] * pts[(idx + 1) % size]
    bias = hs.b * plant.bump_profile(phases, hp.bias_phase_center, hp.bias_phase_width)
    alpha = plant.noise_filter_alpha(hp.noise_corner_hz, dt)
    w = hs.rng.standard_normal((n, 2))
    scale = math.sqrt(1.0 - alpha * alpha) * hp.noise_std
    noise = noise_series(hs.noise[0], hs.noise[1], alpha, scale, w)
    base = (ref + bias[:, None]) + noise

    adm_beta = math.exp(-dt / hp.adm_tau_s) if hp.adm_tau_s > 0.0 else 0.0
    u_series, e_series, disp0, disp1, qx, qy = simulate_trial(
        base,
        *path.segment_arrays(),
        K[0], K[1], B[0], B[1],
        cfg.r_db, hp.h_adm, adm_beta, U_MAX, dt,
        hs.adm_disp[0], hs.adm_disp[1],
        0.0, 0.0,
    )
    raw = TrialLog(dt=dt, u_series=u_series, e_series=e_series, K=K)
    trimmed = trim_transient(raw, cfg.discard_s)

    assist = plant.mean_assist_level(u_series)
    new_hs = replace(
        hs,
        phase=float(phases[-1]),
        noise=noise[-1].copy(),
        adm_disp=np.array([disp0, disp1]),
        last_pose=np.array([qx, qy]),
    )
    new_hs = plant.adapt(new_hs, hp, assist, duration_s)
    return raw, trimmed, new_hs


def run_trial(session: SessionState, K, duration_s: float) -> TrialLog:
    """Simulate one trial and commit its effects (plant adaptation and
    clock advance) to the session. Returns the transient-trimmed log."""
    raw, trimmed, new_hs = _simulate_trial(session, K, duration_s)
    session.human = new_hs
    session.clock_s += duration_s
    return trimmed


def score_trial(session: SessionState, log: TrialLog) -> CostBreakdown:
    cfg = session.config
    return evaluate(log, cfg.cost_weights(), default_scales(cfg.n_joints))


def _apply_break(session: SessionState) -> None:
    """Rest break: simulated time passes and practice decay continues
    with zero assistance."""
    cfg = session.config
    if session.human is not None:
        session.human = plant.adapt(session.human, cfg.human, 0.0, cfg.break_s)
    session.clock_s += cfg.break_s


# --- generation sequencing (shared by batch runner and live service) --------


def ensure_pending(session: SessionState) -> np.ndarray:
    """Sample the current generation's candidates if not already drawn."""
    if session.pending is None:
        session.pending = cmaes.sample_population(
            session.cma, session.cma_params, session.rng_sampler
        )
        session.pending_results = [None] * session.config.lam
        session.trial_in_gen = 0
    return session.pending


def record_candidate_result(session: SessionState, index: int, cost: CostBreakdown) -> None:
    if session.pending is None:
        raise RuntimeError("no open generation")
    if session.pending_results[index] is not None:
        raise RuntimeError(f"candidate {index} already evaluated")
    session.pending_results[index] = {
        "cost": cost.as_dict(),
        "timestamp": session.clock_s,
    }
    session.trial_in_gen += 1


def generation_complete(session: SessionState) -> bool:
    return session.pending is not None and all(
        r is not None for r in session.pending_results
    )


def finish_generation(session: SessionState) -> None:
    """Archive the completed generation, apply the optimizer update and
    take the rest break."""
    if not generation_complete(session):
        raise RuntimeError("generation is not complete")
    gen = session.cma.g
    fitnesses = np.array([r["cost"]["total"] for r in session.pending_results])
    for k in range(session.config.lam):
        result = session.pending_results[k]
        session.archive.append(
            gen, session.pending[k], fitnesses[k], result["timestamp"]
        )
        session.cost_log.append(
            {
                "generation": gen,
                "stiffness": [float(v) for v in session.pending[k]],
                "cost": dict(result["cost"]),
                "timestamp": result["timestamp"],
            }
        )
    ranked = cmaes.rank_population(session.pending, fitnesses)
    session.cma = cmaes.step(session.cma, session.cma_params, ranked)
    session.pending = None
    session.pending_results = None
    session.trial_in_gen = 0
    session.gen_in_day += 1
    _apply_break(session)


def run_generation(session: SessionState) -> SessionState:
    """One full bout: sample, run and score the candidate trials
    back-to-back, then update the optimizer and rest.

    Atomic: on any failure the session is restored to its state at entry.
    """
    snapshot = session_to_dict(session)
    try:
        candidates = ensure_pending(session)
        for k in range(session.trial_in_gen, session.config.lam):
            log = run_trial(session, candidates[k], session.config.trial_s)
            record_candidate_result(session, k, score_trial(session, log))
        finish_generation(session)
        return session
    except Exception:
        restored = session_from_dict(snapshot)
        session.__dict__.update(restored.__dict__)
        raise


def validation_stiffness(session: SessionState, condition: str) -> np.ndarray:
    """Stiffness vector for a named validation condition. 'none' renders
    zero stiffness and, through the critical-damping coupling, zero
    damping: no assistance at all."""
    cfg = session.config
    n = cfg.n_joints
    if condition == "none":
        return np.zeros(n)
    if condition == "baseline":
        return np.full(n, cfg.k_baseline)
    if condition == "best":
        candidate, _ = session.archive.best_so_far()
        return candidate
    if condition == "last_mean":
        return np.clip(session.cma.m, session.cma_params.lower, session.cma_params.upper)
    raise ValueError(f"unknown validation condition {condition!r}")


def run_validation(session: SessionState) -> ValidationReport:
    """The end-of-day block: per round, the four conditions in an order
    drawn from the validation stream."""
    if session.cma.g < 1:
        raise RuntimeError("validation requires at least one completed generation")
    cfg = session.config
    orders = []
    results = {c: [] for c in VALIDATION_CONDITIONS}
    used = {}
    for _ in range(cfg.validation_rounds):
        perm = session.rng_validation.permutation(len(VALIDATION_CONDITIONS))
        order = [VALIDATION_CONDITIONS[i] for i in perm]
        orders.append(order)
        for condition in order:
            K = validation_stiffness(session, condition)
            used[condition] = K
            log = run_trial(session, K, cfg.validation_trial_s)
            results[condition].append(score_trial(session, log))
    report = ValidationReport(
        day=session.day, orders=orders, results=results,
        stiffness_used={c: np.asarray(k) for c, k in used.items()},
    )
    session.reports.append(report)
    return report


def advance_day_boundary(session: SessionState) -> None:
    """Close the current day: increment the day index and, if more days
    remain, advance the simulated clock through the off time. Learning is
    practice-driven, so the deviation holds overnight unless the config
    opts into off-time decay."""
    session.day += 1
    session.gen_in_day = 0
    if session.day < session.config.days:
        if session.config.decay_during_day_gap and session.human is not None:
            session.human = plant.adapt(
                session.human, session.config.human, 0.0, session.config.day_gap_s
            )
        session.clock_s += session.config.day_gap_s


def run_day(session: SessionState) -> tuple[SessionState, ValidationReport]:
    """Run the configured generations then the validation block; the
    optimizer state carries into the next day unreset."""
    if session.day >= session.config.days:
        raise RuntimeError("no days remaining")
    while session.gen_in_day < session.config.generations_per_day:
        run_generation(session)
    report = run_validation(session)
    advance_day_boundary(session)
    return session, report


def run_session(session: SessionState) -> list[ValidationReport]:
    """Run every remaining day; returns the per-day validation reports."""
    reports = []
    while session.day < session.config.days:
        _, report = run_day(session)
        reports.append(report)
    return reports


# --- snapshots ---------------------------------------------------------------


def _rng_to_dict(rng: np.random.Generator) -> dict:
    return rng.bit_generator.state


def _rng_from_dict(d: dict) -> np.random.Generator:
    rng = np.random.Generator(np.random.PCG64())
    rng.bit_generator.state = d
    return rng


def session_to_dict(session: SessionState) -> dict:
    return {
        "version": SNAPSHOT_VERSION,
        "config": session.config.to_dict(),
        "cma_params": cmaes.params_to_dict(session.cma_params),
        "cma": cmaes.state_to_dict(session.cma),
        "archive": session.archive.to_records(),
        "human": None if session.human is None else plant.state_to_dict(session.human),
        "day": session.day,
        "gen_in_day": session.gen_in_day,
        "trial_in_gen": session.trial_in_gen,
        "pending": None if session.pending is None else session.pending.tolist(),
        "pending_results": session.pending_results,
        "clock_s": session.clock_s,
        "rng_sampler": _rng_to_dict(session.rng_sampler),
        "rng_validation": _rng_to_dict(session.rng_validation),
        "reports": [r.to_dict() for r in session.reports],
        "cost_log": session.cost_log,
    }


def session_from_dict(doc: dict) -> SessionState:
    config = SessionConfig.from_dict(doc["config"])
    pending = doc["pending"]
    pending_results = doc["pending_results"]
    return SessionState(
        config=config,
        cma_params=cmaes.params_from_dict(doc["cma_params"]),
        cma=cmaes.state_from_dict(doc["cma"]),
        archive=cmaes.SampleArchive.from_records(doc["archive"]),
        human=None if doc["human"] is None else plant.state_from_dict(doc["human"]),
        day=doc["day"],
        gen_in_day=doc["gen_in_day"],
        trial_in_gen=doc["trial_in_gen"],
        pending=None if pending is None else np.array(pending, dtype=float),
        pending_results=None
        if pending_results is None
        else [None if r is None else dict(r) for r in pending_results],
        clock_s=doc["clock_s"],
        rng_sampler=_rng_from_dict(doc["rng_sampler"]),
        rng_validation=_rng_from_dict(doc["rng_validation"]),
        reports=[ValidationReport.from_dict(r) for r in doc["reports"]],
        cost_log=[dict(r) for r in doc["cost_log"]],
        path=load_reference_path(config),
    )


def save_session(session: SessionState, destination) -> None:
    Path(destination).write_text(json.dumps(session_to_dict(session)))


def load_session(source) -> SessionState:
    try:
        text = Path(source).read_text()
    except OSError as exc:
        raise SnapshotCorruptError(f"cannot read snapshot {source}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SnapshotCorruptError(f"snapshot {source} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict) or "version" not in doc:
        raise SnapshotCorruptError(f"snapshot {source} has no version field")
    if doc["version"] != SNAPSHOT_VERSION:
        raise SnapshotVersionError(
            f"snapshot {source} has version {doc['version']}, expected {SNAPSHOT_VERSION}"
        )
    try:
        return session_from_dict(doc)
    except (KeyError, TypeError, ValueError) as exc:
        raise SnapshotCorruptError(f"snapshot {source} is structurally invalid: {exc}") from exc
