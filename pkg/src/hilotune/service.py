"""Session API and live streaming loop.

Live mode replaces the simulated walker with a human tracking the
reference path through a pointing device: pointer positions stream in,
the controller runs at 100 Hz with inputs zero-order-held between 50 Hz
frames, and frames echo the assisted cursor, moving reference point and
trial telemetry back to the client. The protocol engine (bouts, breaks,
generations, validation randomization) is exactly the batch one; only
the trial execution differs.

Streams may also run "paced" (?paced=1): the server advances one frame
per received input message instead of following the wall clock, which
makes scripted-client replays deterministic for testing.
"""

from __future__ import annotations

import asyncio
import json
import math
import threading
import time
import uuid
from dataclasses import dataclass, field

import numpy as np
from fastapi import FastAPI, HTTPException, WebSocket, WebSocketDisconnect
from fastapi.middleware.cors import CORSMiddleware

from . import analysis, protocol
from .controller import (
    ImpedanceGains,
    ReferencePath,
    deadband_error,
    error_rate,
    impedance_torque,
)
from .objective import TrialLog, trim_transient
from .protocol import SessionConfig, SessionState, ValidationReport

FRAME_RATE = 50.0
CONTROL_RATE = 100.0
STEPS_PER_FRAME = int(CONTROL_RATE / FRAME_RATE)
INPUT_GAP_LIMIT_S = 0.5

# Virtual-impedance displacement defaults for live sessions whose config
# carries no walker parameters.
LIVE_H_ADM = 2e-3
LIVE_ADM_TAU_S = 0.0


@dataclass
class ScreenMap:
    """Isotropic affine map between the unit square and the hip-knee
    plane: the path's bounding box inflated by 20%, centered."""

    center_hip: float
    center_knee: float
    half_span: float

    @classmethod
    def for_path(cls, path: ReferencePath) -> "ScreenMap":
        h0, h1, k0, k1 = path.bounding_box()
        half = 0.6 * max(h1 - h0, k1 - k0)
        return cls(0.5 * (h0 + h1), 0.5 * (k0 + k1), half)

    def to_angles(self, x: float, y: float) -> np.ndarray:
        return np.array(
            [
                self.center_hip + (x - 0.5) * 2.0 * self.half_span,
                self.center_knee + (y - 0.5) * 2.0 * self.half_span,
            ]
        )

    def to_screen(self, q) -> list[float]:
        return [
            0.5 + (float(q[0]) - self.center_hip) / (2.0 * self.half_span),
            0.5 + (float(q[1]) - self.center_knee) / (2.0 * self.half_span),
        ]

    def to_dict(self) -> dict:
        return {
            "center_hip": self.center_hip,
            "center_knee": self.center_knee,
            "half_span": self.half_span,
        }


class ControlLoop:
    """Per-step controller math shared by the live engine and batch
    replay, so both paths produce bit-identical logs for the same raw
    pose sequence."""

    def __init__(self, path: ReferencePath, K, config: SessionConfig):
        self.path = path
        self.gains = ImpedanceGains.from_stiffness(np.asarray(K, dtype=float), config.c_cr)
        self.r_db = config.r_db
        human = config.human
        self.h_adm = human.h_adm if human is not None else LIVE_H_ADM
        adm_tau = human.adm_tau_s if human is not None else LIVE_ADM_TAU_S
        self.dt = config.dt
        self.beta = math.exp(-self.dt / adm_tau) if adm_tau > 0.0 else 0.0
        self.disp = np.zeros(2)
        self.u_prev = np.zeros(2)
        self.dq_prev = None

    def step(self, q_raw, compute_torque: bool = True):
        """Advance one control step; returns (assisted pose, deadband
        error, torque or None)."""
        target = self.h_adm * self.u_prev
        if self.beta > 0.0:
            self.disp = self.beta * self.disp + (1.0 - self.beta) * target
        else:
            self.disp = target
        q_act = q_raw + self.disp
        q_ref, _ = self.path.nearest(q_act)
        dq = deadband_error(q_ref, q_act, self.r_db)
        u = None
        if compute_torque:
            dq_dot = error_rate(dq, self.dq_prev, self.dt)
            cmd = impedance_torque(self.gains, dq, dq_dot)
            u = cmd.u
            self.u_prev = u
        self.dq_prev = dq
        return q_act, dq, u


def replay_trial(raw_poses, K, config: SessionConfig, path: ReferencePath) -> TrialLog:
    """Batch replay of a recorded 100 Hz raw pose sequence through the
    live controller loop; the transient-trimmed log matches what the
    live engine records for the same sequence."""
    raw_poses = np.asarray(raw_poses, dtype=float)
    n = raw_poses.shape[0]
    loop = ControlLoop(path, K, config)
    u_series = np.empty((n - 1, 2))
    e_series = np.empty((n, 2))
    for t in range(n):
        _, dq, u = loop.step(raw_poses[t], compute_torque=t < n - 1)
        e_series[t] = dq
        if t < n - 1:
            u_series[t] = u
    raw = TrialLog(dt=config.dt, u_series=u_series, e_series=e_series, K=np.asarray(K, float))
    return trim_transient(raw, config.discard_s)


@dataclass
class SessionRecord:
    id: str
    session: SessionState
    mode: str
    status: str = "created"
    error: str | None = None
    lock: threading.Lock = field(default_factory=threading.Lock)
    thread: threading.Thread | None = None
    stream_attached: bool = False
    live_phase: str = "idle"


class SessionStore:
    def __init__(self):
        self._records: dict[str, SessionRecord] = {}

    def create(self, config: SessionConfig) -> SessionRecord:
        sid = uuid.uuid4().hex[:12]
        record = SessionRecord(
            id=sid, session=protocol.new_session(config), mode=config.mode
        )
        self._records[sid] = record
        return record

    def get(self, sid: str) -> SessionRecord:
        record = self._records.get(sid)
        if record is None:
            raise HTTPException(status_code=404, detail=f"unknown session {sid!r}")
        return record


def _run_batch(record: SessionRecord) -> None:
    try:
        protocol.run_session(record.session)
        with record.lock:
            record.status = "done"
    except Exception as exc:  # surfaced through the status endpoint
        with record.lock:
            record.status = "failed"
            record.error = str(exc)


def _results_payload(record: SessionRecord) -> dict:
    session = record.session
    with record.lock:
        archive = session.archive.to_records()
        reports = [r.to_dict() for r in session.reports]
    payload = {
        "session": record.id,
        "status": record.status,
        "generation": session.cma.g,
        "archive": archive,
        "reports": reports,
        "analysis": None,
    }
    if reports:
        rows = []
        for rep in session.reports:
            for round_i in range(len(rep.orders)):
                rows.append(
                    [rep.results[c][round_i].total for c in protocol.VALIDATION_CONDITIONS]
                )
        if len(rows) >= 2:
            table = analysis.RmTable(
                values=np.array(rows), condition_labels=protocol.VALIDATION_CONDITIONS
            )
            anova = analysis.rm_anova_oneway(table)
            pairwise = analysis.bonferroni_pairwise(table)
            payload["analysis"] = {
                "note": "one-way RM over conditions; rows are validation rounds, not subjects",
                "anova": anova.as_dict(),
                "pairwise": [p.as_dict() for p in pairwise],
            }
    return payload


class LiveEngine:
    """Drives one live session over an attached stream.

    Trials start once input is flowing; a stream gap above 500 ms pauses
    the session, invalidates the running trial (it never reaches the
    archive) and the same stiffness is retried from the next trial
    boundary once input resumes.
    """

    def __init__(self, record: SessionRecord):
        self.record = record
        self.session = record.session
        self.path = self.session.path
        self.screen_map = ScreenMap.for_path(self.path)
        self.latest_pos: np.ndarray | None = None
        self.latest_recv: float = -math.inf
        self._last_client_ms: float = -math.inf
        self.frame_counter = 0

    def input_fresh(self) -> bool:
        # replaced per stream mode; default covers direct engine use
        return (
            self.latest_pos is not None
            and time.monotonic() - self.latest_recv <= INPUT_GAP_LIMIT_S
        )

    # -- message plumbing ------------------------------------------------

    def handshake(self) -> dict:
        cfg = self.session.config
        human = cfg.human
        return {
            "type": "handshake",
            "session": self.record.id,
            "mapping": self.screen_map.to_dict(),
            "path_screen": [self.screen_map.to_screen(p) for p in self.path.points],
            "deadband_radius": cfg.r_db / (2.0 * self.screen_map.half_span),
            "gait_period_s": human.T_gait if human is not None else 4.0,
            "frame_rate": FRAME_RATE,
            "control_rate": CONTROL_RATE,
            "trial_s": cfg.trial_s,
            "days": cfg.days,
            "generations_per_day": cfg.generations_per_day,
            "lam": cfg.lam,
        }

    def ingest(self, message: dict, recv_time: float) -> None:
        pos = message.get("position")
        if not isinstance(pos, (list, tuple)) or len(pos) != 2:
            return
        stamp = message.get("client_time_ms")
        if isinstance(stamp, (int, float)):
            if stamp < self._last_client_ms:  # out-of-order delivery, drop
                return
            self._last_client_ms = float(stamp)
        x = min(max(float(pos[0]), 0.0), 1.0)
        y = min(max(float(pos[1]), 0.0), 1.0)
        self.latest_pos = np.array([x, y])
        self.latest_recv = recv_time

    def frame(self, phase, reference, raw, assisted, K, remaining_s, running_cost) -> dict:
        self.frame_counter += 1
        return {
            "type": "frame",
            "server_time_ms": time.monotonic() * 1000.0,
            "frame": self.frame_counter,
            "phase": phase,
            "reference": self.screen_map.to_screen(reference),
            "cursor_raw": self.screen_map.to_screen(raw) if raw is not None else None,
            "cursor_assisted": self.screen_map.to_screen(assisted) if assisted is not None else None,
            "deadband_radius": self.session.config.r_db / (2.0 * self.screen_map.half_span),
            "stiffness": [float(k) for k in K] if K is not None else None,
            "trial_remaining_s": remaining_s,
            "running_cost": running_cost,
            "generation": self.session.cma.g,
            "day": self.session.day,
        }


def create_app() -> FastAPI:
    app = FastAPI(title="hilotune")
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )
    store = SessionStore()
    app.state.store = store

    @app.post("/sessions")
    def create_session(body: dict):
        try:
            config = SessionConfig.from_dict(body.get("config", {}))
        except (TypeError, ValueError) as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        record = store.create(config)
        return {"id": record.id, "mode": record.mode}

    @app.get("/sessions/{sid}")
    def inspect(sid: str):
        record = store.get(sid)
        session = record.session
        with record.lock:
            return {
                "id": record.id,
                "mode": record.mode,
                "status": record.status,
                "error": record.error,
                "day": session.day,
                "generation": session.cma.g,
                "archive_length": len(session.archive),
                "reports": len(session.reports),
                "clock_s": session.clock_s,
                "live_phase": record.live_phase,
            }

    @app.post("/sessions/{sid}/start")
    def start(sid: str):
        record = store.get(sid)
        if record.mode != "batch":
            raise HTTPException(status_code=409, detail="live sessions start when a stream attaches")
        with record.lock:
            if record.status != "created":
                raise HTTPException(status_code=409, detail=f"session already {record.status}")
            record.status = "running"
        record.thread = threading.Thread(target=_run_batch, args=(record,), daemon=True)
        record.thread.start()
        return {"id": record.id, "status": "running"}

    @app.get("/sessions/{sid}/results")
    def results(sid: str):
        return _results_payload(store.get(sid))

    @app.websocket("/sessions/{sid}/stream")
    async def stream(ws: WebSocket, sid: str, paced: int = 0):
        record = store.get(sid)
        if record.mode != "live":
            await ws.close(code=4000, reason="not a live session")
            return
        if record.stream_attached:
            await ws.close(code=4001, reason="a stream is already attached")
            return
        record.stream_attached = True
        record.status = "running"
        await ws.accept()
        engine = LiveEngine(record)
        try:
            await ws.send_text(json.dumps(engine.handshake()))
            if paced:
                await _paced_loop(ws, engine)
            else:
                await _realtime_loop(ws, engine)
        except WebSocketDisconnect:
            pass
        finally:
            record.stream_attached = False
            record.live_phase = "idle"
            if record.status == "running":
                record.status = "paused" if record.session.day < record.session.config.days else "done"

    return app


# --- live sequencing ----------------------------------------------------------


def _next_activity(session: SessionState):
    """What the protocol wants next: a candidate trial, a generation
    commit, a validation block, a day rollover, or completion."""
    cfg = session.config
    if session.day >= cfg.days:
        return ("done",)
    if session.gen_in_day < cfg.generations_per_day:
        protocol.ensure_pending(session)
        for k in range(cfg.lam):
            if session.pending_results[k] is None:
                return ("candidate", k, session.pending[k])
        return ("finish_generation",)
    return ("validation",)


class _TrialAborted(Exception):
    """Input stream gapped; the running trial is invalid."""


class _LiveTrialRun:
    """Incremental execution of one live trial at the control rate."""

    def __init__(self, engine: LiveEngine, K, duration_s: float, phase: str):
        self.engine = engine
        session = engine.session
        self.config = session.config
        self.K = np.asarray(K, dtype=float)
        self.phase = phase
        self.n = int(round(duration_s * self.config.control_hz))
        self.loop = ControlLoop(session.path, self.K, self.config)
        self.u_series = np.empty((self.n - 1, 2))
        self.e_series = np.empty((self.n, 2))
        self.t = 0
        self.ref_phase = 0.0
        human = self.config.human
        self.gait_period = human.T_gait if human is not None else 4.0
        self.drop = int(round(self.config.discard_s / self.config.dt))
        self._sum_uu = 0.0
        self._sum_ee = 0.0

    @property
    def done(self) -> bool:
        return self.t >= self.n

    @property
    def remaining_s(self) -> float:
        return (self.n - self.t) * self.config.dt

    def running_cost(self) -> float:
        kept = self.t - self.drop
        if kept < 2:
            return 0.0
        from .objective import default_scales

        scales = default_scales(self.config.n_joints)
        w = self.config.cost_weights()
        n_u = max(kept - 1, 1)
        effort = (w.w1 / scales.J1) * self._sum_uu / n_u
        tracking = (w.w2 / scales.J2) * self._sum_ee / kept
        stiffness = (w.w3 / scales.J3) * float(self.K.sum())
        return effort + tracking + stiffness

    def advance(self, q_raw: np.ndarray):
        """One control step; returns the assisted pose."""
        compute_torque = self.t < self.n - 1
        q_act, dq, u = self.loop.step(q_raw, compute_torque=compute_torque)
        self.e_series[self.t] = dq
        if self.t >= self.drop:
            self._sum_ee += float(dq @ dq)
        if compute_torque:
            self.u_series[self.t] = u
            if self.t >= self.drop:
                self._sum_uu += float(u @ u)
        self.t += 1
        self.ref_phase = (self.ref_phase + self.config.dt / self.gait_period) % 1.0
        return q_act

    def finish(self) -> TrialLog:
        raw = TrialLog(dt=self.config.dt, u_series=self.u_series, e_series=self.e_series, K=self.K)
        return trim_transient(raw, self.config.discard_s)


async def _run_live_trial(ws, engine: LiveEngine, K, duration_s, phase, paced, tick):
    """Execute one trial, emitting frames; raises _TrialAborted on an
    input gap. Returns the trimmed TrialLog and records nothing itself."""
    run = _LiveTrialRun(engine, K, duration_s, phase)
    session = engine.session
    while not run.done:
        q_raw_screen = await tick()
        if q_raw_screen is None:
            raise _TrialAborted()
        q_raw = engine.screen_map.to_angles(*q_raw_screen)
        assisted = None
        for _ in range(STEPS_PER_FRAME):
            if run.done:
                break
            assisted = run.advance(q_raw)
        reference = session.path.interpolate(run.ref_phase)
        frame = engine.frame(
            phase, reference, q_raw, assisted, run.K, run.remaining_s, run.running_cost()
        )
        await ws.send_text(json.dumps(frame))
    return run.finish()


async def _idle_until_input(ws, engine: LiveEngine, paced, tick) -> None:
    """Hold in the idle phase until fresh input arrives."""
    while True:
        pos = await tick(allow_stale=True)
        if pos is not None and engine.input_fresh():
            return
        frame = engine.frame("idle", engine.session.path.interpolate(0.0), None, None, None, 0.0, 0.0)
        await ws.send_text(json.dumps(frame))


def _record_live_trial(session: SessionState, duration_s: float) -> None:
    session.clock_s += duration_s


async def _drive_protocol(ws, engine: LiveEngine, paced: bool, tick) -> None:
    """The live counterpart of the batch day runner, built on the same
    protocol primitives."""
    record = engine.record
    session = engine.session
    cfg = session.config
    while True:
        activity = _next_activity(session)
        kind = activity[0]
        if kind == "done":
            record.status = "done"
            record.live_phase = "idle"
            frame = engine.frame("idle", session.path.interpolate(0.0), None, None, None, 0.0, 0.0)
            await ws.send_text(json.dumps(frame))
            return
        if kind == "candidate":
            _, k_index, K = activity
            record.live_phase = "running"
            try:
                log = await _run_live_trial(ws, engine, K, cfg.trial_s, "running", paced, tick)
            except _TrialAborted:
                record.live_phase = "idle"
                await _idle_until_input(ws, engine, paced, tick)
                continue  # same candidate restarts at the next boundary
            _record_live_trial(session, cfg.trial_s)
            protocol.record_candidate_result(
                session, k_index, protocol.score_trial(session, log)
            )
        elif kind == "finish_generation":
            protocol.finish_generation(session)
            record.live_phase = "break"
            await _break_phase(ws, engine, cfg.break_s, paced, tick)
        elif kind == "validation":
            await _run_validation_block(ws, engine, paced, tick)
            protocol.advance_day_boundary(session)


async def _run_validation_block(ws, engine: LiveEngine, paced, tick) -> None:
    session = engine.session
    cfg = session.config
    record = engine.record
    orders = []
    results = {c: [] for c in protocol.VALIDATION_CONDITIONS}
    used = {}
    for _ in range(cfg.validation_rounds):
        perm = session.rng_validation.permutation(len(protocol.VALIDATION_CONDITIONS))
        order = [protocol.VALIDATION_CONDITIONS[i] for i in perm]
        orders.append(order)
        for condition in order:
            K = protocol.validation_stiffness(session, condition)
            used[condition] = K
            record.live_phase = "validation"
            while True:
                try:
                    log = await _run_live_trial(
                        ws, engine, K, cfg.validation_trial_s, "validation", paced, tick
                    )
                    break
                except _TrialAborted:
                    record.live_phase = "idle"
                    await _idle_until_input(ws, engine, paced, tick)
                    record.live_phase = "validation"
            _record_live_trial(session, cfg.validation_trial_s)
            results[condition].append(protocol.score_trial(session, log))
    report = ValidationReport(
        day=session.day, orders=orders, results=results,
        stiffness_used={c: np.asarray(k) for c, k in used.items()},
    )
    session.reports.append(report)


async def _break_phase(ws, engine: LiveEngine, duration_s: float, paced, tick) -> None:
    if paced:
        frame = engine.frame("break", engine.session.path.interpolate(0.0), None, None, None, duration_s, 0.0)
        await ws.send_text(json.dumps(frame))
        return
    end = time.monotonic() + duration_s
    while time.monotonic() < end:
        await asyncio.sleep(1.0 / FRAME_RATE)
        frame = engine.frame(
            "break", engine.session.path.interpolate(0.0), None, None, None,
            max(end - time.monotonic(), 0.0), 0.0,
        )
        await ws.send_text(json.dumps(frame))


async def _realtime_loop(ws, engine: LiveEngine) -> None:
    """Wall-clock 50 fps schedule with a reader task feeding the latest
    input; trials pause (and are invalidated) on input gaps."""
    loop = asyncio.get_running_loop()
    stop = asyncio.Event()

    async def reader():
        try:
            while True:
                text = await ws.receive_text()
                try:
                    engine.ingest(json.loads(text), time.monotonic())
                except (TypeError, ValueError):
                    continue
        except WebSocketDisconnect:
            stop.set()

    reader_task = asyncio.create_task(reader())
    next_tick = loop.time() + 1.0 / FRAME_RATE

    def input_fresh():
        return (
            engine.latest_pos is not None
            and time.monotonic() - engine.latest_recv <= INPUT_GAP_LIMIT_S
        )

    engine.input_fresh = input_fresh

    async def tick(allow_stale: bool = False):
        nonlocal next_tick
        delay = next_tick - loop.time()
        if delay > 0:
            await asyncio.sleep(delay)
        next_tick += 1.0 / FRAME_RATE
        if stop.is_set():
            raise WebSocketDisconnect()
        if input_fresh():
            return engine.latest_pos.tolist()
        return None

    try:
        await _idle_until_input(ws, engine, paced=False, tick=tick)
        await _drive_protocol(ws, engine, paced=False, tick=tick)
    finally:
        reader_task.cancel()


async def _paced_loop(ws, engine: LiveEngine) -> None:
    """Input-driven clock: one frame (two control steps) per received
    input message. Deterministic for scripted clients."""
    engine.input_fresh = lambda: engine.latest_pos is not None

    async def tick(allow_stale: bool = False):
        while True:
            text = await ws.receive_text()
            try:
                message = json.loads(text)
            except ValueError:
                continue
            if message.get("type") == "close":
                raise WebSocketDisconnect()
            engine.ingest(message, time.monotonic())
            if engine.latest_pos is not None:
                return engine.latest_pos.tolist()

    await _drive_protocol(ws, engine, paced=True, tick=tick)
