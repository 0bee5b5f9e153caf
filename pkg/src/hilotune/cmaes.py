"""Covariance Matrix Adaptation Evolution Strategy.

Minimises a black-box fitness over a box-constrained search space by
adapting a multivariate normal search distribution (mean, covariance,
step size) from ranked samples. All update rules are pure functions of
an immutable optimizer state, so a failed update can never corrupt the
previous generation and states can be snapshotted/restored exactly.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

# Exponent bound for the step-size update; prevents overflow on
# pathological evolution paths without affecting normal operation.
_MAX_STEP_EXPONENT = 20.0

# Relative eigenvalue floor below which the covariance is treated as
# numerically singular.
_EIGEN_REL_TOL = 1e-14

# Bound-violating candidates are redrawn this many times before being
# clamped componentwise to the box.
_RESAMPLE_ATTEMPTS = 10


class CmaError(Exception):
    """Base class for optimizer failures."""


class CovarianceError(CmaError):
    """Covariance matrix lost positive definiteness."""


class InvalidFitnessError(CmaError):
    """A candidate was evaluated to a non-finite fitness."""


def expected_standard_norm(n: int) -> float:
    """Approximate E||N(0, I_n)|| as sqrt(n) * (1 - 1/(4n) + 1/(21 n^2))."""
    if n < 1:
        raise ValueError(f"dimension must be >= 1, got {n}")
    return math.sqrt(n) * (1.0 - 1.0 / (4.0 * n) + 1.0 / (21.0 * n * n))


def log_decreasing_weights(mu: int) -> np.ndarray:
    """Recombination weights w_i proportional to ln(mu + 1/2) - ln(i), normalized to sum 1."""
    raw = np.log(mu + 0.5) - np.log(np.arange(1, mu + 1, dtype=float))
    return raw / raw.sum()


@dataclass(frozen=True)
class CmaParams:
    """Static strategy parameters.

    Invariants are enforced at construction; instances are immutable and
    safe to share between sessions and threads.
    """

    n: int
    lam: int
    mu: int
    weights: np.ndarray
    c_m: float
    c_1: float
    c_mu: float
    c_c: float
    c_sigma: float
    d_sigma: float
    sigma_0: float
    m_0: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=float))
        object.__setattr__(self, "m_0", np.asarray(self.m_0, dtype=float))
        object.__setattr__(self, "lower", np.asarray(self.lower, dtype=float))
        object.__setattr__(self, "upper", np.asarray(self.upper, dtype=float))
        if self.n < 1:
            raise ValueError(f"dimension must be >= 1, got {self.n}")
        if self.lam < 2:
            raise ValueError(f"population size must be >= 2, got {self.lam}")
        if not 1 <= self.mu < self.lam:
            raise ValueError(f"parent count must satisfy 1 <= mu < lambda, got mu={self.mu}")
        w = self.weights
        if w.shape != (self.mu,):
            raise ValueError(f"expected {self.mu} weights, got shape {w.shape}")
        if np.any(w <= 0.0) or np.any(w > 1.0):
            raise ValueError("weights must lie in (0, 1]")
        if np.any(np.diff(w) > 0.0):
            raise ValueError("weights must be non-increasing")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"weights must sum to 1, got {w.sum()!r}")
        for name in ("c_m", "c_1", "c_mu", "c_c", "c_sigma"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ValueError(f"{name} must lie in (0, 1], got {v}")
        if self.d_sigma <= 0.0:
            raise ValueError(f"d_sigma must be positive, got {self.d_sigma}")
        if self.sigma_0 <= 0.0:
            raise ValueError(f"sigma_0 must be positive, got {self.sigma_0}")
        for name, arr in (("m_0", self.m_0), ("lower", self.lower), ("upper", self.upper)):
            if arr.shape != (self.n,):
                raise ValueError(f"{name} must have shape ({self.n},), got {arr.shape}")
        if not np.all(self.lower < self.upper):
            raise ValueError("lower bounds must be strictly below upper bounds")

    @property
    def mu_eff(self) -> float:
        """Effective sample size of the selected samples, 1 / sum(w_i^2)."""
        return 1.0 / float(np.sum(self.weights**2))


# Values published for the gait-assistance study; used by default_params.
TABLE_DEFAULTS = {
    "lam": 7,
    "sigma_0": 150.0,
    "c_m": 1.0,
    "c_1": 0.15,
    "c_mu": 0.058,
    "c_sigma": 0.62,
}

_DEFAULT_K_MAX = 400.0


def _d_sigma_default(mu_eff: float, n: int, c_sigma: float) -> float:
    return 1.0 + 2.0 * max(0.0, math.sqrt((mu_eff - 1.0) / (n + 1.0)) - 1.0) + c_sigma


def _c_c_default(mu_eff: float, n: int) -> float:
    return (4.0 + mu_eff / n) / (n + 4.0 + 2.0 * mu_eff / n)


def default_params(n: int, **overrides) -> CmaParams:
    """Strategy parameters for the stiffness-tuning problem.

    Published values are used where available (lambda=7, sigma_0=150,
    c_m=1, c_1=0.15, c_mu=0.058, c_sigma=0.62); mu, the recombination
    weights, c_c and d_sigma fall back to the standard CMA-ES defaults.
    The initial mean defaults to the midpoint of the upper bound.
    Bounds default to [0, 400] per dimension.
    """
    if n < 1:
        raise ValueError(f"dimension must be >= 1, got {n}")
    known = {
        "lam", "mu", "weights", "c_m", "c_1", "c_mu", "c_c", "c_sigma",
        "d_sigma", "sigma_0", "m_0", "lower", "upper",
    }
    unknown = set(overrides) - known
    if unknown:
        raise ValueError(f"unrecognized parameter overrides: {sorted(unknown)}")

    lam = int(overrides.get("lam", TABLE_DEFAULTS["lam"]))
    mu = int(overrides.get("mu", max(1, lam // 2)))
    weights = overrides.get("weights")
    if weights is None:
        weights = log_decreasing_weights(mu)
    weights = np.asarray(weights, dtype=float)
    mu_eff = 1.0 / float(np.sum(weights**2))

    lower = np.broadcast_to(np.asarray(overrides.get("lower", 0.0), dtype=float), (n,)).copy()
    upper = np.broadcast_to(
        np.asarray(overrides.get("upper", _DEFAULT_K_MAX), dtype=float), (n,)
    ).copy()
    m_0 = overrides.get("m_0")
    if m_0 is None:
        m_0 = 0.5 * upper
    c_sigma = float(overrides.get("c_sigma", TABLE_DEFAULTS["c_sigma"]))

    return CmaParams(
        n=n,
        lam=lam,
        mu=mu,
        weights=weights,
        c_m=float(overrides.get("c_m", TABLE_DEFAULTS["c_m"])),
        c_1=float(overrides.get("c_1", TABLE_DEFAULTS["c_1"])),
        c_mu=float(overrides.get("c_mu", TABLE_DEFAULTS["c_mu"])),
        c_c=float(overrides.get("c_c", _c_c_default(mu_eff, n))),
        c_sigma=c_sigma,
        d_sigma=float(overrides.get("d_sigma", _d_sigma_default(mu_eff, n, c_sigma))),
        sigma_0=float(overrides.get("sigma_0", TABLE_DEFAULTS["sigma_0"])),
        m_0=np.asarray(m_0, dtype=float),
        lower=lower,
        upper=upper,
    )


def canonical_params(
    n: int,
    sigma_0: float,
    m_0=None,
    lower=None,
    upper=None,
    lam: int | None = None,
) -> CmaParams:
    """Fully canonical CMA-ES parameterization for a generic problem.

    Uses the textbook defaults for every rate: lambda = 4 + floor(3 ln n),
    mu = lambda // 2, log-decreasing weights, and the standard expressions
    for c_sigma, d_sigma, c_c, c_1 and c_mu. Bounds default to unbounded.
    """
    if lam is None:
        lam = 4 + int(3 * math.log(n))
    mu = max(1, lam // 2)
    weights = log_decreasing_weights(mu)
    mu_eff = 1.0 / float(np.sum(weights**2))
    c_sigma = (mu_eff + 2.0) / (n + mu_eff + 5.0)
    c_1 = 2.0 / ((n + 1.3) ** 2 + mu_eff)
    c_mu = min(1.0 - c_1, 2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((n + 2.0) ** 2 + mu_eff))
    if m_0 is None:
        m_0 = np.zeros(n)
    if lower is None:
        lower = np.full(n, -np.inf)
    if upper is None:
        upper = np.full(n, np.inf)
    return CmaParams(
        n=n,
        lam=lam,
        mu=mu,
        weights=weights,
        c_m=1.0,
        c_1=c_1,
        c_mu=c_mu,
        c_c=_c_c_default(mu_eff, n),
        c_sigma=c_sigma,
        d_sigma=_d_sigma_default(mu_eff, n, c_sigma),
        sigma_0=sigma_0,
        m_0=np.asarray(m_0, dtype=float),
        lower=np.broadcast_to(np.asarray(lower, dtype=float), (n,)).copy(),
        upper=np.broadcast_to(np.asarray(upper, dtype=float), (n,)).copy(),
    )


@dataclass(frozen=True)
class CmaState:
    """Complete optimizer state after g generations.

    eigen_basis/eigen_values cache the spectral decomposition of C
    (eigen_values holds the square roots of C's eigenvalues, i.e. the
    per-axis standard deviations of the search distribution).
    """

    m: np.ndarray
    C: np.ndarray
    sigma: float
    p_c: np.ndarray
    p_sigma: np.ndarray
    g: int
    eigen_basis: np.ndarray = field(repr=False)
    eigen_values: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return self.m.shape[0]

    def inv_sqrt_c(self) -> np.ndarray:
        """C^(-1/2) from the cached decomposition."""
        B, d = self.eigen_basis, self.eigen_values
        return (B / d) @ B.T


def _decompose(C: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a symmetric C; raises if numerically non-PD."""
    vals, vecs = np.linalg.eigh(C)
    if vals[-1] <= 0.0 or vals[0] <= _EIGEN_REL_TOL * vals[-1]:
        raise CovarianceError(
            f"covariance is numerically singular (eigenvalues {vals.min():.3e}..{vals.max():.3e})"
        )
    return vecs, np.sqrt(vals)


def initial_state(params: CmaParams) -> CmaState:
    """State at g = 0: C = I, both evolution paths zero."""
    n = params.n
    C = np.eye(n)
    basis, values = _decompose(C)
    return CmaState(
        m=params.m_0.copy(),
        C=C,
        sigma=params.sigma_0,
        p_c=np.zeros(n),
        p_sigma=np.zeros(n),
        g=0,
        eigen_basis=basis,
        eigen_values=values,
    )


def sample_population(state: CmaState, params: CmaParams, rng: np.random.Generator) -> np.ndarray:
    """Draw lambda candidates from m + sigma * N(0, C), repaired to the box.

    Candidates falling outside the bounds are redrawn up to 10 times and
    finally clamped componentwise; the clamped vector is what gets
    evaluated and archived. Deterministic given the generator state.
    """
    B, d = state.eigen_basis, state.eigen_values
    if not np.all(np.isfinite(d)):
        raise CovarianceError("eigendecomposition cache is invalid")
    lo, hi = params.lower, params.upper
    out = np.empty((params.lam, params.n))
    for k in range(params.lam):
        x = None
        for _ in range(_RESAMPLE_ATTEMPTS):
            z = rng.standard_normal(params.n)
            x = state.m + state.sigma * (B @ (d * z))
            if np.all(x >= lo) and np.all(x <= hi):
                break
        out[k] = np.clip(x, lo, hi)
    return out


@dataclass(frozen=True)
class EvaluatedPopulation:
    """Candidates with fitnesses and the fitness-sorted order.

    order[i] is the index (0-based) of the i-th best candidate; sorting
    is stable, so equal fitnesses keep their insertion order.
    """

    candidates: np.ndarray
    fitnesses: np.ndarray
    order: np.ndarray

    def selected(self, mu: int) -> np.ndarray:
        """The mu best candidates, best first."""
        return self.candidates[self.order[:mu]]


def rank_population(candidates, fitnesses) -> EvaluatedPopulation:
    """Rank candidates by non-decreasing fitness (stable on ties)."""
    candidates = np.asarray(candidates, dtype=float)
    fitnesses = np.asarray(fitnesses, dtype=float)
    if candidates.shape[0] != fitnesses.shape[0]:
        raise ValueError(
            f"{candidates.shape[0]} candidates but {fitnesses.shape[0]} fitnesses"
        )
    bad = np.flatnonzero(~np.isfinite(fitnesses))
    if bad.size:
        raise InvalidFitnessError(
            f"non-finite fitness {fitnesses[bad[0]]!r} for candidate {bad[0]}"
        )
    order = np.argsort(fitnesses, kind="stable")
    return EvaluatedPopulation(candidates=candidates, fitnesses=fitnesses, order=order)


def _selected_y(state: CmaState, params: CmaParams, ranked: EvaluatedPopulation) -> np.ndarray:
    """Weighted mean of the selected steps, sum(w_i * y_{i:lambda}),
    with y = (x - m_g) / sigma_g taken from the pre-update mean."""
    xs = ranked.selected(params.mu)
    ys = (xs - state.m) / state.sigma
    return params.weights @ ys


def update_mean(state: CmaState, params: CmaParams, ranked: EvaluatedPopulation) -> np.ndarray:
    """m_{g+1} = m_g + c_m sigma_g sum_i w_i (x_{i:lambda} - m_g)."""
    xs = ranked.selected(params.mu)
    return state.m + params.c_m * state.sigma * (params.weights @ ((xs - state.m) / state.sigma))


def update_conjugate_path(
    state: CmaState, params: CmaParams, ranked: EvaluatedPopulation
) -> np.ndarray:
    """p_sigma_{g+1} = (1 - c_s) p_sigma_g
    + sqrt(c_s (2 - c_s) mu_eff) C^{-1/2} sum_i w_i y_{i:lambda}."""
    wy = _selected_y(state, params, ranked)
    coeff = math.sqrt(params.c_sigma * (2.0 - params.c_sigma) * params.mu_eff)
    return (1.0 - params.c_sigma) * state.p_sigma + coeff * (state.inv_sqrt_c() @ wy)


def heaviside_stall(p_sigma_next: np.ndarray, c_sigma: float, g: int, n: int) -> int:
    """1 while the conjugate path is shorter than its expected length
    (normalized for the start-up transient), 0 once it overshoots.

    The normalizer is sqrt(1 - (1 - c_sigma)^(2 (g+1))) with g the
    generation index before the increment.
    """
    norm = float(np.linalg.norm(p_sigma_next))
    denom = math.sqrt(1.0 - (1.0 - c_sigma) ** (2 * (g + 1)))
    threshold = (1.4 + 2.0 / (n + 1.0)) * expected_standard_norm(n)
    return 1 if norm / denom < threshold else 0


def update_step_size(state: CmaState, params: CmaParams, p_sigma_next: np.ndarray) -> float:
    """sigma_{g+1} = sigma_g exp((c_s / d_s)(||p_sigma_{g+1}|| / E||N(0,I)|| - 1))."""
    ratio = float(np.linalg.norm(p_sigma_next)) / expected_standard_norm(params.n)
    exponent = (params.c_sigma / params.d_sigma) * (ratio - 1.0)
    if abs(exponent) > _MAX_STEP_EXPONENT:
        log.warning("step-size exponent %.3g clamped to +/-%g", exponent, _MAX_STEP_EXPONENT)
        exponent = math.copysign(_MAX_STEP_EXPONENT, exponent)
    return state.sigma * math.exp(exponent)


def update_cumulative_path(
    state: CmaState, params: CmaParams, ranked: EvaluatedPopulation, h_sigma: int
) -> np.ndarray:
    """p_c_{g+1} = (1 - c_c) p_c_g
    + h_sigma sqrt(c_c (2 - c_c) mu_eff) sum_i w_i y_{i:lambda}."""
    decayed = (1.0 - params.c_c) * state.p_c
    if not h_sigma:
        return decayed
    wy = _selected_y(state, params, ranked)
    coeff = math.sqrt(params.c_c * (2.0 - params.c_c) * params.mu_eff)
    return decayed + coeff * wy


def update_covariance(
    state: CmaState,
    params: CmaParams,
    ranked: EvaluatedPopulation,
    p_c_next: np.ndarray,
    h_sigma: int,
) -> np.ndarray:
    """C_{g+1} = (1 + c_1 delta(h) - c_1 - c_mu) C_g + c_1 p_c p_c^T
    + c_mu sum_i w_i y y^T, with delta(h) = (1 - h) c_c (2 - c_c).

    The result is symmetrized to suppress floating-point drift; loss of
    positive definiteness raises CovarianceError.
    """
    delta = (1 - h_sigma) * params.c_c * (2.0 - params.c_c)
    xs = ranked.selected(params.mu)
    ys = (xs - state.m) / state.sigma
    rank_mu = (params.weights[:, None] * ys).T @ ys
    C = (
        (1.0 + params.c_1 * delta - params.c_1 - params.c_mu) * state.C
        + params.c_1 * np.outer(p_c_next, p_c_next)
        + params.c_mu * rank_mu
    )
    C = 0.5 * (C + C.T)
    vals = np.linalg.eigvalsh(C)
    if vals[0] <= _EIGEN_REL_TOL * vals[-1]:
        raise CovarianceError(
            f"covariance update lost positive definiteness (eigenvalues {vals[0]:.3e}..{vals[-1]:.3e})"
        )
    return C


def step(state: CmaState, params: CmaParams, ranked: EvaluatedPopulation) -> CmaState:
    """One full generation update in the standard order: mean, conjugate
    path, step size, cumulative path, covariance, then g + 1.

    Atomic: any failure propagates before a new state is built, leaving
    the input state untouched.
    """
    if ranked.candidates.shape != (params.lam, params.n):
        raise ValueError(
            f"expected population shape {(params.lam, params.n)}, got {ranked.candidates.shape}"
        )
    m_next = update_mean(state, params, ranked)
    p_sigma_next = update_conjugate_path(state, params, ranked)
    sigma_next = update_step_size(state, params, p_sigma_next)
    h_sigma = heaviside_stall(p_sigma_next, params.c_sigma, state.g, params.n)
    p_c_next = update_cumulative_path(state, params, ranked, h_sigma)
    C_next = update_covariance(state, params, ranked, p_c_next, h_sigma)
    basis, values = _decompose(C_next)
    return CmaState(
        m=m_next,
        C=C_next,
        sigma=sigma_next,
        p_c=p_c_next,
        p_sigma=p_sigma_next,
        g=state.g + 1,
        eigen_basis=basis,
        eigen_values=values,
    )


class SampleArchive:
    """Append-only record of every evaluated candidate."""

    def __init__(self):
        self._records: list[tuple[int, np.ndarray, float, float]] = []

    def append(self, generation: int, candidate, fitness: float, timestamp: float) -> None:
        if self._records and generation < self._records[-1][0]:
            raise ValueError(
                f"generation {generation} precedes last archived generation {self._records[-1][0]}"
            )
        self._records.append(
            (int(generation), np.array(candidate, dtype=float), float(fitness), float(timestamp))
        )

    def __len__(self) -> int:
        return len(self._records)

    def __iter__(self):
        return iter(self._records)

    def best_so_far(self) -> tuple[np.ndarray, float]:
        """The archived candidate with minimum fitness; first record wins ties."""
        if not self._records:
            raise ValueError("archive is empty")
        best = min(self._records, key=lambda rec: rec[2])
        return best[1].copy(), best[2]

    def to_records(self) -> list[dict]:
        return [
            {"generation": g, "candidate": list(x), "fitness": f, "timestamp": t}
            for g, x, f, t in self._records
        ]

    @classmethod
    def from_records(cls, records: list[dict]) -> "SampleArchive":
        archive = cls()
        for rec in records:
            archive.append(rec["generation"], rec["candidate"], rec["fitness"], rec["timestamp"])
        return archive


def best_so_far(archive: SampleArchive) -> tuple[np.ndarray, float]:
    """Module-level alias for SampleArchive.best_so_far."""
    return archive.best_so_far()


# --- state snapshots -------------------------------------------------------
#
# Snapshots are JSON with floats carried at full precision (Python emits
# the shortest representation that round-trips exactly), so load(save(s))
# reproduces every field bit for bit.

SNAPSHOT_VERSION = 1


def params_to_dict(params: CmaParams) -> dict:
    return {
        "n": params.n,
        "lam": params.lam,
        "mu": params.mu,
        "weights": params.weights.tolist(),
        "c_m": params.c_m,
        "c_1": params.c_1,
        "c_mu": params.c_mu,
        "c_c": params.c_c,
        "c_sigma": params.c_sigma,
        "d_sigma": params.d_sigma,
        "sigma_0": params.sigma_0,
        "m_0": params.m_0.tolist(),
        "lower": params.lower.tolist(),
        "upper": params.upper.tolist(),
    }


def params_from_dict(d: dict) -> CmaParams:
    return CmaParams(
        n=d["n"],
        lam=d["lam"],
        mu=d["mu"],
        weights=np.array(d["weights"], dtype=float),
        c_m=d["c_m"],
        c_1=d["c_1"],
        c_mu=d["c_mu"],
        c_c=d["c_c"],
        c_sigma=d["c_sigma"],
        d_sigma=d["d_sigma"],
        sigma_0=d["sigma_0"],
        m_0=np.array(d["m_0"], dtype=float),
        lower=np.array(d["lower"], dtype=float),
        upper=np.array(d["upper"], dtype=float),
    )


def state_to_dict(state: CmaState) -> dict:
    return {
        "m": state.m.tolist(),
        "C": state.C.tolist(),
        "sigma": state.sigma,
        "p_c": state.p_c.tolist(),
        "p_sigma": state.p_sigma.tolist(),
        "g": state.g,
    }


def state_from_dict(d: dict) -> CmaState:
    C = np.array(d["C"], dtype=float)
    basis, values = _decompose(C)
    return CmaState(
        m=np.array(d["m"], dtype=float),
        C=C,
        sigma=float(d["sigma"]),
        p_c=np.array(d["p_c"], dtype=float),
        p_sigma=np.array(d["p_sigma"], dtype=float),
        g=int(d["g"]),
        eigen_basis=basis,
        eigen_values=values,
    )


def save_snapshot(state: CmaState, params: CmaParams) -> str:
    return json.dumps(
        {"version": SNAPSHOT_VERSION, "params": params_to_dict(params), "state": state_to_dict(state)},
        indent=2,
    )


def load_snapshot(text: str) -> tuple[CmaState, CmaParams]:
    doc = json.loads(text)
    if doc.get("version") != SNAPSHOT_VERSION:
        raise ValueError(f"unsupported snapshot version {doc.get('version')!r}")
    return state_from_dict(doc["state"]), params_from_dict(doc["params"])
