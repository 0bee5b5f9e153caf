"""Repeated-measures statistics for validation outcomes.

One-way and two-way within-subject ANOVA (each effect tested against its
own effect-by-subject interaction) plus Bonferroni-corrected paired
comparisons. Sphericity diagnostics and epsilon corrections are out of
scope; with few conditions and small panels the uncorrected test is
reported as such.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np
from scipy.special import betainc

_ZERO_SS = 1e-300  # below this an error term is treated as exactly zero


class AnalysisError(ValueError):
    pass


def tail_probability(statistic: float, distribution: str, df1: int, df2: int | None = None) -> float:
    """Upper-tail F or two-sided t probability via the regularized
    incomplete beta function.

    distribution is "F" (requires df1, df2) or "t" (df1 only).
    """
    if distribution == "F":
        if df1 is None or df2 is None or df1 < 1 or df2 < 1:
            raise AnalysisError(f"invalid F degrees of freedom ({df1}, {df2})")
        if statistic < 0:
            raise AnalysisError(f"F statistic must be non-negative, got {statistic}")
        return float(betainc(df2 / 2.0, df1 / 2.0, df2 / (df2 + df1 * statistic)))
    if distribution == "t":
        if df1 is None or df1 < 1:
            raise AnalysisError(f"invalid t degrees of freedom ({df1})")
        t2 = statistic * statistic
        return float(betainc(df1 / 2.0, 0.5, df1 / (df1 + t2)))
    raise AnalysisError(f"unknown distribution {distribution!r}")


@dataclass(frozen=True)
class RmTable:
    """Complete within-subject table: (subjects, conditions) or
    (subjects, conditions, times)."""

    values: np.ndarray
    condition_labels: tuple
    time_labels: tuple | None = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "condition_labels", tuple(self.condition_labels))
        if self.time_labels is not None:
            object.__setattr__(self, "time_labels", tuple(self.time_labels))
        if v.ndim not in (2, 3):
            raise AnalysisError(f"expected a 2-D or 3-D table, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise AnalysisError("table has missing or non-finite cells")
        if v.shape[0] < 2:
            raise AnalysisError(f"need at least 2 subjects, got {v.shape[0]}")
        if v.shape[1] < 2:
            raise AnalysisError(f"need at least 2 conditions, got {v.shape[1]}")
        if len(self.condition_labels) != v.shape[1]:
            raise AnalysisError("condition labels do not match table width")
        if v.ndim == 3:
            if self.time_labels is None or len(self.time_labels) != v.shape[2]:
                raise AnalysisError("time labels do not match table depth")


@dataclass(frozen=True)
class AnovaResult:
    effect: str
    F: float
    df_num: int
    df_den: int
    p: float
    degenerate: bool = False

    def as_dict(self) -> dict:
        return {
            "effect": self.effect,
            "F": self.F,
            "df_num": self.df_num,
            "df_den": self.df_den,
            "p": self.p,
            "degenerate": self.degenerate,
        }


def _f_result(effect: str, ss_effect: float, df_num: int, ss_err: float, df_den: int) -> AnovaResult:
    """F from sums of squares, with explicit handling of the degenerate
    zero-error case (F taken as 0 with p=1 when the effect is also zero,
    else infinite with p=0 by documented convention)."""
    if ss_err <= _ZERO_SS:
        if ss_effect <= _ZERO_SS:
            return AnovaResult(effect, 0.0, df_num, df_den, 1.0, degenerate=True)
        return AnovaResult(effect, float("inf"), df_num, df_den, 0.0, degenerate=True)
    F = (ss_effect / df_num) / (ss_err / df_den)
    return AnovaResult(effect, F, df_num, df_den, tail_probability(F, "F", df_num, df_den))


def rm_anova_oneway(table: RmTable) -> AnovaResult:
    """One-way repeated-measures ANOVA over the condition factor.

    SS_error = SS_total - SS_subjects - SS_condition; F uses
    df = (k - 1, (k - 1)(s - 1)).
    """
    v = table.values
    if v.ndim != 2:
        raise AnalysisError("one-way ANOVA needs a 2-D table; collapse time first")
    s, k = v.shape
    gm = v.mean()
    ss_total = float(((v - gm) ** 2).sum())
    ss_cond = float(s * ((v.mean(axis=0) - gm) ** 2).sum())
    ss_subj = float(k * ((v.mean(axis=1) - gm) ** 2).sum())
    ss_err = ss_total - ss_cond - ss_subj
    return _f_result("condition", ss_cond, k - 1, max(ss_err, 0.0), (k - 1) * (s - 1))


def rm_anova_twoway(table: RmTable) -> dict[str, AnovaResult]:
    """Two-way fully-crossed within-subject ANOVA.

    Returns results keyed "condition", "time" and "interaction"; each
    effect is tested against its own effect-by-subject interaction.
    """
    v = table.values
    if v.ndim != 3:
        raise AnalysisError("two-way ANOVA needs a (subjects, conditions, times) table")
    s, a, b = v.shape
    if b < 2:
        raise AnalysisError(f"need at least 2 time levels, got {b}")
    gm = v.mean()
    m_s = v.mean(axis=(1, 2))
    m_a = v.mean(axis=(0, 2))
    m_b = v.mean(axis=(0, 1))
    m_sa = v.mean(axis=2)
    m_sb = v.mean(axis=1)
    m_ab = v.mean(axis=0)

    ss_a = float(s * b * ((m_a - gm) ** 2).sum())
    ss_b = float(s * a * ((m_b - gm) ** 2).sum())
    ss_s = float(a * b * ((m_s - gm) ** 2).sum())
    ss_sa = float(b * ((m_sa - m_s[:, None] - m_a[None, :] + gm) ** 2).sum())
    ss_sb = float(a * ((m_sb - m_s[:, None] - m_b[None, :] + gm) ** 2).sum())
    ss_ab = float(s * ((m_ab - m_a[:, None] - m_b[None, :] + gm) ** 2).sum())
    ss_total = float(((v - gm) ** 2).sum())
    ss_sab = max(ss_total - ss_s - ss_a - ss_b - ss_ab - ss_sa - ss_sb, 0.0)

    return {
        "condition": _f_result("condition", ss_a, a - 1, ss_sa, (a - 1) * (s - 1)),
        "time": _f_result("time", ss_b, b - 1, ss_sb, (b - 1) * (s - 1)),
        "interaction": _f_result(
            "interaction", ss_ab, (a - 1) * (b - 1), ss_sab, (a - 1) * (b - 1) * (s - 1)
        ),
    }


@dataclass(frozen=True)
class PairwiseResult:
    pair: tuple
    mean_difference: float
    t: float
    p_raw: float
    p_adjusted: float
    n_comparisons: int
    degenerate: bool = False

    @property
    def significant_05(self) -> bool:
        return not self.degenerate and self.p_adjusted < 0.05

    @property
    def significant_01(self) -> bool:
        return not self.degenerate and self.p_adjusted < 0.01

    def as_dict(self) -> dict:
        return {
            "pair": list(self.pair),
            "mean_difference": self.mean_difference,
            "t": self.t,
            "p_raw": self.p_raw,
            "p_adjusted": self.p_adjusted,
            "n_comparisons": self.n_comparisons,
            "degenerate": self.degenerate,
            "significant_05": self.significant_05,
            "significant_01": self.significant_01,
        }


def bonferroni_pairwise(table: RmTable, factor: str = "condition") -> list[PairwiseResult]:
    """Paired two-sided t-tests on every level pair of the chosen factor,
    with p multiplied by the number of pairs (capped at 1).

    On a three-way table the other within factor is collapsed by subject
    mean first. Zero-variance differences are flagged degenerate rather
    than reported as p = 0.
    """
    v = table.values
    if factor == "condition":
        labels = table.condition_labels
        data = v if v.ndim == 2 else v.mean(axis=2)
    elif factor == "time":
        if v.ndim != 3:
            raise AnalysisError("table has no time factor")
        labels = table.time_labels
        data = v.mean(axis=1)
    else:
        raise AnalysisError(f"unknown factor {factor!r}")
    if len(labels) < 2:
        raise AnalysisError("factor needs at least 2 levels")

    pairs = list(combinations(range(len(labels)), 2))
    m = len(pairs)
    out = []
    n = data.shape[0]
    for i, j in pairs:
        d = data[:, i] - data[:, j]
        mean = float(d.mean())
        sd = float(d.std(ddof=1))
        if sd == 0.0:
            out.append(
                PairwiseResult(
                    pair=(labels[i], labels[j]), mean_difference=mean, t=float("nan"),
                    p_raw=float("nan"), p_adjusted=float("nan"), n_comparisons=m,
                    degenerate=True,
                )
            )
            continue
        t = mean / (sd / np.sqrt(n))
        p = tail_probability(t, "t", n - 1)
        out.append(
            PairwiseResult(
                pair=(labels[i], labels[j]), mean_difference=mean, t=float(t),
                p_raw=p, p_adjusted=min(1.0, p * m), n_comparisons=m,
            )
        )
    return out


def significance_marker(p: float) -> str:
    """Figure-style marker: ** for p<0.01, * for p<0.05, empty otherwise."""
    if p < 0.01:
        return "**"
    if p < 0.05:
        return "*"
    return ""


def summary_table(
    anova: dict[str, AnovaResult] | AnovaResult, pairwise: list[PairwiseResult]
) -> str:
    """Delimited text summary consumed by the CLI and UI."""
    rows = ["kind,effect,F,df_num,df_den,p,marker"]
    effects = anova.values() if isinstance(anova, dict) else [anova]
    for r in effects:
        rows.append(
            f"anova,{r.effect},{r.F!r},{r.df_num},{r.df_den},{r.p!r},{significance_marker(r.p)}"
        )
    rows.append("kind,pair,mean_difference,t,p_raw,p_adjusted,marker")
    for pr in pairwise:
        marker = "degenerate" if pr.degenerate else significance_marker(pr.p_adjusted)
        rows.append(
            f"pairwise,{pr.pair[0]}|{pr.pair[1]},{pr.mean_difference!r},{pr.t!r},"
            f"{pr.p_raw!r},{pr.p_adjusted!r},{marker}"
        )
    return "\n".join(rows) + "\n"
