"""Survival evaluation statistics.

Time-grid construction, curve interpolation, Harrell's concordance index,
the IPCW integrated Brier score, the Kaplan-Meier estimator, and the
two-sample log-rank test. Everything here is a pure function over numpy
arrays so callers can fan out across bootstrap replicates freely.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DataError, UsageError

_trapezoid = getattr(np, "trapezoid", None) or np.trapz


@dataclass
class TimeGrid:
    """Strictly increasing bin edges tau_1 < ... < tau_T."""

    edges: np.ndarray

    def __post_init__(self):
        self.edges = np.asarray(self.edges, dtype=np.float64).ravel()
        if self.edges.size == 0:
            raise UsageError("time grid needs at least one edge")
        if np.any(np.diff(self.edges) <= 0):
            raise UsageError("time grid edges must be strictly increasing")

    @property
    def n_bins(self) -> int:
        return int(self.edges.size)

    @property
    def horizon(self) -> float:
        return float(self.edges[-1])

    def midpoints(self) -> np.ndarray:
        """Interval midpoints with an implicit left edge at 0."""
        left = np.concatenate(([0.0], self.edges[:-1]))
        return (left + self.edges) / 2.0

    def bin_of(self, times) -> np.ndarray:
        """Smallest bin t with tau_t >= time; beyond tau_T maps to the last bin."""
        idx = np.searchsorted(self.edges, np.asarray(times, dtype=np.float64), side="left")
        return np.minimum(idx, self.n_bins - 1).astype(np.int64)


@dataclass
class StepCurve:
    """Right-continuous survival step function with S(0) = 1 before the first knot."""

    times: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64).ravel()
        self.probs = np.asarray(self.probs, dtype=np.float64).ravel()
        if self.times.shape != self.probs.shape:
            raise UsageError("step curve knots must pair one time with one probability")

    def evaluate(self, t) -> np.ndarray:
        """S(t): value at the largest knot time <= t."""
        idx = np.searchsorted(self.times, np.asarray(t, dtype=np.float64), side="right") - 1
        vals = np.where(idx >= 0, self.probs[np.maximum(idx, 0)], 1.0)
        return vals if np.ndim(t) else float(vals)

    def evaluate_before(self, t) -> np.ndarray:
        """Left limit S(t-): value at the largest knot time strictly < t."""
        idx = np.searchsorted(self.times, np.asarray(t, dtype=np.float64), side="left") - 1
        vals = np.where(idx >= 0, self.probs[np.maximum(idx, 0)], 1.0)
        return vals if np.ndim(t) else float(vals)


def build_time_grid(times, events, n_bins: int) -> TimeGrid:
    """Edges at the {1/T, ..., T/T} empirical quantiles of uncensored times.

    Duplicate quantiles are collapsed (with a warning) so the grid stays
    strictly increasing even on heavily tied data.
    """
    times = np.asarray(times, dtype=np.float64)
    events = np.asarray(events)
    if n_bins < 1:
        raise UsageError(f"n_bins must be >= 1, got {n_bins}")
    uncensored = times[events == 1]
    if uncensored.size == 0:
        raise UsageError("cannot build a time grid without any uncensored events")
    qs = np.arange(1, n_bins + 1) / n_bins
    edges = np.quantile(uncensored, qs, method="inverted_cdf")
    edges = np.unique(edges)
    if edges.size < n_bins:
        warnings.warn(
            f"time grid collapsed from {n_bins} to {edges.size} bins "
            "because quantiles coincided"
        )
    return TimeGrid(edges)


def interpolate_curve(surv, grid: TimeGrid, t):
    """Piecewise-linear survival through (0,1),(tau_1,S_1),...,(tau_T,S_T).

    Constant at S_T beyond the horizon. ``surv`` is one curve of length T.
    """
    surv = np.asarray(surv, dtype=np.float64).ravel()
    if surv.size != grid.n_bins:
        raise UsageError("curve length must match the number of grid edges")
    x = np.concatenate(([0.0], grid.edges))
    y = np.concatenate(([1.0], surv))
    return np.interp(t, x, y)


def _interp_matrix(surv: np.ndarray, grid: TimeGrid, t: float) -> np.ndarray:
    """Linear interpolation of every row of an (N, T) curve matrix at scalar t."""
    x = np.concatenate(([0.0], grid.edges))
    y = np.hstack([np.ones((surv.shape[0], 1)), surv])
    k = int(np.searchsorted(x, t, side="right")) - 1
    if k >= x.size - 1:
        return y[:, -1]
    if k < 0:
        return y[:, 0]
    w = (t - x[k]) / (x[k + 1] - x[k])
    return y[:, k] * (1.0 - w) + y[:, k + 1] * w


def expected_event_time(probs, grid: TimeGrid) -> np.ndarray:
    """E[T] under a discrete distribution of T bin masses plus a tail mass.

    Bin t contributes at its interval midpoint; the tail mass beyond the
    horizon contributes at tau_T.
    """
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim == 1:
        probs = probs[None, :]
    if probs.shape[1] != grid.n_bins + 1:
        raise UsageError("expected T+1 probabilities per row (bins plus tail)")
    supports = np.concatenate([grid.midpoints(), [grid.horizon]])
    return probs @ supports


def concordance_index(risk, times, events) -> float:
    """Harrell's C over pairs (i, j) with e_i = 1 and t_i < t_j.

    Concordant when risk_i > risk_j; risk ties score half.
    """
    risk = np.asarray(risk, dtype=np.float64).ravel()
    times = np.asarray(times, dtype=np.float64).ravel()
    events = np.asarray(events).ravel()
    order = np.argsort(times, kind="stable")
    risk, times, events = risk[order], times[order], events[order]
    n = times.size
    pairs = 0.0
    score = 0.0
    for i in range(n):
        if events[i] != 1:
            continue
        later = times > times[i]
        pairs += later.sum()
        score += (risk[i] > risk[later]).sum() + 0.5 * (risk[i] == risk[later]).sum()
    if pairs == 0:
        raise DataError("concordance undefined: no comparable pairs")
    return float(score / pairs)


def kaplan_meier(times, events) -> StepCurve:
    """Product-limit estimator under right censoring."""
    times = np.asarray(times, dtype=np.float64).ravel()
    events = np.asarray(events).ravel()
    if times.size == 0:
        raise UsageError("kaplan_meier needs at least one observation")
    uniq = np.unique(times)
    surv = 1.0
    knots = np.empty_like(uniq)
    for i, t in enumerate(uniq):
        at_risk = int((times >= t).sum())
        d = int(((times == t) & (events == 1)).sum())
        if d > 0:
            surv *= (at_risk - d) / at_risk
        knots[i] = surv
    return StepCurve(uniq, knots)


def integrated_brier_score(surv, grid: TimeGrid, times, events,
                           censor_times=None, censor_events=None,
                           n_points: int = 100) -> float:
    """Graf's IPCW Brier score averaged over [0, tau_T] by the trapezoid rule.

    ``surv`` holds per-patient survival probabilities at the grid edges and
    is linearly interpolated between them. Censoring weights come from the
    Kaplan-Meier fit of the censoring distribution on ``censor_times`` /
    ``censor_events`` (the evaluation data itself when omitted). Grid points
    where the censoring survival hits zero are dropped with a warning and
    the integral renormalized over the remaining span.
    """
    surv = np.asarray(surv, dtype=np.float64)
    times = np.asarray(times, dtype=np.float64).ravel()
    events = np.asarray(events).ravel()
    if surv.ndim != 2 or surv.shape[0] != times.size or surv.shape[1] != grid.n_bins:
        raise UsageError("surv must be (n_patients, n_bins)")
    if censor_times is None:
        censor_times, censor_events = times, events
    censor_times = np.asarray(censor_times, dtype=np.float64).ravel()
    censor_events = np.asarray(censor_events).ravel()
    G = kaplan_meier(censor_times, 1 - censor_events)

    pts = np.linspace(0.0, grid.horizon, n_points)
    Gt = np.asarray(G.evaluate(pts))
    if Gt[0] <= 0.0:
        raise DataError("censoring survival is zero at t=0; weights undefined")
    if np.any(Gt <= 0.0):
        last = int(np.nonzero(Gt > 0.0)[0][-1])
        warnings.warn(
            "censoring survival reaches zero before the horizon; "
            f"integrating over [0, {pts[last]:g}] instead"
        )
        pts, Gt = pts[: last + 1], Gt[: last + 1]

    G_before = np.asarray(G.evaluate_before(times))
    bs = np.empty(pts.size)
    for k, t in enumerate(pts):
        s_t = _interp_matrix(surv, grid, float(t))
        past_event = (times <= t) & (events == 1)
        still_alive = times > t
        contrib = np.zeros(times.size)
        safe_g = np.where(past_event, np.maximum(G_before, 1e-300), 1.0)
        contrib[past_event] = (s_t[past_event] ** 2) / safe_g[past_event]
        contrib[still_alive] = ((1.0 - s_t[still_alive]) ** 2) / Gt[k]
        bs[k] = contrib.mean()
    return float(_trapezoid(bs, pts) / pts[-1])


def log_rank_test(labels, times, events) -> tuple[float, float]:
    """Two-sample log-rank test: chi-square statistic (1 df) and p-value.

    The p-value is the regularized upper incomplete gamma Q(1/2, x/2),
    which for one degree of freedom equals erfc(sqrt(x/2)).
    """
    labels = np.asarray(labels).ravel()
    times = np.asarray(times, dtype=np.float64).ravel()
    events = np.asarray(events).ravel()
    groups = np.unique(labels)
    if groups.size != 2:
        raise UsageError(f"log-rank test needs exactly 2 nonempty groups, got {groups.size}")
    in_a = labels == groups[0]
    observed = 0.0
    expected = 0.0
    variance = 0.0
    for t in np.unique(times[events == 1]):
        at_risk = times >= t
        n = int(at_risk.sum())
        n_a = int((at_risk & in_a).sum())
        dying = (times == t) & (events == 1)
        d = int(dying.sum())
        observed += int((dying & in_a).sum())
        expected += d * n_a / n
        if n > 1:
            variance += d * (n_a / n) * (1.0 - n_a / n) * (n - d) / (n - 1)
    if variance <= 0.0:
        return 0.0, 1.0
    stat = (observed - expected) ** 2 / variance
    return float(stat), float(math.erfc(math.sqrt(stat / 2.0)))
