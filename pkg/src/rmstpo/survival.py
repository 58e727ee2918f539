"""Kaplan-Meier estimation, restricted mean survival time, and the classical
two-sample tests (asymptotic RMST difference, log-rank).

Two evaluation routes exist for the KM-RMST:

* :func:`km_fit` + :func:`rmst` build an explicit :class:`KMCurve` for one
  (optionally case-weighted) sample.
* :class:`RMSTBatch` evaluates the same functional for many weight vectors
  over a fixed set of subjects at once, together with its Greenwood-type
  variance and the exact derivative with respect to each subject's weight.
  Leave-one-out, bootstrap and permutation replicates are all expressed as
  weight matrices over the original subjects, so resampling never rebuilds
  risk sets.

Ties are handled with events preceding censorings at the same time: a
subject censored at ``u`` is still at risk for events at ``u``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from . import _kernels
from .errors import EstimationError, InestimableError, ValidationError
from .results import Method, TestResult, normal_quantile, normal_two_sided_p, studentized_result


class ExtensionPolicy(enum.Enum):
    STRICT = "strict"
    EXTEND = "extend"


@dataclass(frozen=True, eq=False)
class SurvivalSample:
    """Right-censored observations with a binary arm label.

    Parameters
    ----------
    time : array of float
        Observed times ``min(T, C)``, finite and nonnegative.
    status : array of int
        1 if the event was observed, 0 if censored.
    group : array of int
        Treatment indicator (0 = control, 1 = experimental).
    covariates : 2-D array, optional
        ``(n, q)`` matrix of adjustment covariates; ``q`` may be 0.
    covariate_names : sequence of str, optional
    """

    time: np.ndarray
    status: np.ndarray
    group: np.ndarray
    covariates: np.ndarray = field(default=None)
    covariate_names: tuple = ()

    def __post_init__(self):
        time = np.asarray(self.time, dtype=float).reshape(-1)
        status = np.asarray(self.status).reshape(-1)
        group = np.asarray(self.group).reshape(-1)
        n = time.size
        if self.covariates is None:
            cov = np.empty((n, 0))
        else:
            cov = np.asarray(self.covariates, dtype=float)
            if cov.ndim == 1:
                cov = cov.reshape(n, -1)
        if status.size != n or group.size != n or cov.shape[0] != n:
            raise ValidationError("invalid input: column lengths differ")
        if not np.all(np.isfinite(time)) or np.any(time < 0):
            raise ValidationError("invalid input: times must be finite and nonnegative")
        if not np.all(np.isin(status, (0, 1))):
            raise ValidationError("invalid input: status must be 0 or 1")
        if not np.all(np.isin(group, (0, 1))):
            raise ValidationError("invalid input: group must be 0 or 1")
        names = tuple(self.covariate_names) or tuple(f"x{j}" for j in range(cov.shape[1]))
        if len(names) != cov.shape[1]:
            raise ValidationError("invalid input: covariate names do not match columns")
        object.__setattr__(self, "time", time)
        object.__setattr__(self, "status", status.astype(np.int8))
        object.__setattr__(self, "group", group.astype(np.int8))
        object.__setattr__(self, "covariates", cov)
        object.__setattr__(self, "covariate_names", names)

    @property
    def n(self) -> int:
        return self.time.size

    def __len__(self) -> int:
        return self.n

    def take(self, index) -> "SurvivalSample":
        index = np.asarray(index)
        return SurvivalSample(self.time[index], self.status[index], self.group[index],
                              self.covariates[index], self.covariate_names)

    def arm(self, j: int) -> "SurvivalSample":
        return self.take(np.flatnonzero(self.group == j))

    @classmethod
    def from_arms(cls, sample0: "SurvivalSample", sample1: "SurvivalSample") -> "SurvivalSample":
        """Stack two samples, relabelling them as control (0) and treatment (1)."""
        if sample0.covariates.shape[1] != sample1.covariates.shape[1]:
            raise ValidationError("invalid input: covariate arity differs between samples")
        return cls(np.concatenate([sample0.time, sample1.time]),
                   np.concatenate([sample0.status, sample1.status]),
                   np.repeat([0, 1], [sample0.n, sample1.n]),
                   np.vstack([sample0.covariates, sample1.covariates]),
                   sample0.covariate_names)


@dataclass(frozen=True)
class KMCurve:
    distinct_times: np.ndarray
    n_risk: np.ndarray
    n_event: np.ndarray
    surv: np.ndarray
    max_followup: float
    last_is_event: bool

    def __call__(self, t) -> np.ndarray:
        """Right-continuous survival estimate at ``t`` (no extension beyond the data)."""
        k = np.searchsorted(self.distinct_times, np.asarray(t, dtype=float), side="right")
        return np.concatenate([[1.0], self.surv])[k]


@dataclass(frozen=True)
class RMSTEstimate:
    mu: float
    var: float
    t_star: float
    extended: bool = False

    @property
    def se(self) -> float:
        return float(np.sqrt(self.var))


def _as_times(sample):
    if isinstance(sample, SurvivalSample):
        return sample.time, sample.status
    time, status = sample
    return np.asarray(time, dtype=float), np.asarray(status)


def km_fit(sample, weights: Optional[Sequence[float]] = None) -> KMCurve:
    """Product-limit estimate, optionally with positive case weights.

    ``sample`` is a :class:`SurvivalSample` or a ``(time, status)`` pair.
    """
    time, status = _as_times(sample)
    if time.size == 0:
        raise ValidationError("empty sample")
    if np.any(time < 0) or not np.all(np.isfinite(time)):
        raise ValidationError("invalid input")
    w = np.ones(time.size) if weights is None else np.asarray(weights, dtype=float)
    if w.shape != time.shape or np.any(~(w > 0)):
        raise ValidationError("invalid input")

    uniq, inv = np.unique(time, return_inverse=True)
    at_time = np.bincount(inv, weights=w, minlength=uniq.size)
    events = np.bincount(inv, weights=w * (status == 1), minlength=uniq.size)
    risk = np.cumsum(at_time[::-1])[::-1]
    surv = np.cumprod(1.0 - events / risk)
    censored_at_max = np.any((time == uniq[-1]) & (status == 0))
    return KMCurve(distinct_times=uniq, n_risk=risk, n_event=events, surv=surv,
                   max_followup=float(uniq[-1]), last_is_event=not censored_at_max)


def is_estimable(curve: KMCurve, t_star: float) -> bool:
    return curve.max_followup >= t_star or curve.last_is_event


def rmst(curve: KMCurve, t_star: float,
         extension: ExtensionPolicy = ExtensionPolicy.STRICT) -> RMSTEstimate:
    """Area under the KM step function on ``[0, t_star]`` and its variance.

    The variance is ``sum_k A_k**2 d_k / (n_k (n_k - d_k))`` over event times
    below ``t_star``, where ``A_k`` is the area of the curve between ``t_k`` and
    ``t_star``.  Terms with ``n_k == d_k`` are dropped.

    If the last observation is censored before ``t_star`` the curve is carried
    flat to ``t_star`` under ``EXTEND``; ``STRICT`` raises
    :class:`InestimableError`.
    """
    if not t_star > 0:
        raise ValidationError("t_star must be positive")
    extended = not is_estimable(curve, t_star)
    if extended and extension is ExtensionPolicy.STRICT:
        raise InestimableError("RMST inestimable at t_star")

    below = curve.distinct_times < t_star
    u = curve.distinct_times[below]
    s = curve.surv[below]
    knots = np.append(u, t_star)
    pieces = s * np.diff(knots)
    mu = (u[0] if u.size else t_star) + pieces.sum()
    # area remaining after each distinct time
    a = np.cumsum(pieces[::-1])[::-1]
    d = curve.n_event[below]
    y = curve.n_risk[below]
    ok = (d > 0) & (y > d)
    var = np.sum(a[ok] ** 2 * d[ok] / (y[ok] * (y[ok] - d[ok])))
    return RMSTEstimate(mu=float(mu), var=float(var), t_star=float(t_star), extended=extended)


class RMSTBatch:
    """KM-RMST for a fixed set of subjects under many weight vectors.

    Parameters
    ----------
    time, status : arrays of length n
    t_star : float

    Notes
    -----
    Subjects are sorted once at construction.  :meth:`evaluate` accepts a
    ``(B, n)`` weight matrix in the *original* subject order; zero weights
    remove a subject.  The curve is always carried flat past the last
    observation (horizontal extension).

    The weight derivative follows from differentiating
    ``log S_k = sum_{j<=k} log(1 - D_j / Y_j)`` and summing over the area
    pieces::

        dtheta/dw_i = sum_{u_j <= t_i} A_j D_j / (Y_j (Y_j - D_j))
                      - delta_i A_{j(i)} / (Y_{j(i)} - D_{j(i)})
    """

    def __init__(self, time, status, t_star: float, engine: str = "compiled"):
        if engine not in ("compiled", "numpy"):
            raise ValidationError(f"unknown engine {engine!r}")
        self.engine = engine
        time = np.asarray(time, dtype=float)
        status = np.asarray(status)
        if time.size == 0:
            raise ValidationError("empty sample")
        if not t_star > 0:
            raise ValidationError("t_star must be positive")
        self.n = time.size
        self.t_star = float(t_star)
        self.order = np.argsort(time, kind="stable")
        ts = time[self.order]
        self.event = (status[self.order] == 1).astype(float)
        uniq, start, inv = np.unique(ts, return_index=True, return_inverse=True)
        m = int(np.searchsorted(uniq, t_star, side="left"))
        self.m = m
        self.start = start
        self.first = float(uniq[0]) if m else self.t_star
        self.widths = np.diff(np.append(uniq[:m], t_star))
        # index of the last distinct time (< t_star) that is <= t_i, and of t_i itself
        self.upto = np.minimum(inv, m - 1)
        self.own = np.where(inv < m, inv, -1)
        # rank of each original subject in sorted order
        self.rank = np.empty(self.n, dtype=np.intp)
        self.rank[self.order] = np.arange(self.n)
        self._bounds = np.append(start[:m], start[m] if m < start.size else self.n).astype(np.intp)
        self.no_ties = bool(self._bounds[m] == m)

    def _counts(self, w):
        """Risk-set and event weights at each distinct time below ``t_star``."""
        m = self.m
        start = self.start[:m]
        last = start[-1]
        total = w.sum(axis=1)
        risk = np.empty((w.shape[0], m))
        risk[:, 0] = total
        if m > 1:
            before = np.cumsum(w[:, :last], axis=1)[:, start[1:] - 1]
            risk[:, 1:] = total[:, None] - before
        if self.no_ties:
            dead = w[:, :m] * self.event[:m]
        else:
            stop = self._bounds[m]
            dead = np.add.reduceat(w[:, :stop] * self.event[:stop], start, axis=1)
        return risk, dead

    def _stats(self, risk, dead, grad):
        alive = risk - dead
        frac = np.divide(dead, risk, out=np.zeros_like(dead), where=risk > 0)
        surv = np.cumprod(1.0 - frac, axis=1)
        pieces = surv * self.widths
        theta = self.first + pieces.sum(axis=1)
        area = np.cumsum(pieces[:, ::-1], axis=1)[:, ::-1]
        ok = (dead > 0) & (alive > 0)
        g = np.divide(dead, risk * alive, out=np.zeros_like(dead), where=ok)
        var = np.sum(area * area * g, axis=1)
        if not grad:
            return theta, var
        cum = np.cumsum(area * g, axis=1)
        d = cum[:, self.upto]
        ev = (self.own >= 0) & (self.event > 0)
        j = self.own[ev]
        a_j = alive[:, j]
        d[:, ev] -= np.divide(area[:, j], a_j, out=np.zeros_like(a_j), where=a_j > 0)
        return theta, var, d[:, self.rank]

    def _empty(self, bsz, grad):
        theta = np.full(bsz, self.t_star)
        if grad:
            return theta, np.zeros(bsz), np.zeros((bsz, self.n))
        return theta, np.zeros(bsz)

    def evaluate(self, weights, grad: bool = False):
        """Return ``(theta, var)`` or ``(theta, var, dtheta_dw)`` rowwise.

        ``dtheta_dw`` has shape ``(B, n)`` in the original subject order.
        """
        w = np.atleast_2d(np.asarray(weights, dtype=float))[:, self.order]
        if self.m == 0:
            return self._empty(w.shape[0], grad)
        if self.engine == "numpy":
            return self._stats(*self._counts(w), grad)
        args = (np.ascontiguousarray(w), self.event, self._bounds, self.m, self.widths, self.first)
        if not grad:
            return _kernels.rmst_var(*args)
        theta, var, d = _kernels.rmst_var_grad(*args, self.upto, self.own)
        return theta, var, d[:, self.rank]

    def evaluate_split(self, weights):
        """``(theta, var)`` for ``weights`` and for their complement ``1 - weights``.

        Used for label permutations: the complement's risk sets follow from
        the full-sample ones by subtraction.
        """
        w = np.atleast_2d(np.asarray(weights, dtype=float))[:, self.order]
        if self.m == 0:
            return self._empty(w.shape[0], False), self._empty(w.shape[0], False)
        if self.engine == "compiled":
            out = _kernels.rmst_var_split(np.ascontiguousarray(w), self.event, self._bounds,
                                          self.m, self.widths, self.first)
            return (out[0], out[1]), (out[2], out[3])
        risk1, dead1 = self._counts(w)
        risk_all, dead_all = self._counts(np.ones((1, self.n)))
        return self._stats(risk1, dead1, False), self._stats(risk_all - risk1, dead_all - dead1, False)


def rmst_diff_asymptotic(sample0, sample1, t_star: float, alpha: float = 0.05) -> TestResult:
    """Standard asymptotic test of ``mu_1(t*) - mu_0(t*) = 0``.

    Both arms must be estimable at ``t_star`` (strict policy).
    """
    _check_alpha(alpha)
    est0 = rmst(km_fit(sample0), t_star, ExtensionPolicy.STRICT)
    est1 = rmst(km_fit(sample1), t_star, ExtensionPolicy.STRICT)
    delta = est1.mu - est0.mu
    se = float(np.sqrt(est1.var + est0.var))
    z = normal_quantile(1.0 - alpha / 2.0)
    p = normal_two_sided_p(delta / se) if se > 0 else 1.0
    return studentized_result(Method.ASY, delta, se, z, p, alpha)


@dataclass(frozen=True)
class LogRankResult:
    statistic: float
    p_value: float
    observed: tuple
    expected: tuple
    variance: float


def logrank_test(sample0, sample1) -> LogRankResult:
    """Two-sample log-rank chi-square test (1 df), hypergeometric variance."""
    t0, s0 = _as_times(sample0)
    t1, s1 = _as_times(sample1)
    if t0.size == 0 or t1.size == 0:
        raise ValidationError("empty sample")
    time = np.concatenate([t0, t1])
    event = np.concatenate([s0, s1]) == 1
    arm1 = np.r_[np.zeros(t0.size, bool), np.ones(t1.size, bool)]
    if not event.any():
        raise EstimationError("no events")
    ut = np.unique(time[event])
    o1 = e1 = v = 0.0
    for u in ut:
        at_risk = time >= u
        n = at_risk.sum()
        n1 = (at_risk & arm1).sum()
        dk = (event & (time == u)).sum()
        d1 = (event & (time == u) & arm1).sum()
        o1 += d1
        e1 += dk * n1 / n
        if n > 1:
            v += dk * (n1 / n) * (1 - n1 / n) * (n - dk) / (n - 1)
    stat = (o1 - e1) ** 2 / v if v > 0 else 0.0
    o0 = event.sum() - o1
    e0 = event.sum() - e1
    return LogRankResult(statistic=float(stat), p_value=float(stats.chi2.sf(stat, 1)),
                         observed=(float(o0), float(o1)), expected=(float(e0), float(e1)),
                         variance=float(v))


def _check_alpha(alpha):
    if not 0 < alpha < 1:
        raise ValidationError("alpha must lie in (0, 1)")
