"""Two-sample RMST tests.

=====  ==============================================================
Asy    KM plug-in difference with Greenwood-type variance, normal quantile
Perm   studentized permutation of arm labels
PO1    pseudo-observation regression, HC3 standard error, normal quantile
PO2    pseudo-observation regression, bootstrap-t quantile
=====  ==============================================================

Resampling p-values use ``(1 + #{replicates at least as extreme}) / (B + 1)``;
rejection uses the empirical ``1 - alpha`` quantile of the replicate
statistics, and the reported interval is built from the same quantile so
that the test rejects exactly when the interval excludes zero.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import rng as rngmod
from .errors import EstimationError, InestimableError, RMSTError, ValidationError
from .glm import DesignMatrix, batch_fit_coef, fit_identity_gee, two_group_coef
from .pseudo import POMethod, Strata, pseudo_observations, stratum_indices
from .results import ALL_METHODS, Method, TestResult, normal_quantile, normal_two_sided_p, studentized_result
from .survival import RMSTBatch, SurvivalSample, is_estimable, km_fit, rmst_diff_asymptotic

MIN_RESAMPLES = 100
MAX_REDRAWS = 100
_CHUNK = 4096


class Scheme(str, enum.Enum):
    BOOTSTRAP_CASES = "bootstrap_cases"
    PERMUTE_LABELS = "permute_labels"


@dataclass(frozen=True)
class ResamplePlan:
    n_resamples: int
    seed: int
    scheme: Scheme = Scheme.BOOTSTRAP_CASES

    def __post_init__(self):
        if self.n_resamples < MIN_RESAMPLES:
            raise ValidationError("insufficient resamples")


def _check_alpha(alpha):
    if not 0 < alpha < 1:
        raise ValidationError("alpha must lie in (0, 1)")


def _require_estimable(sample: SurvivalSample, t_star: float):
    for j in (0, 1):
        idx = np.flatnonzero(sample.group == j)
        if idx.size == 0:
            raise ValidationError(f"group {j} is empty")
        curve = km_fit((sample.time[idx], sample.status[idx]))
        if not is_estimable(curve, t_star):
            raise InestimableError(f"RMST inestimable at t_star in group {j}")


def _resampled(draw, evaluate, size, what):
    """Evaluate ``size`` replicates, redrawing degenerate ones.

    ``draw(k)`` returns k new replicate specifications, ``evaluate(spec)``
    returns ``(values, ok)``.  Redraws consume the same stream in order, so
    the result depends only on the stream.
    """
    spec = draw(size)
    values, ok = evaluate(spec)
    values = np.array(values, dtype=float)
    for _ in range(MAX_REDRAWS):
        bad = np.flatnonzero(~ok)
        if bad.size == 0:
            return values
        v, o = evaluate(draw(bad.size))
        values[bad] = v
        ok = ok.copy()
        ok[bad] = o
    raise EstimationError(f"too many degenerate {what} replicates")


def _chunked(fn, size):
    out = []
    for lo in range(0, size, _CHUNK):
        out.append(fn(min(_CHUNK, size - lo)))
    return np.concatenate(out) if out else np.empty(0)


def _resample_pvalue(replicates, observed):
    return (1.0 + np.count_nonzero(replicates >= observed)) / (replicates.size + 1.0)


def _quantile(values, alpha):
    return float(np.quantile(values, 1.0 - alpha))


# --- pseudo-observations ----------------------------------------------------


def _design(sample, adjust):
    return DesignMatrix.two_sample(sample, adjust)


def po_asymptotic_test(sample: SurvivalSample, t_star: float, alpha: float = 0.05,
                       adjust: Sequence[str] = (), po_method: POMethod = POMethod.IJ,
                       strata: Strata = Strata.BY_GROUP) -> TestResult:
    """PO regression ``E[min(T, t*) | Z, x] = b0 + b1 Z (+ x'g)`` with HC3 se."""
    _check_alpha(alpha)
    _require_estimable(sample, t_star)
    pos = pseudo_observations(sample, t_star, po_method, strata)
    fit = fit_identity_gee(pos, _design(sample, adjust))
    est, se = float(fit.beta[1]), float(fit.se[1])
    z = normal_quantile(1.0 - alpha / 2.0)
    p = normal_two_sided_p(est / se) if se > 0 else 1.0
    return studentized_result(Method.PO1, est, se, z, p, alpha)


class _BootstrapPOs:
    """IJ pseudo-observations of case-resampled datasets, as count matrices."""

    def __init__(self, sample, t_star, strata):
        self.n = sample.n
        self.groups = [(idx, RMSTBatch(sample.time[idx], sample.status[idx], t_star))
                       for idx in stratum_indices(sample, strata)]

    def __call__(self, counts):
        values = np.empty(counts.shape)
        ok = np.ones(counts.shape[0], dtype=bool)
        for idx, batch in self.groups:
            w = counts[:, idx]
            ng = w.sum(axis=1)
            theta, _, d = batch.evaluate(w, grad=True)
            values[:, idx] = theta[:, None] + ng[:, None] * d
            ok &= ng >= 2
        return values, ok


def _materialised_jackknife(sample, t_star, strata, adjust):
    def pos_of(counts):
        est = np.empty(counts.shape[0])
        se = np.empty(counts.shape[0])
        ok = np.ones(counts.shape[0], dtype=bool)
        for b, row in enumerate(counts):
            boot = sample.take(np.repeat(np.arange(sample.n), row.astype(int)))
            try:
                fit = fit_identity_gee(pseudo_observations(boot, t_star, POMethod.JACKKNIFE, strata),
                                       _design(boot, adjust))
                est[b], se[b] = fit.beta[1], fit.se[1]
            except RMSTError:
                est[b], se[b], ok[b] = np.nan, np.nan, False
        return est, se, ok
    return pos_of


def po_bootstrap_test(sample: SurvivalSample, t_star: float, alpha: float = 0.05,
                      adjust: Sequence[str] = (), plan: Optional[ResamplePlan] = None,
                      po_method: POMethod = POMethod.IJ,
                      strata: Strata = Strata.BY_GROUP) -> TestResult:
    """Bootstrap-t test on the PO regression slope.

    Whole subject rows are drawn with replacement from the pooled sample.
    Each replicate statistic is ``|b1* - b1| / se*(b1*)``.
    """
    _check_alpha(alpha)
    plan = plan or ResamplePlan(1000, rngmod.fresh_seed())
    observed = po_asymptotic_test(sample, t_star, alpha, adjust, po_method, strata)
    est, se = observed.estimate, observed.se
    stat_obs = abs(est / se) if se > 0 else 0.0

    gen = rngmod.stream(plan.seed, rngmod.BOOTSTRAP)
    n = sample.n
    design = _design(sample, adjust).values
    if po_method is POMethod.IJ:
        pos = _BootstrapPOs(sample, t_star, strata)
        unadjusted = design.shape[1] == 2

        def coef(counts):
            values, ok = pos(counts)
            if unadjusted:
                b1, s1, ok2 = two_group_coef(values, counts, sample.group)
            else:
                b1, s1, ok2 = batch_fit_coef(values, design, counts)
            return b1, s1, ok & ok2
    else:
        coef = _materialised_jackknife(sample, t_star, strata, adjust)

    def draw(k):
        idx = gen.integers(0, n, size=(k, n))
        rows = np.repeat(np.arange(k), n)
        return np.bincount(rows * n + idx.ravel(), minlength=k * n).reshape(k, n).astype(float)

    def evaluate(counts):
        b1, s1, ok = coef(counts)
        ok = ok & np.isfinite(s1) & (s1 > 0)
        safe = np.where(ok, s1, 1.0)
        return np.abs(b1 - est) / safe, ok

    reps = _chunked(lambda k: _resampled(draw, evaluate, k, "bootstrap"), plan.n_resamples)
    q = _quantile(reps, alpha)
    p = _resample_pvalue(reps, stat_obs)
    return studentized_result(Method.PO2, est, se, q, p, alpha, plan.n_resamples, plan.seed)


# --- permutation ------------------------------------------------------------


def studentized_permutation_test(sample0: SurvivalSample, sample1: SurvivalSample,
                                 t_star: float, alpha: float = 0.05,
                                 plan: Optional[ResamplePlan] = None) -> TestResult:
    """Permute arm labels (sizes fixed) and studentize each replicate.

    The pooled subjects are put in an order that depends only on their data,
    not on which arm they came from, so exchanging the two samples maps every
    permutation onto its label complement: the statistic changes sign and the
    p-value is unchanged.
    """
    _check_alpha(alpha)
    plan = plan or ResamplePlan(1000, rngmod.fresh_seed(), Scheme.PERMUTE_LABELS)
    pooled = SurvivalSample.from_arms(sample0, sample1)
    _require_estimable(pooled, t_star)
    order = np.lexsort((pooled.status, pooled.time))
    time, status = pooled.time[order], pooled.status[order]
    labels = pooled.group[order].astype(float)
    batch = RMSTBatch(time, status, t_star)

    def studentize(lab):
        (theta1, var1), (theta0, var0) = batch.evaluate_split(lab)
        diff = theta1 - theta0
        se = np.sqrt(var1 + var0)
        return diff, se

    diff, se = studentize(labels[None, :])
    est, se_obs = float(diff[0]), float(se[0])
    stat_obs = abs(est / se_obs) if se_obs > 0 else 0.0

    gen = rngmod.stream(plan.seed, rngmod.PERMUTE)

    def draw(k):
        return gen.permuted(np.broadcast_to(labels, (k, labels.size)), axis=1)

    def evaluate(lab):
        d, s = studentize(lab)
        ok = s > 0
        return np.abs(d) / np.where(ok, s, 1.0), ok

    reps = _chunked(lambda k: _resampled(draw, evaluate, k, "permutation"), plan.n_resamples)
    q = _quantile(reps, alpha)
    p = _resample_pvalue(reps, stat_obs)
    return studentized_result(Method.PERM, est, se_obs, q, p, alpha, plan.n_resamples, plan.seed)


# --- all four ---------------------------------------------------------------


def run_all_methods(sample: SurvivalSample, t_star: float, alpha: float = 0.05,
                    n_resamples: int = 1000, seed: Optional[int] = None,
                    adjust: Sequence[str] = (), methods: Sequence[Method] = ALL_METHODS,
                    po_method: POMethod = POMethod.IJ,
                    strata: Strata = Strata.BY_GROUP) -> list:
    """Run the requested tests on one dataset, in the order Asy, Perm, PO1, PO2.

    ``adjust`` names covariates added to the PO design; Asy and Perm are
    always unadjusted.  Perm and PO2 draw from distinct streams derived from
    ``seed``.
    """
    seed = rngmod.fresh_seed() if seed is None else int(seed)
    wanted = [m for m in ALL_METHODS if m in {Method(x) for x in methods}]
    if not wanted:
        raise ValidationError("no methods requested")
    results = []
    for method in wanted:
        try:
            if method is Method.ASY:
                res = rmst_diff_asymptotic(sample.arm(0), sample.arm(1), t_star, alpha)
            elif method is Method.PERM:
                res = studentized_permutation_test(
                    sample.arm(0), sample.arm(1), t_star, alpha,
                    ResamplePlan(n_resamples, seed, Scheme.PERMUTE_LABELS))
            elif method is Method.PO1:
                res = po_asymptotic_test(sample, t_star, alpha, adjust, po_method, strata)
            else:
                res = po_bootstrap_test(sample, t_star, alpha, adjust,
                                        ResamplePlan(n_resamples, seed), po_method, strata)
        except RMSTError as exc:
            raise type(exc)(f"{method}: {exc}") from exc
        results.append(res)
    return results
