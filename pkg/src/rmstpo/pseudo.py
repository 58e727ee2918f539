"""Pseudo-observations of the restricted mean ``E[min(T, t*)]``.

Two engines share one weighted KM-RMST evaluator:

* jackknife: ``P_i = n theta - (n - 1) theta_{-i}`` from the n leave-one-out
  curves (one weight matrix ``1 - I``);
* infinitesimal jackknife (IJ): ``P_i = theta + n dtheta/dw_i`` using the
  analytic weight derivative at unit weights.

Leave-one-out and weighted curves are always horizontally extended.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .survival import RMSTBatch, SurvivalSample


class POMethod(str, enum.Enum):
    JACKKNIFE = "jackknife"
    IJ = "ij"


class Strata(str, enum.Enum):
    POOLED = "pooled"
    BY_GROUP = "by_group"


@dataclass(frozen=True)
class PseudoObsSet:
    values: np.ndarray
    t_star: float
    method: POMethod
    strata: Strata

    def __len__(self) -> int:
        return self.values.size


def stratum_indices(sample: SurvivalSample, strata: Strata) -> list:
    if strata is Strata.POOLED:
        return [np.arange(sample.n)]
    return [np.flatnonzero(sample.group == j) for j in (0, 1) if np.any(sample.group == j)]


def _ij_values(time, status, t_star):
    n = time.size
    batch = RMSTBatch(time, status, t_star)
    theta, _, d = batch.evaluate(np.ones((1, n)), grad=True)
    return theta[0] + n * d[0]


def _jackknife_values(time, status, t_star):
    n = time.size
    batch = RMSTBatch(time, status, t_star)
    full, _ = batch.evaluate(np.ones((1, n)))
    loo, _ = batch.evaluate(1.0 - np.eye(n))
    return n * full[0] - (n - 1) * loo


def _compute(sample, t_star, strata, fn, method):
    strata = Strata(strata)
    if not t_star > 0:
        raise ValidationError("t_star must be positive")
    values = np.empty(sample.n)
    for idx in stratum_indices(sample, strata):
        if idx.size < 2:
            raise ValidationError("stratum too small for jackknife")
        values[idx] = fn(sample.time[idx], sample.status[idx], t_star)
    return PseudoObsSet(values=values, t_star=float(t_star), method=method, strata=strata)


def jackknife_pos(sample: SurvivalSample, t_star: float,
                  strata: Strata = Strata.BY_GROUP) -> PseudoObsSet:
    return _compute(sample, t_star, strata, _jackknife_values, POMethod.JACKKNIFE)


def ij_pos(sample: SurvivalSample, t_star: float,
           strata: Strata = Strata.BY_GROUP) -> PseudoObsSet:
    return _compute(sample, t_star, strata, _ij_values, POMethod.IJ)


def pseudo_observations(sample, t_star, method=POMethod.IJ, strata=Strata.BY_GROUP):
    if POMethod(method) is POMethod.IJ:
        return ij_pos(sample, t_star, strata)
    return jackknife_pos(sample, t_star, strata)
