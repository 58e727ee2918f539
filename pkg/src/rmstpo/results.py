from __future__ import annotations

import enum
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
from scipy import special

from .errors import EstimationError


class Method(str, enum.Enum):
    ASY = "Asy"
    PERM = "Perm"
    PO1 = "PO1"
    PO2 = "PO2"
    LOGRANK = "LogRank"

    def __str__(self) -> str:
        return self.value


ALL_METHODS = (Method.ASY, Method.PERM, Method.PO1, Method.PO2)


def normal_quantile(p: float) -> float:
    # ndtri is accurate to ~1e-15 over (0, 1)
    return float(special.ndtri(p))


def normal_two_sided_p(stat: float) -> float:
    return float(min(1.0, 2.0 * special.ndtr(-abs(stat))))


@dataclass(frozen=True)
class TestResult:
    """Outcome of one two-sample RMST test.

    ``critical`` is the multiplier of ``se`` used for both the rejection rule
    and the interval, so ``reject`` and ``ci_low <= 0 <= ci_high`` can never
    disagree.
    """

    __test__ = False  # not a pytest class

    method: Method
    estimate: float
    se: float
    statistic: float
    p_value: float
    ci_low: float
    ci_high: float
    alpha: float
    critical: float
    n_resamples: int = 0
    seed: Optional[int] = None

    @property
    def reject(self) -> bool:
        return not (self.ci_low <= 0.0 <= self.ci_high)

    def covers(self, value: float) -> bool:
        return self.ci_low <= value <= self.ci_high

    def as_dict(self) -> dict:
        d = asdict(self)
        d["method"] = str(self.method)
        d["reject"] = self.reject
        return d


def studentized_result(method: Method, estimate: float, se: float, critical: float,
                       p_value: float, alpha: float, n_resamples: int = 0,
                       seed: Optional[int] = None) -> TestResult:
    """Assemble a symmetric-interval result, handling ``se == 0``."""
    if not np.isfinite(estimate) or not np.isfinite(se):
        raise EstimationError(f"{method}: non-finite estimate or standard error")
    if se == 0.0:
        if estimate != 0.0:
            raise EstimationError("degenerate variance")
        statistic, p_value = 0.0, 1.0
    else:
        statistic = estimate / se
    half = critical * se
    return TestResult(method=method, estimate=float(estimate), se=float(se),
                      statistic=float(statistic), p_value=float(p_value),
                      ci_low=float(estimate - half), ci_high=float(estimate + half),
                      alpha=float(alpha), critical=float(critical),
                      n_resamples=int(n_resamples), seed=seed)
