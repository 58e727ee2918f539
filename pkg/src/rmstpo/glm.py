"""Identity-link pseudo-observation regression with HC3 covariance.

With identity link and a constant working variance the quasi-score
``sum_i x_i (P_i - x_i' beta) / sigma^2`` vanishes at the least-squares
solution, so fitting reduces to a QR solve.  The working variance cancels
from the sandwich ``F^-1 M F^-1`` with ``F = X'X / sigma^2``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import EstimationError, ValidationError


class Link(enum.Enum):
    IDENTITY = "identity"


@dataclass(frozen=True)
class DesignMatrix:
    """Columns: intercept, treatment indicator, then covariates."""

    values: np.ndarray
    names: tuple

    @property
    def shape(self):
        return self.values.shape

    @classmethod
    def two_sample(cls, sample, adjust: Sequence[str] = ()) -> "DesignMatrix":
        cols = [np.ones(sample.n), sample.group.astype(float)]
        for name in adjust:
            try:
                j = sample.covariate_names.index(name)
            except ValueError:
                raise ValidationError(f"unknown covariate {name!r}") from None
            cols.append(sample.covariates[:, j])
        return cls(np.column_stack(cols), ("intercept", "group", *adjust))


@dataclass(frozen=True)
class FitResult:
    beta: np.ndarray
    residuals: np.ndarray
    leverages: np.ndarray
    cov_hc3: np.ndarray
    names: tuple = ()

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.diag(self.cov_hc3))


def _matrix(design):
    if isinstance(design, DesignMatrix):
        return design.values, design.names
    x = np.asarray(design, dtype=float)
    return x, tuple(f"b{j}" for j in range(x.shape[1]))


def hc3_cov(residuals, leverages, design) -> np.ndarray:
    """``(X'X)^-1 X' diag(e_i^2 / (1 - h_i)^2) X (X'X)^-1``."""
    x, _ = _matrix(design)
    e = np.asarray(residuals, dtype=float)
    h = np.asarray(leverages, dtype=float)
    if np.any(h >= 1.0 - 1e-12):
        raise EstimationError("exact-leverage point")
    q, r = np.linalg.qr(x)
    rinv = np.linalg.solve(r, np.eye(r.shape[0]))
    # X (X'X)^-1 = Q R^-T
    u = q @ rinv.T
    wu = u * (e / (1.0 - h))[:, None]
    cov = wu.T @ wu
    return (cov + cov.T) / 2.0


def fit_identity_gee(pos, design, link: Link = Link.IDENTITY) -> FitResult:
    """Solve the quasi-score equations for an identity-link PO model."""
    if Link(link) is not Link.IDENTITY:
        raise ValidationError("only the identity link is implemented")
    y = np.asarray(getattr(pos, "values", pos), dtype=float)
    x, names = _matrix(design)
    n, p = x.shape
    if y.size != n:
        raise ValidationError("pseudo-observations and design differ in length")
    if n <= p:
        raise EstimationError("underdetermined")
    q, r = np.linalg.qr(x)
    diag = np.abs(np.diag(r))
    if diag.min() <= 1e-10 * max(diag.max(), 1.0):
        raise EstimationError("singular design")
    beta = np.linalg.solve(r, q.T @ y)
    resid = y - x @ beta
    lev = np.sum(q * q, axis=1)
    cov = hc3_cov(resid, lev, x)
    return FitResult(beta=beta, residuals=resid, leverages=lev, cov_hc3=cov, names=names)


def batch_fit_coef(y, x, counts, coef: int = 1):
    """Count-weighted least squares for many replicates at once.

    Row ``b`` of ``counts`` gives how often each original subject occurs in
    replicate ``b``; this is exactly the fit on the materialised resample,
    with leverages and HC3 weights of every copy of a subject identical.

    Returns ``(beta_coef, se_coef, ok)`` where ``ok`` flags replicates with a
    nonsingular design and no exact-leverage point.
    """
    y = np.atleast_2d(y)
    c = np.atleast_2d(counts).astype(float)
    bsz, n = c.shape
    p = x.shape[1]
    cx = c[:, :, None] * x[None, :, :]
    xtx = np.swapaxes(cx, 1, 2) @ x
    det = np.linalg.det(xtx)
    scale = np.prod(np.einsum("bpp->bp", xtx), axis=1)
    ok = np.abs(det) > 1e-10 * np.where(scale > 0, scale, 1.0)
    xtx[~ok] = np.eye(p)
    inv = np.linalg.inv(xtx)
    beta = np.einsum("bpq,bq->bp", inv, np.einsum("bnp,bn->bp", cx, y))
    resid = y - beta @ x.T
    lev = np.sum((x[None, :, :] @ inv) * x[None, :, :], axis=2)
    present = c > 0
    exact = present & (lev >= 1.0 - 1e-12)
    ok &= ~np.any(exact, axis=1)
    lev = np.where(present & ~exact, lev, 0.0)
    w = c * (resid / (1.0 - lev)) ** 2
    # only the requested coefficient: a = row `coef` of (X'CX)^-1 X'
    a = inv[:, coef, :] @ x.T
    var = np.sum(w * a * a, axis=1)
    return beta[:, coef], np.sqrt(var), ok


def two_group_coef(y, counts, group):
    """Fast path of :func:`batch_fit_coef` for the design ``[1, Z]``.

    Here the slope is a difference of weighted group means, each leverage is
    ``1 / n_g`` and the HC3 variance is
    ``sum_g sum_{i in g} c_i e_i^2 / (n_g (1 - 1/n_g))^2``.
    """
    y = np.atleast_2d(y)
    c = np.atleast_2d(counts).astype(float)
    z = np.asarray(group) == 1
    est = 0.0
    var = 0.0
    ok = True
    for mask, sign in ((~z, -1.0), (z, 1.0)):
        cg = c[:, mask]
        yg = y[:, mask] if y.shape[0] > 1 else np.broadcast_to(y[:, mask], cg.shape)
        ng = cg.sum(axis=1)
        ok = ok & (ng >= 2)
        safe = np.where(ng > 0, ng, 1.0)
        mean = np.sum(cg * yg, axis=1) / safe
        ss = np.sum(cg * (yg - mean[:, None]) ** 2, axis=1)
        denom = np.where(ng > 1, ng - 1.0, 1.0)
        var = var + ss / (denom * denom)
        est = est + sign * mean
    return est, np.sqrt(var), ok


__all__ = ["Link", "DesignMatrix", "FitResult", "fit_identity_gee", "hc3_cov",
           "batch_fit_coef", "two_group_coef"]
