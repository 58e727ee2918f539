"""Data-generating mechanisms for the simulation study.

Event-time and censoring families, exact restricted means, calibration of
the treatment arm to a target RMST difference, and dataset generation with
regeneration of samples whose RMST is not estimable.

All constants live in the scenario registry (``data/scenarios.yaml`` by
default).  Registry layout::

    version: <int>
    t_star: <float>
    survival:
      <model id>:
        control:   {family: ..., <params>}
        treatment: {family: ..., <params>}
        free: {parameter: <name or name.index>, bracket: [lo, hi]}
    censoring:
      <model id>:
        label: <short label>
        control:   {family: ..., <params>}
        treatment: {family: ..., <params>}
    design: {deltas: [...], allocations: [[n0, n1], ...], multipliers: [...],
             alpha: <float>}

Families: ``exponential`` (rate), ``piecewise_exponential`` (cuts, rates),
``weibull`` (shape, scale; S(t) = exp(-(t/scale)^shape)), ``uniform``
(lo, hi) and ``none`` (no censoring).
"""

from __future__ import annotations

import copy
import hashlib
import math
from dataclasses import dataclass, replace
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np
import yaml
from scipy import integrate, optimize

from . import rng as rngmod
from .errors import EstimationError, ValidationError
from .survival import SurvivalSample

MAX_REGENERATIONS = 10_000
CALIBRATION_TOL = 1e-8


# --- distributions -----------------------------------------------------------


@dataclass(frozen=True)
class Exponential:
    rate: float

    def __post_init__(self):
        if not self.rate > 0:
            raise ValidationError("exponential rate must be positive")

    def sf(self, t):
        return np.exp(-self.rate * np.asarray(t, dtype=float))

    def from_uniform(self, u):
        return -np.log(u) / self.rate

    def rmst(self, t_star):
        return -math.expm1(-self.rate * t_star) / self.rate


@dataclass(frozen=True)
class PiecewiseExponential:
    """Hazard ``rates[k]`` on ``[cuts[k-1], cuts[k])`` with ``cuts[-1] = 0``."""

    cuts: tuple
    rates: tuple

    def __post_init__(self):
        cuts = tuple(float(c) for c in self.cuts)
        rates = tuple(float(r) for r in self.rates)
        if len(rates) != len(cuts) + 1:
            raise ValidationError("piecewise exponential needs len(rates) == len(cuts) + 1")
        if any(r <= 0 for r in rates) or any(c <= 0 for c in cuts) or list(cuts) != sorted(set(cuts)):
            raise ValidationError("cut points must increase and rates must be positive")
        object.__setattr__(self, "cuts", cuts)
        object.__setattr__(self, "rates", rates)

    @property
    def _knots(self):
        return np.array((0.0,) + self.cuts)

    def cumhaz(self, t):
        t = np.asarray(t, dtype=float)
        knots = self._knots
        rates = np.array(self.rates)
        seg = np.clip(t[..., None] - knots, 0.0, np.append(np.diff(knots), np.inf))
        return seg @ rates

    def sf(self, t):
        return np.exp(-self.cumhaz(t))

    def from_uniform(self, u):
        e = -np.log(np.asarray(u, dtype=float))
        knots = self._knots
        rates = np.array(self.rates)
        h_at = np.concatenate([[0.0], np.cumsum(np.diff(knots) * rates[:-1])])
        k = np.searchsorted(h_at, e, side="right") - 1
        return knots[k] + (e - h_at[k]) / rates[k]

    def rmst(self, t_star):
        total = 0.0
        edges = list(self._knots) + [math.inf]
        h = 0.0
        for lo, hi, r in zip(edges[:-1], edges[1:], self.rates):
            if lo >= t_star:
                break
            top = min(hi, t_star)
            total += math.exp(-h) * (-math.expm1(-r * (top - lo))) / r
            h += r * (top - lo)
        return total


@dataclass(frozen=True)
class Weibull:
    shape: float
    scale: float

    def __post_init__(self):
        if not (self.shape > 0 and self.scale > 0):
            raise ValidationError("weibull parameters must be positive")

    def sf(self, t):
        return np.exp(-(np.asarray(t, dtype=float) / self.scale) ** self.shape)

    def cdf(self, t):
        return -np.expm1(-(np.asarray(t, dtype=float) / self.scale) ** self.shape)

    def from_uniform(self, u):
        return self.scale * (-np.log(u)) ** (1.0 / self.shape)

    def rmst(self, t_star):
        val, _ = integrate.quad(lambda u: math.exp(-(u / self.scale) ** self.shape), 0.0, t_star,
                                epsabs=1e-13, epsrel=1e-13, limit=200)
        return val


@dataclass(frozen=True)
class Uniform:
    lo: float
    hi: float

    def __post_init__(self):
        if not (0 <= self.lo < self.hi):
            raise ValidationError("uniform needs 0 <= lo < hi")

    def sf(self, t):
        return np.clip((self.hi - np.asarray(t, dtype=float)) / (self.hi - self.lo), 0.0, 1.0)

    def from_uniform(self, u):
        return self.hi - (self.hi - self.lo) * np.asarray(u)


@dataclass(frozen=True)
class NoCensoring:
    def sf(self, t):
        return np.ones_like(np.asarray(t, dtype=float))

    def from_uniform(self, u):
        return np.full(np.shape(u), np.inf)


_FAMILIES = {
    "exponential": Exponential,
    "piecewise_exponential": PiecewiseExponential,
    "weibull": Weibull,
    "uniform": Uniform,
    "none": NoCensoring,
}


def make_dist(spec: dict):
    spec = dict(spec)
    family = spec.pop("family", None)
    if family not in _FAMILIES:
        raise ValidationError(f"unknown distribution family {family!r}")
    if family == "piecewise_exponential":
        spec = {"cuts": tuple(spec.get("cuts", ())), "rates": tuple(spec.get("rates", ()))}
    try:
        return _FAMILIES[family](**spec)
    except TypeError as exc:
        raise ValidationError(f"bad parameters for {family}: {exc}") from None


def true_rmst(dist, t_star: float) -> float:
    if t_star <= 0:
        return 0.0
    return float(dist.rmst(t_star))


def sample_event_times(dist, n: int, gen: np.random.Generator) -> np.ndarray:
    """Inverse-transform draws; ``u`` is taken in ``(0, 1]``."""
    u = 1.0 - gen.random(n)
    return np.asarray(dist.from_uniform(u), dtype=float)


# --- registry ---------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Registry:
    raw: dict
    fingerprint: str
    source: str = "<default>"

    def __eq__(self, other):
        return isinstance(other, Registry) and other.fingerprint == self.fingerprint

    def __hash__(self):
        return hash(self.fingerprint)

    @property
    def t_star(self) -> float:
        return float(self.raw.get("t_star", 10.0))

    @property
    def design(self) -> dict:
        return self.raw.get("design", {})

    def survival_models(self):
        return tuple(self.raw["survival"])

    def censoring_models(self):
        return tuple(self.raw["censoring"])

    def censoring_label(self, model: str) -> str:
        return self._censoring(model).get("label", model)

    def _survival(self, model):
        try:
            return self.raw["survival"][model]
        except KeyError:
            raise ValidationError(f"unknown survival model {model!r}") from None

    def _censoring(self, model):
        try:
            return self.raw["censoring"][model]
        except KeyError:
            raise ValidationError(f"unknown censoring model {model!r}") from None

    def censoring(self, model: str):
        entry = self._censoring(model)
        if "both" in entry:
            d = make_dist(entry["both"])
            return d, d
        return make_dist(entry["control"]), make_dist(entry["treatment"])


def _validate_registry(raw):
    if not isinstance(raw, dict):
        raise ValidationError("registry must be a mapping")
    for key in ("survival", "censoring"):
        if key not in raw or not isinstance(raw[key], dict):
            raise ValidationError(f"registry is missing section {key!r}")
    for name, entry in raw["survival"].items():
        for part in ("control", "treatment", "free"):
            if part not in entry:
                raise ValidationError(f"survival model {name}: missing {part!r}")
        make_dist(entry["control"])
        make_dist(entry["treatment"])
    for name, entry in raw["censoring"].items():
        if "both" in entry:
            make_dist(entry["both"])
        else:
            make_dist(entry["control"])
            make_dist(entry["treatment"])


def load_registry(path: Optional[str] = None) -> Registry:
    if path is None:
        return default_registry()
    text = Path(path).read_text()
    return _parse_registry(text, str(path))


def _parse_registry(text, source):
    raw = yaml.safe_load(text)
    _validate_registry(raw)
    digest = hashlib.sha256(text.encode("utf-8")).hexdigest()[:12]
    return Registry(raw=raw, fingerprint=digest, source=source)


@lru_cache(maxsize=1)
def default_registry() -> Registry:
    text = resources.files("rmstpo.data").joinpath("scenarios.yaml").read_text()
    return _parse_registry(text, "<default>")


# --- calibration ------------------------------------------------------------


def _with_param(spec: dict, parameter: str, value: float) -> dict:
    spec = copy.deepcopy(spec)
    name, _, index = parameter.partition(".")
    if index:
        seq = list(spec[name])
        seq[int(index)] = value
        spec[name] = seq
    else:
        spec[name] = value
    return spec


@lru_cache(maxsize=256)
def _calibrate_cached(model, delta, t_star, registry):
    entry = registry._survival(model)
    dist0 = make_dist(entry["control"])
    target = true_rmst(dist0, t_star) + delta
    template = entry["treatment"]
    parameter = entry["free"]["parameter"]
    lo, hi = (float(x) for x in entry["free"]["bracket"])

    def residual(value):
        return true_rmst(make_dist(_with_param(template, parameter, value)), t_star) - target

    dist1 = make_dist(template)
    if abs(true_rmst(dist1, t_star) - target) <= 1e-12:
        return dist0, dist1
    flo, fhi = residual(lo), residual(hi)
    if not np.isfinite(flo) or not np.isfinite(fhi) or flo * fhi > 0:
        raise EstimationError("uncalibratable scenario")
    root = optimize.brentq(residual, lo, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps, maxiter=500)
    dist1 = make_dist(_with_param(template, parameter, root))
    if abs(true_rmst(dist1, t_star) - target) > CALIBRATION_TOL:
        raise EstimationError("uncalibratable scenario")
    return dist0, dist1


def calibrate_scenario(model: str, delta: float, t_star: float,
                       registry: Optional[Registry] = None):
    """Return ``(control, treatment)`` distributions with RMST difference ``delta``."""
    return _calibrate_cached(model, float(delta), float(t_star), registry or default_registry())


def crossing_points(dist0, dist1, t_star: float, grid: int = 10_001) -> np.ndarray:
    """Approximate times in ``(0, t_star)`` where the survival curves cross."""
    t = np.linspace(0.0, t_star, grid)[1:-1]
    diff = np.asarray(dist1.sf(t)) - np.asarray(dist0.sf(t))
    nz = np.flatnonzero(np.sign(diff) != 0)
    sign = np.sign(diff[nz])
    change = np.flatnonzero(sign[:-1] * sign[1:] < 0)
    return (t[nz[change]] + t[nz[change + 1]]) / 2.0


# --- scenarios --------------------------------------------------------------


@dataclass(frozen=True)
class ScenarioConfig:
    survival_model: str
    censoring_model: str
    delta: float
    base_allocation: tuple
    k: int = 1
    t_star: float = 10.0
    alpha: float = 0.05
    n_sim: int = 1000
    b_resamples: int = 1000
    master_seed: int = 1

    def __post_init__(self):
        alloc = tuple(int(x) for x in self.base_allocation)
        object.__setattr__(self, "base_allocation", alloc)
        object.__setattr__(self, "delta", float(self.delta))
        object.__setattr__(self, "t_star", float(self.t_star))
        if len(alloc) != 2 or min(alloc) < 1:
            raise ValidationError("base_allocation must be a pair of positive sizes")
        if self.k < 1:
            raise ValidationError("k must be >= 1")
        if self.n_sim < 1:
            raise ValidationError("n_sim must be >= 1")
        if not self.t_star > 0:
            raise ValidationError("t_star must be positive")
        if not 0 < self.alpha < 1:
            raise ValidationError("alpha must lie in (0, 1)")

    @property
    def sizes(self) -> tuple:
        return self.k * self.base_allocation[0], self.k * self.base_allocation[1]

    @property
    def cell_id(self) -> str:
        n0, n1 = self.base_allocation
        return f"{self.survival_model},{self.censoring_model},{self.delta:g},{n0}:{n1},{self.k}"

    @property
    def cell_key(self) -> int:
        return rngmod.key_of(f"{self.cell_id},{self.t_star:g}")

    def with_(self, **changes) -> "ScenarioConfig":
        return replace(self, **changes)


def parse_cell(text: str, **defaults) -> ScenarioConfig:
    """Parse ``MODEL,CENSORING,DELTA,N0:N1,K`` (e.g. ``S1,C1,0,15:15,1``)."""
    parts = [p.strip() for p in text.split(",")]
    if len(parts) != 5:
        raise ValidationError(f"cell {text!r}: expected MODEL,CENSORING,DELTA,N0:N1,K")
    try:
        n0, n1 = (int(x) for x in parts[3].split(":"))
        return ScenarioConfig(parts[0], parts[1], float(parts[2]), (n0, n1), int(parts[4]), **defaults)
    except ValueError as exc:
        raise ValidationError(f"cell {text!r}: {exc}") from None


def is_arm_estimable(time, status, t_star) -> bool:
    """Whether the KM-RMST of one arm is uniquely defined at ``t_star``.

    Fails when the arm has no events, or its largest observation is censored
    and below ``t_star``.
    """
    if not np.any(status == 1):
        return False
    tmax = time.max()
    if tmax >= t_star:
        return True
    return not np.any((time == tmax) & (status == 0))


@dataclass
class GeneratedDataset:
    sample: SurvivalSample
    n_regenerated: int = 0
    true_delta: float = 0.0


def make_dataset(config: ScenarioConfig, replicate_index: int,
                 registry: Optional[Registry] = None) -> GeneratedDataset:
    """Draw replicate ``replicate_index`` of a scenario cell.

    The draw depends only on ``(config, replicate_index)``; inestimable
    datasets are discarded and redrawn from the same stream.
    """
    registry = registry or default_registry()
    dist0, dist1 = calibrate_scenario(config.survival_model, config.delta, config.t_star, registry)
    cens0, cens1 = registry.censoring(config.censoring_model)
    n0, n1 = config.sizes
    gen = rngmod.stream(config.master_seed, config.cell_key, replicate_index, rngmod.DATA)
    for attempt in range(MAX_REGENERATIONS + 1):
        t0 = sample_event_times(dist0, n0, gen)
        t1 = sample_event_times(dist1, n1, gen)
        c0 = sample_event_times(cens0, n0, gen)
        c1 = sample_event_times(cens1, n1, gen)
        time0, time1 = np.minimum(t0, c0), np.minimum(t1, c1)
        stat0, stat1 = (t0 <= c0).astype(int), (t1 <= c1).astype(int)
        if (is_arm_estimable(time0, stat0, config.t_star)
                and is_arm_estimable(time1, stat1, config.t_star)):
            sample = SurvivalSample(np.concatenate([time0, time1]), np.concatenate([stat0, stat1]),
                                    np.repeat([0, 1], [n0, n1]))
            return GeneratedDataset(sample, attempt, config.delta)
    raise EstimationError("scenario produces inestimable samples too often")


def expand_grid(registry: Optional[Registry] = None, *, survival=None, censoring=None,
                deltas=None, allocations=None, multipliers=None, **fixed) -> list:
    """All cells of the factorial design (registry defaults for unset factors)."""
    registry = registry or default_registry()
    design = registry.design
    survival = survival or registry.survival_models()
    censoring = censoring or registry.censoring_models()
    deltas = design.get("deltas", [0.0, 1.5]) if deltas is None else deltas
    allocations = design.get("allocations", [[12, 18], [15, 15], [18, 12]]) if allocations is None else allocations
    multipliers = design.get("multipliers", [1, 2, 4, 6]) if multipliers is None else multipliers
    fixed.setdefault("t_star", registry.t_star)
    fixed.setdefault("alpha", float(design.get("alpha", 0.05)))
    return [ScenarioConfig(s, c, d, tuple(a), k, **fixed)
            for s in survival for c in censoring for d in deltas
            for a in allocations for k in multipliers]
