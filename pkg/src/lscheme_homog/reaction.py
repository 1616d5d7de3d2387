"""Power-law reaction degenerate at zero, its regularization family and the
regularization-parameter schedules."""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ReactionSpec:
    """R(u) = u**p on [0, 1], R(u) = u elsewhere.

    ``delta0`` is the lower slope constant of the regularization and
    ``delta1`` the Lipschitz constant used for stabilization.
    """

    p: float = 2.0
    delta0: float = 1.0
    delta1: float = 1.0
    degenerate_point: float = 0.0

    def __post_init__(self):
        if not self.p > 1:
            raise ValueError(f"power p must exceed 1, got {self.p}")
        if not (self.delta0 > 0 and self.delta1 > 0):
            raise ValueError("delta0 and delta1 must be positive")

    @property
    def sigma(self) -> float:
        return self.p / (self.p - 1.0)

    @property
    def lipschitz(self) -> float:
        """Exact global Lipschitz constant of R (max of p and the unit slopes)."""
        return max(self.p, 1.0)

    def slope_bounds_hold(self, u) -> bool:
        """Sampled check of 0 <= R'(u) <= delta1 on the points ``u``."""
        d = reaction_derivative(self, u)
        return bool(np.all(d >= 0) and np.all(d <= self.delta1))


def reaction_value(spec: ReactionSpec, u):
    u = np.asarray(u, dtype=float)
    inside = (u >= 0) & (u <= 1)
    out = np.where(inside, np.abs(u) ** spec.p, u)
    return out[()] if out.ndim == 0 else out


def reaction_derivative(spec: ReactionSpec, u):
    u = np.asarray(u, dtype=float)
    inside = (u >= 0) & (u <= 1)
    out = np.where(inside, spec.p * np.abs(u) ** (spec.p - 1), 1.0)
    return out[()] if out.ndim == 0 else out


def _check_gamma(gamma):
    if not gamma > 0:
        raise ValueError(f"regularization parameter must be positive, got {gamma}")


def regularized_value(spec: ReactionSpec, gamma: float, u):
    """R_gamma(u) = max(u**p, delta0*gamma*u) on [0, 1], R(u) outside."""
    _check_gamma(gamma)
    u = np.asarray(u, dtype=float)
    inside = (u >= 0) & (u <= 1)
    uc = np.clip(u, 0.0, 1.0)
    out = np.where(inside, np.maximum(uc**spec.p, spec.delta0 * gamma * uc), u)
    return out[()] if out.ndim == 0 else out


def regularized_derivative(spec: ReactionSpec, gamma: float, u):
    """Derivative of the active branch; ties go to the linear branch."""
    _check_gamma(gamma)
    u = np.asarray(u, dtype=float)
    inside = (u >= 0) & (u <= 1)
    uc = np.clip(u, 0.0, 1.0)
    slope = spec.delta0 * gamma
    power = uc**spec.p
    d = np.where(power > slope * uc, spec.p * uc ** (spec.p - 1), slope)
    out = np.where(inside, d, 1.0)
    return out[()] if out.ndim == 0 else out


def regularization_gap(spec: ReactionSpec, gamma: float) -> float:
    """Analytic bound on sup |R - R_gamma| for the power law."""
    _check_gamma(gamma)
    p = spec.p
    return p ** (1.0 / (1.0 - p)) * abs(1.0 - p) * (spec.delta0 * gamma) ** (p / (p - 1.0))


def sampled_gap(spec: ReactionSpec, gamma: float, samples: int = 20001) -> float:
    """sup |R - R_gamma| sampled where the branches differ, [0, crossover]."""
    s = spec.delta0 * gamma
    crossover = min(1.0, s ** (1.0 / (spec.p - 1.0)))
    u = np.linspace(0.0, crossover, samples)
    return float(np.max(np.abs(reaction_value(spec, u) - regularized_value(spec, gamma, u))))


class ScheduleKind(enum.Enum):
    GEOMETRIC = "geometric"
    HARMONIC = "harmonic"


@dataclass(frozen=True)
class GammaSchedule:
    """gamma_k = 2**-((p-1)**2 + (k+1)(p-1)) (geometric) or C/(k+1) (harmonic)."""

    kind: ScheduleKind = ScheduleKind.GEOMETRIC
    p: float = 2.0
    constant: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", ScheduleKind(self.kind))
        if self.kind is ScheduleKind.GEOMETRIC and not self.p > 1:
            raise ValueError("geometric schedule needs p > 1")
        if self.kind is ScheduleKind.HARMONIC and not self.constant > 0:
            raise ValueError("harmonic schedule needs a positive constant")

    @classmethod
    def geometric(cls, p=2.0):
        return cls(ScheduleKind.GEOMETRIC, p=p)

    @classmethod
    def harmonic(cls, constant=1.0):
        return cls(ScheduleKind.HARMONIC, constant=constant)

    @property
    def omega(self) -> float:
        """Ratio of the geometric bound gamma_{k-1}**sigma / gamma_k = omega**k."""
        if self.kind is not ScheduleKind.GEOMETRIC:
            raise ValueError("omega is only defined for the geometric schedule")
        return 0.5


def gamma_value(schedule: GammaSchedule, k: int) -> float:
    if k < 1:
        raise ValueError(f"schedule index starts at k=1, got {k}")
    if schedule.kind is ScheduleKind.GEOMETRIC:
        q = schedule.p - 1.0
        return 2.0 ** -(q * q + (k + 1) * q)
    return schedule.constant / (k + 1)


def gamma_sequence(schedule: GammaSchedule, k_max: int) -> np.ndarray:
    return np.array([gamma_value(schedule, k) for k in range(1, k_max + 1)])


def loglog_slope(x, y) -> float:
    """Least-squares slope of log y against log x."""
    return float(np.polyfit(np.log(np.asarray(x, float)), np.log(np.asarray(y, float)), 1)[0])

