"""Distance-and-collision reward, discounted return and the optimal gap split."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal, Sequence

from pydantic import BaseModel, ConfigDict, Field

from .dynamics import EnvState
from .errors import DomainError


class RewardParams(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    c0_collision: float = -3000.0
    c1: float = Field(3.0, gt=0)
    c2: float = Field(3.0, gt=0)
    c3: float = 10.0
    f_fm: float = Field(1.0, gt=0)
    f_mr: float = Field(1.0, gt=0)
    c_fm: float = 4.0
    c_mr: float = 4.0
    variant: Literal["distance", "fixed"] = "distance"


def _front_term(d: float, p: RewardParams) -> float:
    if math.isinf(d):
        return 0.0
    den = d - p.c_fm + p.c1
    if not den > 0:
        raise DomainError(f"front gap {d:.3f} m violates positivity (d - c_fm + C1 = {den:.3f})")
    return p.f_fm / den


def _rear_term(d: float, p: RewardParams) -> float:
    if math.isinf(d):
        return 0.0
    den = d - p.c_mr + p.c2
    if not den > 0:
        raise DomainError(f"rear gap {d:.3f} m violates positivity (d - c_mr + C2 = {den:.3f})")
    return p.f_mr / den


def step_reward(s: EnvState, p: RewardParams, collided: bool) -> float:
    if collided:
        return p.c0_collision
    pen = _front_term(s.d_fm, p) + _rear_term(s.d_mr, p)
    if p.variant == "fixed":
        return p.c3
    return p.c3 - pen


def _bounds(D: float, p: RewardParams) -> tuple[float, float]:
    return p.c_fm - p.c1, D - p.c_mr + p.c2


def _check_inside(x: float, D: float, p: RewardParams) -> tuple[float, float]:
    lo, hi = _bounds(D, p)
    if not lo < x < hi:
        raise DomainError(f"x={x} outside positivity interval ({lo}, {hi})")
    return x - p.c_fm + p.c1, D - x - p.c_mr + p.c2


def penalty(x: float, D: float, p: RewardParams) -> float:
    A, B = _check_inside(x, D, p)
    return p.f_fm / A + p.f_mr / B


def penalty_derivatives(x: float, D: float, p: RewardParams) -> tuple[float, float]:
    A, B = _check_inside(x, D, p)
    d1 = -p.f_fm / A**2 + p.f_mr / B**2
    d2 = 2 * p.f_fm / A**3 + 2 * p.f_mr / B**3
    return d1, d2


@dataclass(frozen=True)
class EquilibriumResult:
    x_star: float
    beta: float
    second_derivative_at_x_star: float
    D: float

    def as_dict(self) -> dict:
        return {"x_star": self.x_star, "beta": self.beta, "f2_at_x_star": self.second_derivative_at_x_star, "D": self.D}


def equilibrium_gap(D: float, p: RewardParams) -> EquilibriumResult:
    """Front gap that maximises the non-collision reward for a fixed total gap ``D``."""
    lo, hi = _bounds(D, p)
    if not lo < hi:
        raise DomainError(f"empty positivity interval ({lo}, {hi}) for D={D}")
    # stationarity: f_fm / A^2 = f_mr / B^2  =>  A = beta * B
    beta = math.sqrt(p.f_fm / p.f_mr)
    x_star = (beta * (D - p.c_mr + p.c2) + p.c_fm - p.c1) / (1 + beta)
    _, d2 = penalty_derivatives(x_star, D, p)
    return EquilibriumResult(x_star, beta, d2, D)


def discounted_return(rewards: Sequence[float], gamma: float) -> float:
    """Sum of gamma^t * r_t with t starting at 1 for the first reward."""
    if not 0.0 <= gamma <= 1.0:
        raise DomainError("gamma must lie in [0, 1]")
    total = 0.0
    g = 1.0
    for r in rewards:
        g *= gamma
        total += g * r
    return total
