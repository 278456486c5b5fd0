"""Self-paced sample weighting: soft polynomial regularizer and solver.

Each triplet's weight u in [0,1] minimizes

    u * R + age * (u^order / order - u / mature_age)

which has the closed-form solution

    u* = 1                                    if R < age * (1/mature_age - 1)
    u* = 0                                    if R > age / mature_age
    u* = (1/mature_age - R/age)^(1/(order-1)) otherwise.

Low-loss triplets are trusted fully, high-loss ones are ignored, and the
window between the two thresholds widens as the model age grows (age is
divided by age_rate < 1 once per training iteration), so eventually every
bounded loss falls under the first branch and all weights reach 1.

As order -> 1+ the interior branch sharpens toward the 0/1 "hard"
scheme with threshold age*(1/mature_age - 1); at order = 2 it is exactly
linear in R. `reference_schemes` provides the classic hard and linear
soft weightings for comparison.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ContractError

# the solver's closed form is only valid for orders in this range
MIN_ORDER = 1.0
MAX_ORDER = 8.0


@dataclass(frozen=True)
class SplState:
    """Pace parameters: model age, mature age, polynomial order, age rate."""

    age: float = 0.6
    mature_age: float = 0.75
    order: float = 2.0
    age_rate: float = 0.9

    def __post_init__(self):
        if self.age <= 0:
            raise ContractError(f"age must be > 0, got {self.age}")
        if not 0 < self.mature_age < 1:
            raise ContractError(f"mature_age must be in (0,1), got {self.mature_age}")
        if not MIN_ORDER < self.order <= MAX_ORDER:
            raise ContractError(
                f"order must be in ({MIN_ORDER}, {MAX_ORDER}], got {self.order}"
            )
        if not 0 < self.age_rate < 1:
            raise ContractError(f"age_rate must be in (0,1), got {self.age_rate}")

    @property
    def full_weight_threshold(self) -> float:
        return self.age * (1.0 / self.mature_age - 1.0)

    @property
    def zero_weight_threshold(self) -> float:
        return self.age / self.mature_age


def regularizer_value(u: float, state: SplState) -> float:
    """Per-sample regularizer age*(u^order/order - u/mature_age), u in [0,1]."""
    if not 0.0 <= u <= 1.0:
        raise ContractError(f"weight must lie in [0,1], got {u}")
    return state.age * (u**state.order / state.order - u / state.mature_age)


def solve_weight(loss: float, state: SplState) -> float:
    """Closed-form minimizer of u*loss + regularizer_value(u) over [0,1]."""
    if loss < 0:
        raise ContractError(f"loss must be >= 0, got {loss}")
    if loss < state.full_weight_threshold:
        return 1.0
    if loss > state.zero_weight_threshold:
        return 0.0
    interior = 1.0 / state.mature_age - loss / state.age
    interior = min(1.0, max(0.0, interior))  # clip boundary rounding
    return interior ** (1.0 / (state.order - 1.0))


def solve_weights(losses, state: SplState) -> np.ndarray:
    """Vectorized solve_weight over an array of losses."""
    r = np.asarray(losses, dtype=np.float64)
    if np.any(r < 0):
        raise ContractError("losses must be >= 0")
    interior = np.clip(1.0 / state.mature_age - r / state.age, 0.0, 1.0)
    u = interior ** (1.0 / (state.order - 1.0))
    u[r < state.full_weight_threshold] = 1.0
    u[r > state.zero_weight_threshold] = 0.0
    return u


def oracle_weight(loss: float, state: SplState, resolution: float = 1e-5) -> float:
    """Brute-force grid minimizer of the same objective; test oracle."""
    if loss < 0:
        raise ContractError(f"loss must be >= 0, got {loss}")
    n = int(round(1.0 / resolution)) + 1
    grid = np.linspace(0.0, 1.0, n)
    objective = grid * loss + state.age * (grid**state.order / state.order - grid / state.mature_age)
    return float(grid[int(np.argmin(objective))])


def reference_schemes(loss: float, age: float) -> tuple[float, float]:
    """(hard, soft_linear) weights at the given loss and age threshold."""
    if loss < 0 or age <= 0:
        raise ContractError("need loss >= 0 and age > 0")
    hard = 1.0 if loss < age else 0.0
    soft_linear = max(0.0, 1.0 - loss / age)
    return hard, soft_linear


def update_age(state: SplState) -> SplState:
    """One pace step: age <- age / age_rate; everything else unchanged."""
    return replace(state, age=state.age / state.age_rate)
