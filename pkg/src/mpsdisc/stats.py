"""Finite-shot statistics: Wilson score interval and online Bayes stopping.

The Bayes rule tracks the posterior probability that the class-0 rate is
below 1/2 (a regularized incomplete beta value at 1/2) with exact O(1)
incremental updates, and calls the class once a credible threshold is
crossed. A shot cap guards liveness at maximal confusion.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import ceil, sqrt
from typing import Callable, Tuple


@dataclass
class ShotTally:
    n0: int
    n1: int

    def __post_init__(self):
        if self.n0 < 0 or self.n1 < 0:
            raise ValueError("counts must be nonnegative")

    @property
    def n(self) -> int:
        return self.n0 + self.n1


def wilson_interval(tally: ShotTally, z: float) -> Tuple[float, float]:
    """(center, half_width) of the Wilson score interval for the class-0 rate.

    center = (n0 + z^2/2) / (n + z^2),
    half_width = z/(n + z^2) * sqrt(n0 n1 / n + z^2/4).
    Well defined at n0 = 0 or n1 = 0; n = 0 is rejected.
    """
    if tally.n < 1:
        raise ValueError("need at least one shot")
    if z <= 0:
        raise ValueError("z must be positive")
    n = tally.n
    denom = n + z * z
    center = (tally.n0 + z * z / 2.0) / denom
    half = z / denom * sqrt(tally.n0 * tally.n1 / n + z * z / 4.0)
    return center, half


@dataclass
class BayesState:
    """Running posterior summary after n0 zeros and n1 ones (uniform prior).

    p_less is the posterior probability that p0 <= 1/2; B accumulates the
    scaled beta-function factor 2^(n0+n1+2) * Beta(n0+1, n1+1) the updates
    need. The fresh state has p_less = 1/2 and B = 4.
    """

    n0: int = 0
    n1: int = 0
    p_less: float = 0.5
    B: float = 4.0


def bayes_step(state: BayesState, observation: int) -> BayesState:
    """Exact incremental update of p_less for one observed class label."""
    if observation == 0:
        p = state.p_less - 1.0 / ((state.n0 + 1) * state.B)
        b = 2.0 * state.B * (state.n0 + 1) / (state.n0 + state.n1 + 2)
        return BayesState(state.n0 + 1, state.n1, p, b)
    if observation == 1:
        p = state.p_less + 1.0 / ((state.n1 + 1) * state.B)
        b = 2.0 * state.B * (state.n1 + 1) / (state.n0 + state.n1 + 2)
        return BayesState(state.n0, state.n1 + 1, p, b)
    raise ValueError("observation must be 0 or 1")


def default_shot_cap(p_star: float) -> int:
    return 10 * ceil(1.0 / (1.0 - p_star) ** 2)


@dataclass
class ClassCall:
    label: int
    shots_used: int
    map_estimate: float
    capped: bool


def class_from_samples(
    p_star: float,
    sampler: Callable[[], int],
    shot_cap: int | None = None,
) -> ClassCall:
    """Draw labels until the credible threshold is crossed or the cap hits.

    Returns class 1 when p_less > p_star, class 0 when p_less < 1 - p_star;
    at the cap, the argmax of the tally (ties toward 0) with a flag. The MAP
    estimate of the class-0 rate is n0 / (n0 + n1).
    """
    if not 0.5 < p_star < 1.0:
        raise ValueError("need 1/2 < p_star < 1")
    if shot_cap is None:
        shot_cap = default_shot_cap(p_star)
    if shot_cap == 0:
        raise ValueError("shot_cap must be positive")
    state = BayesState()
    for shots in range(1, shot_cap + 1):
        state = bayes_step(state, int(sampler()))
        est = state.n0 / (state.n0 + state.n1)
        if state.p_less > p_star:
            return ClassCall(1, shots, est, False)
        if state.p_less < 1.0 - p_star:
            return ClassCall(0, shots, est, False)
    label = 0 if state.n0 >= state.n1 else 1
    return ClassCall(label, shot_cap, state.n0 / (state.n0 + state.n1), True)
