"""Return and evaluation metrics over trajectories."""

from __future__ import annotations

from statistics import fmean, pstdev
from typing import Sequence

from .types import Trajectory


def episodic_return(trajectory: Trajectory, discount: float = 1.0) -> float:
    """Discounted sum of per-step team rewards over the episode."""
    if not 0.0 <= discount <= 1.0:
        raise ValueError("discount must be within [0, 1]")
    total = 0.0
    weight = 1.0
    for step in trajectory.steps:
        total += weight * step.reward
        weight *= discount
    return total


def mean_return(trajectories: Sequence[Trajectory], discount: float = 1.0) -> float:
    """Arithmetic mean of episodic returns; errors on an empty batch."""
    if not trajectories:
        raise ValueError("no trajectories")
    return fmean(episodic_return(t, discount) for t in trajectories)


def std_return(trajectories: Sequence[Trajectory], discount: float = 1.0) -> float:
    """Population standard deviation of episodic returns."""
    if not trajectories:
        raise ValueError("no trajectories")
    return pstdev(episodic_return(t, discount) for t in trajectories)
