"""Benchmark environments: layered-graph navigation and sepsis management."""

from __future__ import annotations

from typing import Callable

import numpy as np

from ..model import MmdpScm, Trajectory


class FailureRateTooLow(RuntimeError):
    """Rejection sampling aborted because goal failures are too rare."""


def generate_failure_set(
    scm: MmdpScm,
    count: int,
    rng: np.random.Generator,
    is_failure: Callable[[Trajectory], bool],
    min_rate: float = 1e-4,
) -> list[Trajectory]:
    """Rejection-sample trajectories until ``count`` goal failures are found."""
    if count < 1:
        raise ValueError("count must be >= 1")
    found: list[Trajectory] = []
    attempts = 0
    check_every = max(10_000, 10 * count)
    while len(found) < count:
        traj, _ = scm.sample_trajectory(rng)
        attempts += 1
        if is_failure(traj):
            found.append(traj)
        if attempts % check_every == 0 and len(found) / attempts < min_rate:
            raise FailureRateTooLow(
                f"observed failure rate {len(found)}/{attempts} is below {min_rate}"
            )
    return found
