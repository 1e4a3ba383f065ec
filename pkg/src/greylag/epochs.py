"""Epoch types, schedules, and the Stan-style warmup window helper.

Sampling is divided into epochs: fast and slow adaptation epochs (where
kernels may tune themselves, breaking the Markov property), burn-in
epochs (no tuning, chain still converging) and posterior epochs (valid
samples).  Posterior epochs may only be followed by more posterior
epochs.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

from .errors import ScheduleError


class EpochType(Enum):
    FAST_ADAPTATION = "fast_adaptation"
    SLOW_ADAPTATION = "slow_adaptation"
    BURNIN = "burnin"
    POSTERIOR = "posterior"

    @property
    def is_adaptation(self) -> bool:
        return self in (EpochType.FAST_ADAPTATION, EpochType.SLOW_ADAPTATION)

    @property
    def is_warmup(self) -> bool:
        return self is not EpochType.POSTERIOR


@dataclass(frozen=True)
class EpochConfig:
    """One epoch: a type, a duration in iterations, and (posterior only)
    a thinning factor."""

    type: EpochType
    duration: int
    thinning: int = 1

    def __post_init__(self):
        if self.duration < 1:
            raise ScheduleError("epoch duration must be >= 1")
        if self.thinning < 1:
            raise ScheduleError("thinning must be >= 1")
        if self.thinning > 1 and self.type is not EpochType.POSTERIOR:
            raise ScheduleError("thinning is only supported in posterior epochs")


@dataclass(frozen=True)
class EpochState:
    """What a kernel sees about the running epoch."""

    config: EpochConfig
    index: int
    iteration: int

    @property
    def type(self) -> EpochType:
        return self.config.type


def validate_schedule(epochs: list[EpochConfig]) -> None:
    if not epochs:
        raise ScheduleError("schedule is empty")
    seen_posterior = False
    for cfg in epochs:
        if seen_posterior and cfg.type is not EpochType.POSTERIOR:
            raise ScheduleError("posterior epochs cannot be followed by other epoch types")
        if cfg.type is EpochType.POSTERIOR:
            seen_posterior = True
    if not seen_posterior:
        raise ScheduleError("schedule needs at least one posterior epoch")


def stan_warmup_schedule(
    warmup_duration: int, posterior_duration: int, thinning: int = 1
) -> list[EpochConfig]:
    """Stan-style warmup: a fast window, doubling slow windows (the last
    one absorbing the remainder), a terminal fast window, then the
    posterior epoch.  Window sizes 75/25/50 are scaled down proportionally
    when fewer than 150 warmup iterations are requested.
    """
    if warmup_duration < 20:
        raise ScheduleError("warmup must be at least 20 iterations")
    if posterior_duration < 1:
        raise ScheduleError("posterior duration must be >= 1")
    if warmup_duration >= 150:
        first_fast, last_fast = 75, 50
    else:
        first_fast = max(1, round(75 * warmup_duration / 150))
        last_fast = max(1, round(50 * warmup_duration / 150))
    slow_total = warmup_duration - first_fast - last_fast
    if slow_total < 1:
        first_fast -= 1 - slow_total
        slow_total = 1
    windows: list[int] = []
    remaining = slow_total
    width = 25
    while remaining > 0:
        if remaining >= width:
            windows.append(width)
            remaining -= width
            width *= 2
        else:
            if windows:
                windows[-1] += remaining
            else:
                windows.append(remaining)
            remaining = 0
    epochs = [EpochConfig(EpochType.FAST_ADAPTATION, first_fast)]
    epochs.extend(EpochConfig(EpochType.SLOW_ADAPTATION, w) for w in windows)
    epochs.append(EpochConfig(EpochType.FAST_ADAPTATION, last_fast))
    epochs.append(EpochConfig(EpochType.POSTERIOR, posterior_duration, thinning))
    return epochs
