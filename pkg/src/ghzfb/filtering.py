"""Exponential low-pass filtering of the homodyne record and level detection.

The filter keeps a running exponentially weighted sum of increments together
with the integrated kernel mass, so its output is an unbiased estimate of
the current level from the first step after any reset; the normalization
converges to sqrt(gamma_m)/gamma_ft in steady state. The discriminator
declares a level from {-4, -2, 0, +2, +4} once the estimate has stayed
inside a band around exactly one level for a continuous dwell time.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

LEVELS = (-4.0, -2.0, 0.0, 2.0, 4.0)
DEFAULT_FILTER_RATE = 0.5
DEFAULT_BAND = 0.5
DEFAULT_DWELL = 2.0


@dataclass
class FilterParams:
    gamma_ft: float = DEFAULT_FILTER_RATE
    band: float = DEFAULT_BAND
    dwell: float = DEFAULT_DWELL

    def validate(self) -> None:
        if self.gamma_ft <= 0:
            raise ValueError("filter rate gamma_ft must be positive")
        if not 0.0 < self.band <= 1.0:
            raise ValueError("band must be in (0, 1] (half the minimum level gap)")
        if self.dwell <= 0:
            raise ValueError("dwell time must be positive")


@dataclass
class FilterState:
    """Running filter: accumulator and integrated kernel mass."""

    gamma_ft: float
    gamma_m: float
    accumulator: float = 0.0
    mass: float = 0.0

    def reset(self) -> None:
        self.accumulator = 0.0
        self.mass = 0.0

    def negate(self) -> None:
        # exact compensation for a global qubit flip, which maps Jz -> -Jz
        self.accumulator = -self.accumulator

    def update(self, dI: float, dt: float) -> float:
        """Fold in one increment and return the level estimate."""
        if dt <= 0:
            raise ValueError("dt must be positive")
        decay = np.exp(-self.gamma_ft * dt)
        self.accumulator = self.accumulator * decay + dI
        self.mass = self.mass * decay + (1.0 - decay) / self.gamma_ft
        return self.output()

    def output(self) -> float:
        if self.mass == 0.0:
            return 0.0
        return self.accumulator / (np.sqrt(self.gamma_m) * self.mass)


def filter_update(fs: FilterState, dI: float, dt: float) -> tuple[FilterState, float]:
    """Functional wrapper around FilterState.update."""
    return fs, fs.update(dI, dt)


@dataclass
class Verdict:
    decided: bool = False
    level: float = 0.0
    decided_at: float = 0.0

    def __bool__(self) -> bool:
        return self.decided


def nearest_level(value: float) -> float:
    return LEVELS[int(np.clip(round((value + 4.0) / 2.0), 0, len(LEVELS) - 1))]


@dataclass
class Discriminator:
    """Dwell-based level detection on the filtered estimate.

    A verdict fires once per in-band run: when the estimate has stayed within
    ``band`` of a single level for at least ``dwell``, that level is reported
    and the run is marked; leaving the band or switching level re-arms it.
    """

    params: FilterParams = field(default_factory=FilterParams)
    candidate: float | None = None
    dwell_time: float = 0.0
    reported: bool = False

    def reset(self) -> None:
        self.candidate = None
        self.dwell_time = 0.0
        self.reported = False

    def mirror(self) -> None:
        # track a global qubit flip without losing dwell history
        if self.candidate is not None:
            self.candidate = -self.candidate

    def update(self, i_bar: float, dt: float, t: float) -> Verdict:
        level = nearest_level(i_bar)
        if abs(i_bar - level) <= self.params.band:
            if self.candidate == level:
                self.dwell_time += dt
            else:
                self.candidate = level
                self.dwell_time = dt
                self.reported = False
        else:
            self.candidate = None
            self.dwell_time = 0.0
            self.reported = False
            return Verdict()
        if self.dwell_time >= self.params.dwell and not self.reported:
            self.reported = True
            return Verdict(decided=True, level=level, decided_at=t)
        return Verdict()


def discriminate(i_bar_series, times, params: FilterParams | None = None) -> Verdict:
    """Offline verdict for a recorded estimate series (first decision wins)."""
    params = params or FilterParams()
    disc = Discriminator(params=params)
    prev_t = 0.0
    for i_bar, t in zip(i_bar_series, times):
        v = disc.update(float(i_bar), float(t - prev_t), float(t))
        if v:
            return v
        prev_t = t
    return Verdict()
