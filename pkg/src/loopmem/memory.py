"""Loop-memory physics: round-trip loss evolution and source synchronisation.

A stored pulse loses a fraction p of its energy per cavity round trip, so N
trips act as one binomial loss channel with transmission (1-p)^N.  The same
cavity lets a heralded source retry for up to N pulse slots, which is where
the synchronisation statistics come from.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .fock import FockDiagonalState, apply_loss

DEFAULT_ROUND_TRIP_TIME = 1.0 / 76e6  # cavity length matched to the 76 MHz pulse train


@dataclass(frozen=True)
class MemoryParams:
    """Lumped loss per round trip and the trip duration."""

    loss_per_trip: float
    round_trip_time: float = DEFAULT_ROUND_TRIP_TIME
    label: str = ""

    def __post_init__(self) -> None:
        if not 0.0 <= self.loss_per_trip < 1.0:
            raise ValueError(
                f"loss_per_trip must lie in [0, 1), got {self.loss_per_trip}"
            )
        if self.round_trip_time <= 0.0:
            raise ValueError(
                f"round_trip_time must be positive, got {self.round_trip_time}"
            )


@dataclass(frozen=True)
class SourceParams:
    """Heralded photon source: success probability per pulse and pulse rate."""

    heralding_probability_per_pulse: float
    pulse_rate: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.heralding_probability_per_pulse <= 1.0:
            raise ValueError(
                "heralding_probability_per_pulse must lie in [0, 1], got "
                f"{self.heralding_probability_per_pulse}"
            )
        if self.pulse_rate <= 0.0:
            raise ValueError(f"pulse_rate must be positive, got {self.pulse_rate}")

    @property
    def production_rate(self) -> float:
        """Average herald rate in hertz."""
        return self.heralding_probability_per_pulse * self.pulse_rate


@dataclass(frozen=True)
class StorageSeries:
    """States of one stored pulse sampled at increasing round-trip counts."""

    round_trips: tuple
    states: tuple

    def __post_init__(self) -> None:
        trips = tuple(int(n) for n in self.round_trips)
        states = tuple(self.states)
        if len(trips) != len(states):
            raise ValueError(
                f"{len(trips)} round-trip counts but {len(states)} states"
            )
        if len(trips) == 0:
            raise ValueError("series must contain at least one point")
        if trips[0] < 0 or any(b <= a for a, b in zip(trips, trips[1:])):
            raise ValueError("round_trips must be non-negative and strictly increasing")
        object.__setattr__(self, "round_trips", trips)
        object.__setattr__(self, "states", states)

    def __len__(self) -> int:
        return len(self.round_trips)

    def populations_matrix(self) -> np.ndarray:
        """Populations stacked row-per-time-point, shape (points, levels)."""
        return np.stack([s.populations for s in self.states])


def evolve_rounds(
    initial: FockDiagonalState, params: MemoryParams, n_trips: int
) -> FockDiagonalState:
    """State after n_trips cavity round trips: one loss channel at (1-p)^N."""
    if n_trips < 0:
        raise ValueError(f"n_trips must be non-negative, got {n_trips}")
    return apply_loss(initial, (1.0 - params.loss_per_trip) ** n_trips)


def storage_series(
    initial: FockDiagonalState, params: MemoryParams, trips: Sequence[int]
) -> StorageSeries:
    """Evolve the initial state to every requested round-trip count."""
    states = tuple(evolve_rounds(initial, params, int(n)) for n in trips)
    return StorageSeries(tuple(int(n) for n in trips), states)


def theoretical_lifetime(params: MemoryParams) -> float:
    """Exact 1/e time of single-photon fidelity decay, -dt / ln(1-p), in seconds.

    Raises for a lossless memory: an unbounded lifetime is signalled
    explicitly rather than returned as a number.
    """
    if params.loss_per_trip == 0.0:
        raise ValueError("lossless memory: the lifetime is unbounded")
    return -params.round_trip_time / math.log1p(-params.loss_per_trip)


def single_photon_fidelity(params: MemoryParams, n_trips: float) -> float:
    """Closed-form surviving single-photon population (1-p)^N, real N allowed."""
    return (1.0 - params.loss_per_trip) ** n_trips


class SyncRate(NamedTuple):
    rate: float
    enhancement: float


def sync_probability(source: SourceParams, max_trips: int) -> float:
    """Chance that at least one herald fires within max_trips storage slots."""
    if max_trips < 0:
        raise ValueError(f"max_trips must be non-negative, got {max_trips}")
    p1 = source.heralding_probability_per_pulse
    if p1 == 1.0:
        return 0.0 if max_trips == 0 else 1.0
    return -math.expm1(max_trips * math.log1p(-p1))


def sync_rate(source: SourceParams, max_trips: int) -> SyncRate:
    """Two-source coincidence rate (Hz) and its gain over the single-shot chance.

    The first photon is held in the memory while the second source retries for
    up to max_trips pulses, so the pair rate is the production rate times the
    retry success probability, and the enhancement over an unassisted
    coincidence is that probability divided by the per-pulse one.  For a
    vanishing per-pulse probability the enhancement approaches max_trips.
    """
    prob = sync_probability(source, max_trips)
    p1 = source.heralding_probability_per_pulse
    enhancement = float(max_trips) if p1 == 0.0 else prob / p1
    return SyncRate(rate=source.production_rate * prob, enhancement=enhancement)
