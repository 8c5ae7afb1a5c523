"""Fock-basis numerics for phase-averaged optical states.

Conventions used throughout the package:

* Quadratures are scaled so the vacuum variance is 1/2, i.e. x = (a + a*)/sqrt(2).
  The number-state wavefunctions are psi_n(x) = H_n(x) exp(-x^2/2) / sqrt(2^n n! sqrt(pi)).
* Wigner functions are normalised to integrate to 1 over the phase plane, which
  puts the vacuum peak at 1/pi and the single-photon minimum at -1/pi.

Only populations (density-matrix diagonals) are represented.  Phase-averaged
homodyne data carries no information about coherences, so this is the largest
state family the rest of the toolkit can ever reconstruct.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular
from scipy.stats import binom

DEFAULT_N_MAX = 15
DEFAULT_TAIL_TOLERANCE = 1e-6

_SUM_TOLERANCE = 1e-9
_ENTRY_TOLERANCE = 1e-12


@dataclass(frozen=True)
class FockBasisConfig:
    """Photon-number cutoff and the population admissible at the cutoff level."""

    n_max: int = DEFAULT_N_MAX
    tail_tolerance: float = DEFAULT_TAIL_TOLERANCE

    def __post_init__(self) -> None:
        if self.n_max < 2:
            raise ValueError(f"n_max must be at least 2, got {self.n_max}")
        if not 0.0 < self.tail_tolerance < 1.0:
            raise ValueError(
                f"tail_tolerance must lie in (0, 1), got {self.tail_tolerance}"
            )

    @property
    def levels(self) -> int:
        return self.n_max + 1


DEFAULT_BASIS = FockBasisConfig()


@dataclass(frozen=True)
class FockDiagonalState:
    """Photon-number populations of a phase-invariant state.

    Entries must be probabilities summing to one, and the population at the
    cutoff level must stay below the basis tail tolerance.  States violating
    the tail bound are rejected at construction instead of being renormalised:
    truncation bias should be explicit, not silent.
    """

    populations: np.ndarray
    basis: FockBasisConfig = field(default=DEFAULT_BASIS)

    def __post_init__(self) -> None:
        pops = np.array(self.populations, dtype=float)
        if pops.ndim != 1 or pops.size != self.basis.levels:
            raise ValueError(
                f"populations must be a vector of length {self.basis.levels}, "
                f"got shape {pops.shape}"
            )
        if np.any(pops < -_ENTRY_TOLERANCE) or np.any(pops > 1.0 + _ENTRY_TOLERANCE):
            raise ValueError("populations must lie in [0, 1]")
        pops = np.clip(pops, 0.0, 1.0)
        total = pops.sum()
        if abs(total - 1.0) > _SUM_TOLERANCE:
            raise ValueError(f"populations must sum to 1, got {total!r}")
        if pops[-1] > self.basis.tail_tolerance:
            raise ValueError(
                f"population {pops[-1]:.3e} at the cutoff n={self.basis.n_max} "
                f"exceeds the tail tolerance {self.basis.tail_tolerance:.3e}; "
                "increase n_max or loosen the tolerance"
            )
        pops.setflags(write=False)
        object.__setattr__(self, "populations", pops)

    @property
    def n_max(self) -> int:
        return self.basis.n_max

    def mean_photons(self) -> float:
        return float(np.arange(self.basis.levels) @ self.populations)


def vacuum_state(basis: FockBasisConfig = DEFAULT_BASIS) -> FockDiagonalState:
    pops = np.zeros(basis.levels)
    pops[0] = 1.0
    return FockDiagonalState(pops, basis)


def fock_state(n: int, basis: FockBasisConfig = DEFAULT_BASIS) -> FockDiagonalState:
    """Pure number state with n photons."""
    if not 0 <= n <= basis.n_max:
        raise ValueError(f"n must lie in [0, {basis.n_max}], got {n}")
    pops = np.zeros(basis.levels)
    pops[n] = 1.0
    return FockDiagonalState(pops, basis)


def diagonal_state(values, basis: FockBasisConfig = DEFAULT_BASIS) -> FockDiagonalState:
    """State from leading populations; shorter vectors are zero-padded to the cutoff."""
    values = np.asarray(values, dtype=float)
    if values.size > basis.levels:
        raise ValueError(
            f"{values.size} populations exceed the basis size {basis.levels}"
        )
    pops = np.zeros(basis.levels)
    pops[: values.size] = values
    return FockDiagonalState(pops, basis)


def hermite_eval(n: int, x):
    """Physicists' Hermite polynomial H_n(x) by the three-term upward recurrence."""
    if n < 0:
        raise ValueError(f"polynomial order must be non-negative, got {n}")
    arr = np.asarray(x, dtype=float)
    h_prev = np.ones_like(arr)
    if n == 0:
        return float(h_prev) if arr.ndim == 0 else h_prev
    h = 2.0 * arr
    for k in range(1, n):
        h, h_prev = 2.0 * arr * h - 2.0 * k * h_prev, h
    return float(h) if arr.ndim == 0 else h


def wavefunction_table(n_max: int, x: np.ndarray) -> np.ndarray:
    """psi_n(x) for all n <= n_max, shape (n_max + 1, len(x)).

    Uses the orthonormal-function recurrence
    psi_{k+1} = sqrt(2/(k+1)) x psi_k - sqrt(k/(k+1)) psi_{k-1},
    which keeps every level normalised and avoids factorial overflow.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    table = np.empty((n_max + 1, x.size))
    table[0] = np.pi ** -0.25 * np.exp(-0.5 * x * x)
    if n_max >= 1:
        table[1] = math.sqrt(2.0) * x * table[0]
    for k in range(1, n_max):
        table[k + 1] = (
            math.sqrt(2.0 / (k + 1)) * x * table[k]
            - math.sqrt(k / (k + 1.0)) * table[k - 1]
        )
    return table


def quadrature_pdf(n: int, x):
    """Probability density |psi_n(x)|^2 of a quadrature measurement on |n>."""
    if n < 0:
        raise ValueError(f"photon number must be non-negative, got {n}")
    arr = np.atleast_1d(np.asarray(x, dtype=float))
    pdf = wavefunction_table(n, arr)[n] ** 2
    return float(pdf[0]) if np.ndim(x) == 0 else pdf


def wigner_radial(state: FockDiagonalState, r):
    """Wigner function of a phase-invariant state at radius r from the origin.

    W(r) = (1/pi) exp(-r^2) sum_n p_n (-1)^n L_n(2 r^2); the vacuum peaks at
    1/pi and a pure single photon dips to -1/pi at the origin.
    """
    arr = np.atleast_1d(np.asarray(r, dtype=float))
    if np.any(arr < 0):
        raise ValueError("radius must be non-negative")
    y = 2.0 * arr * arr
    pops = state.populations
    lag_prev = np.ones_like(y)
    acc = pops[0] * lag_prev
    if state.n_max >= 1:
        lag = 1.0 - y
        acc = acc - pops[1] * lag
        sign = 1.0
        for k in range(1, state.n_max):
            lag, lag_prev = ((2 * k + 1 - y) * lag - k * lag_prev) / (k + 1), lag
            acc = acc + sign * pops[k + 1] * lag
            sign = -sign
    w = np.exp(-arr * arr) * acc / np.pi
    return float(w[0]) if np.ndim(r) == 0 else w


def loss_matrix(n_max: int, transmission: float) -> np.ndarray:
    """Stochastic matrix of binomial photon loss: entry [n, m] = C(m,n) T^n (1-T)^(m-n)."""
    if not 0.0 <= transmission <= 1.0:
        raise ValueError(f"transmission must lie in [0, 1], got {transmission}")
    levels = np.arange(n_max + 1)
    return binom.pmf(levels[:, None], levels[None, :], transmission)


def apply_loss(state: FockDiagonalState, transmission: float) -> FockDiagonalState:
    """Populations after each photon independently survives with the given probability."""
    out = loss_matrix(state.n_max, transmission) @ state.populations
    return FockDiagonalState(out, state.basis)


def invert_loss(
    state: FockDiagonalState,
    transmission: float,
    *,
    negativity_tolerance: float = 0.05,
) -> FockDiagonalState:
    """Undo a binomial loss of known transmission.

    The inverse map amplifies noise and is not completely positive: on noisy
    inputs it can produce slightly negative populations.  Negative mass up to
    ``negativity_tolerance`` is clipped away and the vector renormalised;
    anything larger raises, since the input is then inconsistent with the
    assumed transmission.
    """
    if not 0.0 < transmission <= 1.0:
        raise ValueError(f"transmission must lie in (0, 1], got {transmission}")
    mat = loss_matrix(state.n_max, transmission)
    raw = solve_triangular(mat, state.populations, lower=False)
    negative = -raw[raw < 0].sum()
    if negative > negativity_tolerance:
        raise ValueError(
            f"inverse loss map produced negative mass {negative:.3g}; "
            "the populations are inconsistent with the assumed transmission"
        )
    raw = np.clip(raw, 0.0, None)
    return FockDiagonalState(raw / raw.sum(), state.basis)


def fidelity(state: FockDiagonalState, reference_n: int) -> float:
    """Overlap with the pure number state |reference_n>, i.e. that population."""
    if not 0 <= reference_n <= state.n_max:
        raise ValueError(
            f"reference photon number must lie in [0, {state.n_max}], got {reference_n}"
        )
    return float(state.populations[reference_n])
