"""Synthetic homodyne detection of phase-invariant states.

Finite detection efficiency acts as a binomial loss on the populations before
the quadrature statistics are formed, so the phase-averaged sample density is
p(x) = sum_n <n|rho_detected|n> |psi_n(x)|^2.  Sampling uses an inverse-CDF
lookup table, which is deterministic per seed and has no rejection-rate
pathologies for high photon numbers.

Dataset file grammar (format_version 1): UTF-8 text, a header of
``key = value`` lines with exactly the keys format_version, state, eta,
round_trips, seed and count (any order), followed by one sample per line as
decimal floating point with 17 significant digits.
"""

from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.integrate import cumulative_trapezoid, quad

from .fock import FockDiagonalState, apply_loss, wavefunction_table

FORMAT_VERSION = 1

_TABLE_POINTS = 2**14
_TABLE_HALFWIDTH = 8.0
_TAIL_BOUND = 1e-10

_HEADER_KEYS = ("format_version", "state", "eta", "round_trips", "seed", "count")


class DatasetFormatError(ValueError):
    """A dataset file violates the documented grammar."""


@dataclass(frozen=True)
class DetectionModel:
    """Detection chain efficiencies: photodiode, mode matching, and combined.

    The combined efficiency is eta_pd * eta_c; passing ``eta`` explicitly is
    only allowed when it agrees with that product.  ``sigma_eta`` is the one-
    sigma uncertainty used by the error-band analyses.
    """

    eta_pd: float
    eta_c: float
    sigma_eta: float = 0.0
    eta: float | None = None

    def __post_init__(self) -> None:
        for name in ("eta_pd", "eta_c"):
            value = getattr(self, name)
            if not 0.0 < value <= 1.0:
                raise ValueError(f"{name} must lie in (0, 1], got {value}")
        if self.sigma_eta < 0.0:
            raise ValueError(f"sigma_eta must be non-negative, got {self.sigma_eta}")
        product = self.eta_pd * self.eta_c
        if self.eta is None:
            object.__setattr__(self, "eta", product)
        elif abs(self.eta - product) > 1e-9:
            raise ValueError(
                f"eta={self.eta} does not match eta_pd*eta_c={product!r}"
            )

    def with_eta(self, eta: float) -> "DetectionModel":
        """Copy with the combined efficiency forced to ``eta``.

        The photodiode efficiency is kept and the mode-matching factor
        rescaled; used when re-running an analysis at eta +/- sigma.
        """
        return DetectionModel(eta_pd=self.eta_pd, eta_c=eta / self.eta_pd)


@dataclass(frozen=True)
class DatasetMeta:
    """Provenance of one quadrature acquisition."""

    state: str
    eta: float
    round_trips: int
    seed: int


@dataclass(frozen=True)
class QuadratureDataset:
    samples: np.ndarray
    meta: DatasetMeta

    def __post_init__(self) -> None:
        samples = np.array(self.samples, dtype=float)
        if samples.ndim != 1 or samples.size == 0:
            raise ValueError("dataset must contain at least one sample")
        if not np.all(np.isfinite(samples)):
            raise ValueError("samples must be finite")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return self.samples.size


def detected_state(state: FockDiagonalState, det: DetectionModel) -> FockDiagonalState:
    """Populations actually seen by the detector: binomial loss at the combined efficiency."""
    return apply_loss(state, det.eta)


@lru_cache(maxsize=256)
def _level_tail_mass(n: int, halfwidth: float) -> float:
    """Probability of |x| > halfwidth for a quadrature measurement on |n>."""
    value, _ = quad(
        lambda x: wavefunction_table(n, np.array([x]))[n, 0] ** 2,
        halfwidth,
        np.inf,
    )
    return 2.0 * value


def _table_halfwidth(populations: np.ndarray) -> float:
    """Smallest tabulation window keeping the untabulated tail below 1e-10."""
    halfwidth = _TABLE_HALFWIDTH
    support = np.flatnonzero(populations > 0)
    top = int(support[-1]) if support.size else 0
    while populations[: top + 1] @ [
        _level_tail_mass(n, halfwidth) for n in range(top + 1)
    ] >= _TAIL_BOUND:
        halfwidth += 1.0
        if halfwidth > 40.0:
            raise RuntimeError("sampling table bounds failed to converge")
    return halfwidth


def _mixture_pdf(populations: np.ndarray, x: np.ndarray) -> np.ndarray:
    table = wavefunction_table(populations.size - 1, x)
    return populations @ (table * table)


def sample_quadratures(
    state: FockDiagonalState,
    det: DetectionModel,
    count: int,
    seed: int,
    *,
    state_label: str | None = None,
    round_trips: int = 0,
) -> QuadratureDataset:
    """Draw count i.i.d. phase-averaged quadrature samples through the detector.

    Sampling is reproducible bit-for-bit from the seed: uniform variates from
    ``numpy.random.default_rng(seed)`` are pushed through a monotone
    interpolation of the tabulated CDF.
    """
    if count <= 0:
        raise ValueError(f"count must be positive, got {count}")
    pops = detected_state(state, det).populations
    halfwidth = _table_halfwidth(pops)
    grid = np.linspace(-halfwidth, halfwidth, _TABLE_POINTS)
    cdf = cumulative_trapezoid(_mixture_pdf(pops, grid), grid, initial=0.0)
    cdf /= cdf[-1]
    uniforms = np.random.default_rng(seed).random(count)
    samples = np.interp(uniforms, cdf, grid)
    if state_label is None:
        state_label = _default_state_label(state)
    meta = DatasetMeta(
        state=state_label, eta=det.eta, round_trips=int(round_trips), seed=int(seed)
    )
    return QuadratureDataset(samples, meta)


def _default_state_label(state: FockDiagonalState) -> str:
    support = np.flatnonzero(state.populations > 0)
    top = int(support[-1]) if support.size else 0
    entries = ",".join(repr(float(v)) for v in state.populations[: top + 1])
    return f"diag:{entries}"


def _atomic_write_text(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_dataset(ds: QuadratureDataset, path: str) -> None:
    """Write a dataset in the text grammar documented in the module docstring."""
    lines = [
        f"format_version = {FORMAT_VERSION}",
        f"state = {ds.meta.state}",
        f"eta = {ds.meta.eta:.17g}",
        f"round_trips = {ds.meta.round_trips}",
        f"seed = {ds.meta.seed}",
        f"count = {len(ds)}",
    ]
    lines.extend(f"{x:.17g}" for x in ds.samples)
    _atomic_write_text(str(path), "\n".join(lines) + "\n")


def load_dataset(path: str) -> QuadratureDataset:
    """Read a dataset file, failing loudly with the offending line number."""
    header: dict[str, str] = {}
    samples: list[float] = []
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, raw in enumerate(handle, start=1):
            line = raw.strip()
            if not line:
                continue
            if "=" in line:
                if samples:
                    raise DatasetFormatError(
                        f"{path}: line {lineno}: metadata after the first sample"
                    )
                key, _, value = line.partition("=")
                key = key.strip()
                if key not in _HEADER_KEYS:
                    raise DatasetFormatError(
                        f"{path}: line {lineno}: unknown header key {key!r}"
                    )
                if key in header:
                    raise DatasetFormatError(
                        f"{path}: line {lineno}: duplicate header key {key!r}"
                    )
                header[key] = value.strip()
                continue
            try:
                samples.append(float(line))
            except ValueError:
                raise DatasetFormatError(
                    f"{path}: line {lineno}: not a numeric sample: {line!r}"
                ) from None
    missing = [key for key in _HEADER_KEYS if key not in header]
    if missing:
        raise DatasetFormatError(f"{path}: missing header keys {missing}")
    try:
        version = int(header["format_version"])
        eta = float(header["eta"])
        round_trips = int(header["round_trips"])
        seed = int(header["seed"])
        count = int(header["count"])
    except ValueError as exc:
        raise DatasetFormatError(f"{path}: malformed header value: {exc}") from None
    if version != FORMAT_VERSION:
        raise DatasetFormatError(
            f"{path}: format_version {version} not supported (expected {FORMAT_VERSION})"
        )
    if not samples:
        raise DatasetFormatError(f"{path}: dataset contains no samples")
    if count != len(samples):
        raise DatasetFormatError(
            f"{path}: header count {count} does not match {len(samples)} samples"
        )
    meta = DatasetMeta(
        state=header["state"], eta=eta, round_trips=round_trips, seed=seed
    )
    return QuadratureDataset(np.array(samples), meta)
