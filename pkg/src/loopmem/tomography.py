"""Maximum-likelihood estimation of photon-number populations from quadratures.

The measurement model is binned: the probability of landing in bin j given n
photons *before* the detector is the binomial mixture of ideal bin integrals,

    M[j][n] = sum_{k<=n} C(n,k) eta^k (1-eta)^(n-k) * integral_bin_j |psi_k|^2,

so detection losses are folded into the POVM instead of being inverted after
the fact (inversion amplifies noise and can leave the simplex).  Estimation
runs the multiplicative EM update on the populations, which stays on the
probability simplex and never decreases the binned log-likelihood.  Under- and
overflow of the binning range are kept as two extra likelihood cells.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.integrate import quad, quad_vec
from scipy.stats import binom

from .fock import (
    FockBasisConfig,
    FockDiagonalState,
    apply_loss,
    invert_loss,
    wavefunction_table,
)
from .homodyne import DetectionModel, QuadratureDataset

_QUAD_TOLERANCE = 1e-12
_PROB_FLOOR = 1e-300


def default_edges(halfwidth: float = 6.0, width: float = 0.1) -> np.ndarray:
    """Uniform bin edges over [-halfwidth, halfwidth]; width 0.1 is well below the vacuum sigma."""
    n_bins = int(round(2.0 * halfwidth / width))
    return np.linspace(-halfwidth, halfwidth, n_bins + 1)


@dataclass(frozen=True)
class BinnedHistogram:
    """Counts per quadrature bin, with out-of-range samples kept explicitly."""

    edges: np.ndarray
    counts: np.ndarray
    underflow: int = 0
    overflow: int = 0

    def __post_init__(self) -> None:
        edges = np.array(self.edges, dtype=float)
        counts = np.array(self.counts, dtype=np.int64)
        if edges.ndim != 1 or edges.size < 2:
            raise ValueError("edges must contain at least two values")
        if np.any(np.diff(edges) <= 0):
            raise ValueError("edges must be strictly increasing")
        if counts.shape != (edges.size - 1,):
            raise ValueError(
                f"expected {edges.size - 1} counts for {edges.size} edges, "
                f"got {counts.size}"
            )
        if np.any(counts < 0) or self.underflow < 0 or self.overflow < 0:
            raise ValueError("counts must be non-negative")
        edges.setflags(write=False)
        counts.setflags(write=False)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "counts", counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum()) + self.underflow + self.overflow

    def cell_counts(self) -> np.ndarray:
        """Counts as one vector ordered [underflow, bins..., overflow]."""
        return np.concatenate(([self.underflow], self.counts, [self.overflow])).astype(
            float
        )


def bin_dataset(ds: QuadratureDataset, edges) -> BinnedHistogram:
    """Histogram the samples with left-closed bins [e_j, e_{j+1}).

    A sample equal to the last edge counts as overflow; nothing is ever
    silently dropped.
    """
    edges = np.asarray(edges, dtype=float)
    if edges.ndim != 1 or edges.size < 2:
        raise ValueError("edges must contain at least two values")
    if np.any(np.diff(edges) <= 0):
        raise ValueError("edges must be strictly increasing")
    idx = np.searchsorted(edges, ds.samples, side="right") - 1
    n_bins = edges.size - 1
    underflow = int(np.count_nonzero(idx < 0))
    overflow = int(np.count_nonzero(idx >= n_bins))
    in_range = idx[(idx >= 0) & (idx < n_bins)]
    counts = np.bincount(in_range, minlength=n_bins)
    return BinnedHistogram(edges, counts, underflow=underflow, overflow=overflow)


@dataclass(frozen=True)
class ResponseMatrix:
    """Binned measurement model for a given basis, detector and bin edges.

    ``entries[j, n]`` is the probability of bin j given n photons before the
    detector; ``pdf_*`` hold the same integrals without the efficiency fold
    (i.e. at unit efficiency), which the inverse-map estimator reuses.
    """

    edges: np.ndarray
    eta: float
    basis: FockBasisConfig
    entries: np.ndarray
    underflow: np.ndarray
    overflow: np.ndarray
    pdf_entries: np.ndarray
    pdf_underflow: np.ndarray
    pdf_overflow: np.ndarray

    def cell_matrix(self, folded: bool = True) -> np.ndarray:
        """Model matrix over all likelihood cells, ordered [underflow, bins..., overflow]."""
        if folded:
            return np.vstack([self.underflow, self.entries, self.overflow])
        return np.vstack([self.pdf_underflow, self.pdf_entries, self.pdf_overflow])


def build_response(
    basis: FockBasisConfig, det: DetectionModel, edges
) -> ResponseMatrix:
    """Integrate the quadrature densities over every bin and fold in the efficiency.

    Bin integrals use adaptive quadrature well below the 1e-10 absolute
    tolerance the rest of the pipeline assumes.
    """
    edges = np.asarray(edges, dtype=float)
    if edges.ndim != 1 or edges.size < 2:
        raise ValueError("edges must contain at least two values")
    if np.any(np.diff(edges) <= 0):
        raise ValueError("edges must be strictly increasing")
    levels = basis.levels

    def densities(x: float) -> np.ndarray:
        table = wavefunction_table(basis.n_max, np.array([x]))[:, 0]
        return table * table

    ideal = np.empty((edges.size - 1, levels))
    for j, (lo, hi) in enumerate(zip(edges[:-1], edges[1:])):
        ideal[j], _ = quad_vec(
            densities, lo, hi, epsabs=_QUAD_TOLERANCE, epsrel=_QUAD_TOLERANCE
        )
    under = np.empty(levels)
    over = np.empty(levels)
    for n in range(levels):
        under[n], _ = quad(
            lambda x, n=n: densities(x)[n], -np.inf, edges[0], epsabs=_QUAD_TOLERANCE
        )
        over[n], _ = quad(
            lambda x, n=n: densities(x)[n], edges[-1], np.inf, epsabs=_QUAD_TOLERANCE
        )

    detected = np.arange(levels)
    fold = binom.pmf(detected[:, None], detected[None, :], det.eta)
    return ResponseMatrix(
        edges=edges,
        eta=det.eta,
        basis=basis,
        entries=ideal @ fold,
        underflow=under @ fold,
        overflow=over @ fold,
        pdf_entries=ideal,
        pdf_underflow=under,
        pdf_overflow=over,
    )


@dataclass(frozen=True)
class ReconstructionOptions:
    """Stopping rule and correction strategy for the EM reconstruction."""

    tol: float = 1e-10
    max_iter: int = 5000
    population_floor: float = 1e-12
    correction: str = "povm"

    def __post_init__(self) -> None:
        if self.correction not in ("povm", "invert"):
            raise ValueError(
                f"correction must be 'povm' or 'invert', got {self.correction!r}"
            )
        if self.tol <= 0 or self.max_iter < 1:
            raise ValueError("tol must be positive and max_iter at least 1")


@dataclass(frozen=True)
class ReconstructionResult:
    """Efficiency-corrected estimate plus the detector-level state and EM diagnostics."""

    state: FockDiagonalState
    raw_state: FockDiagonalState
    loglik_trace: np.ndarray
    iterations: int
    converged: bool
    bootstrap_sigmas: np.ndarray | None = None


def _em_step(q: np.ndarray, model: np.ndarray, counts: np.ndarray) -> np.ndarray:
    """One multiplicative EM update of the population vector."""
    cell_probs = np.clip(model @ q, _PROB_FLOOR, None)
    ratio = np.where(counts > 0, counts / cell_probs, 0.0)
    q = q * (model.T @ ratio) / counts.sum()
    return q / q.sum()


def _log_likelihood(q: np.ndarray, model: np.ndarray, counts: np.ndarray) -> float:
    cell_probs = np.clip(model @ q, _PROB_FLOOR, None)
    mask = counts > 0
    return float(counts[mask] @ np.log(cell_probs[mask]))


def mle_reconstruct(
    hist: BinnedHistogram,
    response: ResponseMatrix,
    options: ReconstructionOptions | None = None,
) -> ReconstructionResult:
    """Iterate EM from the uniform distribution until the log-likelihood stalls.

    Convergence means the relative log-likelihood change drops below the
    tolerance; running out of iterations flags the result instead of raising.
    With the default POVM correction the returned state is the pre-detection
    estimate and ``raw_state`` is its image under the detector loss, exactly.
    With ``correction='invert'`` the EM estimates the detector-level state
    directly and the corrected state is the (clipped) inverse loss map of it.
    """
    if options is None:
        options = ReconstructionOptions()
    if not np.array_equal(hist.edges, response.edges):
        raise ValueError("histogram and response matrix use different bin edges")
    counts = hist.cell_counts()
    if counts.sum() == 0:
        raise ValueError("histogram has no counts")

    model = response.cell_matrix(folded=options.correction == "povm")
    q = np.full(response.basis.levels, 1.0 / response.basis.levels)
    trace = [_log_likelihood(q, model, counts)]
    converged = False
    iterations = 0
    for _ in range(options.max_iter):
        q = _em_step(q, model, counts)
        iterations += 1
        loglik = _log_likelihood(q, model, counts)
        trace.append(loglik)
        if abs(loglik - trace[-2]) <= options.tol * abs(loglik):
            converged = True
            break

    q = np.where(q < options.population_floor, 0.0, q)
    q /= q.sum()
    if options.correction == "povm":
        state = FockDiagonalState(q, response.basis)
        raw_state = apply_loss(state, response.eta)
    else:
        raw_state = FockDiagonalState(q, response.basis)
        state = invert_loss(raw_state, response.eta)
    return ReconstructionResult(
        state=state,
        raw_state=raw_state,
        loglik_trace=np.asarray(trace),
        iterations=iterations,
        converged=converged,
    )


def bootstrap_errors(
    ds: QuadratureDataset,
    response: ResponseMatrix,
    options: ReconstructionOptions | None = None,
    n_resamples: int = 50,
    seed: int = 0,
) -> np.ndarray:
    """Per-population standard deviation over multinomial resamples of the data.

    Resampling acts on the binned record (the only thing the reconstruction
    sees), is deterministic per seed, and returns one sigma per photon number.
    """
    if n_resamples < 2:
        raise ValueError(f"need at least 2 resamples, got {n_resamples}")
    hist = bin_dataset(ds, response.edges)
    cells = hist.cell_counts()
    total = int(cells.sum())
    probabilities = cells / cells.sum()
    rng = np.random.default_rng(seed)
    estimates = np.empty((n_resamples, response.basis.levels))
    for i in range(n_resamples):
        drawn = rng.multinomial(total, probabilities)
        resampled = BinnedHistogram(
            hist.edges,
            drawn[1:-1],
            underflow=int(drawn[0]),
            overflow=int(drawn[-1]),
        )
        estimates[i] = mle_reconstruct(resampled, response, options).state.populations
    return estimates.std(axis=0, ddof=1)


def with_bootstrap(
    result: ReconstructionResult, sigmas: np.ndarray
) -> ReconstructionResult:
    return replace(result, bootstrap_sigmas=np.asarray(sigmas, dtype=float))


def format_report(result: ReconstructionResult) -> str:
    """Render a reconstruction as the machine-readable key = value report."""
    lines = [
        f"converged = {str(result.converged).lower()}",
        f"iterations = {result.iterations}",
        f"final_log_likelihood = {result.loglik_trace[-1]:.17g}",
        f"levels = {result.state.basis.levels}",
    ]
    for n, value in enumerate(result.state.populations):
        lines.append(f"population_{n} = {value:.17g}")
    for n, value in enumerate(result.raw_state.populations):
        lines.append(f"raw_population_{n} = {value:.17g}")
    if result.bootstrap_sigmas is not None:
        for n, value in enumerate(result.bootstrap_sigmas):
            lines.append(f"sigma_{n} = {value:.17g}")
    return "\n".join(lines) + "\n"


def parse_report(text: str) -> dict:
    """Parse ``format_report`` output back into typed values."""
    raw: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValueError(f"report line {lineno} is not 'key = value': {line!r}")
        raw[key.strip()] = value.strip()
    levels = int(raw["levels"])
    report = {
        "converged": raw["converged"] == "true",
        "iterations": int(raw["iterations"]),
        "final_log_likelihood": float(raw["final_log_likelihood"]),
        "levels": levels,
        "populations": np.array(
            [float(raw[f"population_{n}"]) for n in range(levels)]
        ),
        "raw_populations": np.array(
            [float(raw[f"raw_population_{n}"]) for n in range(levels)]
        ),
    }
    if "sigma_0" in raw:
        report["sigmas"] = np.array(
            [float(raw[f"sigma_{n}"]) for n in range(levels)]
        )
    return report
