"""Trace storage, MAP selection, credible intervals, partial correlations,
edge thresholding and chain diagnostics.

Conventions fixed here (and echoed in the README):

* The MAP sample is the retained state with the highest unnormalized log
  joint, ties broken by the smallest index.
* Credible intervals are equal-tailed quantile intervals with linear
  interpolation at zero-based position ``(n - 1) p``; highest-posterior-
  density intervals (shortest window over the sorted draws) are an
  option.
* The diagonal of the partial-correlation matrix is set to 1 by
  convention (the off-diagonal formula would give -1 there).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .errors import ValidationError
from .model import ChainState, Hyperparameters, PrecisionMatrix


@dataclass
class Trace:
    """Retained chain states plus per-block acceptance bookkeeping.

    ``proposals``, ``accepted`` and ``newton_failures`` each have one
    entry per block: index 0 is mu, index 1 + t is the z_t row.
    """

    samples: list[ChainState]
    proposals: np.ndarray
    accepted: np.ndarray
    newton_failures: np.ndarray
    config_echo: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.samples)

    def acceptance_rates(self) -> np.ndarray:
        with np.errstate(invalid="ignore"):
            return np.where(self.proposals > 0, self.accepted / self.proposals, np.nan)


@dataclass
class EdgeSet:
    """Thresholded partial-correlation edges (i < j), strongest first."""

    edges: list[tuple[int, int, float]]
    q: float

    def __len__(self) -> int:
        return len(self.edges)

    def __iter__(self):
        return iter(self.edges)


def partial_correlation(precision: PrecisionMatrix | np.ndarray) -> np.ndarray:
    """Partial correlations ``p_ij = -omega_ij / sqrt(omega_ii omega_jj)``.

    Diagonal entries are set to 1 by convention.
    """
    omega = precision.omega if isinstance(precision, PrecisionMatrix) else np.asarray(precision, dtype=float)
    d = np.sqrt(np.diag(omega))
    p = -omega / np.outer(d, d)
    np.fill_diagonal(p, 1.0)
    return p


def map_sample(trace: Trace) -> tuple[int, ChainState]:
    """Index and state of the retained sample with the highest log joint."""
    if len(trace) == 0:
        raise ValidationError("trace is empty")
    logs = np.array([s.log_post for s in trace.samples])
    idx = int(np.argmax(logs))
    return idx, trace.samples[idx]


def credible_interval(values: Iterable[float], level: float) -> tuple[float, float]:
    """Equal-tailed interval at quantiles (1-level)/2 and 1-(1-level)/2."""
    if not 0.0 < level < 1.0:
        raise ValidationError(f"level must be in (0, 1), got {level}")
    v = np.asarray(list(values) if not isinstance(values, np.ndarray) else values, dtype=float)
    if v.size < 2:
        raise ValidationError(f"need at least 2 draws, got {v.size}")
    alpha = 0.5 * (1.0 - level)
    lo, hi = np.quantile(v, [alpha, 1.0 - alpha], method="linear")
    return float(lo), float(hi)


def hpd_interval(values: Iterable[float], level: float) -> tuple[float, float]:
    """Highest-posterior-density interval: shortest window over sorted draws."""
    if not 0.0 < level < 1.0:
        raise ValidationError(f"level must be in (0, 1), got {level}")
    v = np.sort(np.asarray(list(values) if not isinstance(values, np.ndarray) else values, dtype=float))
    n = v.size
    if n < 2:
        raise ValidationError(f"need at least 2 draws, got {n}")
    m = max(2, int(math.ceil(level * n)))
    if m >= n:
        return float(v[0]), float(v[-1])
    widths = v[m - 1:] - v[: n - m + 1]
    k = int(np.argmin(widths))
    return float(v[k]), float(v[k + m - 1])


def threshold_top_q(p: np.ndarray, q: float) -> EdgeSet:
    """Keep the ``ceil(q A(A-1)/2)`` strongest upper-triangle entries of a
    partial-correlation matrix, ranked by absolute value, ties broken by
    (i, j) lexicographic order."""
    p = np.asarray(p, dtype=float)
    if p.ndim != 2 or p.shape[0] != p.shape[1]:
        raise ValidationError(f"expected square matrix, got {p.shape}")
    if not 0.0 < q <= 1.0:
        raise ValidationError(f"q must be in (0, 1], got {q}")
    A = p.shape[0]
    iu, ju = np.triu_indices(A, k=1)
    m = iu.size
    # small slack so q * m landing a float ulp above an integer does not
    # add a spurious edge
    n_keep = int(math.ceil(q * m - 1e-9))
    weights = p[iu, ju]
    order = sorted(range(m), key=lambda k: (-abs(weights[k]), iu[k], ju[k]))
    edges = [(int(iu[k]), int(ju[k]), float(weights[k])) for k in order[:n_keep]]
    return EdgeSet(edges=edges, q=q)


def effective_sample_size(x: np.ndarray) -> float:
    """Crude ESS from the initial-positive-sequence autocovariance rule.

    Autocovariances are summed in adjacent pairs until a pair goes
    non-positive; iid input gives an estimate close to n.
    """
    x = np.asarray(x, dtype=float)
    n = x.size
    if n < 4:
        return float(n)
    xc = x - x.mean()
    var0 = float(xc @ xc) / n
    if var0 == 0.0:
        return float(n)
    # autocovariance via FFT
    nfft = 1 << int(n * 2 - 1).bit_length()
    f = np.fft.rfft(xc, nfft)
    acov = np.fft.irfft(f * np.conjugate(f), nfft)[:n].real / n
    sigma2 = -acov[0]
    for m in range(0, n // 2 - 1):
        pair = acov[2 * m] + acov[2 * m + 1]
        if pair <= 0.0:
            break
        sigma2 += 2.0 * pair
    if sigma2 <= 0.0:
        return float(n)
    return float(min(n, n * acov[0] / sigma2))


@dataclass
class SummaryRow:
    param: str
    index: int
    map: float
    mean: float
    lo: float
    hi: float
    ess: float


@dataclass
class Summary:
    """Per-scalar posterior summary plus per-block acceptance rates."""

    rows: list[SummaryRow]
    level: float
    acceptance: dict[str, float]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["param", "index", "map", "mean", "lo", "hi", "ess"])
            for r in self.rows:
                w.writerow([r.param, r.index, repr(r.map), repr(r.mean),
                            repr(r.lo), repr(r.hi), repr(r.ess)])

    def select(self, param: str) -> list[SummaryRow]:
        return [r for r in self.rows if r.param == param]


def summarize(trace: Trace, level: float, interval: str = "eq") -> Summary:
    """Summarize every scalar parameter: MAP value, posterior mean,
    credible interval at ``level`` and a crude ESS.

    Row layout: ``mu`` indexed by i, ``z`` by the row-major flat index
    t * A + i, ``omega`` by the row-major upper-triangle (i <= j) flat
    position, then a single ``lambda`` row.
    """
    if len(trace) == 0:
        raise ValidationError("trace is empty")
    _, map_state = map_sample(trace)
    mu = np.stack([s.risk.mu for s in trace.samples])
    z = np.stack([s.risk.z for s in trace.samples])
    omega = np.stack([s.precision.omega for s in trace.samples])
    lam = np.array([s.lam for s in trace.samples])
    A = mu.shape[1]
    T = z.shape[1]
    iu, ju = np.triu_indices(A)
    omega_flat = omega[:, iu, ju]
    map_omega_flat = map_state.precision.omega[iu, ju]

    return summarize_arrays(
        mu=mu, z=z, omega_ut=omega_flat, lam=lam,
        map_mu=map_state.risk.mu, map_z=map_state.risk.z,
        map_omega_ut=map_omega_flat, map_lam=map_state.lam,
        level=level, interval=interval, T=T, A=A,
        acceptance=_acceptance_dict(trace),
    )


def _acceptance_dict(trace: Trace) -> dict[str, float]:
    rates = trace.acceptance_rates()
    names = ["mu"] + [f"z_{t}" for t in range(len(rates) - 1)]
    return dict(zip(names, (float(r) for r in rates)))


def _interval_fn(interval: str):
    if interval == "eq":
        return credible_interval
    if interval == "hpd":
        return hpd_interval
    raise ValidationError(f"unknown interval type {interval!r} (expected 'eq' or 'hpd')")


def summarize_arrays(mu, z, omega_ut, lam, map_mu, map_z, map_omega_ut, map_lam,
                     level, interval, T, A, acceptance) -> Summary:
    """Array-level worker behind :func:`summarize`; also serves persisted
    traces, where the dispersity samples (``z``) may be absent."""
    ci = _interval_fn(interval)
    if not 0.0 < level < 1.0:
        raise ValidationError(f"level must be in (0, 1), got {level}")
    rows: list[SummaryRow] = []

    def add(param, index, draws, map_value):
        lo, hi = ci(draws, level)
        rows.append(SummaryRow(param, index, float(map_value), float(np.mean(draws)),
                               lo, hi, effective_sample_size(draws)))

    for i in range(A):
        add("mu", i, mu[:, i], map_mu[i])
    if z is not None:
        for t in range(T):
            for i in range(A):
                add("z", t * A + i, z[:, t, i], map_z[t, i])
    for k in range(omega_ut.shape[1]):
        add("omega", k, omega_ut[:, k], map_omega_ut[k])
    add("lambda", 0, lam, map_lam)
    return Summary(rows=rows, level=level, acceptance=acceptance)
