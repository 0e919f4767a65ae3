"""Block Gibbs updates for the precision matrix, its latent scales and
the shrinkage rate, given the latent Gaussian matrix Z.

The double-exponential off-diagonal prior is augmented with latent
scales tau (a scale mixture of Gaussians), which makes every update an
exact conditional draw:

* ``1/tau_ij`` is inverse-Gaussian,
* each column of Omega, given the rest, splits into a Gaussian block
  ``beta`` and a shifted-Gamma diagonal entry, so positive definiteness
  holds by construction,
* ``lambda`` is conjugate Gamma.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .distributions import RngStream, sample_gamma, sample_inverse_gaussian_many
from .errors import NumericError, ValidationError
from .model import (
    ChainState,
    Hyperparameters,
    PrecisionMatrix,
    RiskState,
    precision_block_terms,
)


@dataclass
class ScatterMatrix:
    """Cross-product matrix Z'Z with the number of contributing rows."""

    s: np.ndarray
    n: int

    def __post_init__(self):
        self.s = np.asarray(self.s, dtype=float)
        if self.s.ndim != 2 or self.s.shape[0] != self.s.shape[1]:
            raise ValidationError(f"scatter must be square, got {self.s.shape}")
        if self.n < 1:
            raise ValidationError(f"scatter needs n >= 1 rows, got {self.n}")

    @classmethod
    def from_rows(cls, z: np.ndarray) -> "ScatterMatrix":
        z = np.asarray(z, dtype=float)
        return cls(s=z.T @ z, n=z.shape[0])


def update_tau(precision: PrecisionMatrix, lam: float, h: Hyperparameters,
               rng: RngStream) -> PrecisionMatrix:
    """Redraw every latent scale: ``1/tau_ij ~ InvGauss(lambda/|omega_ij|, lambda^2)``.

    ``|omega_ij|`` is clamped below at ``h.omega_eps`` so the mean stays
    finite when an off-diagonal entry lands at zero.
    """
    if lam <= 0:
        raise ValidationError(f"lambda must be positive, got {lam}")
    A = precision.A
    if A < 2:
        return PrecisionMatrix(precision.omega.copy(), precision.tau.copy(), validate=False)
    iu = np.triu_indices(A, k=1)
    absw = np.maximum(np.abs(precision.omega[iu]), h.omega_eps)
    u = sample_inverse_gaussian_many(lam / absw, lam * lam, rng)
    tau = np.zeros((A, A))
    tau[iu] = 1.0 / u
    tau = tau + tau.T
    return PrecisionMatrix(precision.omega.copy(), tau, validate=False)


def update_omega_column(i: int, scatter: ScatterMatrix, precision: PrecisionMatrix,
                        lam: float, rng: RngStream) -> PrecisionMatrix:
    """Exact conditional draw of column/row ``i`` of Omega.

    With the partition about index i (subscript 1 for the rest, 2 for i):
    ``beta ~ N(-C s_12, C)`` where ``C = ((s_ii + lambda) Omega_11^{-1}
    + diag(1/tau_12))^{-1}``, ``gamma ~ Gamma(n/2 + 1, (s_ii+lambda)/2)``,
    and ``omega_ii = gamma + beta' Omega_11^{-1} beta``.
    """
    omega = np.array(precision.omega)
    tau = precision.tau
    A = omega.shape[0]
    if not 0 <= i < A:
        raise ValidationError(f"column index {i} out of range for A={A}")
    s = scatter.s
    rest = np.r_[0:i, i + 1:A]
    s_ii = float(s[i, i])
    rate = 0.5 * (s_ii + lam)

    if A == 1:
        gamma = sample_gamma(0.5 * scatter.n + 1.0, rate, rng)
        omega[0, 0] = gamma
        return PrecisionMatrix(omega, tau.copy(), validate=False)

    omega11 = omega[np.ix_(rest, rest)]
    try:
        omega11_inv = np.linalg.inv(omega11)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"Omega_11 singular while updating column {i}: {exc}") from exc
    omega11_inv = 0.5 * (omega11_inv + omega11_inv.T)

    c_inv = (s_ii + lam) * omega11_inv + np.diag(1.0 / tau[rest, i])
    try:
        Lc = np.linalg.cholesky(np.linalg.inv(0.5 * (c_inv + c_inv.T)))
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"conditional covariance not SPD at column {i}: {exc}") from exc
    mean = -(Lc @ Lc.T) @ s[rest, i]
    beta = mean + Lc @ rng.gen.standard_normal(A - 1)
    gamma = sample_gamma(0.5 * scatter.n + 1.0, rate, rng)

    omega[rest, i] = beta
    omega[i, rest] = beta
    omega[i, i] = gamma + float(beta @ omega11_inv @ beta)
    return PrecisionMatrix(omega, tau.copy(), validate=False)


def _lambda_conditional(precision: PrecisionMatrix, h: Hyperparameters):
    """Shape and rate of the Gamma full conditional of lambda."""
    A = precision.A
    iu = np.triu_indices(A, k=1)
    shape = h.a_lambda + A * (A + 1) / 2.0
    rate = h.b_lambda + float(np.sum(np.abs(precision.omega[iu]))) + 0.5 * float(np.trace(precision.omega))
    return shape, rate


def update_lambda(precision: PrecisionMatrix, h: Hyperparameters, rng: RngStream) -> float:
    """Conjugate draw: Gamma(a + A(A+1)/2, b + sum_{i<j}|omega_ij| + tr(Omega)/2)."""
    shape, rate = _lambda_conditional(precision, h)
    return sample_gamma(shape, rate, rng)


def bgl_sweep(z: np.ndarray, state: ChainState, h: Hyperparameters,
              rng: RngStream) -> ChainState:
    """One full pass: tau, then every Omega column in ascending order, then lambda.

    The log joint is refreshed incrementally: only the dispersity-prior,
    precision-prior and lambda-prior factors involve (Omega, lambda), so
    the update replaces those three terms in the incoming ``log_post``.
    A non-finite incoming ``log_post`` stays NaN for the caller to set.
    """
    z = np.asarray(z, dtype=float)
    scatter = ScatterMatrix.from_rows(z)
    precision = update_tau(state.precision, state.lam, h, rng)
    for i in range(precision.A):
        precision = update_omega_column(i, scatter, precision, state.lam, rng)
    lam = update_lambda(precision, h, rng)
    new_state = ChainState(
        risk=RiskState(mu=state.risk.mu, z=z),
        precision=precision,
        lam=lam,
    )
    if np.isfinite(state.log_post):
        old_terms = precision_block_terms(z, state.precision.omega, state.lam, h)
        new_terms = precision_block_terms(z, precision.omega, lam, h)
        new_state.log_post = state.log_post - sum(old_terms) + sum(new_terms)
    return new_state
