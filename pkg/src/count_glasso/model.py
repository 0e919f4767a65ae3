"""Domain types and the unnormalized log joint posterior.

The model: counts ``y_ti`` are conditionally independent Poisson with
log rate ``eta_ti = mu_i + z_ti``. The averaged potential risks ``mu``
carry an isotropic Gaussian prior, the dispersity rows ``z_t`` are
Gaussian with precision ``Omega``, and ``Omega`` carries a graphical
lasso prior (double-exponential off-diagonals, exponential diagonals,
truncated to positive-definite matrices) with shrinkage rate ``lambda``
that itself has a Gamma prior.

Constant convention for the log joint: every factor is evaluated with
its exact closed-form normalizer, except the precision prior where the
intractable positive-definite truncation mass is dropped. The dropped
mass depends on ``lambda`` only through the truncation and cancels in
every Metropolis ratio and Gibbs conditional used by the sampler.
"""

from __future__ import annotations

from dataclasses import InitVar, dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.special import gammaln

from .errors import NumericError, ValidationError

# Cholesky pivot threshold (absolute) below which a matrix is treated as
# not positive definite; below typical sampler noise.
PD_PIVOT_TOL = 1e-12

# Relative symmetry tolerance for matrix inputs.
SYMMETRY_RTOL = 1e-10


def _check_symmetric(m: np.ndarray, name: str = "matrix") -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValidationError(f"{name} must be square, got shape {m.shape}")
    scale = max(1.0, float(np.max(np.abs(m))))
    diff = np.abs(m - m.T)
    if np.max(diff) > SYMMETRY_RTOL * scale:
        i, j = np.unravel_index(int(np.argmax(diff)), diff.shape)
        raise ValidationError(
            f"{name} is not symmetric: entry ({i}, {j}) = {m[i, j]!r} "
            f"vs ({j}, {i}) = {m[j, i]!r}"
        )
    return m


def validate_positive_definite(m: np.ndarray) -> bool:
    """True iff the symmetric matrix ``m`` admits a Cholesky factorization
    with every pivot above ``PD_PIVOT_TOL``.

    Raises ValidationError for non-square or asymmetric input.
    """
    m = _check_symmetric(m)
    try:
        L = np.linalg.cholesky(m)
    except np.linalg.LinAlgError:
        return False
    return bool(np.all(np.diag(L) ** 2 > PD_PIVOT_TOL))


@dataclass
class CountMatrix:
    """T x A matrix of non-negative integer event counts."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 2:
            raise ValidationError(f"counts must be 2-D, got shape {v.shape}")
        if not np.issubdtype(v.dtype, np.integer):
            if not np.all(np.isfinite(v)) or np.any(v != np.floor(v)):
                raise ValidationError("counts must be integers")
            v = v.astype(np.int64)
        if np.any(v < 0):
            t, i = np.argwhere(v < 0)[0]
            raise ValidationError(f"negative count {v[t, i]} at row {t}, column {i}")
        if v.shape[0] < 1 or v.shape[1] < 1:
            raise ValidationError(f"counts must have T >= 1 and A >= 1, got {v.shape}")
        self.values = v

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def A(self) -> int:
        return self.values.shape[1]


@dataclass
class RiskState:
    """Averaged potential risks ``mu`` and dispersity rows ``z``."""

    mu: np.ndarray
    z: np.ndarray

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=float)
        self.z = np.asarray(self.z, dtype=float)
        if self.mu.ndim != 1 or self.z.ndim != 2 or self.z.shape[1] != self.mu.shape[0]:
            raise ValidationError(
                f"incompatible risk shapes: mu {self.mu.shape}, z {self.z.shape}"
            )
        if not (np.all(np.isfinite(self.mu)) and np.all(np.isfinite(self.z))):
            raise ValidationError("risk state entries must be finite")


@dataclass
class PrecisionMatrix:
    """Symmetric PD precision matrix with latent off-diagonal scales.

    ``tau`` is stored as a full symmetric A x A array with zero diagonal;
    only the upper triangle (i < j) is meaningful.
    """

    omega: np.ndarray
    tau: np.ndarray
    validate: InitVar[bool] = True

    def __post_init__(self, validate: bool):
        self.omega = np.asarray(self.omega, dtype=float)
        self.tau = np.asarray(self.tau, dtype=float)
        if self.tau.shape != self.omega.shape:
            raise ValidationError(
                f"tau shape {self.tau.shape} does not match omega shape {self.omega.shape}"
            )
        if validate:
            if not validate_positive_definite(self.omega):
                raise ValidationError("omega must be symmetric positive definite")
            iu = np.triu_indices(self.A, k=1)
            if self.A > 1 and np.any(self.tau[iu] <= 0):
                raise ValidationError("all tau entries (i < j) must be positive")

    @property
    def A(self) -> int:
        return self.omega.shape[0]

    @classmethod
    def identity(cls, A: int) -> "PrecisionMatrix":
        return cls(np.eye(A), np.ones((A, A)) - np.eye(A), validate=False)


@dataclass
class Hyperparameters:
    """Prior and sampler hyperparameters; all strictly positive."""

    a_lambda: float = 1.0
    b_lambda: float = 0.01
    sigma2_mu: float = 0.05
    nu: float = 5.0
    newton_tol: float = 1e-8
    newton_max_iter: int = 50
    omega_eps: float = 1e-8

    def __post_init__(self):
        for name in ("a_lambda", "b_lambda", "sigma2_mu", "nu", "newton_tol",
                     "newton_max_iter", "omega_eps"):
            v = getattr(self, name)
            if not v > 0:
                raise ValidationError(f"hyperparameter {name} must be positive, got {v}")
        self.newton_max_iter = int(self.newton_max_iter)


@dataclass
class ChainState:
    """One full MCMC state with its unnormalized log joint value."""

    risk: RiskState
    precision: PrecisionMatrix
    lam: float
    log_post: float = field(default=np.nan)

    def __post_init__(self):
        if not self.lam > 0:
            raise ValidationError(f"lambda must be positive, got {self.lam}")


class LogJointParts(NamedTuple):
    """Per-factor decomposition of the log joint posterior."""

    poisson: float
    mu_prior: float
    z_prior: float
    omega_prior: float
    lambda_prior: float

    @property
    def total(self) -> float:
        return float(sum(self))


def precision_block_terms(z: np.ndarray, omega: np.ndarray, lam: float,
                          h: Hyperparameters) -> tuple[float, float, float]:
    """The three log-joint factors that involve (Omega, lambda): the
    Gaussian dispersity prior, the precision prior, and the lambda prior.

    Raises NumericError when omega is outside the PD support so the
    out-of-support case is an explicit signal, never a silent NaN.
    """
    z = np.asarray(z, dtype=float)
    T, A = z.shape
    try:
        L = np.linalg.cholesky(omega)
    except np.linalg.LinAlgError as exc:
        raise NumericError("omega is not positive definite; log joint is -inf") from exc
    logdet = 2.0 * float(np.sum(np.log(np.diag(L))))

    quad = float(np.einsum("ti,ij,tj->", z, omega, z))
    z_prior = float(0.5 * T * logdet - 0.5 * T * A * np.log(2.0 * np.pi) - 0.5 * quad)

    iu = np.triu_indices(A, k=1)
    off_l1 = float(np.sum(np.abs(omega[iu])))
    diag_sum = float(np.trace(omega))
    n_entries = A * (A + 1) / 2.0
    omega_prior = float(n_entries * np.log(lam / 2.0) - lam * (off_l1 + 0.5 * diag_sum))

    a, b = h.a_lambda, h.b_lambda
    lambda_prior = float(a * np.log(b) - gammaln(a) + (a - 1.0) * np.log(lam) - b * lam)
    return z_prior, omega_prior, lambda_prior


def log_joint_parts(y: CountMatrix, s: ChainState, h: Hyperparameters) -> LogJointParts:
    """Evaluate each factor of the log joint posterior separately."""
    yv = y.values
    mu, z = s.risk.mu, s.risk.z
    T, A = yv.shape
    if mu.shape[0] != A or z.shape != (T, A):
        raise ValidationError(
            f"state shapes (mu {mu.shape}, z {z.shape}) do not match counts {yv.shape}"
        )
    eta = mu[None, :] + z
    with np.errstate(over="ignore"):
        rates = np.exp(eta)
    poisson = float(np.sum(yv * eta - rates) - np.sum(gammaln(yv + 1.0)))

    s2 = h.sigma2_mu
    mu_prior = float(-0.5 * A * np.log(2.0 * np.pi * s2) - 0.5 * (mu @ mu) / s2)

    z_prior, omega_prior, lambda_prior = precision_block_terms(
        z, s.precision.omega, s.lam, h
    )
    return LogJointParts(poisson, mu_prior, z_prior, omega_prior, lambda_prior)


def log_joint(y: CountMatrix, s: ChainState, h: Hyperparameters) -> float:
    """Unnormalized log joint posterior of (mu, Z, Omega, lambda) given y."""
    return log_joint_parts(y, s, h).total
