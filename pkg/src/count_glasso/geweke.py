"""Joint-distribution consistency check for the whole sampler.

Two simulators target the same joint over (parameters, data):

* the marginal-conditional simulator draws parameters from their priors
  fresh every iteration (data need not even be drawn, as only parameter
  statistics are recorded);
* the successive-conditional simulator applies one full transition
  kernel sweep to the previous parameters given the current data, then
  redraws the data from the likelihood.

If every conditional in the kernel is correct, both produce the same
marginals, so standardized differences of the first two moments of
{omega_11, omega_12, lambda, mu_1, z_11} stay near zero.

The successive side runs as several independent replicate chains, each
initialized exactly at stationarity by a fresh prior draw, and the
standard error comes from the between-replicate spread. This matters
because the dispersity statistic is heavy-tailed (its variance is
driven by near-singular precision draws), so a single long chain pairs
rare-episode undersampling with an overconfident autocorrelation-based
standard error; independent replicates make the error estimate honest.

``lambda_shape_offset`` deliberately corrupts the shrinkage-rate
conditional so the harness itself can be validated.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bgl import _lambda_conditional, bgl_sweep, update_tau
from .distributions import RngStream, sample_gamma
from .errors import NumericError, ValidationError
from .model import ChainState, CountMatrix, Hyperparameters, PrecisionMatrix, RiskState
from .risk import risk_sweep

STATISTIC_NAMES = ("omega_11", "omega_12", "lambda", "mu_1", "z_11")

# Cap on the linear predictor when redrawing counts; e^40 is still far
# below the int64 Poisson limit and is astronomically rare under sane
# hyperparameters.
REDRAW_ETA_CAP = 40.0


def sample_precision_prior(A: int, lam: float, rng: RngStream,
                           max_tries: int = 100000) -> PrecisionMatrix:
    """Rejection draw from the graphical lasso prior over PD matrices.

    Off-diagonals are double-exponential(lam), diagonals exponential
    with rate lam/2; proposals are redrawn until positive definite.
    Practical for small A only (the PD acceptance rate decays quickly).
    """
    iu = np.triu_indices(A, k=1)
    for _ in range(max_tries):
        omega = np.zeros((A, A))
        offdiag = rng.gen.laplace(0.0, 1.0 / lam, size=iu[0].size)
        omega[iu] = offdiag
        omega = omega + omega.T
        omega[np.diag_indices(A)] = rng.gen.exponential(2.0 / lam, size=A)
        try:
            L = np.linalg.cholesky(omega)
        except np.linalg.LinAlgError:
            continue
        if np.all(np.diag(L) ** 2 > 1e-12):
            tau = np.ones((A, A)) - np.eye(A)
            return PrecisionMatrix(omega, tau, validate=False)
    raise NumericError(f"no PD prior draw in {max_tries} tries (A={A}, lambda={lam})")


def _draw_counts(mu: np.ndarray, z: np.ndarray, rng: RngStream) -> CountMatrix:
    eta = np.minimum(mu[None, :] + z, REDRAW_ETA_CAP)
    return CountMatrix(rng.gen.poisson(np.exp(eta)))


def _prior_state(h: Hyperparameters, A: int, T: int, rng: RngStream) -> ChainState:
    lam = sample_gamma(h.a_lambda, h.b_lambda, rng)
    precision = sample_precision_prior(A, lam, rng)
    precision = update_tau(precision, lam, h, rng)
    mu = rng.gen.standard_normal(A) * np.sqrt(h.sigma2_mu)
    cov = np.linalg.inv(precision.omega)
    L = np.linalg.cholesky(0.5 * (cov + cov.T))
    z = rng.gen.standard_normal((T, A)) @ L.T
    return ChainState(risk=RiskState(mu=mu, z=z), precision=precision, lam=lam)


def _stats_of(state: ChainState) -> tuple[float, float, float, float, float]:
    return (
        float(state.precision.omega[0, 0]),
        float(state.precision.omega[0, 1]),
        float(state.lam),
        float(state.risk.mu[0]),
        float(state.risk.z[0, 0]),
    )


@dataclass
class GewekeRow:
    statistic: str
    moment: int
    forward_mean: float
    successive_mean: float
    se: float
    z: float


@dataclass
class GewekeReport:
    rows: list[GewekeRow]
    draws: int

    @property
    def max_abs_z(self) -> float:
        return max(abs(r.z) for r in self.rows)

    def zscores(self) -> dict[tuple[str, int], float]:
        return {(r.statistic, r.moment): r.z for r in self.rows}

    def __str__(self) -> str:
        lines = [f"{'statistic':<10} {'moment':>6} {'forward':>14} {'successive':>14} {'z':>8}"]
        for r in self.rows:
            lines.append(
                f"{r.statistic:<10} {r.moment:>6d} {r.forward_mean:>14.6g} "
                f"{r.successive_mean:>14.6g} {r.z:>8.2f}"
            )
        lines.append(f"max |z| = {self.max_abs_z:.2f} over {self.draws} draws")
        return "\n".join(lines)


def geweke_check(cfg, A: int = 2, T: int = 3, draws: int = 100000,
                 lambda_shape_offset: float = 0.0,
                 replicates: int = 20) -> GewekeReport:
    """Run both simulators for ``draws`` iterations each and report the
    standardized moment differences (5 statistics x 2 moments).

    ``cfg`` is a RunConfig; only its hyperparameters and seed are used.
    The successive simulator splits its budget over ``replicates``
    independent chains (prior-initialized, so stationary from step one).
    """
    h = cfg.hyper
    if replicates < 2 or draws < 2 * replicates:
        raise ValidationError("need replicates >= 2 and draws >= 2 * replicates")
    rng_f = RngStream(cfg.seed, stream_id=700001)

    forward = np.empty((draws, 5))
    for k in range(draws):
        forward[k] = _stats_of(_prior_state(h, A, T, rng_f))

    per_chain = draws // replicates
    chain_means = np.empty((replicates, 5, 2))
    for r in range(replicates):
        rng_s = RngStream(cfg.seed, stream_id=700002 + r)
        state = _prior_state(h, A, T, rng_s)
        y = _draw_counts(state.risk.mu, state.risk.z, rng_s)
        stats_r = np.empty((per_chain, 5))
        for k in range(per_chain):
            state, _ = risk_sweep(y, state, h, rng_s)
            state = bgl_sweep(state.risk.z, state, h, rng_s)
            if lambda_shape_offset != 0.0:
                shape, rate = _lambda_conditional(state.precision, h)
                state = ChainState(risk=state.risk, precision=state.precision,
                                   lam=sample_gamma(shape + lambda_shape_offset, rate, rng_s),
                                   log_post=np.nan)
            y = _draw_counts(state.risk.mu, state.risk.z, rng_s)
            stats_r[k] = _stats_of(state)
        chain_means[r, :, 0] = stats_r.mean(axis=0)
        chain_means[r, :, 1] = (stats_r ** 2).mean(axis=0)

    rows = []
    for j, name in enumerate(STATISTIC_NAMES):
        for moment in (1, 2):
            f = forward[:, j] ** moment
            s_means = chain_means[:, j, moment - 1]
            m_s = float(s_means.mean())
            se = float(np.sqrt(
                f.var(ddof=1) / draws + s_means.var(ddof=1) / replicates
            ))
            z = (float(f.mean()) - m_s) / se if se > 0 else 0.0
            rows.append(GewekeRow(name, moment, float(f.mean()), m_s, se, float(z)))
    return GewekeReport(rows=rows, draws=draws)
