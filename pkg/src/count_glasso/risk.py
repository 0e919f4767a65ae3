"""Metropolis-Hastings updates for the potential-risk parameters.

Each block (the vector ``mu``, and every dispersity row ``z_t``) is
updated at once: Newton-Raphson locates the mode of the block's log
full conditional, a multivariate-t proposal centered at that mode with
scale ``(-H)^{-1}`` supplies the candidate, and the usual acceptance
ratio decides. Both conditionals are strictly concave, so the Newton
mode is the unique maximum regardless of the starting point; the
proposal therefore does not depend on the current state and the
acceptance ratio uses the full t densities on both sides.

The ``z_t`` blocks are conditionally independent given ``(mu, Omega)``
and are updated as one vectorized batch; draw order is fixed (all
normals, all chi-squares, all uniforms) so replays are deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .distributions import (
    MvtProposal,
    RngStream,
    logpdf_mvt,
    logpdf_mvt_batch,
    sample_mvt,
    sample_mvt_batch,
)
from .errors import NumericError, ValidationError
from .model import ChainState, CountMatrix, Hyperparameters, PrecisionMatrix, RiskState, log_joint

# Linear-predictor cap applied inside exp() during line search only;
# keeps trial evaluations finite for extreme steps.
ETA_CAP = 50.0

# Maximum number of step halvings per Newton iteration.
MAX_HALVINGS = 30

# When the Newton decrement predicts a gain below this (relative to the
# value scale), value comparisons are all float noise: skip the line
# search and take the full step, which is a pure refinement step there.
TINY_GAIN = 1e-11


@dataclass
class ConditionalEval:
    """Log conditional value with its gradient and (negative-definite) Hessian."""

    value: float
    gradient: np.ndarray
    hessian: np.ndarray


@dataclass
class MhOutcome:
    """Result of one Metropolis-Hastings block update."""

    state: np.ndarray
    accepted: bool
    log_ratio: float


def mu_conditional(mu: np.ndarray, y: CountMatrix, z: np.ndarray, sigma2_mu: float,
                   clamp: bool = False) -> ConditionalEval:
    """Log full conditional of ``mu`` (up to mu-free constants).

    value    = sum_{t,i} [y_ti (mu_i + z_ti) - exp(mu_i + z_ti)] - |mu|^2 / (2 s2)
    gradient = sum_t (y_ti - exp(mu_i + z_ti)) - mu_i / s2
    hessian  = diag(-sum_t exp(mu_i + z_ti) - 1 / s2)
    """
    mu = np.asarray(mu, dtype=float)
    yv = y.values
    eta = mu[None, :] + z
    with np.errstate(over="ignore"):
        rates = np.exp(np.minimum(eta, ETA_CAP)) if clamp else np.exp(eta)
    value = float(np.sum(yv * eta - rates) - 0.5 * (mu @ mu) / sigma2_mu)
    gradient = np.sum(yv - rates, axis=0) - mu / sigma2_mu
    hessian = np.diag(-np.sum(rates, axis=0) - 1.0 / sigma2_mu)
    return ConditionalEval(value, gradient, hessian)


def z_conditional(z_t: np.ndarray, y_t: np.ndarray, mu: np.ndarray,
                  precision: PrecisionMatrix, clamp: bool = False) -> ConditionalEval:
    """Log full conditional of one dispersity row ``z_t`` (up to constants).

    value    = sum_i [y_ti (mu_i + z_ti) - exp(mu_i + z_ti)] - z_t' Omega z_t / 2
    gradient = (y_t - exp(mu + z_t)) - Omega z_t
    hessian  = -diag(exp(mu + z_t)) - Omega
    """
    z_t = np.asarray(z_t, dtype=float)
    y_t = np.asarray(y_t, dtype=float)
    omega = precision.omega
    eta = mu + z_t
    with np.errstate(over="ignore"):
        rates = np.exp(np.minimum(eta, ETA_CAP)) if clamp else np.exp(eta)
    oz = omega @ z_t
    value = float(y_t @ eta - np.sum(rates) - 0.5 * (z_t @ oz))
    gradient = y_t - rates - oz
    hessian = -np.diag(rates) - omega
    return ConditionalEval(value, gradient, hessian)


def newton_mode(eval_fn, start: np.ndarray, h: Hyperparameters):
    """Maximize a concave conditional by damped Newton-Raphson.

    Iterates ``x <- x - t H^{-1} g`` with step halving until the gradient
    sup-norm drops below ``h.newton_tol``. Returns ``(mode, hessian)``.
    Line-search evaluations are clamp-guarded against exp overflow.
    """
    x = np.atleast_1d(np.asarray(start, dtype=float)).copy()
    ev = eval_fn(x)
    gnorm = float(np.max(np.abs(ev.gradient)))
    for _ in range(h.newton_max_iter):
        if gnorm <= h.newton_tol:
            return x, ev.hessian
        if not np.all(np.isfinite(ev.gradient)):
            break
        step = np.linalg.solve(ev.hessian, ev.gradient)
        gain = -0.5 * float(ev.gradient @ step)
        if gain <= TINY_GAIN * (1.0 + abs(ev.value)):
            x = x - step
            ev = eval_fn(x)
        else:
            t = 1.0
            moved = False
            for k in range(MAX_HALVINGS + 1):
                cand = x - t * step
                ev_try = eval_fn(cand, clamp=True)
                if ev_try.value >= ev.value or (k == MAX_HALVINGS and np.isfinite(ev_try.value)):
                    x, ev = cand, ev_try
                    moved = True
                    break
                t *= 0.5
            if not moved:
                break
        gnorm = float(np.max(np.abs(ev.gradient)))
    if gnorm <= h.newton_tol:
        return x, ev.hessian
    raise NumericError(
        f"Newton did not converge in {h.newton_max_iter} iterations "
        f"(last gradient sup-norm {gnorm:.3e})"
    )


def mh_update(current: np.ndarray, eval_fn, h: Hyperparameters, rng: RngStream) -> MhOutcome:
    """One mode-centered multivariate-t Metropolis-Hastings update.

    log r = [value(x') + log q(x)] - [value(x) + log q(x')] with q the
    t proposal centered at the Newton mode; Newton failures propagate.
    """
    current = np.atleast_1d(np.asarray(current, dtype=float))
    if not np.all(np.isfinite(current)):
        raise ValidationError("current state must be finite")
    mode, hess = newton_mode(eval_fn, current, h)
    scale = np.linalg.inv(-hess)
    proposal = MvtProposal(mode, scale, h.nu)
    candidate = sample_mvt(proposal, rng)
    v_cand = eval_fn(candidate).value
    v_cur = eval_fn(current).value
    log_r = (v_cand + logpdf_mvt(current, proposal)) - (v_cur + logpdf_mvt(candidate, proposal))
    u = rng.gen.uniform()
    accepted = bool(np.log(u) < log_r)
    state = candidate if accepted else current.copy()
    return MhOutcome(state=state, accepted=accepted, log_ratio=float(log_r))


@dataclass
class RiskSweepStats:
    """Per-block bookkeeping for one sweep: block 0 is mu, block 1+t is z_t."""

    accepted: np.ndarray
    newton_failed: np.ndarray

    @property
    def n_blocks(self) -> int:
        return self.accepted.shape[0]


def risk_sweep(y: CountMatrix, state: ChainState, h: Hyperparameters, rng: RngStream):
    """Update mu, then every z_t, and refresh the log joint.

    Returns ``(new_state, RiskSweepStats)`` with one acceptance flag per
    block (1 + T blocks). A block whose Newton mode search fails keeps
    its state and is flagged in ``newton_failed``.
    """
    yv = y.values
    T = yv.shape[0]
    accepted = np.zeros(1 + T, dtype=bool)
    failed = np.zeros(1 + T, dtype=bool)
    z = state.risk.z
    omega = state.precision.omega

    def mu_eval(x, clamp=False):
        return mu_conditional(x, y, z, h.sigma2_mu, clamp=clamp)

    try:
        out = mh_update(state.risk.mu, mu_eval, h, rng)
        mu_new = out.state
        accepted[0] = out.accepted
    except NumericError:
        mu_new = state.risk.mu.copy()
        failed[0] = True

    z_new, z_acc, z_fail = _z_rows_update(z, yv, mu_new, omega, h, rng)
    accepted[1:] = z_acc
    failed[1:] = z_fail

    new_state = ChainState(
        risk=RiskState(mu=mu_new, z=z_new),
        precision=state.precision,
        lam=state.lam,
    )
    new_state.log_post = log_joint(y, new_state, h)
    return new_state, RiskSweepStats(accepted=accepted, newton_failed=failed)


# ---------------------------------------------------------------------------
# Vectorized z-row machinery. Rows are conditionally independent given
# (mu, Omega), so all Newton searches and proposals run as one batch.
# ---------------------------------------------------------------------------

def _z_batch_eval(Z, yv, mu, omega, clamp):
    """Values, gradients and Poisson rates for a batch of z rows."""
    eta = mu[None, :] + Z
    with np.errstate(over="ignore"):
        rates = np.exp(np.minimum(eta, ETA_CAP)) if clamp else np.exp(eta)
    OZ = Z @ omega
    values = np.sum(yv * eta - rates, axis=1) - 0.5 * np.sum(Z * OZ, axis=1)
    grads = yv - rates - OZ
    return values, grads, rates


def _z_batch_newton(Z0, yv, mu, omega, h: Hyperparameters):
    """Row-wise damped Newton; returns modes, rates at modes, start values
    and a per-row failure mask."""
    Z = np.array(Z0, dtype=float)
    m, A = Z.shape
    values, grads, rates = _z_batch_eval(Z, yv, mu, omega, clamp=False)
    start_values = values.copy()
    finite = np.all(np.isfinite(grads), axis=1)
    converged = np.zeros(m, dtype=bool)
    converged[finite] = np.max(np.abs(grads[finite]), axis=1) <= h.newton_tol
    stuck = ~finite

    for _ in range(h.newton_max_iter):
        act = np.flatnonzero(~converged & ~stuck)
        if act.size == 0:
            break
        H = np.broadcast_to(-omega, (act.size, A, A)).copy()
        idx = np.arange(A)
        H[:, idx, idx] -= rates[act]
        steps = np.linalg.solve(H, grads[act][..., None])[..., 0]

        # refinement rows: predicted gain below float resolution of the
        # value, so take the full step without a line search
        gains = -0.5 * np.einsum("ki,ki->k", grads[act], steps)
        refine = gains <= TINY_GAIN * (1.0 + np.abs(values[act]))
        if refine.any():
            rows = act[refine]
            cand = Z[rows] - steps[refine]
            v_c, g_c, r_c = _z_batch_eval(cand, yv[rows], mu, omega, clamp=False)
            Z[rows] = cand
            values[rows] = v_c
            grads[rows] = g_c
            rates[rows] = r_c

        search = np.flatnonzero(~refine)
        t = np.ones(act.size)
        pending = np.zeros(act.size, dtype=bool)
        pending[search] = True
        for k in range(MAX_HALVINGS + 1):
            rem = np.flatnonzero(pending)
            if rem.size == 0:
                break
            rows = act[rem]
            cand = Z[rows] - t[rem, None] * steps[rem]
            v_c, g_c, r_c = _z_batch_eval(cand, yv[rows], mu, omega, clamp=True)
            ok = v_c >= values[rows]
            if k == MAX_HALVINGS:
                # last resort: accept any finite candidate, freeze the rest
                ok = np.isfinite(v_c)
                stuck[rows[~ok]] = True
            take = rows[ok]
            Z[take] = cand[ok]
            values[take] = v_c[ok]
            grads[take] = g_c[ok]
            rates[take] = r_c[ok]
            pending[rem[ok]] = False
            t[rem[~ok]] *= 0.5

        done = np.max(np.abs(grads[act]), axis=1) <= h.newton_tol
        converged[act[done]] = True

    failed = ~converged
    return Z, rates, start_values, failed


def _z_rows_update(z, yv, mu, omega, h: Hyperparameters, rng: RngStream):
    """Batched mode-centered t MH for every z row; failed rows keep state."""
    T, A = z.shape
    modes, mode_rates, cur_values, failed = _z_batch_newton(z, yv, mu, omega, h)
    ok = np.flatnonzero(~failed)
    z_new = np.array(z, dtype=float)
    acc = np.zeros(T, dtype=bool)
    if ok.size == 0:
        return z_new, acc, failed

    idx = np.arange(A)
    neg_hess = np.broadcast_to(omega, (ok.size, A, A)).copy()
    neg_hess[:, idx, idx] += mode_rates[ok]
    scales = np.linalg.inv(neg_hess)
    scales = 0.5 * (scales + np.swapaxes(scales, 1, 2))
    try:
        chols = np.linalg.cholesky(scales)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"proposal scale not SPD in z update: {exc}") from exc

    cands = sample_mvt_batch(modes[ok], chols, h.nu, rng)
    v_cand, _, _ = _z_batch_eval(cands, yv[ok], mu, omega, clamp=False)
    logq_cur = logpdf_mvt_batch(z[ok], modes[ok], chols, h.nu)
    logq_cand = logpdf_mvt_batch(cands, modes[ok], chols, h.nu)
    log_r = (v_cand + logq_cur) - (cur_values[ok] + logq_cand)
    u = rng.gen.uniform(size=ok.size)
    with np.errstate(divide="ignore"):
        accept = np.log(u) < log_r
    rows = ok[accept]
    z_new[rows] = cands[accept]
    acc[rows] = True
    return z_new, acc, failed
