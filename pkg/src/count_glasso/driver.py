"""Run orchestration: interleave risk and precision sweeps, manage
burn-in/thinning/chains, and persist traces.

Sweep order is fixed: the Metropolis blocks for (mu, Z) first, then the
block Gibbs pass over (tau, Omega columns, lambda). Each chain owns the
stream ``(seed, chain_id)`` so chains are independent and the whole run
replays bit-for-bit. Retained sweeps are those with
``(sweep - burn_in) % thin == 0``, giving ``ceil((iterations - burn_in)
/ thin)`` samples.

Trace directory layout (single chain at the top level, ``chain_<k>/``
subdirectories otherwise): ``manifest.json``, ``mu.csv``,
``lambda.csv``, ``omega.csv`` (upper triangle, row-major i <= j),
``logpost.csv``, ``accept.csv`` and optionally ``z.csv`` (rows flattened
row-major t * A + i).
"""

from __future__ import annotations

import datetime as _dt
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .bgl import bgl_sweep
from .distributions import RngStream
from .errors import DataError, NumericError, ValidationError
from .model import (
    ChainState,
    CountMatrix,
    Hyperparameters,
    PrecisionMatrix,
    RiskState,
    log_joint,
)
from .posterior import Trace
from .risk import risk_sweep

TRACE_FORMAT_VERSION = 1

# Newton failure monitoring: if more than this fraction of blocks failed
# over the last monitoring window, the run aborts.
FAILURE_WINDOW = 100
FAILURE_FRACTION = 0.2


@dataclass
class RunConfig:
    iterations: int = 15000
    burn_in: int = 5000
    thin: int = 10
    chains: int = 1
    seed: int = 0
    hyper: Hyperparameters = field(default_factory=Hyperparameters)
    save_z: bool = True

    def __post_init__(self):
        if self.iterations < 1 or not 0 <= self.burn_in < self.iterations:
            raise ValidationError(
                f"need 0 <= burn_in < iterations, got {self.burn_in}, {self.iterations}"
            )
        if self.thin < 1:
            raise ValidationError(f"thin must be >= 1, got {self.thin}")
        if self.chains < 1:
            raise ValidationError(f"chains must be >= 1, got {self.chains}")

    @property
    def retained(self) -> int:
        return math.ceil((self.iterations - self.burn_in) / self.thin)


def initial_state(y: CountMatrix, h: Hyperparameters) -> ChainState:
    """Moment-matched in-support start: mu from smoothed column means,
    Z = 0, Omega = I, lambda = 1."""
    mu0 = np.log((1.0 + y.values.sum(axis=0)) / y.T)
    risk = RiskState(mu=mu0, z=np.zeros((y.T, y.A)))
    state = ChainState(risk=risk, precision=PrecisionMatrix.identity(y.A), lam=1.0)
    state.log_post = log_joint(y, state, h)
    return state


def fit(y: CountMatrix, cfg: RunConfig) -> list[Trace]:
    """Run the full sampler; returns one Trace per chain.

    Chains run sequentially here but are independent by construction
    (separate streams), so results do not depend on execution order.
    """
    return [_fit_chain(y, cfg, chain_id) for chain_id in range(cfg.chains)]


def _fit_chain(y: CountMatrix, cfg: RunConfig, chain_id: int) -> Trace:
    h = cfg.hyper
    rng = RngStream(cfg.seed, stream_id=chain_id)
    state = initial_state(y, h)
    n_blocks = 1 + y.T
    proposals = np.zeros(n_blocks, dtype=np.int64)
    accepted = np.zeros(n_blocks, dtype=np.int64)
    failures = np.zeros(n_blocks, dtype=np.int64)
    window_failures = 0
    samples: list[ChainState] = []

    for sweep in range(cfg.iterations):
        state, stats = risk_sweep(y, state, h, rng)
        state = bgl_sweep(state.risk.z, state, h, rng)
        proposals += ~stats.newton_failed
        accepted += stats.accepted
        failures += stats.newton_failed
        window_failures += int(stats.newton_failed.sum())
        if (sweep + 1) % FAILURE_WINDOW == 0:
            if window_failures > FAILURE_FRACTION * FAILURE_WINDOW * n_blocks:
                raise NumericError(
                    f"chain {chain_id}: {window_failures} Newton failures in the last "
                    f"{FAILURE_WINDOW} sweeps; try a smaller nu or a better initialization"
                )
            window_failures = 0
        if sweep >= cfg.burn_in and (sweep - cfg.burn_in) % cfg.thin == 0:
            samples.append(state)

    return Trace(
        samples=samples,
        proposals=proposals,
        accepted=accepted,
        newton_failures=failures,
        config_echo={"run": _config_dict(cfg), "chain_id": chain_id},
    )


def _config_dict(cfg: RunConfig) -> dict:
    d = asdict(cfg)
    d["hyper"] = asdict(cfg.hyper)
    return d


# ---------------------------------------------------------------------------
# Trace persistence
# ---------------------------------------------------------------------------

def save_trace(trace: Trace, outdir, save_z: bool = True) -> None:
    """Write one chain's trace into ``outdir`` using the documented layout."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    samples = trace.samples
    if not samples:
        raise ValidationError("refusing to persist an empty trace")
    A = samples[0].risk.mu.shape[0]
    T = samples[0].risk.z.shape[0]
    mu = np.stack([s.risk.mu for s in samples])
    lam = np.array([s.lam for s in samples])
    logpost = np.array([s.log_post for s in samples])
    iu, ju = np.triu_indices(A)
    omega = np.stack([s.precision.omega[iu, ju] for s in samples])

    np.savetxt(outdir / "mu.csv", mu, fmt="%.17g", delimiter=",")
    np.savetxt(outdir / "lambda.csv", lam, fmt="%.17g", delimiter=",")
    np.savetxt(outdir / "omega.csv", omega, fmt="%.17g", delimiter=",")
    np.savetxt(outdir / "logpost.csv", logpost, fmt="%.17g", delimiter=",")
    if save_z:
        z = np.stack([s.risk.z.reshape(-1) for s in samples])
        np.savetxt(outdir / "z.csv", z, fmt="%.17g", delimiter=",")

    with open(outdir / "accept.csv", "w") as fh:
        fh.write("block,proposals,accepted,newton_failures\n")
        names = ["mu"] + [f"z_{t}" for t in range(T)]
        for k, name in enumerate(names):
            fh.write(f"{name},{trace.proposals[k]},{trace.accepted[k]},"
                     f"{trace.newton_failures[k]}\n")

    manifest = {
        "format_version": TRACE_FORMAT_VERSION,
        "created_at": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        "A": A,
        "T": T,
        "retained": len(samples),
        "has_z": bool(save_z),
        "config": trace.config_echo,
    }
    with open(outdir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def save_traces(traces: list[Trace], outdir, save_z: bool = True) -> None:
    """Persist a run: single chain at the top level, else chain_<k>/ dirs."""
    outdir = Path(outdir)
    if len(traces) == 1:
        save_trace(traces[0], outdir, save_z=save_z)
        return
    outdir.mkdir(parents=True, exist_ok=True)
    for k, trace in enumerate(traces):
        save_trace(trace, outdir / f"chain_{k}", save_z=save_z)
    manifest = {
        "format_version": TRACE_FORMAT_VERSION,
        "created_at": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        "chains": len(traces),
        "config": traces[0].config_echo.get("run", {}),
    }
    with open(outdir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


@dataclass
class TraceArrays:
    """Array view of a persisted chain (z may be absent)."""

    mu: np.ndarray
    omega_ut: np.ndarray
    lam: np.ndarray
    logpost: np.ndarray
    z: np.ndarray | None
    A: int
    T: int
    manifest: dict
    acceptance: dict[str, float]

    def map_index(self) -> int:
        return int(np.argmax(self.logpost))

    def omega_matrix(self, k: int) -> np.ndarray:
        iu, ju = np.triu_indices(self.A)
        m = np.zeros((self.A, self.A))
        m[iu, ju] = self.omega_ut[k]
        m[ju, iu] = self.omega_ut[k]
        return m


def chain_dirs(trace_dir) -> list[Path]:
    """Chain directories of a persisted run (the dir itself if single-chain)."""
    trace_dir = Path(trace_dir)
    if (trace_dir / "mu.csv").exists():
        return [trace_dir]
    subdirs = sorted(trace_dir.glob("chain_*"))
    if not subdirs:
        raise DataError(f"{trace_dir} does not look like a trace directory")
    return subdirs


def load_trace_arrays(chain_dir) -> TraceArrays:
    chain_dir = Path(chain_dir)
    try:
        with open(chain_dir / "manifest.json") as fh:
            manifest = json.load(fh)
        mu = np.atleast_2d(np.loadtxt(chain_dir / "mu.csv", delimiter=",", ndmin=2))
        lam = np.loadtxt(chain_dir / "lambda.csv", delimiter=",").reshape(-1)
        omega = np.loadtxt(chain_dir / "omega.csv", delimiter=",", ndmin=2)
        logpost = np.loadtxt(chain_dir / "logpost.csv", delimiter=",").reshape(-1)
    except OSError as exc:
        raise DataError(f"cannot read trace files in {chain_dir}: {exc}") from exc
    A = int(manifest["A"])
    T = int(manifest["T"])
    z = None
    zpath = chain_dir / "z.csv"
    if zpath.exists():
        flat = np.loadtxt(zpath, delimiter=",", ndmin=2)
        z = flat.reshape(flat.shape[0], T, A)
    acceptance = {}
    apath = chain_dir / "accept.csv"
    if apath.exists():
        with open(apath) as fh:
            next(fh)
            for line in fh:
                name, prop, acc, _fail = line.strip().split(",")
                acceptance[name] = int(acc) / int(prop) if int(prop) else float("nan")
    return TraceArrays(mu=mu, omega_ut=omega, lam=lam, logpost=logpost, z=z,
                       A=A, T=T, manifest=manifest, acceptance=acceptance)


def load_counts(path) -> CountMatrix:
    """Read a T x A integer count matrix from CSV."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"counts file not found: {path}")
    try:
        values = np.loadtxt(path, delimiter=",", ndmin=2)
    except ValueError as exc:
        raise DataError(f"cannot parse counts from {path}: {exc}") from exc
    bad = np.argwhere(~np.isfinite(values) | (values < 0) | (values != np.floor(values)))
    if bad.size:
        t, i = bad[0]
        raise DataError(
            f"invalid count {values[t, i]!r} at row {t}, column {i} of {path.name}: "
            "entries must be non-negative integers"
        )
    return CountMatrix(values.astype(np.int64))
