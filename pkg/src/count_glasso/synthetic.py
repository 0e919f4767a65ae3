"""Synthetic dataset generation with a paired sparse precision structure.

The true precision matrix has ``C1`` on the diagonal and ``C2`` linking
dimension i with its partner i - A/2, zero elsewhere; eigenvalues are
``C1 +- C2``, so ``|C2| < C1`` guarantees positive definiteness.
Dispersity rows are Gaussian with that precision and counts are Poisson
with log rate ``mu_i + z_ti``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .distributions import RngStream
from .errors import ValidationError
from .model import CountMatrix, PrecisionMatrix

# Dataset sizes (A, T) shipped as named presets.
PRESETS = {
    "A10T30": (10, 30),
    "A50T60": (50, 60),
    "A100T60": (100, 60),
    "A200T60": (200, 60),
}


@dataclass
class SynthConfig:
    A: int
    T: int
    mu_true: float = 0.2
    C1: float = 1.0
    C2: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.A < 1 or self.T < 1:
            raise ValidationError(f"need A >= 1 and T >= 1, got A={self.A}, T={self.T}")
        if self.C2 != 0.0 and self.A % 2 != 0:
            raise ValidationError("A must be even when C2 != 0 (pairing i with i - A/2)")


def make_true_precision(A: int, C1: float, C2: float) -> PrecisionMatrix:
    """Paired-block precision: omega_ii = C1, omega_{i, i-A/2} = C2."""
    if C1 <= 0:
        raise ValidationError(f"C1 must be positive, got {C1}")
    if C2 != 0.0 and A % 2 != 0:
        raise ValidationError("A must be even when C2 != 0")
    if abs(C2) >= C1:
        raise ValidationError(
            f"|C2| = {abs(C2)} must be < C1 = {C1} for positive definiteness"
        )
    omega = C1 * np.eye(A)
    half = A // 2
    for i in range(half):
        j = i + half
        omega[i, j] = omega[j, i] = C2
    tau = np.ones((A, A)) - np.eye(A)
    return PrecisionMatrix(omega, tau)


def generate_dataset(cfg: SynthConfig):
    """Sample (counts, true dispersities, true risks, true precision).

    z_t ~ N(0, Omega^{-1}) i.i.d. over t, y_ti ~ Poisson(exp(mu_i + z_ti));
    fully deterministic under cfg.seed.
    """
    precision = make_true_precision(cfg.A, cfg.C1, cfg.C2)
    rng = RngStream(cfg.seed, stream_id=0)
    cov = np.linalg.inv(precision.omega)
    L = np.linalg.cholesky(0.5 * (cov + cov.T))
    g = rng.gen.standard_normal((cfg.T, cfg.A))
    z = g @ L.T
    mu = np.full(cfg.A, cfg.mu_true)
    rates = np.exp(mu[None, :] + z)
    y = rng.gen.poisson(rates)
    return CountMatrix(y), z, mu, precision


def write_dataset(cfg: SynthConfig, outdir) -> dict:
    """Write y.csv, z_true.csv, omega_true.csv and meta.json into outdir."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    y, z, mu, precision = generate_dataset(cfg)
    np.savetxt(outdir / "y.csv", y.values, fmt="%d", delimiter=",")
    np.savetxt(outdir / "z_true.csv", z, fmt="%.17g", delimiter=",")
    np.savetxt(outdir / "omega_true.csv", precision.omega, fmt="%.17g", delimiter=",")
    meta = {"config": asdict(cfg), "shape": {"T": cfg.T, "A": cfg.A}}
    with open(outdir / "meta.json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return meta
