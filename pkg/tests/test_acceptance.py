"""Acceptance suite: every release criterion at its stated tolerance.

Each test prints one PASS/FAIL line. The synthetic-recovery criteria
share one canonical run (first seed of the 20-seed batch); the batch
seeds are fixed a priori (data seeds 100..119, chain seeds 1000..1019).

Run with ``pytest tests/test_acceptance.py -v -s``.
"""

import json
import time
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest
from scipy.special import gammaln, log_ndtr, ndtr

import count_glasso as cg
from count_glasso.cli import main as cli_main
from count_glasso.distributions import (
    MvtProposal,
    RngStream,
    sample_gamma,
    sample_inverse_gaussian_many,
    sample_mvt,
)
from count_glasso.geweke import geweke_check
from count_glasso.model import ChainState, PrecisionMatrix, RiskState
from count_glasso.risk import mu_conditional, risk_sweep, z_conditional

FIXTURE = Path(__file__).parent / "data" / "events_2016.csv"

BATCH_SEEDS = [(100 + k, 1000 + k) for k in range(20)]
TRUE_PAIRS = {(i, i + 5) for i in range(5)}

# hyperparameters of the synthetic replication runs: shrinkage shape tied
# to the dimension, prior risk variance 0.05, proposal dof 3
def replication_hyper():
    return cg.Hyperparameters(a_lambda=10.0, b_lambda=0.01, sigma2_mu=0.05, nu=3.0)


def report(criterion: str, passed: bool, detail: str):
    print(f"\n[{'PASS' if passed else 'FAIL'}] {criterion}: {detail}")


def recovery_run(data_seed: int, chain_seed: int):
    cfg = cg.SynthConfig(A=10, T=30, C1=1.0, C2=0.5, seed=data_seed)
    y, _, _, _ = cg.generate_dataset(cfg)
    rc = cg.RunConfig(iterations=15000, burn_in=5000, thin=10, seed=chain_seed,
                      hyper=replication_hyper())
    t0 = time.time()
    trace = cg.fit(y, rc)[0]
    elapsed = time.time() - t0
    return trace, elapsed


def pair_means(trace):
    _, st = cg.map_sample(trace)
    p = cg.partial_correlation(st.precision)
    iu = list(zip(*np.triu_indices(10, 1)))
    nz = float(np.mean([abs(p[i, j]) for i, j in iu if (i, j) in TRUE_PAIRS]))
    zr = float(np.mean([abs(p[i, j]) for i, j in iu if (i, j) not in TRUE_PAIRS]))
    return nz, zr


def mu_coverage(trace, level=0.95, truth=0.2):
    mus = np.stack([s.risk.mu for s in trace.samples])
    inside = 0
    for i in range(mus.shape[1]):
        lo, hi = cg.credible_interval(mus[:, i], level)
        inside += int(lo <= truth <= hi)
    return inside, mus.shape[1]


@pytest.fixture(scope="module")
def canonical_run():
    return recovery_run(*BATCH_SEEDS[0])


@pytest.fixture(scope="module")
def seed_batch(canonical_run):
    trace0, _ = canonical_run
    rows = []
    nz0, zr0 = pair_means(trace0)
    cov0, tot0 = mu_coverage(trace0)
    rows.append({"nz": nz0, "zr": zr0, "coverage": cov0 / tot0})
    for data_seed, chain_seed in BATCH_SEEDS[1:]:
        trace, _ = recovery_run(data_seed, chain_seed)
        nz, zr = pair_means(trace)
        cov, tot = mu_coverage(trace)
        rows.append({"nz": nz, "zr": zr, "coverage": cov / tot})
    return rows


@pytest.mark.slow
class TestCriterion1SparsityRecovery:
    def test_map_partial_correlation_contrast(self, canonical_run):
        trace, elapsed = canonical_run
        nz, zr = pair_means(trace)
        ratio = nz / zr
        ok = ratio >= 3.0 and elapsed < 300.0
        report("criterion 1 (sparsity-pattern recovery)", ok,
               f"MAP |p| true-nonzero {nz:.3f} vs true-zero {zr:.3f}, "
               f"ratio {ratio:.2f} (need >= 3), runtime {elapsed:.0f}s (need < 300s)")
        assert elapsed < 300.0
        assert ratio >= 3.0


@pytest.mark.slow
class TestCriterion2Coverage:
    def test_single_run_coverage(self, canonical_run):
        trace, _ = canonical_run
        inside, total = mu_coverage(trace)
        ok = inside >= 8
        report("criterion 2a (mu coverage, single run)", ok,
               f"{inside}/{total} true means inside 95% intervals (need >= 8)")
        assert inside >= 8

    def test_average_coverage_over_seeds(self, seed_batch):
        avg = float(np.mean([r["coverage"] for r in seed_batch]))
        ok = avg >= 0.85
        report("criterion 2b (mu coverage, 20 seeds)", ok,
               f"average coverage {avg:.3f} over {len(seed_batch)} seeds (need >= 0.85)")
        assert avg >= 0.85


@pytest.mark.slow
class TestCriterion3Shrinkage:
    def test_map_nonzero_magnitude_below_truth(self, seed_batch):
        true_p = 0.5  # |{-C2 / C1}|
        avg_nz = float(np.mean([r["nz"] for r in seed_batch]))
        ok = avg_nz < true_p
        report("criterion 3 (shrinkage)", ok,
               f"mean MAP |p| on true-nonzero pairs {avg_nz:.3f} "
               f"(strictly below true |p| = {true_p})")
        assert avg_nz < true_p


@pytest.mark.slow
class TestCriterion4Geweke:
    def test_joint_distribution_consistency(self):
        h = cg.Hyperparameters(a_lambda=4.0, b_lambda=4.0, sigma2_mu=0.05, nu=5.0)
        rc = cg.RunConfig(iterations=2, burn_in=0, thin=1, seed=123, hyper=h)
        t0 = time.time()
        rep = geweke_check(rc, A=2, T=3, draws=100000)
        rep_bad = geweke_check(rc, A=2, T=3, draws=20000, lambda_shape_offset=1.0)
        elapsed = time.time() - t0
        lam_z = max(abs(r.z) for r in rep_bad.rows if r.statistic == "lambda")
        ok = rep.max_abs_z < 3.0 and lam_z > 5.0 and elapsed < 600.0
        report("criterion 4 (joint-distribution test)", ok,
               f"clean max |z| = {rep.max_abs_z:.2f} over 10 moments (need < 3); "
               f"mutated lambda |z| = {lam_z:.1f} (need > 5); "
               f"runtime {elapsed:.0f}s (need < 600s)")
        assert rep.max_abs_z < 3.0
        assert lam_z > 5.0
        assert elapsed < 600.0


@pytest.mark.slow
class TestCriterion5GridPosterior:
    def test_mu_marginal_matches_quadrature(self):
        # A=1, T=5, Omega=[1] and lambda frozen: only the risk blocks move
        cfg = cg.SynthConfig(A=1, T=5, mu_true=0.2, C1=1.0, C2=0.0, seed=13)
        y, _, _, _ = cg.generate_dataset(cfg)
        h = cg.Hyperparameters(sigma2_mu=0.05, nu=5.0)

        gh_x, gh_w = np.polynomial.hermite.hermgauss(120)
        zs = np.sqrt(2.0) * gh_x
        wts = gh_w / np.sqrt(np.pi)
        yv = y.values.ravel().astype(float)

        def log_marginal_lik(mu):
            tot = 0.0
            for yt in yv:
                f = yt * (mu + zs) - np.exp(mu + zs) - gammaln(yt + 1.0)
                m = np.max(f)
                tot += m + np.log(np.sum(wts * np.exp(f - m)))
            return tot

        grid = np.linspace(-1.4, 1.6, 4001)
        logp = np.array([log_marginal_lik(m) - 0.5 * m * m / h.sigma2_mu
                         for m in grid])
        dens = np.exp(logp - logp.max())
        dens /= np.trapezoid(dens, grid)

        state = ChainState(risk=RiskState(mu=np.zeros(1), z=np.zeros((5, 1))),
                           precision=PrecisionMatrix.identity(1), lam=1.0)
        state.log_post = cg.log_joint(y, state, h)
        rng = RngStream(99, 0)
        burn, keep = 2000, 100000
        draws = np.empty(keep)
        for k in range(burn + keep):
            state, _ = risk_sweep(y, state, h, rng)
            if k >= burn:
                draws[k - burn] = state.risk.mu[0]

        bins = np.linspace(grid[0], grid[-1], 201)
        hist, _ = np.histogram(draws, bins=bins)
        emp = hist / draws.size
        idx = np.clip(np.searchsorted(bins, grid, side="right") - 1, 0, 199)
        masses = np.zeros(200)
        for gi, pi in zip(idx, dens):
            masses[gi] += pi * (grid[1] - grid[0])
        masses /= masses.sum()
        tv = 0.5 * np.abs(emp - masses).sum() + 0.5 * (1.0 - emp.sum())
        ok = tv < 0.05
        report("criterion 5 (grid-posterior oracle)", ok,
               f"total-variation distance {tv:.4f} over 200 bins at "
               f"{keep} retained samples (need < 0.05)")
        assert tv < 0.05


class TestCriterion6Gradients:
    def test_finite_difference_agreement(self):
        rng = np.random.default_rng(606)
        worst_g, worst_h = 0.0, 0.0
        for _ in range(100):
            A, T = 4, 5
            mu = rng.standard_normal(A) * 0.4
            z = rng.standard_normal((T, A)) * 0.6
            y = cg.CountMatrix(rng.poisson(np.exp(mu[None, :] + z)))
            b = rng.standard_normal((A, A)) * 0.3
            prec = PrecisionMatrix(b @ b.T + np.eye(A), np.ones((A, A)) - np.eye(A))
            x = rng.standard_normal(A) * 0.5

            for ev_fn, val_fn in [
                (lambda v: mu_conditional(v, y, z, 0.05),
                 lambda v: mu_conditional(v, y, z, 0.05).value),
                (lambda v: z_conditional(v, y.values[0].astype(float), mu, prec),
                 lambda v: z_conditional(v, y.values[0].astype(float), mu, prec).value),
            ]:
                ev = ev_fn(x)
                scale = np.maximum(np.abs(ev.gradient), 1.0)
                g_fd = np.array([
                    (val_fn(x + e) - val_fn(x - e)) / (2e-6)
                    for e in np.eye(A) * 1e-6
                ])
                worst_g = max(worst_g, float(np.max(np.abs(ev.gradient - g_fd) / scale)))
                h_fd = np.array([
                    (val_fn(x + e) - 2 * val_fn(x) + val_fn(x - e)) / 1e-8
                    for e in np.eye(A) * 1e-4
                ])
                hscale = np.maximum(np.abs(np.diag(ev.hessian)), 1.0)
                worst_h = max(worst_h, float(np.max(
                    np.abs(np.diag(ev.hessian) - h_fd) / hscale)))
        ok = worst_g < 1e-6 and worst_h < 1e-5
        report("criterion 6 (gradient/Hessian correctness)", ok,
               f"worst relative gradient error {worst_g:.2e} (need < 1e-6), "
               f"worst Hessian-diagonal error {worst_h:.2e} (need < 1e-5) "
               "over 100 random instances x 2 conditionals")
        assert worst_g < 1e-6
        assert worst_h < 1e-5


class TestCriterion7Primitives:
    def test_inverse_gaussian_and_friends(self):
        n = 100000
        mean, shape = 2.0, 4.0
        draws = sample_inverse_gaussian_many(np.full(n, mean), shape,
                                             RngStream(707, 0))
        m_err = abs(draws.mean() - mean) / mean
        v_target = mean ** 3 / shape
        v_err = abs(draws.var() - v_target) / v_target

        srt = np.sort(draws)
        r = np.sqrt(shape / srt)
        u = ndtr(r * (srt / mean - 1.0)) + np.exp(
            2.0 * shape / mean + log_ndtr(-r * (srt / mean + 1.0)))
        k = np.arange(1, n + 1)
        ks = max(np.max(k / n - u), np.max(u - (k - 1) / n))

        g_rng = RngStream(707, 1)
        g = np.array([sample_gamma(5.0, 1.01, g_rng) for _ in range(n)])
        g_err = abs(g.mean() - 5.0 / 1.01) / (5.0 / 1.01)
        g2 = np.array([sample_gamma(3.0, 1.0, g_rng) for _ in range(n)])
        gv_err = abs(g2.var() - 3.0) / 3.0

        t_rng = RngStream(707, 2)
        prop = MvtProposal(np.zeros(2), np.eye(2), dof=5.0)
        t_draws = np.array([sample_mvt(prop, t_rng) for _ in range(n)])
        t_target = 5.0 / 3.0
        t_err = float(np.max(np.abs(t_draws.var(axis=0) - t_target)) / t_target)

        ok = (m_err < 0.01 and v_err < 0.03 and ks < 0.01
              and g_err < 0.01 and gv_err < 0.03 and t_err < 0.05)
        report("criterion 7 (distribution primitives)", ok,
               f"invgauss mean err {m_err:.4f} (<0.01), var err {v_err:.4f} (<0.03), "
               f"KS {ks:.4f} (<0.01); gamma mean err {g_err:.4f} (<0.01), "
               f"var err {gv_err:.4f} (<0.03); mvt var err {t_err:.4f} (<0.05)")
        assert m_err < 0.01 and v_err < 0.03 and ks < 0.01
        assert g_err < 0.01 and gv_err < 0.03
        assert t_err < 0.05


class TestCriterion8PartialCorrelations:
    def test_oracle_and_thresholding(self):
        rng = np.random.default_rng(808)
        worst = 0.0
        for _ in range(100):
            b = rng.standard_normal((6, 6)) * 0.5
            omega = b @ b.T + 1.5 * np.eye(6)
            p = cg.partial_correlation(omega)
            d = np.diag(1.0 / np.sqrt(np.diag(omega)))
            oracle = -d @ omega @ d
            np.fill_diagonal(oracle, 1.0)
            worst = max(worst, float(np.max(np.abs(p - oracle))))

        b = rng.standard_normal((60, 60)) * 0.3
        p60 = cg.partial_correlation(b @ b.T + 8.0 * np.eye(60))
        n36 = len(cg.threshold_top_q(p60, 0.02))

        counts_ok = True
        for A in (3, 10, 25, 60, 100):
            bb = rng.standard_normal((A, A)) * 0.3
            pA = cg.partial_correlation(bb @ bb.T + A * 0.2 * np.eye(A))
            m = A * (A - 1) // 2
            for q_str in ("0.01", "0.05", "0.1", "0.5", "1"):
                expected = int(-((-Fraction(q_str) * m) // 1))
                counts_ok &= len(cg.threshold_top_q(pA, float(q_str))) == expected

        ok = worst < 1e-12 and n36 == 36 and counts_ok
        report("criterion 8 (partial-correlation oracle)", ok,
               f"max |p - oracle| = {worst:.2e} over 100 matrices (need < 1e-12); "
               f"A=60, q=0.02 gives {n36} edges (need 36); "
               f"cardinality formula holds: {counts_ok}")
        assert worst < 1e-12
        assert n36 == 36
        assert counts_ok


@pytest.mark.slow
class TestCriterion9PdClosure:
    def test_every_retained_precision_pd(self, canonical_run):
        trace, _ = canonical_run
        violations = sum(
            0 if cg.validate_positive_definite(s.precision.omega) else 1
            for s in trace.samples)
        ok = violations == 0
        report("criterion 9 (PD closure)", ok,
               f"{violations} violations over {len(trace)} retained states "
               f"of a 15000-sweep fit (need 0)")
        assert violations == 0


class TestCriterion10Pipeline:
    def test_ingest_hand_count_and_determinism(self, tmp_path):
        outs = []
        for name in ("run1", "run2"):
            out = tmp_path / name
            code = cli_main([
                "ingest", "--events", str(FIXTURE), "--col-time", "occurred_at",
                "--col-x", "easting", "--col-y", "northing", "--year", "2016",
                "--nx", "2", "--ny", "2", "--areas", "3", "--out", str(out)])
            assert code == 0
            outs.append(out)

        counts = np.loadtxt(outs[0] / "counts.csv", delimiter=",", ndmin=2)
        expected = np.zeros((52, 3))
        expected[0, 0] = 2
        expected[6, 2] = 1
        expected[6, 1] = 1
        expected[23, 1] = 2
        expected[26, 0] = 1
        expected[51, 0] = 1
        expected[51, 2] = 1
        hand_count_ok = np.array_equal(counts, expected)

        areas = json.loads((outs[0] / "areas.json").read_text())
        t = areas["tallies"]
        reconciles = (t["counted"] == t["events_in"] - t["out_of_year"]
                      - t["outside_areas"]) and t["rows_skipped"] == 2

        ingest_identical = all(
            (outs[0] / n).read_bytes() == (outs[1] / n).read_bytes()
            for n in ("counts.csv", "areas.json"))

        # seed replay across the simulate -> fit -> summarize -> export chain
        sims, fits = [], []
        for name in ("a", "b"):
            sim = tmp_path / f"sim_{name}"
            assert cli_main(["simulate", "--A", "4", "--T", "6", "--seed", "3",
                             "--out", str(sim)]) == 0
            tr = tmp_path / f"tr_{name}"
            assert cli_main(["fit", "--counts", str(sim / "y.csv"),
                             "--iterations", "60", "--burn-in", "20",
                             "--thin", "2", "--seed", "4", "--out", str(tr)]) == 0
            assert cli_main(["summarize", "--trace", str(tr)]) == 0
            assert cli_main(["export", "--trace", str(tr), "--top-q", "1.0",
                             "--out", str(tr / "edges")]) == 0
            sims.append(sim)
            fits.append(tr)
        replay_identical = all(
            (sims[0] / n).read_bytes() == (sims[1] / n).read_bytes()
            for n in ("y.csv", "z_true.csv", "omega_true.csv", "meta.json"))
        replay_identical &= all(
            (fits[0] / n).read_bytes() == (fits[1] / n).read_bytes()
            for n in ("mu.csv", "lambda.csv", "omega.csv", "logpost.csv",
                      "accept.csv", "z.csv", "summary.csv", "edges.csv"))

        ok = hand_count_ok and reconciles and ingest_identical and replay_identical
        report("criterion 10 (pipeline determinism and reconciliation)", ok,
               f"hand-counted 52x3 matrix reproduced: {hand_count_ok}; "
               f"tallies reconcile: {reconciles}; ingest byte-identical: "
               f"{ingest_identical}; simulate/fit/summarize/export replay "
               f"byte-identical: {replay_identical}")
        assert hand_count_ok and reconciles
        assert ingest_identical and replay_identical
