import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import block_diagonal
from cooplbm.core import PI_CLAMP, Clustering, CoopParams, FitResult
from cooplbm.metrics import ari, rmse
from cooplbm.sem import (
    SemConfig,
    align_labels,
    coop_icl,
    coop_missing_prob,
    coop_penalty,
    fit_sampling_effort,
    init_clustering,
    missing_given_zero,
    mstep_mixing,
    mstep_pi,
    observed_missing_prob,
    run_sem,
    sstep_impute_support,
    sstep_sample_labels,
)
from cooplbm.simulate import SimConfig, paper_config, simulate_coop

FAST = SemConfig(burn_in=10, post_iter=10, restarts=1)


# ---------------------------------------------------------------- initialisation


@pytest.mark.parametrize("method", ["hierarchical", "spectral", "kmeans"])
def test_init_single_block(method):
    r = np.array([[1, 0, 2], [0, 3, 1]])
    z1, z2 = init_clustering(r, 1, 1, method)
    assert z1.labels.tolist() == [0, 0] and z2.labels.tolist() == [0, 0, 0]


@pytest.mark.parametrize("method", ["hierarchical", "spectral", "kmeans"])
def test_init_separable(method):
    v, t1, t2 = block_diagonal(8, 10)
    z1, z2 = init_clustering(v, 2, 2, method, seed=3)
    assert ari(z1, t1) == 1.0 and ari(z2, t2) == 1.0


@pytest.mark.parametrize("method", ["hierarchical", "spectral", "kmeans"])
def test_init_deterministic(method):
    r = simulate_coop(paper_config(n=30, g=100, seed=2)).r
    a = init_clustering(r, 3, 3, method, seed=7)
    b = init_clustering(r, 3, 3, method, seed=7)
    np.testing.assert_array_equal(a[0].labels, b[0].labels)
    np.testing.assert_array_equal(a[1].labels, b[1].labels)


def test_init_rejects_too_many_blocks():
    with pytest.raises(ValueError):
        init_clustering(np.ones((3, 4)), 4, 2)
    with pytest.raises(ValueError):
        init_clustering(np.ones((3, 4)), 2, 5)


# ---------------------------------------------------------------- M-steps


def test_mstep_mixing_examples():
    alpha, _ = mstep_mixing(Clustering([0, 0, 1, 1], 2), Clustering([0], 1))
    np.testing.assert_allclose(alpha, [0.5, 0.5], atol=1e-12)
    alpha, _ = mstep_mixing(Clustering([0, 0, 0, 0], 2), Clustering([0], 1))
    np.testing.assert_allclose(alpha, np.array([1, 1e-6]) / (1 + 1e-6), atol=1e-15)
    alpha, beta = mstep_mixing(Clustering([0, 1, 2], 3), Clustering([0, 0], 1))
    np.testing.assert_allclose(alpha, [1 / 3] * 3, atol=1e-12)
    assert beta.tolist() == [1.0]


def test_fit_sampling_effort_constant():
    est = fit_sampling_effort(np.full((2, 2), 5), np.ones((2, 2)))
    np.testing.assert_allclose(est.lam, [1, 1], atol=1e-12)
    np.testing.assert_allclose(est.mu, [1, 1], atol=1e-12)
    assert est.g == pytest.approx(5.0, abs=1e-12)
    assert est.converged


def test_fit_sampling_effort_hand_case():
    est = fit_sampling_effort(np.array([[2, 2], [1, 1]]), np.ones((2, 2)))
    np.testing.assert_allclose(est.lam, [1, 0.5], atol=1e-9)
    np.testing.assert_allclose(est.mu, [1, 1], atol=1e-9)
    assert est.g == pytest.approx(2.0, abs=1e-9)


def hand_fixed_point(counts, m, iters=500):
    """The fixed point of the effort equations written with explicit loops."""
    n1, n2 = len(counts), len(counts[0])
    lam = [1.0] * n1
    for _ in range(iters):
        gmu = [sum(counts[i][l] for i in range(n1)) / sum(m[i][l] * lam[i] for i in range(n1))
               for l in range(n2)]
        lam = [sum(counts[k]) / sum(m[k][j] * gmu[j] for j in range(n2)) for k in range(n1)]
        top = max(lam)
        lam = [x / top for x in lam]
    gmu = [sum(counts[i][l] for i in range(n1)) / sum(m[i][l] * lam[i] for i in range(n1))
           for l in range(n2)]
    return lam, gmu


def test_fit_sampling_effort_matches_loop_oracle():
    rng = np.random.default_rng(0)
    m = (rng.random((6, 5)) < 0.7).astype(int)
    m[np.arange(5), np.arange(5)] = 1
    m[5, 0] = 1
    counts = m * rng.poisson(4.0, m.shape)
    counts[m.astype(bool) & (counts == 0)] = 1
    est = fit_sampling_effort(counts, m, fp_tol=1e-14, fp_max_iter=2000)
    lam, gmu = hand_fixed_point(counts.tolist(), m.tolist())
    np.testing.assert_allclose(est.lam, lam, rtol=1e-9)
    np.testing.assert_allclose(est.mu * est.g, gmu, rtol=1e-9)
    assert est.lam.max() == 1.0 and est.mu.max() == 1.0


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.floats(1e-3, 1e3))
def test_fixed_point_scale_invariance(seed, scale):
    rng = np.random.default_rng(seed)
    m = np.ones((5, 4))
    counts = rng.poisson(6.0, (5, 4)) + 1
    start = rng.uniform(0.1, 1, 5)
    a = fit_sampling_effort(counts, m, start=start)
    b = fit_sampling_effort(counts, m, start=scale * start)
    np.testing.assert_allclose(a.lam, b.lam, rtol=0, atol=1e-10)
    np.testing.assert_allclose(a.mu, b.mu, rtol=0, atol=1e-10)
    assert abs(a.g - b.g) <= 1e-10 * a.g


def test_fit_sampling_effort_recovers_planted_efforts():
    sim = simulate_coop(paper_config(n=100, g=600, seed=3))
    est = fit_sampling_effort(sim.r, sim.m)
    assert rmse(sim.true_lambda, est.lam) < 0.05
    assert rmse(sim.true_mu, est.mu) < 0.05


def test_fit_sampling_effort_flags_and_errors():
    m = np.array([[1, 1, 0], [0, 1, 1], [1, 0, 1]])
    est = fit_sampling_effort(m * np.array([[9, 1, 0], [0, 4, 2], [3, 0, 7]]), m, fp_tol=1e-300, fp_max_iter=2)
    assert not est.converged
    with pytest.raises(ValueError):
        fit_sampling_effort(np.array([[1, 0], [0, 0]]), np.array([[1, 0], [0, 0]]))


def test_mstep_pi_examples():
    one = Clustering([0, 0], 1)
    assert mstep_pi(np.array([[1, 0], [0, 1]]), one, one)[0, 0] == 0.5
    assert mstep_pi(np.ones((2, 2)), one, one)[0, 0] == 1 - PI_CLAMP
    z = Clustering([0, 1], 2)
    np.testing.assert_array_equal(
        mstep_pi(np.array([[1, 0], [0, 1]]), z, z),
        [[1 - PI_CLAMP, PI_CLAMP], [PI_CLAMP, 1 - PI_CLAMP]],
    )


def test_mstep_pi_empty_block_keeps_previous():
    z1 = Clustering([0, 0], 2)
    z2 = Clustering([0, 1], 2)
    prev = np.array([[0.3, 0.4], [0.6, 0.7]])
    pi = mstep_pi(np.array([[1, 0], [1, 1]]), z1, z2, previous=prev)
    np.testing.assert_allclose(pi[1], [0.6, 0.7])
    np.testing.assert_allclose(pi[0], [1 - PI_CLAMP, 0.5])


# ---------------------------------------------------------------- S-steps


def test_imputation_probability_examples():
    assert missing_given_zero(0.5, math.log(2)) == pytest.approx(1 / 3, abs=1e-12)
    assert missing_given_zero(0.37, 0.0) == pytest.approx(0.37, abs=1e-15)
    assert missing_given_zero(PI_CLAMP, 1.0) == pytest.approx(PI_CLAMP * math.exp(-1) / (1 - PI_CLAMP * (1 - math.exp(-1))))
    assert missing_given_zero(PI_CLAMP, 1.0) < 1e-6


def coop_params(q1, q2, pi, n1, n2, g, lam=None, mu=None):
    return CoopParams(np.full(q1, 1 / q1), np.full(q2, 1 / q2), np.asarray(pi, dtype=float),
                      np.ones(n1) if lam is None else lam, np.ones(n2) if mu is None else mu, g)


def test_imputation_keeps_observations_and_matches_rate():
    counts = np.zeros((200, 100), dtype=int)
    counts[:, 0] = 3
    z1 = Clustering(np.zeros(200, dtype=int), 1)
    z2 = Clustering(np.zeros(100, dtype=int), 1)
    params = coop_params(1, 1, [[0.5]], 200, 100, math.log(2))
    m = sstep_impute_support(counts, z1, z2, params, seed=1)
    assert np.all(m[:, 0] == 1)
    frac = m[:, 1:].mean()
    se = math.sqrt((1 / 3) * (2 / 3) / m[:, 1:].size)
    assert abs(frac - 1 / 3) < 3 * se
    low = coop_params(1, 1, [[PI_CLAMP]], 200, 100, 1.0)
    assert sstep_impute_support(np.zeros((200, 100), dtype=int), z1, z2, low, 2).sum() == 0


def test_sample_labels_single_block():
    params = coop_params(1, 2, [[0.5, 0.2]], 5, 4, 3.0)
    z = sstep_sample_labels(np.ones((5, 4), dtype=int), params, Clustering([0, 1, 0, 1], 2), seed=0)
    assert z.labels.tolist() == [0] * 5


def test_sample_labels_equiprobable_for_identical_blocks():
    n = 2000
    rng = np.random.default_rng(0)
    counts = rng.poisson(1.0, (n, 3))
    params = coop_params(2, 1, [[0.6], [0.6]], n, 3, 2.0)
    z = sstep_sample_labels(counts, params, Clustering([0, 0, 0], 1), seed=5)
    freq = np.mean(z.labels == 0)
    assert abs(freq - 0.5) < 3 * math.sqrt(0.25 / n)


def test_sample_labels_recover_separated_blocks():
    cfg = SimConfig(40, 30, (0.5, 0.5), (0.5, 0.5), np.array([[0.95, 0.05], [0.05, 0.95]]), 1e4,
                    lam=np.ones(40), mu=np.ones(30), seed=1)
    sim = simulate_coop(cfg)
    params = CoopParams(np.full(2, 0.5), np.full(2, 0.5), cfg.pi,
                        sim.true_lambda, sim.true_mu, sim.true_g)
    z1 = sstep_sample_labels(sim.r, params, sim.true_z2, seed=0, axis=0)
    z2 = sstep_sample_labels(sim.r, params, z1, seed=1, axis=1)
    assert ari(z1, sim.true_z1) == 1.0 and ari(z2, sim.true_z2) == 1.0


# ---------------------------------------------------------------- label switching


@settings(max_examples=30)
@given(st.permutations(range(4)), st.integers(0, 1000))
def test_align_labels_undoes_permutation(perm, seed):
    rng = np.random.default_rng(seed)
    ref = Clustering(rng.integers(0, 4, 50), 4)
    perm = np.array(perm)
    aligned = align_labels(Clustering(perm[ref.labels], 4), ref)
    np.testing.assert_array_equal(aligned.labels, ref.labels)


def test_aligned_average_is_relabeling_invariant():
    """Averaging pi over snapshots whose labels are switched at random gives the
    same result as averaging the unswitched snapshots."""
    rng = np.random.default_rng(1)
    ref = Clustering(np.repeat(np.arange(3), 10), 3)
    true_pis = [rng.uniform(0.1, 0.9, (3, 2)) for _ in range(20)]
    total = np.zeros((3, 2))
    prev = ref
    for pi in true_pis:
        perm = rng.permutation(3)
        noisy = ref.labels.copy()
        noisy[rng.choice(30, 3, replace=False)] = rng.integers(0, 3, 3)
        switched = Clustering(perm[noisy], 3)
        switched_pi = np.empty_like(pi)
        switched_pi[perm] = pi
        aligned = align_labels(switched, prev)
        # recover the block map from the alignment and apply it to pi
        mapping = np.zeros(3, dtype=int)
        mapping[switched.labels] = aligned.labels
        back = np.empty_like(pi)
        back[mapping] = switched_pi
        total += back
        prev = aligned
    np.testing.assert_allclose(total / 20, np.mean(true_pis, axis=0), atol=1e-9)


# ---------------------------------------------------------------- chain


@pytest.fixture(scope="module")
def small_r():
    return simulate_coop(paper_config(n=30, g=300, seed=4)).r


def test_run_sem_single_block(small_r):
    seen = []
    fit = run_sem(small_r, 1, 1, FAST, callback=lambda it, z1, z2, p, m: seen.append(m.mean()))
    assert fit.params.alpha.tolist() == [1.0] and fit.params.beta.tolist() == [1.0]
    post = np.mean(seen[FAST.burn_in:])
    assert fit.params.pi[0, 0] == pytest.approx(post, abs=1e-12)
    assert fit.params.lam.max() == 1.0 and fit.params.mu.max() == 1.0
    assert fit.params.g > 0


def test_run_sem_imputed_support_covers_observations(small_r):
    v = small_r.counts > 0
    checked = []

    def check(it, z1, z2, params, m_tilde):
        checked.append(bool(np.all(m_tilde[v] == 1)))

    run_sem(small_r, 3, 3, SemConfig(burn_in=15, post_iter=15, restarts=2), callback=check)
    assert len(checked) == 60 and all(checked)


def test_run_sem_bit_reproducible(small_r):
    cfg = SemConfig(burn_in=8, post_iter=8, restarts=2, seed=42)
    a = run_sem(small_r, 2, 3, cfg)
    b = run_sem(small_r, 2, 3, cfg)
    np.testing.assert_array_equal(a.params.vector(), b.params.vector())
    np.testing.assert_array_equal(a.row_clustering.labels, b.row_clustering.labels)
    np.testing.assert_array_equal(a.col_clustering.labels, b.col_clustering.labels)
    np.testing.assert_array_equal(a.missing_prob, b.missing_prob)
    assert a.icl == b.icl and a.loglik == b.loglik


def test_run_sem_result_invariants(small_r):
    fit = run_sem(small_r, 2, 2, FAST)
    p = fit.params
    assert abs(p.alpha.sum() - 1) < 1e-9 and abs(p.beta.sum() - 1) < 1e-9
    assert np.all(p.pi >= PI_CLAMP) and np.all(p.pi <= 1 - PI_CLAMP)
    assert p.lam.max() == 1.0 and p.mu.max() == 1.0 and np.all(p.lam > 0)
    assert np.all(fit.missing_prob[small_r.counts > 0] == 1.0)
    zero = small_r.counts == 0
    assert np.all(fit.missing_prob[zero] >= 0) and np.all(fit.missing_prob[zero] <= p.pi.max())
    assert len(fit.trace) == FAST.burn_in + FAST.post_iter


def test_run_sem_rejects_empty_lines():
    with pytest.raises(ValueError):
        run_sem(np.array([[1, 0], [0, 0]]), 1, 1, FAST)


def test_running_mean_increments_shrink():
    """The running-mean step is O(1/n): it shrinks as more snapshots are averaged."""
    r = simulate_coop(paper_config(n=60, g=600, seed=1)).r
    thetas = []
    run_sem(r, 3, 3, SemConfig(burn_in=50, post_iter=50, restarts=1, eps=1e-12),
            callback=lambda it, z1, z2, p, m: thetas.append(p.vector()))
    post = np.array(thetas[50:])
    means = np.cumsum(post, axis=0) / np.arange(1, len(post) + 1)[:, None]
    steps = np.linalg.norm(np.diff(means, axis=0), axis=1)
    assert steps[-10:].mean() < steps[:10].mean() / 4


@pytest.mark.slow
@pytest.mark.xfail(strict=True, reason="increments stay near 1e-2 after 50 snapshots; see decisions ledger")
def test_running_mean_reaches_eps_within_post_iter():
    r = simulate_coop(paper_config(n=100, g=600, seed=1)).r
    fit = run_sem(r, 3, 3, SemConfig(restarts=1))
    assert fit.converged


# ---------------------------------------------------------------- derived probabilities


def hand_fit(pi, rate, counts):
    n1, n2 = counts.shape
    params = CoopParams(np.ones(1), np.ones(1), np.array([[pi]]), np.ones(n1), np.ones(n2), rate)
    z1 = Clustering(np.zeros(n1, dtype=int), 1)
    z2 = Clustering(np.zeros(n2, dtype=int), 1)
    return FitResult("coop", params, z1, z2)


def test_coop_missing_prob_examples():
    zeros = np.array([[0, 2]])
    assert coop_missing_prob(hand_fit(0.5, math.log(2), zeros), zeros)[0, 0] == pytest.approx(1 / 3, abs=1e-12)
    assert coop_missing_prob(hand_fit(0.5, math.log(2), zeros), zeros)[0, 1] == 1.0
    assert coop_missing_prob(hand_fit(0.5, 10.0, zeros), zeros)[0, 0] < 1e-3
    assert coop_missing_prob(hand_fit(0.42, 1e-12, zeros), zeros)[0, 0] == pytest.approx(0.42, abs=1e-9)


def test_observed_missing_prob_examples():
    z = np.zeros((2, 2), dtype=int)
    assert observed_missing_prob(hand_fit(0.8, math.log(2), z)) == pytest.approx(np.full((2, 2), 0.4), abs=1e-12)
    assert np.all(observed_missing_prob(hand_fit(0.8, 0.0, z)) == 0)
    assert observed_missing_prob(hand_fit(0.8, 800.0, z)) == pytest.approx(np.full((2, 2), 0.8), abs=1e-12)


# ---------------------------------------------------------------- ICL


def test_coop_penalty_values():
    assert coop_penalty(1, 1, 100, 100) == pytest.approx(100 * math.log(1e4), abs=1e-9)
    assert coop_penalty(1, 1, 100, 100) == pytest.approx(921.034037, abs=1e-6)
    diff = coop_penalty(2, 2, 100, 100) - coop_penalty(1, 1, 100, 100)
    assert diff == pytest.approx(0.5 * math.log(100) * 2 + 1.5 * math.log(1e4), abs=1e-9)
    assert diff == pytest.approx(18.4207, abs=1e-4)


def test_coop_icl_invariant_under_relabeling(small_r):
    fit = run_sem(small_r, 2, 3, FAST)
    p1, p2 = np.array([1, 0]), np.array([2, 0, 1])
    inv1, inv2 = np.argsort(p1), np.argsort(p2)
    p = fit.params
    relabeled = FitResult(
        "coop",
        CoopParams(p.alpha[p1], p.beta[p2], p.pi[np.ix_(p1, p2)], p.lam, p.mu, p.g),
        Clustering(inv1[fit.row_clustering.labels], 2),
        Clustering(inv2[fit.col_clustering.labels], 3),
    )
    assert coop_icl(relabeled, small_r, FAST) == pytest.approx(coop_icl(fit, small_r, FAST), rel=1e-9)


def test_semconfig_validation():
    with pytest.raises(ValueError):
        SemConfig(post_iter=0)
    with pytest.raises(ValueError):
        SemConfig(eps=0)
    with pytest.raises(ValueError):
        SemConfig(init="random")
