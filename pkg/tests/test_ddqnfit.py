import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tslim.ddqnfit import (
    CompositionEvaluator,
    FitProblem,
    HyperParams,
    LossConfig,
    PinballConfig,
    QNetwork,
    QPair,
    action_space,
    apply_action,
    fit,
    grid_search,
    pinball,
    pinball_score,
    reward,
    rmse,
    train_stage_one,
    trajectory_loss,
)
from tslim.ddqnfit.agent import ReplayBuffer, td_targets, uniform_state
from tslim.ddqnfit.loss import channel_loss
from tslim.ddqnfit.problem import CompositionEnv, top_candidates
from tslim.errors import LengthMismatch, NoCandidate, ValidationError
from tslim.loadmodels import ZipCoeffs, ZipModel
from tslim.loadmodels.static import ZipParams, zip_pq


def dip(n=121, depth=0.35):
    t = np.linspace(0, 1, n)
    vm = 1.0 - depth * ((t > 0.2) & (t < 0.3)) - 0.05 * np.exp(-((t - 0.5) / 0.2) ** 2) * (t > 0.3)
    return t, vm


def zip_problem(p_frac=(0.2, 0.3, 0.5), q_frac=(0.5, 0.25, 0.25), v_break=0.7):
    t, vm = dip()
    zp = ZipParams(1.0, 0.4, vm[0], *p_frac, *q_frac, v_break=v_break)
    p, q = zip_pq(zp, vm)
    base = ZipModel(ZipCoeffs(), v_break=v_break)
    return FitProblem("zip", t, vm.astype(complex), p, q, base_model=base)


# --------------------------------------------------------------------------
# actions and states


def test_action_space_sizes():
    assert len(action_space((3, 3))) == 12
    assert len(action_space(6)) == 30
    assert len(action_space(2)) == 2
    acts = action_space((3, 3))
    assert all((a.from_idx < 3) == (a.to_idx < 3) for a in acts)  # moves stay inside a block
    with pytest.raises(ValidationError):
        action_space((1, 3))


@given(st.lists(st.integers(0, 11), min_size=1, max_size=300))
def test_actions_preserve_both_simplexes(seq):
    acts = action_space((3, 3), 0.05)
    f = uniform_state((3, 3), 0.05)
    for k in seq:
        f, _ = apply_action(f, acts[k], (3, 3))
    assert np.all(f >= 0)
    assert math.fsum(f[:3]) == pytest.approx(1.0, abs=1e-12)
    assert math.fsum(f[3:]) == pytest.approx(1.0, abs=1e-12)
    # the lattice start stays on the lattice
    assert np.allclose(f * 20, np.round(f * 20), atol=1e-9)


def test_partial_move_flag():
    a = action_space(3, 0.05)[0]  # 0 -> 1
    f, partial = apply_action([0.02, 0.48, 0.5], a)
    assert partial
    assert f == pytest.approx([0.0, 0.5, 0.5])
    f, partial = apply_action([0.3, 0.2, 0.5], a)
    assert not partial and f == pytest.approx([0.25, 0.25, 0.5])


def test_uniform_state_lattice_snapping():
    assert uniform_state((3,), 0.05) == pytest.approx([0.35, 0.35, 0.30])
    assert uniform_state((6,), 0.05) == pytest.approx([0.2, 0.2, 0.15, 0.15, 0.15, 0.15])
    assert uniform_state((2,), None) == pytest.approx([0.5, 0.5])
    assert uniform_state((3,), 0.07) == pytest.approx([1 / 3] * 3)  # not a divisor of one


def test_reward_rule():
    assert reward(0.5, 1e-3) == (-0.5, False)
    r, done = reward(1e-4, 1e-3)
    assert done and r == pytest.approx(1 - 1e-4)
    with pytest.raises(ValueError):
        reward(-1.0, 1.0)


def test_hyperparams_validation_and_json():
    with pytest.raises(ValidationError):
        HyperParams(gamma=1.0)
    with pytest.raises(ValidationError):
        HyperParams(reward_transform="sqrt")
    hp = HyperParams.from_json({"hidden": [8, 8], "reward_scale": "2.5", "episodes": 3})
    assert hp.hidden == (8, 8) and hp.reward_scale == 2.5
    assert hp.epsilon(0) == 1.0 and hp.epsilon(10**6) == pytest.approx(hp.epsilon_end)


# --------------------------------------------------------------------------
# networks and targets


def test_td_targets_bootstrap_from_delayed_network():
    rng = np.random.default_rng(0)
    qp = QPair.create(3, 4, (5,), rng)
    qp.net_b.set_flat(rng.normal(size=qp.net_b.get_flat().size))
    s2 = rng.normal(size=(6, 3))
    r = rng.normal(size=6)
    done = np.array([0, 1, 0, 0, 1, 0], dtype=bool)
    qb, qa = qp.net_b.forward(s2), qp.net_a.forward(s2)
    y = td_targets(qp, r, s2, done, 0.9)
    assert y == pytest.approx(r + 0.9 * np.where(done, 0, qb.max(axis=1)))
    y2 = td_targets(qp, r, s2, done, 0.9, canonical=True)
    assert y2 == pytest.approx(r + 0.9 * np.where(done, 0, qb[np.arange(6), qa.argmax(axis=1)]))


def test_sgd_step_clips_gradient_norm():
    net = QNetwork(2, 2, (3,), np.random.default_rng(1))
    before = net.get_flat().copy()
    grads = [np.full_like(p, 100.0) for p in net.params]
    net.sgd_step(grads, lr=1.0, clip=1.0)
    assert np.linalg.norm(net.get_flat() - before) == pytest.approx(1.0)


def test_replay_buffer_wraps():
    buf = ReplayBuffer(4, 2)
    for k in range(6):
        buf.push([k, k], k % 2, float(k), [k + 1, k + 1], False)
    assert len(buf) == 4
    assert sorted(buf.r.tolist()) == [2.0, 3.0, 4.0, 5.0]


# --------------------------------------------------------------------------
# losses


@given(st.lists(st.floats(-10, 10), min_size=1, max_size=50), st.floats(0.01, 0.99))
def test_pinball_is_nonnegative_and_zero_at_truth(xs, tau):
    x = np.array(xs)
    assert np.all(pinball(x, np.zeros_like(x), tau) >= 0)
    assert np.all(pinball(x, x, tau) == 0)


@given(st.lists(st.floats(-10, 10), min_size=1, max_size=50))
def test_pinball_median_is_half_mae(xs):
    x = np.array(xs)
    assert float(np.mean(pinball(x, 0.0, 0.5))) == pytest.approx(0.5 * np.mean(np.abs(x)), abs=1e-12)


def test_pinball_score_uses_sample_quantile():
    samples = np.array([[0.0, 1.0], [1.0, 2.0], [2.0, 3.0]])
    ref = np.array([1.0, 1.0])
    # median per snapshot = [1, 2]; deviations 0 and +1 on P and Q alike
    score = pinball_score(samples, samples, ref, ref, PinballConfig(0.5, 0.5))
    assert score == pytest.approx(0.25)


def test_channel_loss_extremum_shift():
    ref = np.array([0.0, 1.0, 0.5, 0.2])
    fit_ = np.array([0.0, 0.5, 1.0, 0.2])
    cfg = LossConfig(w_alpha=0.0, w_beta=1.0)
    # max moves by one sample, min stays put
    assert channel_loss(fit_, ref, cfg) == pytest.approx(1.0)
    with pytest.raises(LengthMismatch):
        channel_loss(fit_[:3], ref, cfg)
    with pytest.raises(ValidationError):
        LossConfig(w_alpha=0.0, w_beta=0.0)


def test_rmse_constant_offset():
    x = np.linspace(0, 1, 50)
    assert rmse(x + 0.3, x) == pytest.approx(0.3)
    assert rmse(x, x) == 0.0


def test_trajectory_loss_batches():
    ref = np.sin(np.linspace(0, 3, 40))
    batch = np.stack([ref, ref + 0.1])
    out = trajectory_loss(batch, batch, ref, ref)
    assert out.shape == (2,)
    assert out[0] == 0.0 and out[1] == pytest.approx(2 * 0.01)


# --------------------------------------------------------------------------
# fitting problems


def test_grid_search_matches_joint_brute_force():
    pb = zip_problem()
    comp, loss = grid_search(pb, 0.1)
    n = 10
    pts = [(i / n, j / n, (n - i - j) / n) for i in range(n + 1) for j in range(n + 1 - i)]
    best = (math.inf, None)
    for cp, cq in itertools.product(pts, pts):
        val = float(pb.losses(*pb.simulate((*cp, *cq)))[0])
        if val < best[0] - 1e-15:
            best = (val, (*cp, *cq))
    assert loss == pytest.approx(best[0], rel=1e-12, abs=1e-18)
    assert comp == pytest.approx(best[1])


def test_grid_search_recovers_lattice_truth():
    pb = zip_problem((0.2, 0.3, 0.5), (0.5, 0.25, 0.25))
    comp, loss = grid_search(pb, 0.05)
    assert comp == pytest.approx((0.2, 0.3, 0.5, 0.5, 0.25, 0.25))
    assert loss == pytest.approx(0.0, abs=1e-20)


def test_evaluator_caches_and_penalises():
    pb = zip_problem()
    ev = CompositionEvaluator(pb, m=4, seed=0)
    f = uniform_state((3, 3), 0.05)
    a = ev.evaluate(f)
    n = ev.n_simulations
    assert ev.evaluate(f) == a and ev.n_simulations == n
    assert ev.m == 1  # ZIP needs one simulation per composition
    ev.worst_valid = 0.5
    assert ev.penalty() == 5.0
    ev.worst_valid = 0.0
    assert ev.penalty() == 1.0


def test_top_candidates_excludes_penalised():
    pb = zip_problem()
    ev = CompositionEvaluator(pb, m=1, seed=0)
    ev.cache[(1,)] = (np.zeros(6), 1.0)
    with pytest.raises(NoCandidate):
        top_candidates(ev, 3)


def test_log_reward_shaping_is_monotone():
    pb = zip_problem()
    env = CompositionEnv(CompositionEvaluator(pb, 1, 0), HyperParams(loss_threshold=1e-6))
    losses = [0.0, 1e-7, 1e-6, 1e-3, 1.0]
    shaped = [env.shape(x) for x in losses]
    assert shaped == sorted(shaped)
    assert shaped[0] == 0.0


def test_stage_one_is_deterministic_and_ranks_by_loss():
    pb = zip_problem()
    hp = HyperParams(episodes=60, max_steps_per_episode=30, epsilon_decay_episodes=40, hidden=(32,))
    c1, log1, ev1, _ = train_stage_one(pb, hp, seed=3)
    c2, log2, _, _ = train_stage_one(pb, hp, seed=3)
    assert [c.composition for c in c1] == [c.composition for c in c2]
    assert log1.episode_return == log2.episode_return
    assert len(c1) == hp.top_k
    losses = [c.mean_loss for c in c1]
    assert losses == sorted(losses)
    assert losses[0] == min(loss for _, loss in ev1.cache.values())
    assert losses[0] < ev1.evaluate(uniform_state((3, 3), 0.05))
    running = log1.running_best()
    assert all(b >= a for a, b in zip(running, running[1:]))


def test_fit_zip_im_small_end_to_end():
    t, vm = dip(61)
    zp = ZipParams(1.0, 0.4, 1.0, 0.3, 0.2, 0.5, 0.3, 0.2, 0.5, v_break=0.7)
    p, q = zip_pq(zp, vm)
    pb = FitProblem("zip+im", t, vm.astype(complex), p, q)
    hp = HyperParams(episodes=6, max_steps_per_episode=5, epsilon_decay_episodes=4, m_samples=3,
                     hidden=(8,), batch_size=4, top_k=2)
    res = fit(pb, hp, seed=1, n_draws=4)
    assert res.family == "zip_im"
    assert len(res.candidates) <= 2
    assert res.best.pinball_score is not None and res.best.best_params
    assert res.rmse_p == pytest.approx(rmse(res.p_fit, p))
    again = fit(pb, hp, seed=1, n_draws=4)
    assert again.best.composition == res.best.composition
    assert again.rmse_p == res.rmse_p


def test_fit_problem_validation():
    t = np.linspace(0, 1, 10)
    with pytest.raises(ValidationError):
        FitProblem("zip", t, np.ones(9, dtype=complex), np.ones(10), np.ones(10))
    with pytest.raises(ValidationError):
        FitProblem("zipper", t, np.ones(10, dtype=complex), np.ones(10), np.ones(10))
    bad = np.ones(10)
    bad[3] = np.nan
    with pytest.raises(ValidationError):
        FitProblem("zip", t, np.ones(10, dtype=complex), bad, np.ones(10))
