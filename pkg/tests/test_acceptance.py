"""Acceptance gate: thirteen end-to-end checks of the package's core claims.

Each test records one PASS/FAIL line through the ``acceptance`` fixture; the
lines are echoed in the terminal summary after the run. Heavy training runs
share session-scoped fixtures so the suite stays within its time budgets.
"""

from __future__ import annotations

import json
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from sscp.data import generate_dataset, load_dataset, normalized_score
from sscp.envs import (
    DEFAULT_MAZE,
    MAZE_TASKS,
    MixtureBandit,
    make_env,
    maze_bfs_distances,
    maze_cell_center,
    maze_open_cells,
)
from sscp.flow import (
    CompletionArch,
    CompletionModel,
    FlowBatch,
    bootstrap_shortcut_loss,
    completion_endpoint,
    completion_loss,
    flow_loss,
    interpolate,
    make_flow_batch,
    sample_euler,
    sample_one_step,
    sample_tau,
)
from sscp.gcrl import (
    GCConfig,
    GCState,
    GoalBatch,
    HierarchyPolicy,
    PolicyArch,
    TrajStore,
    ValueArch,
    ValueTwin,
    advantage_high,
    advantage_low,
    awr_loss,
    distill_loss,
    evaluate_goal_policy,
    expectile_loss,
    gc_train_step,
    gcivl_loss,
    gcivl_target,
    infer_flat,
    infer_hierarchical,
    run_gcrl,
    value_np,
)
from sscp.metrics import energy_distance, ks_statistic, mode_coverage
from sscp.nn.autodiff import Tensor
from sscp.nn.gradcheck import fd_check
from sscp.nn.params import LiveParams, load_checkpoint
from sscp.seeding import stream_rng
from sscp.sscql import (
    CriticArch,
    CriticPair,
    SSCQLState,
    TrainConfig,
    TrainingError,
    TransitionBatch,
    actor_loss,
    actor_q_loss,
    bench_inference,
    critic_loss,
    critic_target,
    run_offline,
    run_offline_to_online,
    run_online,
    train_step,
)


GC_SMALL = GCConfig(
    widths=(16,), goal_rep_dim=4, level_dim=8, batch=16, steps=20,
    eval_every=20, eval_episodes=1, log_every=10, subgoal_steps=3,
)


def _toy_twin(seed: int) -> ValueTwin:
    return ValueTwin.init(ValueArch(2, 2, 4, (16,)), seed=seed)


def _toy_policy(seed: int) -> HierarchyPolicy:
    return HierarchyPolicy.init(PolicyArch(2, 2, 4, (16,), 8), seed=seed)


def _toy_goal_batch(twin: ValueTwin, seed: int, n: int = 8) -> GoalBatch:
    rng = np.random.default_rng(seed)
    s = rng.standard_normal((n, 2))
    sp = s + 0.1 * rng.standard_normal((n, 2))
    gp = sp + 0.1 * rng.standard_normal((n, 2))
    g = rng.standard_normal((n, 2))
    return GoalBatch(
        s=s, a=rng.uniform(-1, 1, (n, 2)), sp=sp, g=g, gp=gp,
        k_tilde=np.full(n, 3),
        adv_high=advantage_high(twin, s, gp, g),
        adv_low=advantage_low(twin, s, sp, gp),
    )


# --------------------------------------------------------------------------
# 1. analytic gradients match finite differences for every loss


def _constant_model(arch: CompletionArch, c: np.ndarray) -> CompletionModel:
    model = CompletionModel.init(arch, seed=0)
    last = max(i for i in range(10) if f"trunk.l{i}.w" in model.params)
    model.params[f"trunk.l{last}.w"] = np.zeros_like(model.params[f"trunk.l{last}.w"])
    model.params[f"trunk.l{last}.b"] = np.asarray(c, dtype=np.float64)
    return model


def test_criterion_01_gradients_match_finite_differences(acceptance):
    t0 = time.perf_counter()
    arch = CompletionArch(state_dim=3, action_dim=2, widths=(8,), time_dim=8)
    rng = np.random.default_rng(11)
    s = rng.standard_normal((4, 3))
    a = rng.uniform(-1, 1, (4, 2))
    fb = make_flow_batch(rng, s, a)
    model = CompletionModel.init(arch, seed=1)
    checks: dict[str, float] = {}
    coords: dict[str, int] = {}

    def record(name: str, reports) -> None:
        checks[name] = max(r.max_rel_err for r in reports)
        coords[name] = sum(r.n_checked for r in reports)

    record("flow", [fd_check(lambda lv: flow_loss(lv, arch, fb), model.params)])
    record("completion", [fd_check(lambda lv: completion_loss(lv, arch, fb), model.params)])

    frozen = model.params.copy()
    d_boot = 1.0 - fb.tau
    record("bootstrap", [fd_check(
        lambda lv: bootstrap_shortcut_loss(
            lv, arch, fb, d_boot, target_live=LiveParams(frozen, trainable=False)
        ),
        model.params,
    )])

    critics = CriticPair.init(CriticArch(3, 2, widths=(8,)), seed=2)
    y = rng.standard_normal(4)
    record("critic", [
        fd_check(
            lambda lv: critic_loss(lv, LiveParams(critics.q2, False), s, a, y),
            critics.q1, max_coords_per_array=64,
        ),
        fd_check(
            lambda lv: critic_loss(LiveParams(critics.q1, False), lv, s, a, y),
            critics.q2, max_coords_per_array=64,
        ),
    ])

    def q_term(lv: LiveParams) -> Tensor:
        endpoint = completion_endpoint(lv, arch, fb)
        loss, _ = actor_q_loss(endpoint, fb.s, critics.q1, critics.q2, normalizer=0.73)
        return loss

    record("actor_q_normalized", [fd_check(q_term, model.params)])

    twin = _toy_twin(seed=3)
    gb = _toy_goal_batch(twin, seed=4)
    q_hat = gcivl_target(twin, gb.s, gb.g, gb.sp, GC_SMALL.gamma, GC_SMALL.goal_tol)
    record("gcivl", [
        fd_check(
            lambda lv: gcivl_loss(lv, LiveParams(twin.v1, False), LiveParams(twin.v2, False),
                                  gb.s, gb.g, q_hat, 0.7),
            twin.enc,
        ),
        fd_check(
            lambda lv: gcivl_loss(LiveParams(twin.enc, False), lv, LiveParams(twin.v2, False),
                                  gb.s, gb.g, q_hat, 0.7),
            twin.v1, max_coords_per_array=64,
        ),
    ])

    policy = _toy_policy(seed=5)
    record("awr_high", [fd_check(
        lambda lv: awr_loss(policy, lv, twin.enc, gb, level=0, cfg=GC_SMALL), policy.params
    )])
    record("awr_low", [fd_check(
        lambda lv: awr_loss(policy, lv, twin.enc, gb, level=1, cfg=GC_SMALL), policy.params
    )])

    frozen_policy = policy.params.copy()
    record("distill", [fd_check(
        lambda lv: distill_loss(
            policy, lv, twin.enc, gb, stream_rng(6, "distill"),
            target_live=LiveParams(frozen_policy, trainable=False),
        ),
        policy.params,
    )])

    elapsed = time.perf_counter() - t0
    worst = max(checks.values())
    fewest = min(coords.values())
    ok = worst < 1e-4 and fewest >= 100 and elapsed < 60.0
    acceptance(
        1, "gradient correctness", ok,
        f"9 losses, worst rel err {worst:.2e} (< 1e-4), min coords {fewest} (>= 100), "
        f"{elapsed:.1f}s (< 60s)",
    )


# --------------------------------------------------------------------------
# 2. time-sampler statistics


def test_criterion_02_time_sampler_statistics(acceptance):
    rng = stream_rng(0, "tau-acceptance")
    taus = sample_tau(rng, 1_000_000)
    p_hat = float(np.mean(taus <= 0.1))
    ks = ks_statistic(taus, lambda x: np.sqrt(np.clip(x, 0.0, 1.0)))
    ok = abs(p_hat - 0.3162) < 0.01 and ks < 0.002
    acceptance(
        2, "time-sampler statistics", ok,
        f"P(tau<=0.1)={p_hat:.4f} (|diff|={abs(p_hat - 0.3162):.4f} < 0.01), "
        f"KS={ks:.5f} (< 0.002)",
    )


# --------------------------------------------------------------------------
# 3. oracle-zero losses and exact expectile values


def test_criterion_03_oracle_zero_losses_and_expectile_values(acceptance):
    arch = CompletionArch(state_dim=3, action_dim=2, widths=(8,), time_dim=8)
    c = np.array([0.4, -1.1])
    model = _constant_model(arch, c)
    rng = np.random.default_rng(7)
    z = rng.standard_normal((8, 2))
    a = z + c  # constant displacement: the oracle output c is exact for both heads
    tau = sample_tau(rng, 8)
    fb = FlowBatch(s=rng.standard_normal((8, 3)), a=a, z=z, tau=tau,
                   x_tau=interpolate(z, a, tau))
    live = model.bind(trainable=False)
    l_flow = flow_loss(live, arch, fb).item()
    l_comp = completion_loss(live, arch, fb).item()

    pos = expectile_loss(Tensor(np.array([1.0])), 0.7).data[0]
    neg = expectile_loss(Tensor(np.array([-1.0])), 0.7).data[0]
    # 0.3 as the loss formula itself computes it: |0.7 - 1| evaluates to
    # 1.0 - 0.7, one ulp away from the decimal literal 0.3.
    ok = l_flow < 1e-24 and l_comp < 1e-24 and pos == 0.7 and neg == 1.0 - 0.7
    acceptance(
        3, "oracle-zero losses", ok,
        f"flow={l_flow:.2e}, completion={l_comp:.2e} (< 1e-24); "
        f"L_0.7(1)={pos} (== 0.7), L_0.7(-1)={neg} (== 1.0-0.7)",
    )


# --------------------------------------------------------------------------
# 4. stop-gradient paths carry exactly zero gradient


def test_criterion_04_stop_gradient_exact_zeros(acceptance):
    arch = CompletionArch(state_dim=3, action_dim=2, widths=(8,), time_dim=8)
    rng = np.random.default_rng(9)
    fb = make_flow_batch(rng, rng.standard_normal((4, 3)), rng.uniform(-1, 1, (4, 2)))
    model = CompletionModel.init(arch, seed=3)
    parts: dict[str, bool] = {}

    # bootstrap target: a trainable copy bound as the target receives no gradient
    target_block = model.params.copy()
    target_live = LiveParams(target_block, trainable=True)
    loss = bootstrap_shortcut_loss(model.bind(), arch, fb, 1.0 - fb.tau, target_live=target_live)
    loss.backward()
    parts["bootstrap_target"] = all(
        np.all(g == 0.0) for g in target_live.grads().values()
    )

    # Q normalizer: pinning it to its own detached value leaves gradients unchanged
    critics = CriticPair.init(CriticArch(3, 2, widths=(8,)), seed=4)

    def actor_grads(pin: float | None) -> dict[str, np.ndarray]:
        live = model.bind(trainable=True)
        endpoint = completion_endpoint(live, arch, fb)
        loss, norm = actor_q_loss(endpoint, fb.s, critics.q1, critics.q2, normalizer=pin)
        loss.backward()
        actor_grads.norm = norm
        return live.grads()

    g_auto = actor_grads(None)
    g_pinned = actor_grads(actor_grads.norm)
    parts["q_normalizer"] = all(
        np.array_equal(g_auto[k], g_pinned[k]) for k in g_auto
    )

    twin = _toy_twin(seed=5)
    gb = _toy_goal_batch(twin, seed=6)
    policy = _toy_policy(seed=7)

    # AWR advantages: value blocks that produced them receive no gradient
    live_enc = LiveParams(twin.enc, trainable=True)
    live_v1 = LiveParams(twin.v1, trainable=True)
    live_v2 = LiveParams(twin.v2, trainable=True)
    awr = awr_loss(policy, policy.bind(), twin.enc, gb, level=0, cfg=GC_SMALL)
    awr.backward()
    parts["awr_advantages"] = all(
        np.all(g == 0.0)
        for lv in (live_enc, live_v1, live_v2)
        for g in lv.grads().values()
    )

    # distillation targets: a trainable copy bound as the sampler gets no gradient
    target_policy = policy.params.copy()
    tl = LiveParams(target_policy, trainable=True)
    dloss = distill_loss(policy, policy.bind(), twin.enc, gb, stream_rng(8, "d"),
                         target_live=tl)
    dloss.backward()
    parts["distill_targets"] = all(np.all(g == 0.0) for g in tl.grads().values())

    ok = all(parts.values())
    acceptance(4, "stop-gradient exact zeros", ok,
             ", ".join(f"{k}={'0' if v else 'LEAK'}" for k, v in parts.items()))


# --------------------------------------------------------------------------
# 5. actor loss invariant to critic output scale


def test_criterion_05_q_normalization_scale_invariance(acceptance):
    arch = CompletionArch(state_dim=3, action_dim=2, widths=(8,), time_dim=8)
    rng = np.random.default_rng(13)
    fb = make_flow_batch(rng, rng.standard_normal((6, 3)), rng.uniform(-1, 1, (6, 2)))
    model = CompletionModel.init(arch, seed=5)
    critics = CriticPair.init(CriticArch(3, 2, widths=(8,)), seed=6)
    cfg = TrainConfig(widths=(8,), time_dim=8, q_term=True)

    def loss_at_scale(c: float) -> float:
        q1, q2 = critics.q1.copy(), critics.q2.copy()
        last = max(i for i in range(9) if f"q.l{i}.w" in q1)
        for block in (q1, q2):
            block[f"q.l{last}.w"] = block[f"q.l{last}.w"] * c
            block[f"q.l{last}.b"] = block[f"q.l{last}.b"] * c
        loss, _ = actor_loss(model.bind(), arch, fb, cfg, q1=q1, q2=q2)
        return loss.item()

    base = loss_at_scale(1.0)
    rels = {c: abs(loss_at_scale(c) - base) / abs(base) for c in (0.01, 1.0, 100.0)}
    worst = max(rels.values())
    acceptance(
        5, "Q-normalization invariance", worst < 1e-12,
        f"actor loss rel change over c in {{0.01, 1, 100}}: worst {worst:.2e} (< 1e-12)",
    )


# --------------------------------------------------------------------------
# 6. one-step generative recovery on the eight-mode bandit


@pytest.fixture(scope="session")
def bandit_bc(tmp_path_factory):
    """Completion-regularized BC on the mixture bandit, with an energy-distance
    trace over eval checkpoints. Shared by criterion 6 and the trend check."""
    tmp = tmp_path_factory.mktemp("bandit")
    t0 = time.perf_counter()
    generate_dataset("mixture_bandit", "expert", 50_000, seed=0, out_dir=tmp / "train")
    generate_dataset("mixture_bandit", "expert", 4096, seed=1, out_dir=tmp / "held")
    ds = load_dataset(tmp / "train")
    held = load_dataset(tmp / "held").a

    # brute-force oracle: energy distance between random halves of the held pool
    rng = np.random.default_rng(0)
    half = len(held) // 2
    splits = []
    for _ in range(4):
        perm = rng.permutation(len(held))
        splits.append(energy_distance(held[perm[:half]], held[perm[half:]]))
    baseline = float(np.mean(splits))

    cfg = TrainConfig(
        widths=(256, 256), q_term=False, batch=256,
        completion_variant="bootstrap",
        # rung 1.0 appears twice so full jumps get double sampling weight
        bootstrap_steps=(1.0, 1.0, 0.5, 0.25, 0.125),
    )
    state = SSCQLState.init(cfg, 2, 2, seed=0, action_bound=1.0)
    dummy = np.zeros(cfg.batch)
    order = stream_rng(0, "order")
    curve = []
    for k in range(20_000):
        idx = order.integers(0, len(ds.a), size=cfg.batch)
        train_step(state, TransitionBatch(ds.s[idx], ds.a[idx], dummy, ds.sp[idx], dummy))
        if (k + 1) % 2000 == 0:
            ema = CompletionModel(state.arch, state.actor_target)
            one = sample_one_step(
                ema, np.zeros((2048, 2)), stream_rng(50 + k, "ckpt"), clip_to=1.0
            )
            curve.append(energy_distance(one, held))
    return {
        "state": state,
        "held": held,
        "baseline": baseline,
        "curve": curve,
        "elapsed": time.perf_counter() - t0,
    }


def test_criterion_06_one_step_matches_euler_on_bandit(acceptance, bandit_bc):
    state = bandit_bc["state"]
    held = bandit_bc["held"]
    base = bandit_bc["baseline"]
    # final weights are the slow EMA copy, the same blocks bootstrap targets use
    ema = CompletionModel(state.arch, state.actor_target)
    srng = stream_rng(99, "final")
    one = sample_one_step(ema, np.zeros((2048, 2)), srng, clip_to=1.0)
    eul = sample_euler(ema, np.zeros((2048, 2)), srng, n_steps=32, clip_to=1.0)
    e1 = energy_distance(one, held)
    e32 = energy_distance(eul, held)
    cov = mode_coverage(one, MixtureBandit().centers, 0.15)
    mins = bandit_bc["elapsed"] / 60.0
    ok = (
        e1 <= 1.5 * e32
        and cov >= 7
        and e1 <= 3.0 * base
        and e32 <= 3.0 * base
        and mins < 10.0
    )
    acceptance(
        6, "one-step generative recovery", ok,
        f"ED one-step {e1:.4f} = {e1 / e32:.2f}x Euler-32 (<= 1.5), "
        f"{e1 / base:.2f}x split-half oracle (<= 3, Euler {e32 / base:.2f}x), "
        f"coverage {cov}/8 (>= 7), {mins:.1f} min (< 10)",
    )


def test_one_step_energy_distance_trend_under_bc(bandit_bc):
    # with the Q term off, sample quality improves as training proceeds;
    # each eval checkpoint may sit at most 10% above the previous one
    curve = bandit_bc["curve"]
    ratios = [curve[i + 1] / curve[i] for i in range(len(curve) - 1)]
    assert max(ratios) <= 1.10, f"curve {['%.4f' % c for c in curve]}"


# --------------------------------------------------------------------------
# 7. offline training beats the data-collecting policy


@pytest.fixture(scope="session")
def medium_dataset(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("reach_medium")
    generate_dataset("point_reach", "medium", 100_000, seed=0, out_dir=tmp)
    return load_dataset(tmp)


@pytest.fixture(scope="session")
def sscql_medium_runs(medium_dataset, tmp_path_factory):
    """Three seeds of the full objective at default settings; criterion 8 reuses
    these as its best completion-weight column."""
    out = tmp_path_factory.mktemp("sscql_medium")
    runs = []
    for seed in (0, 1, 2):
        t0 = time.perf_counter()
        res = run_offline(medium_dataset, TrainConfig(), seed=seed, out_dir=out / f"s{seed}")
        runs.append({"score": res.final_score, "minutes": (time.perf_counter() - t0) / 60})
    return runs


def test_criterion_07_sscql_improves_over_behavior(acceptance, medium_dataset,
                                                   sscql_medium_runs, tmp_path_factory):
    meta = medium_dataset.meta
    behavior = normalized_score(meta, meta.behavior_return_mean)
    out = tmp_path_factory.mktemp("bc_medium")
    bc_scores = []
    for seed in (0, 1, 2):
        res = run_offline(medium_dataset, TrainConfig(q_term=False), seed=seed,
                          out_dir=out / f"s{seed}")
        bc_scores.append(res.final_score)
    scores = [r["score"] for r in sscql_medium_runs]
    minutes = [r["minutes"] for r in sscql_medium_runs]
    ok = (
        all(s >= behavior + 10.0 for s in scores)
        and all(abs(b - behavior) <= 5.0 for b in bc_scores)
        and all(m < 15.0 for m in minutes)
    )
    acceptance(
        7, "offline improvement over behavior", ok,
        f"behavior {behavior:.1f}; SSCQL {['%.1f' % s for s in scores]} (each >= +10); "
        f"BC control {['%.1f' % b for b in bc_scores]} (each within +-5); "
        f"max {max(minutes):.1f} min/seed (< 15)",
    )


# --------------------------------------------------------------------------
# 8. ablation directions: completion weight and bootstrap coefficient


@pytest.fixture(scope="session")
def expert_dataset(tmp_path_factory):
    """Narrow-support corpus: the scripted expert is deterministic, so the
    critic is only grounded on the expert manifold and unregularized
    maximization can wander off it."""
    tmp = tmp_path_factory.mktemp("reach_expert")
    generate_dataset("point_reach", "expert", 100_000, seed=0, out_dir=tmp)
    return load_dataset(tmp)


def _score_or_divergence(dataset, cfg, seed, out_dir) -> float:
    # a run that hits non-finite numbers is the strongest form of degradation
    try:
        return run_offline(dataset, cfg, seed=seed, out_dir=out_dir).final_score
    except TrainingError:
        return float("-inf")


def test_criterion_08_ablation_directions(acceptance, medium_dataset, expert_dataset,
                                          tmp_path_factory):
    out = tmp_path_factory.mktemp("ablations")

    on_scores = [
        _score_or_divergence(expert_dataset, TrainConfig(eval_episodes=30), seed,
                             out / f"on_s{seed}")
        for seed in (0, 1, 2)
    ]
    zero_scores = [
        _score_or_divergence(expert_dataset,
                             TrainConfig(alpha_completion=0.0, eval_episodes=30),
                             seed, out / f"zero_s{seed}")
        for seed in (0, 1, 2)
    ]
    best = float(np.median(on_scores))
    zero = float(np.median(zero_scores))

    medians = {}
    for coeff in (0.05, 0.5, 5.0):
        runs = [
            _score_or_divergence(
                medium_dataset,
                TrainConfig(completion_variant="bootstrap", alpha_completion=coeff,
                            steps=5000, eval_episodes=30),
                seed, out / f"boot_{coeff}_s{seed}",
            )
            for seed in (0, 1, 2)
        ]
        medians[coeff] = float(np.median(runs))

    trend = medians[0.05] >= medians[0.5] >= medians[5.0]
    ok = zero <= best - 10.0 and trend
    acceptance(
        8, "ablation directions", ok,
        f"completion off {zero:.1f} vs on {best:.1f} (gap >= 10, expert data); "
        f"bootstrap coeff medians {medians[0.05]:.1f} >= {medians[0.5]:.1f} >= "
        f"{medians[5.0]:.1f} (medium data)",
    )


# --------------------------------------------------------------------------
# 9. online adaptation never collapses and from-scratch learning works


def test_criterion_09_online_adaptation(acceptance, medium_dataset, tmp_path_factory):
    out = tmp_path_factory.mktemp("online")
    pairs = []
    for seed in (0, 1, 2):
        res = run_offline_to_online(
            medium_dataset, TrainConfig(online_steps=10_000), seed=seed,
            out_dir=out / f"ft_s{seed}",
        )
        evals = [
            json.loads(line) for line in res.log_path.read_text().splitlines()
        ]
        offline_final = next(
            r["score"] for r in evals if r.get("kind") == "eval" and r["step"] == 10_000
        )
        pairs.append((offline_final, res.final_score))

    scratch = run_online(
        "point_reach", TrainConfig(online_steps=50_000), seed=0, out_dir=out / "scratch"
    ).final_score

    ok = all(on >= off - 5.0 for off, on in pairs) and scratch >= 90.0
    acceptance(
        9, "online adaptation", ok,
        "finetune offline->online " +
        ", ".join(f"{off:.1f}->{on:.1f}" for off, on in pairs) +
        f" (each drop <= 5); fully-online 50k {scratch:.1f} (>= 90)",
    )


# --------------------------------------------------------------------------
# 10. goal-conditioned values match the shortest-path oracle


@pytest.fixture(scope="session")
def maze_play_dataset(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("maze_play")
    generate_dataset("point_maze", "play", 50_000, seed=0, out_dir=tmp, traj_len=50)
    return load_dataset(tmp)


def test_criterion_10_gcivl_matches_shortest_path_oracle(acceptance, maze_play_dataset):
    t0 = time.perf_counter()
    ds = maze_play_dataset
    cfg = GCConfig(gamma=0.8, expectile=0.7, lr=1e-3, train_policy=False, steps=20_000)
    store = TrajStore(ds)
    state = GCState.init(cfg, ds.s.shape[1], ds.a.shape[1], store.goal_dim,
                         seed=0, action_bound=1.0)
    for _ in range(cfg.steps):
        gc_train_step(state, store)

    cells = maze_open_cells(DEFAULT_MAZE)
    worst = 0.0
    n_pairs = 0
    for goal in cells:
        dist = maze_bfs_distances(DEFAULT_MAZE, goal)
        g = maze_cell_center(goal)[None, :]
        for cell in cells:
            d = dist.get(cell)
            if d is None or d > 15:
                continue
            s = maze_cell_center(cell)[None, :]
            v = min(
                float(value_np(state.twin.v1_target, state.twin.enc, s, g)[0]),
                float(value_np(state.twin.v2_target, state.twin.enc, s, g)[0]),
            )
            oracle = -(1.0 - cfg.gamma ** d) / (1.0 - cfg.gamma)
            worst = max(worst, abs(v - oracle))
            n_pairs += 1
    mins = (time.perf_counter() - t0) / 60.0
    ok = worst <= 0.1 and mins < 10.0
    acceptance(
        10, "goal-value correctness", ok,
        f"max |V - oracle| {worst:.3f} (<= 0.1) over {n_pairs} (cell, goal) pairs "
        f"with d <= 15; {mins:.1f} min (< 10)",
    )


# --------------------------------------------------------------------------
# 11. flat inference matches the two-stage hierarchy it distilled from


def test_criterion_11_flat_matches_hierarchical(acceptance, maze_play_dataset):
    ds = maze_play_dataset
    cfg = GCConfig(steps=20_000)
    store = TrajStore(ds)
    state = GCState.init(cfg, ds.s.shape[1], ds.a.shape[1], store.goal_dim,
                         seed=0, action_bound=1.0)
    for _ in range(cfg.steps):
        gc_train_step(state, store)

    calls = [0]
    orig = HierarchyPolicy.raw_forward

    def counting(self, live, s, cond, k, d):
        calls[0] += 1
        return orig(self, live, s, cond, k, d)

    rng = np.random.default_rng(0)
    s0 = np.zeros((1, 2))
    g0 = np.ones((1, 2))
    try:
        HierarchyPolicy.raw_forward = counting
        infer_flat(state.policy, state.twin.enc, s0, g0, rng, clip_to=1.0)
        n_flat = calls[0]
        calls[0] = 0
        infer_hierarchical(state.policy, state.twin.enc, s0, g0, rng, clip_to=1.0)
        n_hier = calls[0]
    finally:
        HierarchyPolicy.raw_forward = orig

    flat_rates = []
    hier_rates = []
    for eval_seed in range(8):
        flat_rates.append(evaluate_goal_policy(
            state.policy, state.twin.enc, "point_maze", "flat", 50, eval_seed
        )[0])
        hier_rates.append(evaluate_goal_policy(
            state.policy, state.twin.enc, "point_maze", "hier", 50, eval_seed
        )[0])
    flat = float(np.mean(flat_rates))
    hier = float(np.mean(hier_rates))
    gap = abs(flat - hier) * 100.0
    ok = gap <= 10.0 and n_flat == 1 and n_hier == 2
    acceptance(
        11, "flat vs hierarchical parity", ok,
        f"success flat {flat:.3f} vs hier {hier:.3f} over 8 seeds x 50 episodes x "
        f"5 goals, gap {gap:.1f} pp (<= 10); policy forwards per action "
        f"{n_flat} vs {n_hier} (== 1 vs 2)",
    )


# --------------------------------------------------------------------------
# 12. one-step inference latency


def test_criterion_12_one_step_latency_advantage(acceptance):
    arch = CompletionArch(state_dim=4, action_dim=2, widths=(256, 256), time_dim=64)
    model = CompletionModel.init(arch, seed=0)
    states = np.random.default_rng(0).standard_normal((16, 4))
    report = bench_inference(model, states, n_actions=10_000, euler_steps=32, seed=0)
    ok = report["speedup"] >= 10.0
    acceptance(
        12, "inference latency", ok,
        f"one-step {report['one_step_per_action_s'] * 1e3:.3f} ms/action vs "
        f"Euler-32 {report['euler_per_action_s'] * 1e3:.3f} ms/action, "
        f"speedup {report['speedup']:.1f}x (>= 10x)",
    )


# --------------------------------------------------------------------------
# 13. bit-identical reproducibility


def test_criterion_13_reproducibility(acceptance, tmp_path):
    checks: dict[str, bool] = {}

    d1, d2 = tmp_path / "data1", tmp_path / "data2"
    generate_dataset("point_reach", "medium", 300, seed=5, out_dir=d1)
    generate_dataset("point_reach", "medium", 300, seed=5, out_dir=d2)
    checks["dataset_bytes"] = all(
        (d1 / n).read_bytes() == (d2 / n).read_bytes()
        for n in ("meta.json", "transitions.csv")
    )

    ds = load_dataset(d1)
    cfg = TrainConfig(widths=(16,), time_dim=8, batch=16, steps=30,
                      eval_every=15, eval_episodes=2, log_every=10)
    r1 = run_offline(ds, cfg, seed=4, out_dir=tmp_path / "run1")
    r2 = run_offline(ds, cfg, seed=4, out_dir=tmp_path / "run2")
    checks["sscql_log_bytes"] = r1.log_path.read_bytes() == r2.log_path.read_bytes()
    checks["sscql_checkpoint_bytes"] = (
        r1.checkpoint_path.read_bytes() == r2.checkpoint_path.read_bytes()
    )

    m1, m2 = tmp_path / "maze1", tmp_path / "maze2"
    generate_dataset("point_maze", "play", 240, seed=2, out_dir=m1, traj_len=12)
    maze = load_dataset(m1)
    gcfg = GCConfig(widths=(16,), goal_rep_dim=4, level_dim=8, batch=16, steps=20,
                    eval_every=20, eval_episodes=1, log_every=10, subgoal_steps=3)
    g1 = run_gcrl(maze, gcfg, seed=1, out_dir=tmp_path / "g1")
    g2 = run_gcrl(maze, gcfg, seed=1, out_dir=tmp_path / "g2")
    checks["gcrl_log_bytes"] = g1.log_path.read_bytes() == g2.log_path.read_bytes()
    checks["gcrl_checkpoint_bytes"] = (
        g1.checkpoint_path.read_bytes() == g2.checkpoint_path.read_bytes()
    )

    ok = all(checks.values())
    acceptance(13, "reproducibility", ok,
             ", ".join(f"{k}={'ok' if v else 'DIFF'}" for k, v in checks.items()))
