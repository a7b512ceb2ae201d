import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from ra3c.autodiff import Tape, backward
from ra3c.config import RunConfig
from ra3c.net import EncoderVariant, NetConfig, build, forward, initial_hidden
from ra3c.runner import train
from ra3c.trainer import (EpisodeLog, EpisodeRecord, RespawnStrategy, RolloutBatch, StepBudget, TrainerConfig,
                          Transition, compute_loss, n_step_targets, read_episodes, respawn_choice)

TINY = dict(input_size=32, lstm_size=8, fc_size=8, encoder="mnih", tracks="gen:1:600:0.2", workers=1,
            checkpoint_interval=0)


def _batch(rewards, bootstrap=0.0, terminal=False):
    ts = [Transition(None, 0, r, 0.0, 0.5) for r in rewards]
    ts[-1].terminal = terminal
    return RolloutBatch(ts, bootstrap)


def brute_force_targets(rewards, gamma, bootstrap):
    k = len(rewards)
    return [sum(gamma ** i * rewards[t + i] for i in range(k - t)) + gamma ** (k - t) * bootstrap for t in range(k)]


def test_targets_example():
    assert n_step_targets(_batch([1, 2, 3], 10.0), 0.9) == pytest.approx([12.52, 12.8, 12.0], abs=1e-12)


def test_terminal_batch_ignores_bootstrap():
    assert n_step_targets(_batch([4.0], terminal=True), 0.7) == [4.0]
    with pytest.raises(ValueError):
        _batch([1.0], bootstrap=3.0, terminal=True)


def test_myopic_targets():
    assert n_step_targets(_batch([1, -2, 3], 5.0), 0.0) == [1, -2, 3]


def test_targets_reject_empty_and_bad_gamma():
    with pytest.raises(ValueError):
        n_step_targets(RolloutBatch([]), 0.9)
    with pytest.raises(ValueError):
        n_step_targets(_batch([1.0]), 1.0)


@settings(max_examples=200)
@given(st.lists(st.floats(-10, 10), min_size=1, max_size=8), st.floats(0, 0.999), st.floats(-50, 50))
def test_targets_match_direct_summation(rewards, gamma, bootstrap):
    got = n_step_targets(_batch(rewards, bootstrap), gamma)
    assert got == pytest.approx(brute_force_targets(rewards, gamma, bootstrap), abs=1e-6)


def test_transition_validation():
    with pytest.raises(ValueError):
        Transition(None, 0, 0.0, 0.0, 0.0)
    with pytest.raises(ValueError):
        Transition(None, 0, 0.0, float("nan"), 0.5)


def test_trainer_config_validation():
    with pytest.raises(ValueError):
        TrainerConfig(gamma=1.5)
    with pytest.raises(ValueError):
        TrainerConfig(t_max=0)
    assert TrainerConfig(respawn="random_checkpoint").respawn is RespawnStrategy.RANDOM_CHECKPOINT


def test_respawn_start_is_always_zero():
    rng = np.random.default_rng(0)
    assert {respawn_choice(RespawnStrategy.START, 10, rng) for _ in range(100)} == {0}
    with pytest.raises(ValueError):
        respawn_choice(RespawnStrategy.START, 0, rng)


def test_respawn_random_is_uniform():
    rng = np.random.default_rng(1)
    draws = [respawn_choice(RespawnStrategy.RANDOM_CHECKPOINT, 10, rng) for _ in range(10_000)]
    counts = np.bincount(draws, minlength=10)
    assert stats.chisquare(counts).pvalue > 1e-3
    # any single checkpoint: binomial(10000, 0.1) within a 4-sigma band
    assert np.all(np.abs(counts - 1000) < 4 * math.sqrt(10_000 * 0.1 * 0.9))


def test_positive_advantage_raises_action_probability():
    cfg = NetConfig(EncoderVariant.MNIH, (3, 32, 32), lstm_size=8, fc_size=8)
    params, _ = build(cfg, 3)
    params = params.astype(np.float64)
    rng = np.random.default_rng(0)
    frame = rng.uniform(0, 1, (3, 32, 32))
    for action in (0, 13, 31):
        tape = Tape()
        out = forward(cfg, tape.watch(params), frame, 5.0, None, initial_hidden(cfg, np.float64), tape)
        p0 = out.policy[action]
        batch = RolloutBatch([Transition(None, action, 1.0, out.value, p0, terminal=True)])
        targets = [out.value + 2.0]  # advantage +2
        loss = compute_loss(batch, targets, [out.logits], [out.value_node], beta=0.0, value_coef=0.5)
        grads = backward(tape, loss, params)
        stepped = params.copy()
        for k in stepped.names:
            stepped.segments[k] -= 1e-3 * grads.segments[k]
        p1 = forward(cfg, stepped, frame, 5.0, None, initial_hidden(cfg, np.float64)).policy[action]
        assert p1 > p0


def test_budget_claims_never_exceed_total():
    b = StepBudget(12)
    assert [b.claim(5), b.claim(5), b.claim(5), b.claim(5)] == [5, 5, 2, 0]
    assert b.exhausted


def test_released_steps_can_be_claimed_again():
    b = StepBudget(10)
    assert b.claim(5) == 5 and b.claim(5) == 5 and b.exhausted
    b.release(3)
    assert not b.exhausted and b.claim(5) == 3


@pytest.mark.parametrize("schedule", ["interleaved", "threads"])
def test_episodes_ending_mid_rollout_use_the_whole_budget(tmp_path, schedule):
    # a step cap of 7 ends every episode partway through a 5-step rollout
    cfg = RunConfig(**{**TINY, "workers": 3, "schedule": schedule}, max_steps=500, episode_step_cap=7)
    res = train(cfg, tmp_path)
    assert sum(s.steps for s in res.stats) == 500 == sum(r.steps for r in res.records)


def test_zero_budget_gives_no_pushes_and_header_only_log(tmp_path):
    res = train(RunConfig(**TINY, max_steps=0), tmp_path)
    assert res.store.version == 0 and res.records == []
    assert (tmp_path / "episodes.csv").read_text().strip() == \
        "worker,episode,start_checkpoint,steps,distance_m,mean_speed_kmh,hits,crash_reason"


def test_short_run_accounting(tmp_path):
    res = train(RunConfig(**{**TINY, "workers": 2}, max_steps=1200, seed=4), tmp_path)
    st_ = res.stats
    assert sum(s.steps for s in st_) == 1200 == sum(r.steps for r in res.records)
    assert res.store.version == sum(s.pushes for s in st_) == res.store.pushes
    rows = read_episodes(tmp_path / "episodes.csv")
    assert len(rows) == len(res.records)
    for row, rec in zip(rows, res.records):
        # distance is the sum of per-step progress, i.e. it telescopes to s_end - s_start
        assert row["distance_m"] == pytest.approx(rec.s_end - rec.s_start, abs=1e-3)
        assert rec.s_min <= min(rec.s_start, rec.s_end) and rec.s_max >= max(rec.s_start, rec.s_end)
        assert rec.crash_reason in ("stalled", "wrong_way", "off_road", "finished", "step_cap", "budget")
    assert res.records[-1].crash_reason == "budget" or rows[-1]["crash_reason"] != ""


def test_step_cap_truncates_episodes(tmp_path):
    res = train(RunConfig(**TINY, max_steps=300, episode_step_cap=40), tmp_path)
    capped = [r for r in res.records if r.crash_reason == "step_cap"]
    assert capped and all(r.steps == 40 for r in capped)


def test_in_process_training_is_deterministic(tmp_path):
    cfg = RunConfig(**{**TINY, "workers": 2}, max_steps=800, seed=11)
    train(cfg, tmp_path / "a")
    train(cfg, tmp_path / "b")
    assert (tmp_path / "a" / "episodes.csv").read_bytes() == (tmp_path / "b" / "episodes.csv").read_bytes()
    assert (tmp_path / "a" / "final.ckpt").read_bytes() == (tmp_path / "b" / "final.ckpt").read_bytes()


def test_different_seeds_differ(tmp_path):
    train(RunConfig(**TINY, max_steps=600, seed=1), tmp_path / "a")
    train(RunConfig(**TINY, max_steps=600, seed=2), tmp_path / "b")
    assert (tmp_path / "a" / "final.ckpt").read_bytes() != (tmp_path / "b" / "final.ckpt").read_bytes()


def test_threaded_schedule_runs(tmp_path):
    res = train(RunConfig(**{**TINY, "workers": 3, "schedule": "threads"}, max_steps=600), tmp_path)
    assert sum(s.steps for s in res.stats) == 600
    assert res.store.version == sum(s.pushes for s in res.stats)


def test_episode_log_roundtrip(tmp_path):
    log = EpisodeLog(tmp_path)
    rec = EpisodeRecord(2, 5, 3, steps=10, distance_m=12.3456, speed_sum=100.0, hits=1, crash_reason="off_road",
                        s_start=600.0, s_min=598.0, s_max=613.0, s_end=612.3456)
    log.append(rec)
    log.close()
    (row,) = read_episodes(tmp_path / "episodes.csv")
    assert row["mean_speed_kmh"] == pytest.approx(36.0) and row["distance_m"] == 12.346
    assert row["s_max"] == 613.0 and row["crash_reason"] == "off_road"
