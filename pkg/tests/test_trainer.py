import json

import numpy as np
import pytest
from oracles import StepRecorder, moved_groups, parameter_copies, small_config

from promptdiff.envdata import TaskDataset, TaskSpec, constant_action_dataset, generate_dataset
from promptdiff.errors import ConfigError, LoadError
from promptdiff.policy import PolicyContext, diffusion_loss, draw_chain_noise, draw_diffusion_noise, sample_action
from promptdiff.prompts import TextPrompt, TrajectoryPrompt
from promptdiff.trainer import (
    LAMBDA_FLOOR,
    TrainerConfig,
    actor_gradients,
    build_state,
    checkpoint,
    effective_lambda,
    restore,
    sample_batch,
    train,
    train_epoch,
    train_step,
)

SPECS = [TaskSpec("a", (0.7, 0.6), action_scale=0.5), TaskSpec("b", (-0.6, 0.5), action_scale=0.3)]


@pytest.fixture(scope="module")
def data():
    return generate_dataset(SPECS, 2, 0.2, seed=0)


ENCODERS = {"text_head", "traj_encoder"}
CRITICS = {"q1", "q2"}


# ---- config ----------------------------------------------------------------

def test_default_config_values():
    cfg = TrainerConfig()
    assert (cfg.gamma, cfg.lam, cfg.lambda_normalize, cfg.batch_size, cfg.steps_per_epoch) == (0.99, 1.0, True, 256, 100)
    assert (cfg.K, cfg.beta_min, cfg.beta_max, cfg.polyak_tau) == (5, 0.1, 10.0, 0.005)
    assert cfg.validate() is cfg


def test_config_file_round_trip(tmp_path):
    cfg = TrainerConfig(lam=0.25, seed=9, ablation="no_text")
    cfg.save(tmp_path / "c.json")
    assert TrainerConfig.load(tmp_path / "c.json") == cfg


@pytest.mark.parametrize("doc, match", [
    ({"lambda": 1.0}, "unknown config keys"),
    ({"batch_size": 2.5}, "integer"),
    ({"batch_size": True}, "integer"),
    ({"lam": "big"}, "number"),
    ({"lambda_normalize": 1}, "true or false"),
    ({"ablation": 3}, "string"),
])
def test_config_rejects_bad_documents(doc, match):
    with pytest.raises(ConfigError, match=match):
        TrainerConfig.from_dict(doc)


def test_config_load_errors(tmp_path):
    (tmp_path / "bad.json").write_text("{not json")
    with pytest.raises(ConfigError):
        TrainerConfig.load(tmp_path / "bad.json")
    (tmp_path / "list.json").write_text("[1, 2]")
    with pytest.raises(ConfigError):
        TrainerConfig.load(tmp_path / "list.json")
    with pytest.raises(ConfigError):
        TrainerConfig.load(tmp_path / "missing.json")


@pytest.mark.parametrize("field, value", [
    ("gamma", 1.0), ("lam", -0.1), ("polyak_tau", 0.0), ("batch_size", 0), ("lr_policy", 0.0),
    ("num_heads", 3), ("d_time", 7), ("ablation", "nope"), ("text_encoder", "bert"),
])
def test_config_validation(field, value):
    with pytest.raises(ConfigError):
        TrainerConfig(**{field: value}).validate()


def test_trajectory_diffusion_stub_is_rejected_with_an_explanation():
    with pytest.raises(ConfigError, match="not implemented"):
        build_state(TrainerConfig(ablation="trajectory_diffusion_stub"))


# ---- lambda ----------------------------------------------------------------

def test_effective_lambda_examples():
    assert effective_lambda(TrainerConfig(lam=0.3, lambda_normalize=False), [5.0, -7.0]) == 0.3
    assert effective_lambda(TrainerConfig(lam=1.0), [2.0, -2.0, 2.0]) == 0.5
    assert effective_lambda(TrainerConfig(lam=1.0), np.zeros(4)) == 1.0 / LAMBDA_FLOOR
    with pytest.raises(ValueError):
        effective_lambda(TrainerConfig(), [])


# ---- one update ------------------------------------------------------------

def test_state_shapes_follow_the_config():
    st = build_state(small_config())
    assert st.policy.input_dim == 2 + 6 + 2 * 6 + 8
    assert st.critic.q1.input_dim == 6 + 2 + 2 * 6
    assert st.text_head.in_dim == 32 and st.text_head.out_dim == 6
    assert not st.critic.q1_target.trainable


def test_dimension_mismatch_fails_before_any_update(data):
    st = build_state(small_config(state_dim=5))
    digest = st.parameter_digest()
    with pytest.raises(ConfigError, match="state=6"):
        train_epoch(st, data)
    assert st.parameter_digest() == digest and st.epoch == 0
    with pytest.raises(ConfigError):
        train_epoch(build_state(small_config()), [])


def test_zero_lambda_actor_step_is_pure_behavior_cloning(data):
    cfg = small_config(lam=0.0)
    st, ref = build_state(cfg), build_state(cfg)
    ds = data[0]
    train_step(st, ds)

    # replay the same random draws by hand, using only the diffusion loss
    rng = ref.rng
    s, a, r, s2, term = sample_batch(ds, cfg.batch_size, rng)
    zt, zj = ref.embed(ds.text_prompt, ds.trajectory_prompt, cache=True)
    sample_action(ref.policy, ref.schedule, PolicyContext(s2, zt, zj), rng)
    rng.integers(2)
    draw_chain_noise(rng, cfg.K, cfg.batch_size, cfg.action_dim)
    k, eps = draw_diffusion_noise(rng, cfg.K, cfg.batch_size, cfg.action_dim)
    ref.policy.zero_grad()
    _, din = diffusion_loss(ref.policy, ref.schedule, a, PolicyContext(s, zt, zj), k=k, eps=eps)
    ref.optimizers["policy"].step()
    for name, p in st.policy.named_parameters():
        assert p.tobytes() == ref.policy.parameters()[name].tobytes(), name


def test_actor_gradient_is_the_difference_of_the_two_branches(data):
    st = build_state(small_config(lam=0.7))
    ds = data[1]
    rng = np.random.default_rng(4)
    s, a, *_ = sample_batch(ds, 16, rng)
    zt, zj = st.embed(ds.text_prompt, ds.trajectory_prompt)
    noise = draw_chain_noise(rng, 5, 16, 2)
    k, eps = draw_diffusion_noise(rng, 5, 16, 2)
    ag = actor_gradients(st, s, a, zt, zj, 1, noise, k, eps)
    assert ag.lam_eff == pytest.approx(0.7 / ag.mean_abs_q, rel=1e-15)
    for name, g in ag.total.items():
        np.testing.assert_array_equal(g, ag.grad_d[name] - ag.lam_eff * ag.grad_r[name])
        assert np.any(ag.grad_r[name]) or np.any(ag.grad_d[name])


def test_routing_of_every_optimizer_step(data):
    st = build_state(small_config())
    rec = StepRecorder(st)
    for _ in range(3):
        train_step(st, data[0])
    for group, moved, _ in rec.events:
        if group == "critic":
            assert moved <= CRITICS and moved
        elif group == "policy":
            assert moved == {"policy"}
        else:
            assert moved == {group}


def test_polyak_moves_only_targets(data):
    st = build_state(small_config())
    before = parameter_copies(st)
    rec = StepRecorder(st)
    train_step(st, data[0])
    optimizer_moves = set().union(*(m for _, m, _ in rec.events))
    assert moved_groups(before, parameter_copies(st)) - optimizer_moves == {"q1_target", "q2_target"}


@pytest.mark.parametrize("ablation, zero_text, zero_traj", [
    ("no_prompt", True, True), ("no_text", True, False), ("no_traj", False, True), ("full", False, False),
])
def test_ablation_masks(ablation, zero_text, zero_traj, data):
    st = build_state(small_config(ablation=ablation))
    zt, zj = st.embed(data[0].text_prompt, data[0].trajectory_prompt)
    assert (not zt.any()) == zero_text and (not zj.any()) == zero_traj
    before = parameter_copies(st)
    train_epoch(st, data)
    moved = moved_groups(before, parameter_copies(st))
    assert ("text_head" in moved) == (not zero_text)
    assert ("traj_encoder" in moved) == (not zero_traj)
    assert st.text_head.tape_depth() == 0 and st.traj_encoder.tape_depth() == 0


def test_no_prompt_encoders_receive_exactly_zero_gradient(data):
    st = build_state(small_config(ablation="no_prompt"))
    train_step(st, data[0])
    for module in (st.text_head, st.traj_encoder):
        assert all(not g.any() for _, g in module.named_grads())


def test_metrics_and_epoch_counter(data, tmp_path):
    st = build_state(small_config())
    path = tmp_path / "m.jsonl"
    history = train(st, data, 3, metrics_path=path)
    train(st, data, 1, metrics_path=path)
    records = [json.loads(line) for line in path.read_text().splitlines()]
    assert [r["epoch"] for r in records] == [1, 2, 3, 4] and st.epoch == 4
    assert records[:3] == history
    for r in records:
        assert set(r) == {"loss_d", "loss_r", "loss_q1", "loss_q2", "mean_abs_q", "lam_eff", "epoch", "task"}
        assert r["task"] in ("a", "b")


# ---- determinism and persistence -------------------------------------------

def test_identical_runs_are_bitwise_identical(data):
    a, b = build_state(small_config()), build_state(small_config())
    train(a, data)
    train(b, data)
    assert a.parameter_digest() == b.parameter_digest()
    assert a.rng.bit_generator.state == b.rng.bit_generator.state
    c = build_state(small_config(seed=1))
    train(c, data)
    assert c.parameter_digest() != a.parameter_digest()


def test_resume_from_checkpoint_is_identical(data, tmp_path):
    cfg = small_config()
    straight = build_state(cfg)
    train(straight, data, 2)
    resumed = build_state(cfg)
    train(resumed, data, 1)
    checkpoint(resumed, tmp_path / "ck")
    resumed = restore(tmp_path / "ck", expected=cfg)
    assert resumed.epoch == 1
    train(resumed, data, 1)
    assert resumed.parameter_digest() == straight.parameter_digest()
    for group, opt in straight.optimizers.items():
        other = resumed.optimizers[group].state
        assert opt.state.hyper() == other.hyper()
        for key, m in opt.state.arrays().items():
            assert m.tobytes() == other.arrays()[key].tobytes()


def test_two_saves_are_byte_identical(data, tmp_path):
    st = build_state(small_config())
    train(st, data, 1)
    checkpoint(st, tmp_path / "one")
    checkpoint(st, tmp_path / "two")
    assert (tmp_path / "one").read_bytes() == (tmp_path / "two").read_bytes()
    checkpoint(restore(tmp_path / "one"), tmp_path / "three")
    assert (tmp_path / "one").read_bytes() == (tmp_path / "three").read_bytes()


def test_restore_into_a_mismatched_config_is_a_load_error(data, tmp_path):
    st = build_state(small_config())
    checkpoint(st, tmp_path / "ck")
    live = build_state(small_config(hidden=20))
    digest = live.parameter_digest()
    with pytest.raises(LoadError, match="hidden"):
        restore(tmp_path / "ck", expected=small_config(hidden=20))
    assert live.parameter_digest() == digest
    # non-shape fields may differ (e.g. a longer training run)
    assert restore(tmp_path / "ck", expected=small_config(epochs=50)).epoch == 0


def test_corrupt_checkpoints_are_load_errors(tmp_path):
    with pytest.raises(LoadError):
        restore(tmp_path / "missing")
    (tmp_path / "junk").write_bytes(b"not a checkpoint\n")
    with pytest.raises(LoadError):
        restore(tmp_path / "junk")


# ---- smoke bound -----------------------------------------------------------

def _constant_task(seed):
    s, a = constant_action_dataset(256, [0.5, -0.5], state_dim=2, rng=np.random.default_rng(seed))
    n = len(s)
    return TaskDataset("const", s, a, np.zeros(n), s, np.zeros(n, bool), TextPrompt("const", "hold the action"),
                       TrajectoryPrompt(s[:4], a[:4]))


def test_diffusion_loss_halves_early_on_a_constant_action_task():
    ratios = []
    for seed in range(3):
        cfg = small_config(state_dim=2, batch_size=64, hidden=32, seed=seed, lr_policy=1e-3)
        st, ds = build_state(cfg), _constant_task(seed)
        losses = [train_step(st, ds)["loss_d"] for _ in range(200)]
        ratios.append(np.mean(losses[-10:]) / np.mean(losses[:10]))
    assert np.mean(ratios) <= 0.5
