"""Actor-critic diffusion training over prompt-conditioned multi-task data."""

from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from promptdiff.critic import CriticBatch, CriticPair, polyak_update, q_loss, reward_objective
from promptdiff.diffusion import NoiseSchedule, build_schedule
from promptdiff.envdata.dataset import TaskDataset
from promptdiff.errors import ConfigError, LoadError, ShapeError
from promptdiff.nn import Adam, load_snapshot, save_snapshot
from promptdiff.nn.optim import AdamState
from promptdiff.policy import (
    NoisePredictor,
    PolicyContext,
    diffusion_loss,
    draw_chain_noise,
    draw_diffusion_noise,
    sample_action,
    sample_action_differentiable,
)
from promptdiff.prompts import (
    ClientConfig,
    ExternalTextEncoder,
    HashTextEncoder,
    ProjectionHead,
    TextPrompt,
    TrajectoryEncoder,
    TrajectoryPrompt,
    serialize_text_prompt,
)

log = logging.getLogger(__name__)

ABLATIONS = ("full", "no_prompt", "no_text", "no_traj", "trajectory_diffusion_stub")
LAMBDA_FLOOR = 1e-8
CHECKPOINT_VERSION = 1

# fields that fix network shapes; a checkpoint only loads into a config agreeing on all of them
MODEL_FIELDS = ("state_dim", "action_dim", "d_embed", "d_model", "num_blocks", "num_heads",
                "d_raw", "head_hidden", "hidden", "hidden_layers", "d_time", "max_prompt_len",
                "critic_prompt_conditioning")


@dataclass
class TrainerConfig:
    gamma: float = 0.99
    lam: float = 1.0
    lambda_normalize: bool = True
    K: int = 5
    beta_min: float = 0.1
    beta_max: float = 10.0
    batch_size: int = 256
    epochs: int = 100
    steps_per_epoch: int = 100
    polyak_tau: float = 0.005
    lr_policy: float = 3e-4
    lr_critic: float = 3e-4
    lr_text_head: float = 1e-4
    lr_traj_encoder: float = 1e-4
    seed: int = 0
    critic_prompt_conditioning: bool = True
    ablation: str = "full"
    state_dim: int = 6
    action_dim: int = 2
    d_embed: int = 32
    d_model: int = 32
    num_blocks: int = 2
    num_heads: int = 4
    d_raw: int = 256
    head_hidden: int = 64
    hidden: int = 128
    hidden_layers: int = 3
    d_time: int = 16
    max_prompt_len: int = 64
    text_encoder: str = "hash"
    embedding_timeout: float = 10.0
    embedding_retries: int = 3

    def validate(self) -> "TrainerConfig":
        if self.ablation not in ABLATIONS:
            raise ConfigError(f"unknown ablation {self.ablation!r}; choose from {ABLATIONS}")
        if self.ablation == "trajectory_diffusion_stub":
            raise ConfigError("the trajectory-level diffusion baseline is a different model class "
                              "and is not implemented; use full, no_prompt, no_text or no_traj")
        if not 0.0 <= self.gamma < 1.0:
            raise ConfigError(f"gamma must be in [0, 1), got {self.gamma}")
        if self.lam < 0:
            raise ConfigError(f"lam must be >= 0, got {self.lam}")
        if not 0.0 < self.polyak_tau <= 1.0:
            raise ConfigError(f"polyak_tau must be in (0, 1], got {self.polyak_tau}")
        positive = ("K", "batch_size", "epochs", "steps_per_epoch", "state_dim", "action_dim",
                    "d_embed", "d_model", "num_blocks", "num_heads", "d_raw", "head_hidden",
                    "hidden", "hidden_layers", "d_time", "max_prompt_len")
        for name in positive:
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("lr_policy", "lr_critic", "lr_text_head", "lr_traj_encoder", "beta_min", "beta_max"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.d_model % self.num_heads:
            raise ConfigError("d_model must be divisible by num_heads")
        if self.d_time % 2:
            raise ConfigError("d_time must be even")
        if self.text_encoder not in ("hash", "external"):
            raise ConfigError(f"text_encoder must be 'hash' or 'external', got {self.text_encoder!r}")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainerConfig":
        known = {f.name: f for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - set(known))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        kwargs = {}
        for name, value in d.items():
            default = getattr(cls, name)
            if isinstance(default, bool):
                if not isinstance(value, bool):
                    raise ConfigError(f"{name} must be true or false")
            elif isinstance(default, int):
                if isinstance(value, bool) or not isinstance(value, int):
                    raise ConfigError(f"{name} must be an integer")
            elif isinstance(default, float):
                if isinstance(value, bool) or not isinstance(value, (int, float)):
                    raise ConfigError(f"{name} must be a number")
                value = float(value)
            elif not isinstance(value, str):
                raise ConfigError(f"{name} must be a string")
            kwargs[name] = value
        return cls(**kwargs)

    @classmethod
    def load(cls, path) -> "TrainerConfig":
        try:
            d = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(d, dict):
            raise ConfigError(f"config {path} must hold a flat object")
        return cls.from_dict(d)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n",
                              encoding="utf-8")


def effective_lambda(config: TrainerConfig, q_values) -> float:
    """lam, or lam / mean|Q| (floored at 1e-8) when normalization is on."""
    q = np.asarray(q_values, dtype=np.float64)
    if q.size == 0:
        raise ValueError("effective_lambda needs a non-empty batch of Q values")
    if not config.lambda_normalize:
        return float(config.lam)
    return float(config.lam / max(float(np.mean(np.abs(q))), LAMBDA_FLOOR))


def make_text_encoder(config: TrainerConfig):
    if config.text_encoder == "external":
        return ExternalTextEncoder(ClientConfig.from_env(
            config.d_raw, timeout=config.embedding_timeout, max_retries=config.embedding_retries))
    return HashTextEncoder(config.d_raw)


@dataclass(eq=False)
class TrainState:
    config: TrainerConfig
    schedule: NoiseSchedule
    policy: NoisePredictor
    critic: CriticPair
    text_head: ProjectionHead
    traj_encoder: TrajectoryEncoder
    optimizers: dict[str, Adam]
    rng: np.random.Generator
    epoch: int = 0
    text_encoder: object = None
    _raw_cache: dict = field(default_factory=dict)

    def modules(self) -> dict:
        return {"policy": self.policy, "text_head": self.text_head, "traj_encoder": self.traj_encoder,
                "q1": self.critic.q1, "q2": self.critic.q2,
                "q1_target": self.critic.q1_target, "q2_target": self.critic.q2_target}

    def raw_text(self, prompt: TextPrompt) -> np.ndarray:
        text = serialize_text_prompt(prompt)
        if text not in self._raw_cache:
            self._raw_cache[text] = np.asarray(self.text_encoder.encode(text), dtype=np.float64)
        return self._raw_cache[text]

    def embed(self, text_prompt: TextPrompt, traj_prompt: TrajectoryPrompt, cache: bool = False):
        """Prompt embeddings after ablation masking (masked embeddings are exact zeros)."""
        ab = self.config.ablation
        d = self.config.d_embed
        if ab in ("no_prompt", "no_text"):
            zt = np.zeros(d)
        else:
            zt = self.text_head.forward(self.raw_text(text_prompt)[None], cache)[0]
        if ab in ("no_prompt", "no_traj"):
            zj = np.zeros(d)
        else:
            zj = self.traj_encoder.forward(traj_prompt, cache)
        return zt, zj

    def backward_embeddings(self, dz_text, dz_traj) -> None:
        ab = self.config.ablation
        if ab not in ("no_prompt", "no_text"):
            self.text_head.backward(np.reshape(dz_text, (1, -1)))
        if ab not in ("no_prompt", "no_traj"):
            self.traj_encoder.backward(dz_traj)

    def parameter_digest(self) -> str:
        import hashlib

        h = hashlib.sha256()
        for group, module in self.modules().items():
            for name, p in module.named_parameters(group + "."):
                h.update(name.encode())
                h.update(np.ascontiguousarray(p).tobytes())
        return h.hexdigest()


def build_state(config: TrainerConfig, text_encoder=None) -> TrainState:
    config.validate()
    seed = config.seed
    hidden = (config.hidden,) * config.hidden_layers
    policy = NoisePredictor(config.state_dim, config.action_dim, config.d_embed, hidden,
                            config.d_time, rng=np.random.default_rng([seed, 1]))
    critic = CriticPair(config.state_dim, config.action_dim, config.d_embed, hidden,
                        config.critic_prompt_conditioning, config.polyak_tau,
                        rng=np.random.default_rng([seed, 2]))
    text_head = ProjectionHead(config.d_raw, config.head_hidden, config.d_embed,
                               rng=np.random.default_rng([seed, 3]))
    traj_encoder = TrajectoryEncoder(config.state_dim, config.action_dim, config.d_model,
                                     config.num_blocks, config.num_heads, config.head_hidden,
                                     config.d_embed, config.max_prompt_len,
                                     rng=np.random.default_rng([seed, 4]))
    optimizers = {
        "policy": Adam({"policy": policy}, config.lr_policy),
        "text_head": Adam({"text_head": text_head}, config.lr_text_head),
        "traj_encoder": Adam({"traj_encoder": traj_encoder}, config.lr_traj_encoder),
        "critic": Adam({"q1": critic.q1, "q2": critic.q2}, config.lr_critic),
    }
    if text_encoder is None:
        text_encoder = make_text_encoder(config)
    if text_encoder.d_raw != config.d_raw:
        raise ConfigError(f"text encoder width {text_encoder.d_raw} != d_raw {config.d_raw}")
    return TrainState(config, build_schedule(config.K, config.beta_min, config.beta_max), policy,
                      critic, text_head, traj_encoder, optimizers,
                      np.random.default_rng([seed, 0]), 0, text_encoder)


def check_datasets(config: TrainerConfig, datasets) -> None:
    if not datasets:
        raise ConfigError("training needs at least one task dataset")
    for ds in datasets:
        if ds.state_dim != config.state_dim or ds.action_dim != config.action_dim:
            raise ConfigError(
                f"task {ds.task_id}: data dims (state={ds.state_dim}, action={ds.action_dim}) do not "
                f"match config (state={config.state_dim}, action={config.action_dim})")
        if len(ds.trajectory_prompt) > config.max_prompt_len:
            raise ConfigError(f"task {ds.task_id}: trajectory prompt longer than max_prompt_len")


@dataclass
class ActorGradients:
    """The two branches of the actor loss and their combination."""

    loss_d: float
    loss_r: float
    lam_eff: float
    mean_abs_q: float
    grad_d: dict[str, np.ndarray]
    grad_r: dict[str, np.ndarray]
    total: dict[str, np.ndarray]
    dz_text: np.ndarray
    dz_traj: np.ndarray


def actor_gradients(state: TrainState, s, a, z_text, z_traj, which: int, chain_noise,
                    k, eps) -> ActorGradients:
    """Gradient of L_d - lam_eff * L_r w.r.t. the policy and both embeddings."""
    policy, cfg = state.policy, state.config
    ctx = PolicyContext(s, z_text, z_traj)

    policy.zero_grad()
    loss_d, din = diffusion_loss(policy, state.schedule, a, ctx, k=k, eps=eps)
    grad_d = {n: g.copy() for n, g in policy.named_grads()}

    policy.zero_grad()
    chain = sample_action_differentiable(policy, state.schedule, ctx, chain_noise)
    obj = reward_objective(state.critic, which, ctx, chain)
    grad_r = {n: g.copy() for n, g in policy.named_grads()}

    lam = effective_lambda(cfg, obj.q)
    total = {n: grad_d[n] - lam * grad_r[n] for n in grad_d}
    return ActorGradients(
        loss_d, obj.value, lam, float(np.mean(np.abs(obj.q))), grad_d, grad_r, total,
        din["z_text"] - lam * obj.d_z_text, din["z_traj"] - lam * obj.d_z_traj,
    )


def sample_batch(ds: TaskDataset, batch_size: int, rng: np.random.Generator):
    idx = rng.integers(len(ds), size=batch_size)
    return ds.states[idx], ds.actions[idx], ds.rewards[idx], ds.next_states[idx], ds.terminals[idx]


def train_step(state: TrainState, ds: TaskDataset) -> dict:
    """One inner iteration: critic update, then one joint actor/encoder update."""
    cfg, rng = state.config, state.rng
    s, a, r, s2, term = sample_batch(ds, cfg.batch_size, rng)

    z_text, z_traj = state.embed(ds.text_prompt, ds.trajectory_prompt, cache=True)

    # critic step: bootstrap with actions from the current policy, prompts held fixed
    a_next = sample_action(state.policy, state.schedule, PolicyContext(s2, z_text, z_traj), rng)
    critic_opt = state.optimizers["critic"]
    critic_opt.zero_grad()
    ql = q_loss(state.critic, CriticBatch(s, a, r, s2, a_next, term, z_text, z_traj), cfg.gamma)
    critic_opt.step()

    which = int(rng.integers(2))
    chain_noise = draw_chain_noise(rng, cfg.K, cfg.batch_size, cfg.action_dim)
    k, eps = draw_diffusion_noise(rng, cfg.K, cfg.batch_size, cfg.action_dim)

    ag = actor_gradients(state, s, a, z_text, z_traj, which, chain_noise, k, eps)
    state.text_head.zero_grad()
    state.traj_encoder.zero_grad()
    state.backward_embeddings(ag.dz_text, ag.dz_traj)
    state.optimizers["policy"].step({"policy." + n: g for n, g in ag.total.items()})
    state.optimizers["text_head"].step()
    state.optimizers["traj_encoder"].step()
    polyak_update(state.critic, cfg.polyak_tau)
    return {"loss_d": ag.loss_d, "loss_r": ag.loss_r, "loss_q1": ql.loss1, "loss_q2": ql.loss2,
            "mean_abs_q": ag.mean_abs_q, "lam_eff": ag.lam_eff}


def train_epoch(state: TrainState, datasets) -> dict:
    """Sample one task, then run ``steps_per_epoch`` updates on batches from it."""
    check_datasets(state.config, datasets)
    i = int(state.rng.integers(len(datasets)))
    records = [train_step(state, datasets[i]) for _ in range(state.config.steps_per_epoch)]
    state.epoch += 1
    metrics = {key: float(np.mean([rec[key] for rec in records])) for key in records[0]}
    metrics.update(epoch=state.epoch, task=datasets[i].task_id)
    return metrics


def train(state: TrainState, datasets, epochs: int | None = None, metrics_path=None,
          log_every: int = 10) -> list[dict]:
    epochs = state.config.epochs if epochs is None else epochs
    history = []
    for _ in range(epochs):
        m = train_epoch(state, datasets)
        history.append(m)
        if metrics_path is not None:
            with open(metrics_path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(m, sort_keys=True) + "\n")
        if log_every and state.epoch % log_every == 0:
            log.info("epoch %d task=%s L_d=%.4f L_q=%.4f |Q|=%.3f", state.epoch, m["task"],
                     m["loss_d"], 0.5 * (m["loss_q1"] + m["loss_q2"]), m["mean_abs_q"])
    return history


# -- checkpoints -------------------------------------------------------------

def checkpoint(state: TrainState, path) -> None:
    sections = {name: dict(m.named_parameters()) for name, m in state.modules().items()}
    for group, opt in state.optimizers.items():
        sections[f"adam.{group}"] = opt.state.arrays()
    meta = {
        "checkpoint_version": CHECKPOINT_VERSION,
        "config": state.config.to_dict(),
        "epoch": state.epoch,
        "rng": state.rng.bit_generator.state,
        "adam": {g: opt.state.hyper() for g, opt in state.optimizers.items()},
    }
    save_snapshot(path, sections, meta)


def restore(path, expected: TrainerConfig | None = None, text_encoder=None) -> TrainState:
    """Rebuild a TrainState from a checkpoint; never mutates an existing state."""
    sections, meta = load_snapshot(path)
    if meta.get("checkpoint_version") != CHECKPOINT_VERSION:
        raise LoadError(f"{path}: unsupported checkpoint version {meta.get('checkpoint_version')!r}")
    try:
        config = TrainerConfig.from_dict(meta["config"])
    except ConfigError as exc:
        raise LoadError(f"{path}: bad stored config: {exc}") from exc
    if expected is not None:
        diffs = [f"{f}: checkpoint={getattr(config, f)!r} expected={getattr(expected, f)!r}"
                 for f in MODEL_FIELDS if getattr(config, f) != getattr(expected, f)]
        if diffs:
            raise LoadError(f"{path}: checkpoint does not match config ({'; '.join(diffs)})")
    state = build_state(config, text_encoder)
    try:
        for name, module in state.modules().items():
            module.load_state_dict(sections[name])
        for group, opt in state.optimizers.items():
            restored = AdamState.restore(meta["adam"][group], sections.get(f"adam.{group}", {}))
            params = opt.params()
            for key, buf in {**restored.m, **restored.v}.items():
                if key not in params or buf.shape != params[key].shape:
                    raise ShapeError(f"optimizer buffer {group}/{key} does not match parameters")
            opt.state = restored
    except (KeyError, ShapeError) as exc:
        raise LoadError(f"{path}: checkpoint incompatible with its config: {exc}") from exc
    state.rng.bit_generator.state = meta["rng"]
    state.epoch = int(meta["epoch"])
    return state
