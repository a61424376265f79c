"""Optimizers and the training loop for every regime.

Regimes: ``clean`` (classification loss only), ``at`` (classification loss on
PGD examples), ``trades`` (clean loss + KL to PGD-on-KL examples), ``afsl``
(classification + adversarial similarity + real/fake similarity penalty) and
the ablation settings ``s1`` (== clean), ``s2`` (afsl without the similarity
penalty) and ``s3`` (== afsl).
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .attacks import AttackConfig, pgd
from .autodiff import NonFiniteError, backward, zero_grad
from .data.synth import Dataset, make_paired_batch
from .losses import LossWeights, afsl_loss, at_loss, clean_loss, trades_loss
from .models import REAL, ModelParams, get_architecture, init_params

logger = logging.getLogger(__name__)

REGIMES = ("clean", "at", "trades", "afsl", "s1", "s2", "s3")
ADVERSARIAL_REGIMES = {"at", "trades", "afsl", "s2", "s3"}
DEFAULT_LR = {"adam": 3e-4, "sgd": 2e-3}


class TrainConfigError(ValueError):
    pass


class TrainingDivergedError(FloatingPointError):
    def __init__(self, step: int, detail: str = ""):
        super().__init__(f"non-finite loss at step {step}" + (f": {detail}" if detail else ""))
        self.step = step


def default_inner_attack() -> AttackConfig:
    return AttackConfig.pgd(steps=5, epsilon=8 / 255, random_start=False)


@dataclass(frozen=True)
class TrainConfig:
    regime: str = "clean"
    arch: str = "tiny-cnn"
    optimizer: str = "adam"
    lr: Optional[float] = None
    steps: int = 2000
    batch_size: int = 16
    inner: AttackConfig = field(default_factory=default_inner_attack)
    # priors=None means "use the training split's class frequencies"
    beta1: float = 1.0
    beta2: float = 0.1
    tau: float = 1.0
    priors: Optional[tuple[float, float]] = None
    dcl_includes_adv: bool = False
    trades_beta: float = 6.0
    # fraction of training over which the inner-attack epsilon ramps up linearly from 0
    epsilon_warmup: float = 0.5
    flip: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise TrainConfigError(f"regime must be one of {REGIMES}, got {self.regime!r}")
        if self.optimizer not in DEFAULT_LR:
            raise TrainConfigError(f"optimizer must be one of {sorted(DEFAULT_LR)}, got {self.optimizer!r}")
        if self.steps < 1:
            raise TrainConfigError(f"steps must be >= 1, got {self.steps}")
        if self.lr is not None and self.lr <= 0:
            raise TrainConfigError(f"lr must be > 0, got {self.lr}")
        if not 0.0 <= self.epsilon_warmup <= 1.0:
            raise TrainConfigError(f"epsilon_warmup must be in [0, 1], got {self.epsilon_warmup}")
        if self.batch_size < 2 or self.batch_size % 2:
            raise TrainConfigError(f"batch_size must be a positive even number, got {self.batch_size}")
        if isinstance(self.inner, dict):
            object.__setattr__(self, "inner", AttackConfig(**self.inner))
        if self.priors is not None:
            object.__setattr__(self, "priors", tuple(self.priors))

    @property
    def learning_rate(self) -> float:
        return self.lr if self.lr is not None else DEFAULT_LR[self.optimizer]

    def loss_weights(self, dataset: Dataset | None = None) -> LossWeights:
        priors = self.priors
        if priors is None:
            if dataset is None or len(dataset) == 0:
                priors = (0.8, 0.2)
            else:
                real = float(np.mean([s.label == REAL for s in dataset.samples]))
                priors = (1.0 - real, real)
        return LossWeights(self.beta1, self.beta2, self.tau, priors, self.dcl_includes_adv)

    def replace(self, **kw) -> "TrainConfig":
        return replace(self, **kw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["inner"] = asdict(self.inner)
        d["priors"] = list(self.priors) if self.priors is not None else None
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        extra = set(d) - set(cls.__dataclass_fields__)
        if extra:
            raise TrainConfigError(f"unknown train config field(s): {sorted(extra)}")
        d = dict(d)
        if isinstance(d.get("inner"), dict):
            d["inner"] = AttackConfig(**d["inner"])
        return cls(**d)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


# -- optimizers -------------------------------------------------------------------


@dataclass
class AdamState:
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(params, grads, state: AdamState, lr: float, betas=(0.9, 0.999), eps: float = 1e-8) -> AdamState:
    """In-place Adam update of ``params`` (tensors) with ``grads`` (arrays); returns the advanced state."""
    if len(params) != len(grads):
        raise ValueError(f"{len(params)} params but {len(grads)} gradients")
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    b1, b2 = betas
    state.t += 1
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for i, (p, g) in enumerate(zip(params, grads)):
        if g.shape != p.data.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.data.shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteError("adam_step", "gradient")
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g
        update = lr * (state.m[i] / c1) / (np.sqrt(state.v[i] / c2) + eps)
        p.data = p.data - update
    return state


@dataclass
class SGDState:
    velocity: list = field(default_factory=list)


def sgd_step(params, grads, state: SGDState, lr: float, momentum: float = 0.9) -> SGDState:
    if not state.velocity:
        state.velocity = [np.zeros_like(p.data) for p in params]
    for i, (p, g) in enumerate(zip(params, grads)):
        if not np.all(np.isfinite(g)):
            raise NonFiniteError("sgd_step", "gradient")
        state.velocity[i] = momentum * state.velocity[i] + g
        p.data = p.data - lr * state.velocity[i]
    return state


# -- training loop ----------------------------------------------------------------


@dataclass
class TrainHistory:
    steps: list[dict] = field(default_factory=list)
    snapshots: list[dict] = field(default_factory=list)

    def series(self, key: str) -> np.ndarray:
        return np.array([r[key] for r in self.steps if key in r])


def _inner_attack(regime: str, cfg: TrainConfig, step: int) -> AttackConfig:
    inner = cfg.inner
    if regime == "trades":
        inner = inner.replace(loss_target="kl")
    ramp = cfg.epsilon_warmup * cfg.steps
    if ramp > 0 and step + 1 < ramp:
        scale = (step + 1) / ramp
        inner = inner.replace(epsilon=inner.epsilon * scale, step_size=inner.alpha * scale)
    # per-step seed so random starts differ across steps but not across reruns
    return inner.replace(seed=int(np.random.SeedSequence([cfg.seed, 7, step]).generate_state(1)[0]))


def _hflip(x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    flip = rng.random(len(x)) < 0.5
    out = x.copy()
    out[flip] = out[flip][:, :, :, ::-1, :]
    return out


def training_step(params: ModelParams, batch, regime: str, cfg: TrainConfig, weights: LossWeights, step: int):
    """Build adversaries if the regime needs them and return ``(loss, breakdown)``."""
    if regime in ADVERSARIAL_REGIMES:
        inner = _inner_attack(regime, cfg, step)
        clean = batch.clean()
        attack_weights = weights if inner.loss_target == "classification" else None
        adv = pgd(params, clean, batch.labels(), inner, attack_weights)
        if np.max(np.abs(adv - clean), initial=0.0) > inner.epsilon + 1e-9:
            raise AssertionError(f"step {step}: inner attack left the epsilon ball")
        batch = batch.with_adversarial(adv)
    if regime in ("clean", "s1"):
        return clean_loss(batch, params, weights)
    if regime == "at":
        return at_loss(batch, params, weights)
    if regime == "trades":
        return trades_loss(batch, params, cfg.trades_beta, weights)
    if regime == "s2":
        return afsl_loss(batch, params, weights, include_srl=False)
    return afsl_loss(batch, params, weights)


def train(
    dataset: Dataset,
    cfg: TrainConfig,
    on_step: Callable[[dict], None] | None = None,
    evaluate: Callable[[ModelParams, int], dict] | None = None,
    eval_every: int = 0,
) -> tuple[ModelParams, TrainHistory]:
    """Train a fresh model; deterministic in ``(dataset, cfg)``.

    ``on_step`` receives each step record as it is produced.  When
    ``evaluate`` is given it is called every ``eval_every`` steps (and at the
    end) and its result is stored in ``history.snapshots``.
    """
    if len(dataset.class_indices(REAL)) == 0 or len(dataset.class_indices(1 - REAL)) == 0:
        raise TrainConfigError("training data must contain both real and fake samples")
    x0 = dataset.samples[0].clip
    t, h, w, c = x0.shape
    params = init_params(get_architecture(cfg.arch, (t * c, h, w)), cfg.seed)
    params.config_hash = cfg.digest()
    weights = cfg.loss_weights(dataset)
    batch_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
    aug_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 2]))
    state = AdamState() if cfg.optimizer == "adam" else SGDState()
    plist = params.parameters()
    history = TrainHistory()
    regime = cfg.regime
    for step in range(cfg.steps):
        batch = make_paired_batch(dataset, cfg.batch_size, batch_rng)
        if cfg.flip:
            batch = type(batch)(_hflip(batch.real, aug_rng), _hflip(batch.fake, aug_rng), indices=batch.indices)
        try:
            loss, breakdown = training_step(params, batch, regime, cfg, weights, step)
            if not np.isfinite(loss.item()):
                raise TrainingDivergedError(step)
            zero_grad(plist)
            backward(loss)
        except NonFiniteError as exc:
            raise TrainingDivergedError(step, str(exc)) from exc
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in plist]
        grad_norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))
        if cfg.optimizer == "adam":
            adam_step(plist, grads, state, cfg.learning_rate)
        else:
            sgd_step(plist, grads, state, cfg.learning_rate)
        record = {"step": step, **breakdown, "grad_norm": grad_norm}
        history.steps.append(record)
        if on_step is not None:
            on_step(record)
        if evaluate is not None and eval_every and (step + 1) % eval_every == 0 and step + 1 < cfg.steps:
            history.snapshots.append({"step": step + 1, **evaluate(params, step + 1)})
    if evaluate is not None:
        history.snapshots.append({"step": cfg.steps, **evaluate(params, cfg.steps)})
    zero_grad(plist)
    logger.info("trained %s regime=%s steps=%d final loss %.4f", cfg.arch, regime, cfg.steps, history.steps[-1]["total"])
    return params, history


ABLATION_SETTINGS = ("s1", "s2", "s3")


def run_ablation(dataset: Dataset, base_cfg: TrainConfig, test: Dataset | None = None, conditions=("clean", "pgd10")) -> dict:
    """Train S1/S2/S3 from the same config and seed; evaluate each on held-out videos.

    Returns ``{setting: {"clean": auc, "pgd10": auc, ...}}`` (video-level AUC).
    When ``test`` is not given the dataset is split by video with the config seed.
    """
    from .data.synth import split_by_video
    from .evaluation import robust_eval

    if test is None:
        dataset, test = split_by_video(dataset, 0.3, base_cfg.seed)
    table = {}
    for setting in ABLATION_SETTINGS:
        params, _ = train(dataset, base_cfg.replace(regime=setting))
        report = robust_eval(params, test, list(conditions), seed=base_cfg.seed)
        table[setting] = {r["condition"]: r["auc_video"] for r in report.results}
    return table
