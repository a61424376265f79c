"""Gradient-based evasion attacks on inputs in ``[0, 1]``.

A model is anything with ``logits(x)`` and ``encode(x)`` returning autodiff
tensors; :class:`~afsl.models.ModelParams` and :class:`~afsl.models.LinearModel`
both qualify.  Attacks take and return plain numpy arrays.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace

import numpy as np

from .autodiff import NonFiniteError, Tensor, backward, cosine_similarity, log_softmax, relu
from .losses import LossWeights, kl_divergence

LOSS_TARGETS = ("classification", "feature_dissimilarity", "kl")
NORMS = ("Linf", "L2")
# start offset for objectives that are stationary at the clean point
_STATIONARY_START = 1e-3


class AttackError(ValueError):
    pass


@dataclass(frozen=True)
class AttackConfig:
    norm: str = "Linf"
    epsilon: float = 8 / 255
    steps: int = 10
    step_size: float | None = None
    random_start: bool = True
    loss_target: str = "classification"
    kappa: float = 0.0
    c: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.norm not in NORMS:
            raise AttackError(f"norm must be one of {NORMS}, got {self.norm!r}")
        if self.epsilon < 0:
            raise AttackError(f"epsilon must be >= 0, got {self.epsilon}")
        if self.steps < 1:
            raise AttackError(f"steps must be >= 1, got {self.steps}")
        if self.step_size is not None and self.step_size <= 0:
            raise AttackError(f"step_size must be > 0, got {self.step_size}")
        if self.loss_target not in LOSS_TARGETS:
            raise AttackError(f"loss_target must be one of {LOSS_TARGETS}, got {self.loss_target!r}")

    @property
    def alpha(self) -> float:
        return self.step_size if self.step_size is not None else 2.5 * self.epsilon / self.steps

    @classmethod
    def pgd(cls, steps: int = 10, epsilon: float = 8 / 255, **kw) -> "AttackConfig":
        return cls(norm="Linf", epsilon=epsilon, steps=steps, **kw)

    @classmethod
    def cw2(cls, epsilon: float = 1.0, steps: int = 50, **kw) -> "AttackConfig":
        kw.setdefault("random_start", False)
        return cls(norm="L2", epsilon=epsilon, steps=steps, **kw)

    def replace(self, **kw) -> "AttackConfig":
        return replace(self, **kw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["step_size"] = self.alpha
        return d


def frozen(model):
    """A view of ``model`` whose parameters do not collect gradients."""
    return model.frozen() if hasattr(model, "frozen") else model


def _per_sample_objective(model, x_adv: Tensor, y: np.ndarray, target: str, weights, reference):
    if target == "classification":
        logits = model.logits(x_adv)
        if weights is None:
            logp = log_softmax(logits, axis=1)
        else:
            shift = weights.tau * np.log(np.asarray(weights.priors, dtype=np.float64))
            logp = log_softmax(logits + shift, axis=1)
        return -logp[np.arange(len(y)), y]
    if target == "feature_dissimilarity":
        return 1.0 - cosine_similarity(reference, model.encode(x_adv), axis=1)
    return kl_divergence(reference, model.logits(x_adv))


def _reference(model, x: np.ndarray, target: str):
    if target == "feature_dissimilarity":
        return model.encode(x).detach()
    if target == "kl":
        return model.logits(x).detach()
    return None


def loss_and_grad(model, x: np.ndarray, y, target="classification", weights=None, reference=None):
    """Per-sample attack objective at ``x`` and its gradient w.r.t. ``x``."""
    xt = Tensor(x, requires_grad=True)
    per = _per_sample_objective(model, xt, np.asarray(y, dtype=np.int64), target, weights, reference)
    backward(per.sum())
    grad = np.zeros_like(x) if xt.grad is None else xt.grad
    if not np.all(np.isfinite(grad)):
        raise NonFiniteError("input-gradient", "backward")
    return per.data.copy(), grad


def _project_linf(x_adv, x, eps):
    return np.clip(np.clip(x_adv, x - eps, x + eps), 0.0, 1.0)


def _check_range(x: np.ndarray):
    if x.size and (x.min() < 0.0 or x.max() > 1.0):
        raise AttackError("attack inputs must lie in [0, 1]")


def fgsm(model, x, y, epsilon: float, weights: LossWeights | None = None) -> np.ndarray:
    """One signed-gradient step of size ``epsilon`` on the classification loss, clipped to [0, 1]."""
    x = np.asarray(x, dtype=np.float64)
    _check_range(x)
    if epsilon == 0:
        return x.copy()
    _, g = loss_and_grad(frozen(model), x, y, "classification", weights)
    return _project_linf(x + epsilon * np.sign(g), x, epsilon)


def pgd(model, x, y, cfg: AttackConfig, weights: LossWeights | None = None, history: list | None = None) -> np.ndarray:
    """L-infinity projected gradient ascent returning the best iterate per sample.

    The starting point counts as an iterate, so with ``random_start`` off the
    returned loss is never below the clean loss.  ``history`` (if given) receives
    the per-sample best-so-far loss after each evaluation.
    """
    if cfg.norm != "Linf":
        raise AttackError(f"pgd supports norm 'Linf' only, got {cfg.norm!r}")
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    _check_range(x)
    eps = cfg.epsilon
    if eps == 0:
        return x.copy()
    model = frozen(model)
    rng = np.random.default_rng(cfg.seed)
    reference = _reference(model, x, cfg.loss_target)
    if cfg.random_start:
        x_adv = _project_linf(x + rng.uniform(-eps, eps, size=x.shape), x, eps)
    elif cfg.loss_target != "classification":
        x_adv = _project_linf(x + _STATIONARY_START * eps * rng.standard_normal(x.shape), x, eps)
    else:
        x_adv = x.copy()
    best, best_loss = x_adv.copy(), None
    for step in range(cfg.steps + 1):
        loss, g = loss_and_grad(model, x_adv, y, cfg.loss_target, weights, reference)
        if best_loss is None:
            best_loss = loss
        else:
            better = loss > best_loss
            best[better] = x_adv[better]
            best_loss = np.where(better, loss, best_loss)
        if history is not None:
            history.append(best_loss.copy())
        if step == cfg.steps:
            break
        x_adv = _project_linf(x_adv + cfg.alpha * np.sign(g), x, eps)
    return best


def _margin(model, x: Tensor, y: np.ndarray):
    z = model.logits(x)
    idx = np.arange(len(y))
    return z[idx, y] - z[idx, 1 - y]


def _l2_norms(a: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(a.reshape(len(a), -1) ** 2, axis=1))


def _bcast(v: np.ndarray, like: np.ndarray) -> np.ndarray:
    return v.reshape((-1,) + (1,) * (like.ndim - 1))


def cw_margin(model, x, y, cfg: AttackConfig) -> np.ndarray:
    """L2 margin attack: descend ``max(z_y - z_other, -kappa) + c * ||delta||^2``.

    Each step moves along the normalized gradient, rescales ``delta`` into the
    ``epsilon`` ball and clips to [0, 1].  Returns the iterate with the lowest
    clamped margin per sample (ties keep the earlier, smaller perturbation).
    """
    if cfg.norm != "L2":
        raise AttackError(f"cw_margin needs norm 'L2', got {cfg.norm!r}")
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    _check_range(x)
    eps = cfg.epsilon
    if eps == 0:
        return x.copy()
    model = frozen(model)
    kappa = cfg.kappa
    delta = np.zeros_like(x)
    best = x.copy()
    best_margin = np.maximum(_margin(model, Tensor(x), y).data, -kappa)
    for _ in range(cfg.steps):
        d = Tensor(delta, requires_grad=True)
        margin = relu(_margin(model, x + d, y) + kappa) - kappa
        penalty = (d * d).reshape(len(x), -1).sum(axis=1)
        backward((margin + cfg.c * penalty).sum())
        g = d.grad if d.grad is not None else np.zeros_like(x)
        gn = _l2_norms(g)
        step = np.where(gn > 0, cfg.alpha / np.where(gn > 0, gn, 1.0), 0.0)
        delta = delta - _bcast(step, g) * g
        dn = _l2_norms(delta)
        scale = np.where(dn > eps, eps / np.where(dn > 0, dn, 1.0), 1.0)
        x_adv = np.clip(x + _bcast(scale, delta) * delta, 0.0, 1.0)
        delta = x_adv - x
        m = np.maximum(_margin(model, Tensor(x_adv), y).data, -kappa)
        better = m < best_margin
        best[better] = x_adv[better]
        best_margin = np.where(better, m, best_margin)
    return best


def predict_labels(model, x: np.ndarray) -> np.ndarray:
    return np.argmax(model.logits(x).data, axis=1)


def transfer_attack(surrogate, target, x, y, cfg: AttackConfig, weights: LossWeights | None = None):
    """Craft PGD examples on ``surrogate`` only; report which ones fool ``target``.

    Returns ``(x_adv, success)`` where ``success[i]`` is True when the target's
    prediction on ``x_adv[i]`` differs from ``y[i]``.
    """
    s_shape = getattr(surrogate, "input_shape", None)
    t_shape = getattr(target, "input_shape", None)
    if s_shape is not None and t_shape is not None and tuple(s_shape) != tuple(t_shape):
        raise AttackError(f"surrogate input shape {tuple(s_shape)} != target input shape {tuple(t_shape)}")
    x_adv = pgd(surrogate, x, y, cfg, weights)
    success = predict_labels(target, x_adv) != np.asarray(y)
    return x_adv, success


def run_attack(name: str, model, x, y, cfg: AttackConfig, surrogate=None) -> np.ndarray:
    """Dispatch by CLI-facing attack name: ``fgsm``, ``pgd``, ``cw2``, ``transfer``."""
    if name == "fgsm":
        return fgsm(model, x, y, cfg.epsilon)
    if name == "pgd":
        return pgd(model, x, y, cfg)
    if name == "cw2":
        return cw_margin(model, x, y, cfg)
    if name == "transfer":
        if surrogate is None:
            raise AttackError("transfer attack needs a surrogate model")
        return transfer_attack(surrogate, model, x, y, cfg)[0]
    raise AttackError(f"unknown attack {name!r}")
