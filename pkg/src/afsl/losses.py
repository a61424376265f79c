"""Training objectives: logit-adjusted cross-entropy, the two feature-similarity
terms and their weighted sum, plus the AT and TRADES baselines.

Every composite loss returns ``(total, breakdown)`` where ``breakdown`` maps
component names to floats for logging.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .autodiff import Tensor, as_tensor, cosine_similarity, exp, log_softmax
from .models import FAKE, REAL, classify


@dataclass(frozen=True)
class LossWeights:
    beta1: float = 1.0
    beta2: float = 0.1
    tau: float = 1.0
    # (fake, real)
    priors: tuple[float, float] = (0.8, 0.2)
    dcl_includes_adv: bool = False

    def __post_init__(self):
        if self.beta1 < 0 or self.beta2 < 0:
            raise ValueError(f"beta1/beta2 must be non-negative, got {self.beta1}, {self.beta2}")
        if len(self.priors) != 2 or not all(0.0 < p < 1.0 for p in self.priors):
            raise ValueError(f"priors must be two values in (0, 1), got {self.priors}")
        if abs(sum(self.priors) - 1.0) > 1e-12:
            raise ValueError(f"priors must sum to 1, got {sum(self.priors)}")

    @classmethod
    def balanced(cls, **kw) -> "LossWeights":
        return cls(priors=(0.5, 0.5), **kw)

    def to_dict(self) -> dict:
        return {
            "beta1": self.beta1,
            "beta2": self.beta2,
            "tau": self.tau,
            "priors": list(self.priors),
            "dcl_includes_adv": self.dcl_includes_adv,
        }


@dataclass
class PairedBatch:
    """``P`` real and ``P`` fake inputs paired by position, with optional adversarial copies."""

    real: np.ndarray
    fake: np.ndarray
    real_adv: Optional[np.ndarray] = None
    fake_adv: Optional[np.ndarray] = None
    # dataset indices (real, fake) the rows were drawn from, when known
    indices: Optional[tuple] = None

    def __post_init__(self):
        if len(self.real) != len(self.fake):
            raise ValueError(f"paired batch needs equal real/fake counts, got {len(self.real)} and {len(self.fake)}")

    @property
    def has_adversarial(self) -> bool:
        return self.real_adv is not None and self.fake_adv is not None

    def clean(self) -> np.ndarray:
        return np.concatenate([self.real, self.fake])

    def adversarial(self) -> np.ndarray:
        if not self.has_adversarial:
            raise MissingAdversarialError("batch carries no adversarial counterparts")
        return np.concatenate([self.real_adv, self.fake_adv])

    def labels(self) -> np.ndarray:
        p = len(self.real)
        return np.concatenate([np.full(p, REAL), np.full(p, FAKE)]).astype(np.int64)

    def with_adversarial(self, adv: np.ndarray) -> "PairedBatch":
        p = len(self.real)
        return PairedBatch(self.real, self.fake, adv[:p], adv[p:], self.indices)


class MissingAdversarialError(ValueError):
    pass


def _check_labels(labels) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.ndim != 1 or not np.all((labels == 0) | (labels == 1)):
        raise ValueError("labels must be a 1-D array of 0 (fake) / 1 (real)")
    return labels.astype(np.int64)


def lbce(logits, labels, weights: LossWeights | None = None) -> Tensor:
    """Mean cross-entropy over prior-adjusted logits ``z + tau * log(pi)``."""
    weights = weights or LossWeights.balanced()
    logits = as_tensor(logits)
    labels = _check_labels(labels)
    if logits.ndim != 2 or logits.shape != (len(labels), 2):
        raise ValueError(f"lbce expects logits [N,2] matching {len(labels)} labels, got {logits.shape}")
    shift = weights.tau * np.log(np.asarray(weights.priors, dtype=np.float64))
    logp = log_softmax(logits + shift, axis=1)
    picked = logp[np.arange(len(labels)), labels]
    return -picked.mean()


def cross_entropy(logits, labels) -> Tensor:
    return lbce(logits, labels, LossWeights.balanced())


def per_sample_cross_entropy(logits, labels) -> Tensor:
    labels = _check_labels(labels)
    logp = log_softmax(as_tensor(logits), axis=1)
    return -logp[np.arange(len(labels)), labels]


def _check_pair_shapes(a: Tensor, b: Tensor, name: str):
    if a.shape != b.shape or a.ndim != 2:
        raise ValueError(f"{name}: expected matching [N,d] embeddings, got {a.shape} and {b.shape}")


def adversarial_similarity_loss(emb_clean, emb_adv) -> Tensor:
    """Mean of ``1 - cos`` between each clean row and its adversarial row."""
    emb_clean, emb_adv = as_tensor(emb_clean), as_tensor(emb_adv)
    _check_pair_shapes(emb_clean, emb_adv, "adversarial_similarity_loss")
    return 1.0 - cosine_similarity(emb_clean, emb_adv, axis=1).mean()


def similarity_regularization_loss(emb_real, emb_fake) -> Tensor:
    """Mean cosine similarity between paired real and fake rows."""
    emb_real, emb_fake = as_tensor(emb_real), as_tensor(emb_fake)
    _check_pair_shapes(emb_real, emb_fake, "similarity_regularization_loss")
    return cosine_similarity(emb_real, emb_fake, axis=1).mean()


def kl_divergence(logits_p, logits_q) -> Tensor:
    """Per-row ``KL(softmax(p) || softmax(q))``."""
    logp = log_softmax(as_tensor(logits_p), axis=1)
    logq = log_softmax(as_tensor(logits_q), axis=1)
    return (exp(logp) * (logp - logq)).sum(axis=1)


def combine(dcl: float, asl: float, srl: float, weights: LossWeights) -> float:
    return dcl + weights.beta1 * asl + weights.beta2 * srl


def afsl_loss(batch: PairedBatch, params, weights: LossWeights | None = None, include_srl: bool = True):
    """``dcl + beta1 * asl + beta2 * srl`` over one forward pass of clean and adversarial rows.

    ``include_srl=False`` drops the last term entirely (the S2 ablation setting).
    """
    weights = weights or LossWeights()
    if not batch.has_adversarial:
        raise MissingAdversarialError("afsl_loss needs adversarial counterparts for real and fake samples")
    p = len(batch.real)
    clean = batch.clean()
    adv = batch.adversarial()
    emb = params.encode(np.concatenate([clean, adv]))
    emb_clean, emb_adv = emb[: 2 * p], emb[2 * p :]
    labels = batch.labels()
    if weights.dcl_includes_adv:
        dcl = lbce(classify(emb, params.head), np.concatenate([labels, labels]), weights)
    else:
        dcl = lbce(classify(emb_clean, params.head), labels, weights)
    asl = adversarial_similarity_loss(emb_clean, emb_adv)
    total = dcl + weights.beta1 * asl
    breakdown = {"dcl": dcl.item(), "asl": asl.item()}
    if include_srl:
        srl = similarity_regularization_loss(emb_clean[:p], emb_clean[p:])
        total = total + weights.beta2 * srl
        breakdown["srl"] = srl.item()
    breakdown["total"] = total.item()
    return total, breakdown


def at_loss(batch: PairedBatch, params, weights: LossWeights | None = None):
    """Classification loss on the adversarial rows only."""
    weights = weights or LossWeights()
    if not batch.has_adversarial:
        raise MissingAdversarialError("at_loss needs adversarial counterparts")
    total = lbce(params.logits(batch.adversarial()), batch.labels(), weights)
    return total, {"dcl": total.item(), "total": total.item()}


def trades_loss(batch: PairedBatch, params, trades_beta: float = 6.0, weights: LossWeights | None = None):
    """Clean classification loss plus ``trades_beta`` times mean KL(clean || adversarial)."""
    weights = weights or LossWeights()
    if not batch.has_adversarial:
        raise MissingAdversarialError("trades_loss needs adversarial counterparts")
    n = 2 * len(batch.real)
    logits = params.logits(np.concatenate([batch.clean(), batch.adversarial()]))
    clean_logits, adv_logits = logits[:n], logits[n:]
    dcl = lbce(clean_logits, batch.labels(), weights)
    kl = kl_divergence(clean_logits, adv_logits).mean()
    total = dcl + trades_beta * kl
    return total, {"dcl": dcl.item(), "kl": kl.item(), "total": total.item()}


def clean_loss(batch: PairedBatch, params, weights: LossWeights | None = None):
    weights = weights or LossWeights()
    total = lbce(params.logits(batch.clean()), batch.labels(), weights)
    return total, {"dcl": total.item(), "total": total.item()}

