"""Gradient-check battery over every primitive op and every training objective."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, grad_check
from .losses import (
    LossWeights,
    PairedBatch,
    adversarial_similarity_loss,
    afsl_loss,
    at_loss,
    lbce,
    similarity_regularization_loss,
    trades_loss,
)
from .models import get_architecture, init_params

PRIMITIVE_TOL = 1e-5
COMPOSITE_TOL = 1e-4


@dataclass(frozen=True)
class CheckResult:
    name: str
    kind: str  # "op" | "loss"
    max_rel_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance


def _weighted(fn: Callable[[Tensor], Tensor], shape, seed: int) -> Callable[[Tensor], Tensor]:
    # a fixed random projection turns any output into a scalar with non-trivial upstream gradient
    w = np.random.default_rng(seed + 1000).normal(size=shape)
    return lambda x: (fn(x) * w).sum()


def _op_cases(rng: np.random.Generator):
    a = rng.normal(size=(3, 4))
    b = rng.normal(size=(3, 4))
    m = rng.normal(size=(4, 5))
    pos = rng.uniform(0.5, 2.0, size=(3, 4))
    # keep relu inputs away from the kink so central differences are valid
    away = np.sign(a) * (np.abs(a) + 0.1)
    img = rng.normal(size=(2, 3, 6, 6))
    ker = rng.normal(size=(4, 3, 3, 3))
    bias = rng.normal(size=4)
    vec = rng.normal(size=(3, 5))
    other = rng.normal(size=(3, 5))
    return [
        ("add", lambda x: ad.add(x, b), a, (3, 4)),
        ("sub", lambda x: ad.sub(b, x), a, (3, 4)),
        ("mul", lambda x: ad.mul(x, b), a, (3, 4)),
        ("div", lambda x: ad.div(b, x), pos, (3, 4)),
        ("neg", lambda x: ad.neg(x), a, (3, 4)),
        ("matmul", lambda x: ad.matmul(x, m), a, (3, 5)),
        ("relu", lambda x: ad.relu(x), away, (3, 4)),
        ("sigmoid", lambda x: ad.sigmoid(x), a, (3, 4)),
        ("exp", lambda x: ad.exp(x), a, (3, 4)),
        ("log", lambda x: ad.log(x), pos, (3, 4)),
        ("logsumexp", lambda x: ad.logsumexp(x, axis=1), a, (3,)),
        ("log_softmax", lambda x: ad.log_softmax(x, axis=1), a, (3, 4)),
        ("sum", lambda x: ad.sum_(x, axis=0), a, (4,)),
        ("mean", lambda x: ad.mean(x, axis=1), a, (3,)),
        ("reshape", lambda x: ad.reshape(x, (4, 3)), a, (4, 3)),
        ("transpose", lambda x: ad.transpose(x, (1, 0)), a, (4, 3)),
        ("getitem", lambda x: ad.getitem(x, (slice(0, 2), np.array([3, 1, 3]))), a, (2, 3)),
        ("concat", lambda x: ad.concat([x, Tensor(b)], axis=0), a, (6, 4)),
        ("conv2d", lambda x: ad.conv2d(x, Tensor(ker), Tensor(bias), stride=2, padding=1), img, (2, 4, 3, 3)),
        ("conv2d_weight", lambda k: ad.conv2d(Tensor(img), k, Tensor(bias), stride=1, padding=1), ker, (2, 4, 6, 6)),
        ("l2_normalize", lambda x: ad.l2_normalize(x, axis=1), vec, (3, 5)),
        ("cosine_similarity", lambda x: ad.cosine_similarity(x, Tensor(other), axis=1), vec, (3,)),
    ]


def _small_model_batch(seed: int):
    spec = get_architecture("tiny-cnn", (2, 8, 8))
    params = init_params(spec, seed)
    rng = np.random.default_rng(seed)
    real = rng.uniform(0.2, 0.8, size=(2, 2, 8, 8, 1))
    fake = rng.uniform(0.2, 0.8, size=(2, 2, 8, 8, 1))
    batch = PairedBatch(real, fake)
    adv = np.clip(batch.clean() + rng.uniform(-0.03, 0.03, size=batch.clean().shape), 0, 1)
    return params, batch.with_adversarial(adv)


def _wrt(params, name: str, objective):
    """Scalar function of one parameter tensor of ``params``."""

    def fn(w: Tensor) -> Tensor:
        model = params.frozen()
        if name == "head":
            model.head = w
        else:
            model.weights[name] = w
        return objective(model)

    return fn


def _loss_cases(rng: np.random.Generator, seed: int):
    weights = LossWeights(priors=(0.8, 0.2))
    logits = rng.normal(size=(6, 2))
    labels = np.array([1, 0, 1, 1, 0, 0])
    e1, e2 = rng.normal(size=(4, 6)), rng.normal(size=(4, 6))
    params, batch = _small_model_batch(seed)
    cases = [
        ("lbce", lambda z: lbce(z, labels, weights), logits),
        ("asl", lambda e: adversarial_similarity_loss(e, Tensor(e2)), e1),
        ("srl", lambda e: similarity_regularization_loss(Tensor(e2), e), e1),
    ]
    for pname in ("head", "dense5.weight"):
        start = (params.head if pname == "head" else params.weights[pname]).data
        cases += [
            (f"afsl[{pname}]", _wrt(params, pname, lambda m: afsl_loss(batch, m, weights)[0]), start),
            (f"at[{pname}]", _wrt(params, pname, lambda m: at_loss(batch, m, weights)[0]), start),
            (f"trades[{pname}]", _wrt(params, pname, lambda m: trades_loss(batch, m, 6.0, weights)[0]), start),
        ]
    return cases


def run_gradcheck_suite(tolerance: float | None = None, seed: int = 0) -> list[CheckResult]:
    """Check every op (tolerance 1e-5) and loss (1e-4 for composites) against finite differences.

    ``tolerance`` overrides both thresholds.
    """
    rng = np.random.default_rng(seed)
    results = []
    for name, fn, x, shape in _op_cases(rng):
        rep = grad_check(_weighted(fn, shape, seed), x)
        tol = PRIMITIVE_TOL if tolerance is None else tolerance
        results.append(CheckResult(name, "op", rep.max_rel_error, tol))
    for name, fn, x in _loss_cases(rng, seed):
        rep = grad_check(fn, x)
        composite = "[" in name
        tol = (COMPOSITE_TOL if composite else PRIMITIVE_TOL) if tolerance is None else tolerance
        results.append(CheckResult(name, "loss", rep.max_rel_error, tol))
    return results
