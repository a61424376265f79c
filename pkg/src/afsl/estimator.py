"""scikit-learn style wrappers around training, scoring and distortion."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .attacks import AttackConfig
from .data.distortions import DistortionSpec, apply_distortion
from .data.synth import REAL_FAMILY, Dataset, DatasetConfig, Sample
from .evaluation import real_scores, roc_auc
from .models import FAKE, REAL
from .training import TrainConfig, train


def check_clips(X, name: str = "X") -> np.ndarray:
    """Return ``X`` as a float64 batch of clips ``[N,T,H,W,C]`` with values in [0, 1]."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 5:
        raise ValueError(f"{name} must be a batch of clips [N,T,H,W,C], got shape {X.shape}")
    if len(X) == 0:
        raise ValueError(f"{name} is empty")
    if not np.all(np.isfinite(X)):
        raise ValueError(f"{name} contains non-finite values")
    if X.min() < 0.0 or X.max() > 1.0:
        raise ValueError(f"{name} values must lie in [0, 1], got [{X.min():.4g}, {X.max():.4g}]")
    return X


def check_labels(y, n: int) -> np.ndarray:
    """Binary labels (0 = fake, 1 = real) of length ``n``."""
    y = np.asarray(y)
    if y.ndim != 1 or len(y) != n:
        raise ValueError(f"y must be 1-D with {n} entries, got shape {y.shape}")
    if not np.all((y == FAKE) | (y == REAL)):
        raise ValueError("y must contain only 0 (fake) and 1 (real)")
    if len(np.unique(y)) < 2:
        raise ValueError("y must contain both classes")
    return y.astype(np.int64)


def _as_dataset(X: np.ndarray, y: np.ndarray, groups) -> Dataset:
    _, T, H, W, C = X.shape
    groups = [f"c{i:06d}" for i in range(len(X))] if groups is None else [str(g) for g in groups]
    if len(groups) != len(X):
        raise ValueError(f"groups must have {len(X)} entries, got {len(groups)}")
    samples = [
        Sample(clip, int(label), vid, REAL_FAMILY if label == REAL else "unspecified")
        for clip, label, vid in zip(X, y, groups)
    ]
    real = float(np.mean(y == REAL))
    cfg = DatasetConfig(num_videos=max(len(set(groups)), 2), T=T, H=H, W=W, C=C, real_fraction=min(max(real, 0.01), 0.99))
    return Dataset(samples, cfg)


class AFSLDetector(ClassifierMixin, BaseEstimator):
    """Real/fake clip classifier trained under one of the supported regimes.

    ``predict_proba`` columns follow ``classes_ == [0, 1]`` (fake, real);
    ``transform`` returns the unit-norm embeddings.
    """

    def __init__(
        self,
        regime: str = "afsl",
        arch: str = "tiny-cnn",
        steps: int = 2000,
        lr: float | None = None,
        batch_size: int = 16,
        epsilon: float = 8 / 255,
        inner_steps: int = 5,
        epsilon_warmup: float = 0.5,
        beta1: float = 1.0,
        beta2: float = 0.1,
        priors=None,
        seed: int = 0,
    ):
        self.regime = regime
        self.arch = arch
        self.steps = steps
        self.lr = lr
        self.batch_size = batch_size
        self.epsilon = epsilon
        self.inner_steps = inner_steps
        self.epsilon_warmup = epsilon_warmup
        self.beta1 = beta1
        self.beta2 = beta2
        self.priors = priors
        self.seed = seed

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            regime=self.regime,
            arch=self.arch,
            lr=self.lr,
            steps=self.steps,
            batch_size=self.batch_size,
            inner=AttackConfig.pgd(steps=self.inner_steps, epsilon=self.epsilon, random_start=False),
            epsilon_warmup=self.epsilon_warmup,
            beta1=self.beta1,
            beta2=self.beta2,
            priors=None if self.priors is None else tuple(self.priors),
            seed=self.seed,
        )

    def fit(self, X, y, groups=None):
        """Train on clips ``X`` with labels ``y``; ``groups`` are optional video ids."""
        X = check_clips(X)
        y = check_labels(y, len(X))
        self.model_, self.history_ = train(_as_dataset(X, y, groups), self._train_config())
        self.classes_ = np.array([FAKE, REAL])
        self.clip_shape_ = X.shape[1:]
        return self

    def _checked(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        X = check_clips(X)
        if X.shape[1:] != self.clip_shape_:
            raise ValueError(f"clips have shape {X.shape[1:]}, model was fitted on {self.clip_shape_}")
        return X

    def decision_function(self, X) -> np.ndarray:
        """Real-minus-fake logit per clip."""
        X = self._checked(X)
        z = np.concatenate([self.model_.frozen().logits(X[i : i + 64]).data for i in range(0, len(X), 64)])
        return z[:, REAL] - z[:, FAKE]

    def predict_proba(self, X) -> np.ndarray:
        X = self._checked(X)
        p_real = real_scores(self.model_, X)
        return np.stack([1.0 - p_real, p_real], axis=1)

    def predict(self, X) -> np.ndarray:
        p_real = self.predict_proba(X)[:, REAL]
        return self.classes_[(p_real >= 0.5).astype(int)]

    def transform(self, X) -> np.ndarray:
        X = self._checked(X)
        return np.concatenate([self.model_.frozen().encode(X[i : i + 64]).data for i in range(0, len(X), 64)])

    def auc(self, X, y) -> float:
        """Clip-level ROC AUC of the real-class probability."""
        return roc_auc(self.predict_proba(X)[:, REAL], check_labels(y, len(X)))


class DistortionTransformer(TransformerMixin, BaseEstimator):
    """Stateless transformer applying one distortion at one severity to clip batches."""

    def __init__(self, kind: str = "gaussian_noise", severity: int = 1, seed: int = 0):
        self.kind = kind
        self.severity = severity
        self.seed = seed

    def fit(self, X, y=None):
        check_clips(X)
        self.spec_ = DistortionSpec(self.kind, self.severity)
        return self

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "spec_")
        return apply_distortion(check_clips(X), self.spec_, seed=self.seed)
