"""Procedural real/fake clip generator.

Real videos are smooth per-identity textures (background blobs plus a soft
elliptical "face") with slow drift, brightness jitter and sensor grain.  Fake
videos are generated the same way and then receive one manipulation family's
artifact inside the face region.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.ndimage import gaussian_filter

from ..losses import PairedBatch
from ..models import FAKE, REAL

FAMILIES = ("blend_boundary", "smoothing", "upsample_checker", "color_shift")
REAL_FAMILY = "none"

DEFAULT_AMPLITUDES = {
    "blend_boundary": 0.25,
    "smoothing": 1.0,
    "upsample_checker": 0.15,
    "color_shift": 0.15,
}


class DatasetConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DatasetConfig:
    num_videos: int = 300
    clips_per_video: int = 2
    T: int = 4
    H: int = 32
    W: int = 32
    C: int = 1
    real_fraction: float = 0.2
    families: tuple[str, ...] = FAMILIES
    amplitudes: dict = field(default_factory=lambda: dict(DEFAULT_AMPLITUDES))
    grain: float = 0.015
    skin: float = 0.1
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "families", tuple(self.families))
        object.__setattr__(self, "amplitudes", {**DEFAULT_AMPLITUDES, **dict(self.amplitudes)})
        self.validate()

    def validate(self) -> None:
        if not 0.0 < self.real_fraction < 1.0:
            raise DatasetConfigError(f"real_fraction must be in (0, 1), got {self.real_fraction}")
        if not self.families:
            raise DatasetConfigError("families: at least one manipulation family is required")
        unknown = set(self.families) - set(FAMILIES)
        if unknown:
            raise DatasetConfigError(f"families: unknown {sorted(unknown)}; known: {list(FAMILIES)}")
        for name in ("num_videos", "clips_per_video", "T", "H", "W", "C"):
            if int(getattr(self, name)) < 1:
                raise DatasetConfigError(f"{name} must be a positive integer, got {getattr(self, name)}")
        if self.H < 8 or self.W < 8:
            raise DatasetConfigError(f"H and W must be at least 8, got {self.H}x{self.W}")
        n_real = self.num_real
        if n_real < 1 or self.num_videos - n_real < 1:
            raise DatasetConfigError(f"num_videos={self.num_videos} with real_fraction={self.real_fraction} leaves a class empty")

    @property
    def num_real(self) -> int:
        return int(round(self.num_videos * self.real_fraction))

    @property
    def clip_shape(self) -> tuple[int, int, int, int]:
        return (self.T, self.H, self.W, self.C)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["families"] = list(self.families)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise DatasetConfigError(f"unknown dataset config field(s): {sorted(extra)}")
        return cls(**d)


@dataclass
class Sample:
    clip: np.ndarray
    label: int
    video_id: str
    family: str
    clip_index: int = 0

    def __post_init__(self):
        if (self.label == REAL) != (self.family == REAL_FAMILY):
            raise ValueError(f"sample {self.video_id}: label {self.label} inconsistent with family {self.family!r}")


@dataclass
class Dataset:
    samples: list[Sample]
    config: DatasetConfig

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def arrays(self, indices: Sequence[int] | None = None):
        """Stacked clips ``[N,T,H,W,C]``, labels ``[N]`` and video ids."""
        chosen = self.samples if indices is None else [self.samples[i] for i in indices]
        x = np.stack([s.clip for s in chosen]) if chosen else np.zeros((0, *self.config.clip_shape))
        y = np.array([s.label for s in chosen], dtype=np.int64)
        vids = [s.video_id for s in chosen]
        return x, y, vids

    def subset(self, keep: Iterable[int]) -> "Dataset":
        return Dataset([self.samples[i] for i in keep], self.config)

    def filter(self, predicate) -> "Dataset":
        return Dataset([s for s in self.samples if predicate(s)], self.config)

    def video_ids(self) -> list[str]:
        return sorted({s.video_id for s in self.samples})

    def families(self) -> set[str]:
        return {s.family for s in self.samples if s.label == FAKE}

    def class_indices(self, label: int) -> np.ndarray:
        return np.array([i for i, s in enumerate(self.samples) if s.label == label], dtype=np.int64)

    def manifest(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "samples": [
                {"video_id": s.video_id, "clip_index": s.clip_index, "label": s.label, "family": s.family}
                for s in self.samples
            ],
        }

    def digest(self) -> str:
        h = hashlib.sha256(json.dumps(self.manifest(), sort_keys=True).encode())
        for s in self.samples:
            h.update(np.ascontiguousarray(s.clip, dtype="<f8").tobytes())
        return h.hexdigest()


# -- generation -----------------------------------------------------------------


def _grid(h: int, w: int):
    return np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")


def _render_video(cfg: DatasetConfig, rng: np.random.Generator):
    """Return frames ``[F,H,W,C]`` and the per-frame face geometry."""
    F = cfg.clips_per_video * cfg.T
    H, W, C = cfg.H, cfg.W, cfg.C
    yy, xx = _grid(H, W)
    background = rng.uniform(0.35, 0.55)
    n_blobs = 6
    blob_c = np.stack([rng.uniform(0, H, n_blobs), rng.uniform(0, W, n_blobs)], axis=1)
    blob_s = rng.uniform(0.1, 0.25, n_blobs) * min(H, W)
    blob_a = rng.uniform(-0.12, 0.12, n_blobs)
    face_c = np.array([H / 2 + rng.uniform(-0.1, 0.1) * H, W / 2 + rng.uniform(-0.1, 0.1) * W])
    face_r = np.array([rng.uniform(0.28, 0.36) * H, rng.uniform(0.22, 0.3) * W])
    face_a = rng.uniform(0.08, 0.2)
    # fine static skin texture; the smoothing family erases it
    skin = gaussian_filter(rng.standard_normal((H, W)), 0.6)
    skin *= cfg.skin / max(float(skin.std()), 1e-12)
    gains = rng.uniform(0.9, 1.1, C)
    drift = np.cumsum(rng.normal(0, 0.3, size=(F, 2)), axis=0)
    jitter = rng.normal(0, 0.01, size=F)

    frames = np.empty((F, H, W, C))
    radii = np.empty((F, H, W))
    for f in range(F):
        dy, dx = drift[f]
        img = np.full((H, W), background)
        for (cy, cx), s, a in zip(blob_c, blob_s, blob_a):
            img += a * np.exp(-((yy - cy - dy) ** 2 + (xx - cx - dx) ** 2) / (2 * s * s))
        r = np.sqrt(((yy - face_c[0] - dy) / face_r[0]) ** 2 + ((xx - face_c[1] - dx) / face_r[1]) ** 2)
        face = 1.0 / (1.0 + np.exp((r - 1.0) * 12.0))
        img += (face_a + skin) * face + jitter[f]
        radii[f] = r
        frames[f] = img[..., None] * gains
    frames += rng.normal(0, cfg.grain, size=frames.shape)
    return frames, radii


def _face_mask(radii: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp((radii - 1.0) * 12.0))


def _checkerboard(h: int, w: int) -> np.ndarray:
    yy, xx = np.indices((h, w))
    return np.where((yy + xx) % 2 == 0, 1.0, -1.0)


def apply_artifact(frames: np.ndarray, radii: np.ndarray, family: str, amplitude: float, rng: np.random.Generator) -> np.ndarray:
    """Apply one manipulation family inside the face region of ``frames [F,H,W,C]``."""
    mask = _face_mask(radii)[..., None]
    out = frames.copy()
    if family == "blend_boundary":
        # thin bright seam where the swapped face meets the frame
        ring = np.exp(-(((radii - 1.0) / 0.1) ** 2))[..., None]
        out += amplitude * ring
    elif family == "smoothing":
        smooth = gaussian_filter(frames, sigma=(0, 1.2, 1.2, 0), mode="nearest")
        weight = np.clip(amplitude, 0.0, 1.0) * mask
        out = (1.0 - weight) * frames + weight * smooth
    elif family == "upsample_checker":
        out += amplitude * _checkerboard(*frames.shape[1:3])[None, :, :, None] * mask
    elif family == "color_shift":
        C = frames.shape[3]
        direction = rng.uniform(0.5, 1.0, C) * rng.choice([-1.0, 1.0], C)
        flicker = np.where(np.arange(frames.shape[0]) % 2 == 0, 1.0, -1.0)
        out += amplitude * flicker[:, None, None, None] * mask * direction
    else:
        raise ValueError(f"unknown manipulation family {family!r}")
    return out


def _video_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, index]))


def generate_dataset(cfg: DatasetConfig) -> Dataset:
    """Deterministic in ``cfg`` (including its seed); every video has its own derived RNG."""
    cfg.validate()
    n_real = cfg.num_real
    n_fake = cfg.num_videos - n_real
    order_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0xFA]))
    fam_assign = [cfg.families[i % len(cfg.families)] for i in range(n_fake)]
    order_rng.shuffle(fam_assign)
    samples: list[Sample] = []
    for v in range(cfg.num_videos):
        rng = _video_rng(cfg.seed, v)
        frames, radii = _render_video(cfg, rng)
        if v < n_real:
            label, family = REAL, REAL_FAMILY
        else:
            label, family = FAKE, fam_assign[v - n_real]
            frames = apply_artifact(frames, radii, family, float(cfg.amplitudes[family]), rng)
        frames = np.clip(frames, 0.0, 1.0)
        vid = f"v{v:05d}"
        for k in range(cfg.clips_per_video):
            clip = np.ascontiguousarray(frames[k * cfg.T : (k + 1) * cfg.T])
            samples.append(Sample(clip, label, vid, family, k))
    return Dataset(samples, cfg)


# -- splits and batches ---------------------------------------------------------


def _videos_by(dataset: Dataset, key) -> dict:
    groups: dict = {}
    for s in dataset.samples:
        groups.setdefault(key(s), set()).add(s.video_id)
    return {k: sorted(v) for k, v in groups.items()}


def _take_fraction(videos: list[str], fraction: float, rng: np.random.Generator) -> set[str]:
    if not videos:
        return set()
    k = int(round(len(videos) * fraction))
    k = min(max(k, 1), len(videos) - 1) if len(videos) > 1 else k
    perm = rng.permutation(len(videos))
    return {videos[i] for i in perm[:k]}


def split_by_video(dataset: Dataset, test_fraction: float = 0.3, seed: int = 0):
    """Random train/test split by video id, stratified by family (reals are their own stratum)."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5B]))
    test_videos: set[str] = set()
    for family, videos in sorted(_videos_by(dataset, lambda s: s.family).items()):
        test_videos |= _take_fraction(videos, test_fraction, rng)
    train = dataset.filter(lambda s: s.video_id not in test_videos)
    test = dataset.filter(lambda s: s.video_id in test_videos)
    return train, test


def split_leave_one_family_out(dataset: Dataset, held_out_family: str, real_test_fraction: float = 0.3, seed: int = 0):
    """Train on every family except ``held_out_family``; test on it plus held-out real videos."""
    if held_out_family not in dataset.families():
        raise ValueError(f"family {held_out_family!r} not present in dataset (has {sorted(dataset.families())})")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x100]))
    real_videos = _videos_by(dataset, lambda s: s.label).get(REAL, [])
    test_real = _take_fraction(real_videos, real_test_fraction, rng)
    train = dataset.filter(lambda s: s.family != held_out_family and s.video_id not in test_real)
    test = dataset.filter(lambda s: s.family == held_out_family or s.video_id in test_real)
    return train, test


class ClassExhaustedError(ValueError):
    pass


def make_paired_batch(dataset: Dataset, batch_size: int, seed=None) -> PairedBatch:
    """``batch_size/2`` real and ``batch_size/2`` fake clips, drawn uniformly without replacement, paired by position.

    ``seed`` may be an int or a ``numpy.random.Generator`` (advanced in place).
    """
    if batch_size < 2 or batch_size % 2:
        raise ValueError(f"batch_size must be a positive even number, got {batch_size}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    half = batch_size // 2
    real_idx = dataset.class_indices(REAL)
    fake_idx = dataset.class_indices(FAKE)
    for name, idx in (("real", real_idx), ("fake", fake_idx)):
        if len(idx) < half:
            raise ClassExhaustedError(f"need {half} {name} samples per batch, dataset has {len(idx)}")
    r = rng.choice(real_idx, size=half, replace=False)
    f = rng.choice(fake_idx, size=half, replace=False)
    real = np.stack([dataset.samples[i].clip for i in r])
    fake = np.stack([dataset.samples[i].clip for i in f])
    return PairedBatch(real, fake, indices=(r, f))
