"""Seven common distortions at five severities, applied to clips ``[T,H,W,C]``."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.fft import dctn, idctn
from scipy.ndimage import gaussian_filter

# one strictly increasing parameter per severity 1..5
SEVERITY_TABLE: dict[str, tuple[float, ...]] = {
    "saturation": (0.25, 0.5, 1.0, 1.5, 2.0),  # gain added to deviation from luminance / mid-gray
    "contrast": (0.2, 0.35, 0.5, 0.65, 0.8),  # fraction of deviation from the clip mean removed
    "block_occlusion": (4, 6, 8, 10, 12),  # side of the occluding square, pixels
    "gaussian_noise": (0.01, 0.02, 0.035, 0.05, 0.07),  # noise std
    "gaussian_blur": (0.5, 0.9, 1.3, 1.8, 2.4),  # spatial blur std, pixels
    "pixelation": (2, 3, 4, 6, 8),  # block size, pixels
    "jpeg_quant": (0.02, 0.04, 0.08, 0.12, 0.18),  # quantization step on 8x8 orthonormal DCT coefficients
}
DISTORTION_KINDS = tuple(SEVERITY_TABLE)
SEVERITIES = (1, 2, 3, 4, 5)


class DistortionError(ValueError):
    pass


@dataclass(frozen=True)
class DistortionSpec:
    kind: str
    severity: int

    def __post_init__(self):
        if self.kind not in SEVERITY_TABLE:
            raise DistortionError(f"unknown distortion kind {self.kind!r}; known: {list(DISTORTION_KINDS)}")
        if isinstance(self.severity, bool) or int(self.severity) != self.severity or not 1 <= self.severity <= 5:
            raise DistortionError(f"severity must be an integer in 1..5, got {self.severity!r}")

    @property
    def parameter(self) -> float:
        return SEVERITY_TABLE[self.kind][int(self.severity) - 1]

    @property
    def name(self) -> str:
        return f"{self.kind}@{self.severity}"

    @classmethod
    def parse(cls, text: str) -> "DistortionSpec":
        kind, _, sev = text.partition("@")
        try:
            return cls(kind, int(sev))
        except ValueError as exc:
            raise DistortionError(f"cannot parse distortion {text!r}: {exc}") from None


def _saturation(clip, gain, rng):
    if clip.shape[-1] >= 3:
        lum = clip.mean(axis=-1, keepdims=True)
        return lum + (1.0 + gain) * (clip - lum)
    # single channel: no chroma, so push intensities away from mid-gray
    return 0.5 + (1.0 + gain) * (clip - 0.5)


def _contrast(clip, reduction, rng):
    m = clip.mean()
    return m + (1.0 - reduction) * (clip - m)


def _block_occlusion(clip, side, rng):
    out = clip.copy()
    T, H, W, _ = clip.shape
    side = int(min(side, H, W))
    for t in range(T):
        y0 = rng.integers(0, H - side + 1)
        x0 = rng.integers(0, W - side + 1)
        out[t, y0 : y0 + side, x0 : x0 + side, :] = 0.0
    return out


def _gaussian_noise(clip, sigma, rng):
    return clip + rng.normal(0.0, sigma, size=clip.shape)


def _gaussian_blur(clip, sigma, rng):
    return gaussian_filter(clip, sigma=(0, sigma, sigma, 0), mode="nearest")


def _pixelation(clip, block, rng):
    block = int(block)
    T, H, W, C = clip.shape
    ph, pw = -H % block, -W % block
    padded = np.pad(clip, ((0, 0), (0, ph), (0, pw), (0, 0)), mode="edge")
    hb, wb = padded.shape[1] // block, padded.shape[2] // block
    coarse = padded.reshape(T, hb, block, wb, block, C).mean(axis=(2, 4))
    fine = np.repeat(np.repeat(coarse, block, axis=1), block, axis=2)
    return fine[:, :H, :W, :]


def _jpeg_quant(clip, step, rng):
    T, H, W, C = clip.shape
    ph, pw = -H % 8, -W % 8
    padded = np.pad(clip, ((0, 0), (0, ph), (0, pw), (0, 0)), mode="edge")
    hb, wb = padded.shape[1] // 8, padded.shape[2] // 8
    blocks = padded.reshape(T, hb, 8, wb, 8, C)
    coef = dctn(blocks, axes=(2, 4), norm="ortho")
    coef = np.round(coef / step) * step
    out = idctn(coef, axes=(2, 4), norm="ortho").reshape(padded.shape)
    return out[:, :H, :W, :]


_IMPLS = {
    "saturation": _saturation,
    "contrast": _contrast,
    "block_occlusion": _block_occlusion,
    "gaussian_noise": _gaussian_noise,
    "gaussian_blur": _gaussian_blur,
    "pixelation": _pixelation,
    "jpeg_quant": _jpeg_quant,
}


def apply_distortion(clip: np.ndarray, spec: DistortionSpec, seed: int = 0) -> np.ndarray:
    """Distort one clip (or a batch ``[N,T,H,W,C]``); output is clipped to [0, 1]."""
    if not isinstance(spec, DistortionSpec):
        raise DistortionError(f"expected DistortionSpec, got {type(spec).__name__}")
    clip = np.asarray(clip, dtype=np.float64)
    rng = np.random.default_rng(np.random.SeedSequence([seed, DISTORTION_KINDS.index(spec.kind), spec.severity]))
    fn = _IMPLS[spec.kind]
    if clip.ndim == 5:
        out = np.stack([fn(c, spec.parameter, rng) for c in clip])
    elif clip.ndim == 4:
        out = fn(clip, spec.parameter, rng)
    else:
        raise DistortionError(f"expected a clip [T,H,W,C] or batch [N,T,H,W,C], got shape {clip.shape}")
    return np.clip(out, 0.0, 1.0)


def all_specs() -> list[DistortionSpec]:
    return [DistortionSpec(k, s) for k in DISTORTION_KINDS for s in SEVERITIES]
