"""Small encoders with a two-vector similarity head.

``encode`` maps an input batch to unit-norm embeddings; ``classify`` scores each
embedding against one weight vector per class.  Column 0 of the logits is the
fake class and column 1 the real class, so a label doubles as a column index.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import Tensor, as_tensor, conv2d, l2_normalize, load_tensor, matmul, relu, save_tensor
from .autodiff.tensor import mean as t_mean

FAKE, REAL = 0, 1


class ArchitectureError(ValueError):
    pass


@dataclass(frozen=True)
class ArchitectureSpec:
    """Layer list plus input shape.

    ``input_shape`` is ``(C, H, W)`` for convolutional stacks or ``(D,)`` for
    dense-only stacks.  Layers are dicts: ``{"type": "conv", "out": 8,
    "kernel": 3, "stride": 2}``, ``{"type": "relu"}``, ``{"type": "meanpool"}``
    (global spatial average) and ``{"type": "dense", "width": 16}``.
    """

    name: str
    input_shape: tuple[int, ...]
    layers: tuple[dict, ...]
    embedding_dim: int

    def layer_shapes(self) -> list[tuple[int, ...]]:
        """Output shape (without batch) after every layer; raises if layers don't compose."""
        shape = tuple(self.input_shape)
        shapes = []
        for i, layer in enumerate(self.layers):
            kind = layer.get("type")
            if kind == "conv":
                if len(shape) != 3:
                    raise ArchitectureError(f"layer {i}: conv needs a (C,H,W) input, got {shape}")
                k, s = int(layer["kernel"]), int(layer.get("stride", 1))
                pad = int(layer.get("padding", k // 2))
                h = (shape[1] + 2 * pad - k) // s + 1
                w = (shape[2] + 2 * pad - k) // s + 1
                if h < 1 or w < 1:
                    raise ArchitectureError(f"layer {i}: conv output would be empty for input {shape}")
                shape = (int(layer["out"]), h, w)
            elif kind == "relu":
                pass
            elif kind == "meanpool":
                if len(shape) != 3:
                    raise ArchitectureError(f"layer {i}: meanpool needs a (C,H,W) input, got {shape}")
                shape = (shape[0],)
            elif kind == "dense":
                if len(shape) != 1:
                    raise ArchitectureError(f"layer {i}: dense needs a flat input, got {shape}")
                shape = (int(layer["width"]),)
            else:
                raise ArchitectureError(f"layer {i}: unknown layer type {kind!r}")
            shapes.append(shape)
        final = shapes[-1] if shapes else shape
        if final != (self.embedding_dim,):
            raise ArchitectureError(f"final layer shape {final} != embedding_dim {self.embedding_dim}")
        return shapes

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "input_shape": list(self.input_shape),
            "layers": [dict(l) for l in self.layers],
            "embedding_dim": self.embedding_dim,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ArchitectureSpec":
        return cls(d["name"], tuple(d["input_shape"]), tuple(dict(l) for l in d["layers"]), int(d["embedding_dim"]))


def tiny_cnn(channels: int = 4, height: int = 32, width: int = 32, embedding_dim: int = 16) -> ArchitectureSpec:
    return ArchitectureSpec(
        "tiny-cnn",
        (channels, height, width),
        (
            {"type": "conv", "out": 8, "kernel": 3, "stride": 2},
            {"type": "relu"},
            {"type": "conv", "out": 16, "kernel": 3, "stride": 2},
            {"type": "relu"},
            {"type": "meanpool"},
            {"type": "dense", "width": embedding_dim},
        ),
        embedding_dim,
    )


def tiny_cnn_wide(channels: int = 4, height: int = 32, width: int = 32, embedding_dim: int = 16) -> ArchitectureSpec:
    return ArchitectureSpec(
        "tiny-cnn-wide",
        (channels, height, width),
        (
            {"type": "conv", "out": 12, "kernel": 5, "stride": 2},
            {"type": "relu"},
            {"type": "conv", "out": 24, "kernel": 3, "stride": 2},
            {"type": "relu"},
            {"type": "meanpool"},
            {"type": "dense", "width": embedding_dim},
        ),
        embedding_dim,
    )


ARCHITECTURES = {"tiny-cnn": tiny_cnn, "tiny-cnn-wide": tiny_cnn_wide}


def get_architecture(name: str, input_shape: tuple[int, int, int] = (4, 32, 32)) -> ArchitectureSpec:
    try:
        factory = ARCHITECTURES[name]
    except KeyError:
        raise ArchitectureError(f"unknown architecture {name!r}; known: {sorted(ARCHITECTURES)}") from None
    return factory(*input_shape)


@dataclass
class ModelParams:
    spec: ArchitectureSpec
    weights: dict[str, Tensor]
    head: Tensor
    seed: int = 0
    config_hash: str = ""
    extra: dict = field(default_factory=dict)

    @property
    def embedding_dim(self) -> int:
        return self.spec.embedding_dim

    @property
    def input_shape(self) -> tuple[int, ...]:
        return self.spec.input_shape

    def parameters(self) -> list[Tensor]:
        return [*self.weights.values(), self.head]

    def named_parameters(self) -> dict[str, Tensor]:
        return {**self.weights, "head": self.head}

    def prepare_input(self, batch) -> Tensor:
        """Accept clips ``[N,T,H,W,C]`` (stacked to ``[N,T*C,H,W]``) or already-shaped input."""
        x = as_tensor(batch)
        want = tuple(self.spec.input_shape)
        if x.ndim == 5 and len(want) == 3:
            n, t, h, w, c = x.shape
            x = x.transpose(0, 1, 4, 2, 3).reshape(n, t * c, h, w)
        elif x.ndim > 2 and len(want) == 1:
            x = x.reshape(x.shape[0], -1)
        if tuple(x.shape[1:]) != want:
            raise ArchitectureError(f"input shape {tuple(x.shape[1:])} does not match architecture input {want}")
        return x

    def encode(self, batch) -> Tensor:
        return encode(self, batch)

    def logits(self, batch) -> Tensor:
        return classify(encode(self, batch), self.head)

    def frozen(self) -> "ModelParams":
        """Same parameter values, no gradient tracking (for attacks and evaluation)."""
        return ModelParams(
            self.spec,
            {k: Tensor(v.data, _copy=False) for k, v in self.weights.items()},
            Tensor(self.head.data, _copy=False),
            self.seed,
            self.config_hash,
            self.extra,
        )

    def copy(self) -> "ModelParams":
        return ModelParams(
            self.spec,
            {k: Tensor(v.data, requires_grad=True) for k, v in self.weights.items()},
            Tensor(self.head.data, requires_grad=True),
            self.seed,
            self.config_hash,
            dict(self.extra),
        )

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(json.dumps(self.spec.to_dict(), sort_keys=True).encode())
        for name, t in sorted(self.named_parameters().items()):
            h.update(name.encode())
            h.update(np.ascontiguousarray(t.data, dtype="<f8").tobytes())
        return h.hexdigest()


def init_params(spec: ArchitectureSpec, seed: int = 0) -> ModelParams:
    """Fan-in scaled uniform weights, zero biases; deterministic in ``(spec, seed)``."""
    shapes = spec.layer_shapes()
    rng = np.random.default_rng(seed)
    weights: dict[str, Tensor] = {}
    shape = tuple(spec.input_shape)
    for i, layer in enumerate(spec.layers):
        kind = layer["type"]
        if kind == "conv":
            k = int(layer["kernel"])
            fan_in = shape[0] * k * k
            bound = np.sqrt(6.0 / fan_in)
            w = rng.uniform(-bound, bound, size=(int(layer["out"]), shape[0], k, k))
            weights[f"conv{i}.weight"] = Tensor(w, requires_grad=True)
            weights[f"conv{i}.bias"] = Tensor(np.zeros(int(layer["out"])), requires_grad=True)
        elif kind == "dense":
            fan_in = shape[0]
            bound = np.sqrt(6.0 / fan_in)
            w = rng.uniform(-bound, bound, size=(int(layer["width"]), fan_in))
            weights[f"dense{i}.weight"] = Tensor(w, requires_grad=True)
            weights[f"dense{i}.bias"] = Tensor(np.zeros(int(layer["width"])), requires_grad=True)
        shape = shapes[i]
    d = spec.embedding_dim
    bound = np.sqrt(3.0 / d)
    head = Tensor(rng.uniform(-bound, bound, size=(2, d)), requires_grad=True)
    return ModelParams(spec, weights, head, seed)


def encode(params: ModelParams, batch) -> Tensor:
    x = params.prepare_input(batch)
    if x.ndim == 4:
        # remove each channel's spatial mean so brightness offsets carry no signal
        x = x - x.mean(axis=(2, 3), keepdims=True)
    for i, layer in enumerate(params.spec.layers):
        kind = layer["type"]
        if kind == "conv":
            k = int(layer["kernel"])
            x = conv2d(
                x,
                params.weights[f"conv{i}.weight"],
                params.weights[f"conv{i}.bias"],
                stride=int(layer.get("stride", 1)),
                padding=int(layer.get("padding", k // 2)),
            )
        elif kind == "relu":
            x = relu(x)
        elif kind == "meanpool":
            x = t_mean(x, axis=(2, 3))
        elif kind == "dense":
            x = matmul(x, params.weights[f"dense{i}.weight"].transpose(1, 0)) + params.weights[f"dense{i}.bias"]
    return l2_normalize(x, axis=1)


def classify(embeddings, head) -> Tensor:
    """``logits[n, c] = <embedding_n, head_c>``; no bias term."""
    embeddings, head = as_tensor(embeddings), as_tensor(head)
    if embeddings.ndim != 2 or head.ndim != 2 or embeddings.shape[1] != head.shape[1]:
        raise ValueError(f"classify: embeddings {embeddings.shape} incompatible with head {head.shape}")
    return matmul(embeddings, head.transpose(1, 0))


class LinearModel:
    """Logits affine in the flattened input: ``z = x W^T + b``.

    Used where attacks need an analytically tractable target.  Embeddings are
    the L2-normalized flattened input so feature-space attacks still run.
    """

    def __init__(self, weight, bias=None):
        self.weight = Tensor(weight)
        self.bias = Tensor(np.zeros(self.weight.shape[0]) if bias is None else bias)

    @classmethod
    def antisymmetric(cls, w) -> "LinearModel":
        """Logits ``(-w.x, w.x)`` for (fake, real)."""
        w = np.asarray(w, dtype=np.float64).reshape(-1)
        return cls(np.stack([-w, w]))

    def encode(self, batch) -> Tensor:
        x = as_tensor(batch)
        return l2_normalize(x.reshape(x.shape[0], -1), axis=1)

    def logits(self, batch) -> Tensor:
        x = as_tensor(batch)
        return matmul(x.reshape(x.shape[0], -1), self.weight.transpose(1, 0)) + self.bias


# -- checkpoints ----------------------------------------------------------------


def save_checkpoint(params: ModelParams, directory: str | os.PathLike) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files = {}
    for name, t in params.named_parameters().items():
        fname = f"{name}.tensor"
        save_tensor(directory / fname, t.data)
        files[name] = fname
    manifest = {
        "architecture": params.spec.name,
        "spec": params.spec.to_dict(),
        "embedding_dim": params.embedding_dim,
        "seed": params.seed,
        "config_hash": params.config_hash,
        "parameters": files,
        "digest": params.digest(),
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return directory


def load_checkpoint(directory: str | os.PathLike) -> ModelParams:
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"no checkpoint manifest at {manifest_path}")
    manifest = json.loads(manifest_path.read_text())
    spec = ArchitectureSpec.from_dict(manifest["spec"])
    tensors = {name: Tensor(load_tensor(directory / fname), requires_grad=True) for name, fname in manifest["parameters"].items()}
    head = tensors.pop("head")
    params = ModelParams(spec, tensors, head, int(manifest.get("seed", 0)), manifest.get("config_hash", ""))
    spec.layer_shapes()
    return params
