"""Metrics, clip-to-video aggregation, attack/distortion evaluation and reports."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import re
import time
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import jsonschema
import numpy as np
from scipy.stats import rankdata

from .attacks import AttackConfig, cw_margin, fgsm, frozen, pgd, transfer_attack
from .autodiff import log_softmax
from .data.distortions import DISTORTION_KINDS, SEVERITIES, DistortionSpec, apply_distortion
from .data.synth import Dataset
from .models import REAL

EVAL_BATCH = 64


class EvalError(ValueError):
    pass


def roc_auc(scores, labels) -> float:
    """Mann-Whitney AUC: P(score_pos > score_neg) + P(tie) / 2, from average ranks."""
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    if scores.shape != labels.shape:
        raise EvalError(f"{len(scores)} scores but {len(labels)} labels")
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise EvalError("roc_auc needs both classes present")
    ranks = rankdata(scores, method="average")
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def video_level_scores(clip_scores) -> list[tuple[str, float]]:
    """Average clip scores per video; output sorted by video id."""
    groups: dict[str, list[float]] = defaultdict(list)
    for vid, score in clip_scores:
        groups[vid].append(float(score))
    return [(vid, float(np.mean(groups[vid]))) for vid in sorted(groups)]


def real_scores(model, x: np.ndarray, batch: int = EVAL_BATCH) -> np.ndarray:
    """Softmax probability of the real class, computed in batches."""
    model = frozen(model)
    out = []
    for i in range(0, len(x), batch):
        logp = log_softmax(model.logits(x[i : i + batch]), axis=1).data
        out.append(np.exp(logp[:, REAL]))
    return np.concatenate(out) if out else np.zeros(0)


# -- conditions -------------------------------------------------------------------


@dataclass(frozen=True)
class Condition:
    """One evaluation column: clean inputs, an attack, or a distortion."""

    name: str
    kind: str  # clean | fgsm | pgd | cw2 | transfer | distortion
    attack: AttackConfig | None = None
    distortion: DistortionSpec | None = None

    def to_dict(self) -> dict:
        d: dict = {"condition": self.name}
        if self.attack is not None:
            d["attack_cfg"] = {"attack": self.kind, **self.attack.to_dict()}
        if self.distortion is not None:
            d["distortion"] = {"kind": self.distortion.kind, "severity": self.distortion.severity, "parameter": self.distortion.parameter}
        return d


_COND_RE = re.compile(r"^(?P<base>[a-z_]+?)(?P<steps>\d+)?(?::(?P<opts>.*))?$")


def _parse_options(opts: str | None) -> dict:
    out = {}
    if not opts:
        return out
    for part in opts.split(","):
        key, _, value = part.partition("=")
        key, value = key.strip(), value.strip()
        if not key or not value:
            raise EvalError(f"malformed condition option {part!r}")
        if key == "epsilon" and "/" in value:
            num, den = value.split("/")
            out[key] = float(num) / float(den)
        elif value.lower() in ("true", "false"):
            out[key] = value.lower() == "true"
        else:
            try:
                out[key] = int(value) if re.fullmatch(r"-?\d+", value) else float(value)
            except ValueError:
                out[key] = value
    return out


def parse_condition(text: str, seed: int = 0) -> Condition:
    """Parse names such as ``clean``, ``pgd10``, ``pgd10:epsilon=0``, ``fgsm``,
    ``cw2``, ``transfer`` or ``gaussian_noise@3``."""
    text = text.strip()
    if "@" in text:
        return Condition(text, "distortion", distortion=DistortionSpec.parse(text))
    if text == "clean":
        return Condition("clean", "clean")
    m = _COND_RE.match(text)
    if not m:
        raise EvalError(f"cannot parse condition {text!r}")
    base, steps, opts = m.group("base"), m.group("steps"), _parse_options(m.group("opts"))
    opts.setdefault("seed", seed)
    if base == "pgd":
        cfg = AttackConfig.pgd(steps=int(steps or 10), **opts)
        return Condition(text, "pgd", cfg)
    if base == "fgsm" and steps is None:
        return Condition(text, "fgsm", AttackConfig.pgd(steps=1, **opts))
    if base == "cw" and steps == "2":
        return Condition(text, "cw2", AttackConfig.cw2(**opts))
    if base == "transfer" and steps is None:
        opts.setdefault("steps", 10)
        return Condition(text, "transfer", AttackConfig(norm="Linf", **opts))
    raise EvalError(f"unknown condition {text!r}")


def perturb(condition: Condition, model, x: np.ndarray, y: np.ndarray, surrogate=None) -> np.ndarray:
    kind = condition.kind
    if kind == "clean":
        return x
    if kind == "distortion":
        return apply_distortion(x, condition.distortion, seed=0)
    outs = []
    for i in range(0, len(x), EVAL_BATCH):
        xb, yb = x[i : i + EVAL_BATCH], y[i : i + EVAL_BATCH]
        cfg = condition.attack.replace(seed=condition.attack.seed + i)
        if kind == "fgsm":
            outs.append(fgsm(model, xb, yb, cfg.epsilon))
        elif kind == "pgd":
            outs.append(pgd(model, xb, yb, cfg))
        elif kind == "cw2":
            outs.append(cw_margin(model, xb, yb, cfg))
        elif kind == "transfer":
            if surrogate is None:
                raise EvalError("a transfer condition needs a surrogate model")
            outs.append(transfer_attack(surrogate, model, xb, yb, cfg)[0])
        else:
            raise EvalError(f"unknown condition kind {kind!r}")
    return np.concatenate(outs)


def score_condition(condition: Condition, model, x, y, video_ids, surrogate=None) -> dict:
    xp = perturb(condition, model, x, y, surrogate)
    scores = real_scores(model, xp)
    vids = video_level_scores(zip(video_ids, scores))
    video_label = {}
    for vid, label in zip(video_ids, y):
        video_label[vid] = int(label)
    v_scores = [s for _, s in vids]
    v_labels = [video_label[v] for v, _ in vids]
    return {
        **condition.to_dict(),
        "auc_video": roc_auc(v_scores, v_labels),
        "auc_clip": roc_auc(scores, y),
        "accuracy": float(np.mean((scores >= 0.5).astype(int) == y)),
    }


@dataclass
class EvalReport:
    checkpoint: str
    dataset: str
    seed: int
    results: list[dict] = field(default_factory=list)
    created: str = ""
    extra: dict = field(default_factory=dict)

    def result(self, condition: str) -> dict:
        for r in self.results:
            if r["condition"] == condition:
                return r
        raise KeyError(condition)

    def to_dict(self) -> dict:
        meta = {"checkpoint": self.checkpoint, "dataset": self.dataset, "seed": self.seed, "created": self.created}
        meta.update(self.extra)
        return {"meta": meta, "results": self.results}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        meta = dict(d["meta"])
        base = {k: meta.pop(k) for k in ("checkpoint", "dataset", "seed", "created") if k in meta}
        return cls(base.get("checkpoint", ""), base.get("dataset", ""), int(base.get("seed", 0)), list(d["results"]), base.get("created", ""), meta)


REPORT_SCHEMA = {
    "type": "object",
    "required": ["meta", "results"],
    "properties": {
        "meta": {
            "type": "object",
            "required": ["checkpoint", "dataset", "seed", "created"],
            "properties": {"seed": {"type": "integer"}, "checkpoint": {"type": "string"}, "dataset": {"type": "string"}},
        },
        "results": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["condition", "auc_video", "auc_clip", "accuracy"],
                "properties": {
                    "condition": {"type": "string"},
                    "auc_video": {"type": "number", "minimum": 0, "maximum": 1},
                    "auc_clip": {"type": "number", "minimum": 0, "maximum": 1},
                    "accuracy": {"type": "number", "minimum": 0, "maximum": 1},
                    "attack_cfg": {"type": "object"},
                    "distortion": {"type": "object"},
                },
            },
        },
    },
}


def validate_report(report: dict) -> None:
    """Raise ``jsonschema.ValidationError`` unless ``report`` matches the report.json schema."""
    jsonschema.validate(report, REPORT_SCHEMA)


def _eval_one(args):
    condition, model, x, y, vids, surrogate = args
    return score_condition(condition, model, x, y, vids, surrogate)


def robust_eval(
    params,
    dataset: Dataset,
    conditions: Sequence[Condition | str],
    surrogate=None,
    seed: int = 0,
    jobs: int = 1,
    checkpoint: str | None = None,
    timestamp: bool = False,
) -> EvalReport:
    """Evaluate ``params`` on ``dataset`` under every condition (video + clip AUC, accuracy)."""
    if not conditions:
        raise EvalError("at least one condition is required")
    conds = [parse_condition(c, seed) if isinstance(c, str) else c for c in conditions]
    if any(c.kind == "transfer" for c in conds) and surrogate is None:
        raise EvalError("a transfer condition needs a surrogate model")
    x, y, vids = dataset.arrays()
    tasks = [(c, params, x, y, vids, surrogate) for c in conds]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_eval_one, tasks))
    else:
        results = [_eval_one(t) for t in tasks]
    return EvalReport(
        checkpoint=checkpoint or (params.digest() if hasattr(params, "digest") else ""),
        dataset=dataset.digest(),
        seed=seed,
        results=results,
        created=time.strftime("%Y-%m-%dT%H:%M:%S") if timestamp else "",
    )


@dataclass
class DistortionGrid:
    kinds: tuple[str, ...]
    severities: tuple[int, ...]
    auc: np.ndarray  # [kinds, severities]

    @property
    def average(self) -> np.ndarray:
        return self.auc.mean(axis=0)

    def rows(self) -> list[dict]:
        rows = [
            {"severity": s, "kind": k, "auc": float(self.auc[i, j])}
            for i, k in enumerate(self.kinds)
            for j, s in enumerate(self.severities)
        ]
        rows += [{"severity": s, "kind": "average", "auc": float(a)} for s, a in zip(self.severities, self.average)]
        return rows

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=["severity", "kind", "auc"], lineterminator="\n")
        writer.writeheader()
        writer.writerows(self.rows())
        return buf.getvalue()


def distortion_sweep(params, dataset: Dataset, kinds: Sequence[str] = DISTORTION_KINDS, severities=SEVERITIES) -> DistortionGrid:
    """Video-level AUC for every (kind, severity) cell."""
    x, y, vids = dataset.arrays()
    grid = np.zeros((len(kinds), len(severities)))
    for i, kind in enumerate(kinds):
        for j, sev in enumerate(severities):
            cond = Condition(f"{kind}@{sev}", "distortion", distortion=DistortionSpec(kind, sev))
            grid[i, j] = score_condition(cond, params, x, y, vids)["auc_video"]
    return DistortionGrid(tuple(kinds), tuple(severities), grid)


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()
