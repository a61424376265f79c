"""Dataset directories: ``manifest.json`` plus one tensor file per clip."""

from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path

from ..autodiff import dumps_tensor, loads_tensor
from .synth import Dataset, DatasetConfig, Sample


class DirectoryNotEmptyError(FileExistsError):
    pass


def save_dataset(dataset: Dataset, directory: str | os.PathLike, force: bool = False) -> str:
    """Write ``dataset``; returns the manifest hash (sha256 of manifest.json bytes)."""
    directory = Path(directory)
    if directory.exists() and any(directory.iterdir()) and not force:
        raise DirectoryNotEmptyError(f"{directory} exists and is not empty (use --force to overwrite)")
    (directory / "clips").mkdir(parents=True, exist_ok=True)
    records = []
    for s in dataset.samples:
        fname = f"clips/{s.video_id}_{s.clip_index:03d}.tensor"
        blob = dumps_tensor(s.clip)
        (directory / fname).write_bytes(blob)
        records.append(
            {
                "file": fname,
                "label": int(s.label),
                "video_id": s.video_id,
                "family": s.family,
                "clip_index": int(s.clip_index),
                "sha256": hashlib.sha256(blob).hexdigest(),
            }
        )
    manifest = {"config": dataset.config.to_dict(), "samples": records}
    text = json.dumps(manifest, indent=1, sort_keys=True) + "\n"
    (directory / "manifest.json").write_text(text)
    return hashlib.sha256(text.encode()).hexdigest()


def manifest_hash(directory: str | os.PathLike) -> str:
    return hashlib.sha256((Path(directory) / "manifest.json").read_bytes()).hexdigest()


def load_dataset(directory: str | os.PathLike, verify: bool = False) -> Dataset:
    directory = Path(directory)
    path = directory / "manifest.json"
    if not path.exists():
        raise FileNotFoundError(f"no dataset manifest at {path}")
    manifest = json.loads(path.read_text())
    config = DatasetConfig.from_dict(manifest["config"])
    samples = []
    for rec in manifest["samples"]:
        blob = (directory / rec["file"]).read_bytes()
        if verify and hashlib.sha256(blob).hexdigest() != rec["sha256"]:
            raise ValueError(f"checksum mismatch for {rec['file']}")
        samples.append(Sample(loads_tensor(blob), int(rec["label"]), rec["video_id"], rec["family"], int(rec["clip_index"])))
    return Dataset(samples, config)
