from .distortions import (
    DISTORTION_KINDS,
    SEVERITIES,
    SEVERITY_TABLE,
    DistortionError,
    DistortionSpec,
    all_specs,
    apply_distortion,
)
from .io import DirectoryNotEmptyError, load_dataset, manifest_hash, save_dataset
from .synth import (
    FAMILIES,
    REAL_FAMILY,
    ClassExhaustedError,
    Dataset,
    DatasetConfig,
    DatasetConfigError,
    Sample,
    apply_artifact,
    generate_dataset,
    make_paired_batch,
    split_by_video,
    split_leave_one_family_out,
)

__all__ = [
    "DISTORTION_KINDS",
    "FAMILIES",
    "REAL_FAMILY",
    "SEVERITIES",
    "SEVERITY_TABLE",
    "ClassExhaustedError",
    "Dataset",
    "DatasetConfig",
    "DatasetConfigError",
    "DirectoryNotEmptyError",
    "DistortionError",
    "DistortionSpec",
    "Sample",
    "all_specs",
    "apply_artifact",
    "apply_distortion",
    "generate_dataset",
    "load_dataset",
    "make_paired_batch",
    "manifest_hash",
    "save_dataset",
    "split_by_video",
    "split_leave_one_family_out",
]
