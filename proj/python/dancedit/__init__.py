"""Music-conditioned dance generation with iterative text-driven editing."""

from ._core import (
    DEFAULT_SAMPLING_STEPS,
    FEATURE_WIDTH,
    JOINT_COUNT,
    Editor,
    FormatError,
    Generator,
    Motion,
    Music,
    bas,
    beat_alignment_cost,
    build_dataset,
    dataset_summary,
    diversity,
    fid,
    motion_beats,
    pfc,
    train_editor,
    train_generator,
)

__all__ = [name for name in dir() if not name.startswith("_")]
