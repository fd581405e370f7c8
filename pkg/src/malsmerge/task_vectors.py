"""Per-task weight deltas relative to a shared base checkpoint."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import ValidationError

TensorMap = Mapping[str, np.ndarray]


@dataclass
class TaskVector:
    """Named per-tensor difference between a fine-tuned checkpoint and its base."""

    label: str
    deltas: dict[str, np.ndarray]


@dataclass(frozen=True)
class CompatibilityEntry:
    label: str
    ok: bool
    first_mismatch: str | None = None
    reason: str | None = None


@dataclass(frozen=True)
class CompatibilityReport:
    entries: tuple[CompatibilityEntry, ...] = field(default_factory=tuple)

    @property
    def all_ok(self) -> bool:
        return all(entry.ok for entry in self.entries)


def _first_mismatch(base: TensorMap, tuned: TensorMap) -> tuple[str, str] | None:
    """Return (key, reason) for the first incompatibility in sorted key order."""
    base_keys, tuned_keys = set(base), set(tuned)
    if base_keys != tuned_keys:
        missing = sorted(base_keys - tuned_keys)
        extra = sorted(tuned_keys - base_keys)
        parts = []
        if missing:
            parts.append(f"checkpoint lacks {missing}")
        if extra:
            parts.append(f"base lacks {extra}")
        return min(missing + extra), "; ".join(parts)
    for key in sorted(base_keys):
        if base[key].shape != tuned[key].shape:
            return key, f"shape {tuned[key].shape} does not match base shape {base[key].shape}"
    return None


def compute_task_vector(base: TensorMap, tuned: TensorMap, label: str) -> TaskVector:
    """Subtract the base from a fine-tuned checkpoint, tensor by tensor.

    Operands are widened to 64-bit before subtracting and the result is
    stored at 32-bit, so cancellation noise does not feed the conflict
    statistics downstream.
    """
    mismatch = _first_mismatch(base, tuned)
    if mismatch is not None:
        key, reason = mismatch
        raise ValidationError(f"checkpoint {label!r} incompatible at {key!r}: {reason}")
    deltas = {
        key: (tuned[key].astype(np.float64) - base[key].astype(np.float64)).astype(np.float32)
        for key in base
    }
    return TaskVector(label=label, deltas=deltas)


def validate_compatibility(base: TensorMap, tuned_list: Sequence[TensorMap],
                           labels: Sequence[str] | None = None) -> CompatibilityReport:
    """Check each tuned checkpoint against the base's keys and shapes.

    Failures become report entries naming the first offending key; only an
    empty ``tuned_list`` raises.
    """
    if not tuned_list:
        raise ValidationError("tuned_list must contain at least one checkpoint")
    if labels is None:
        labels = [f"task-{i}" for i in range(len(tuned_list))]
    elif len(labels) != len(tuned_list):
        raise ValidationError(
            f"{len(labels)} labels provided for {len(tuned_list)} checkpoints"
        )
    entries = []
    for label, tuned in zip(labels, tuned_list):
        mismatch = _first_mismatch(base, tuned)
        if mismatch is None:
            entries.append(CompatibilityEntry(label=label, ok=True))
        else:
            key, reason = mismatch
            entries.append(CompatibilityEntry(label=label, ok=False, first_mismatch=key, reason=reason))
    return CompatibilityReport(entries=tuple(entries))
