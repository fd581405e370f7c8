"""Partition tensor names into layer groups and flatten groups to vectors."""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import ValidationError

# Captures the digit run after a "layers." path segment; everything else
# (embeddings, heads, norms) pools into one shared "ungrouped" allocation.
DEFAULT_GROUPING_PATTERN = r"(?:^|\.)layers\.(\d+)(?:\.|$)"

UNGROUPED = "ungrouped"


@dataclass(frozen=True)
class LayerGrouping:
    """Ordered partition of tensor names into layer groups.

    Group ids are ``layer.<capture>`` ordered numerically when the captured
    text is numeric (lexicographically otherwise), with ``ungrouped`` last.
    Member lists are lexicographically sorted.
    """

    groups: tuple[tuple[str, tuple[str, ...]], ...]

    @property
    def layer_ids(self) -> list[str]:
        return [gid for gid, _ in self.groups]

    def __len__(self) -> int:
        return len(self.groups)


def _group_sort_key(capture: str) -> tuple[int, int, str]:
    if capture.isdigit():
        return (0, int(capture), "")
    return (1, 0, capture)


def group_layers(
    tensors: Mapping[str, np.ndarray] | Sequence[str],
    pattern: str = DEFAULT_GROUPING_PATTERN,
) -> LayerGrouping:
    """Partition tensor names by the pattern's single capture group.

    A name whose match captures text ``X`` joins group ``layer.X``; all
    non-matching names join ``ungrouped``.
    """
    try:
        rx = re.compile(pattern)
    except re.error as exc:
        raise ValidationError(f"invalid grouping pattern: {exc}") from exc
    if rx.groups != 1:
        raise ValidationError(
            f"grouping pattern must contain exactly one capture group, found {rx.groups}"
        )

    names = list(tensors.keys()) if isinstance(tensors, Mapping) else list(tensors)
    by_capture: dict[str, list[str]] = {}
    leftover: list[str] = []
    for name in names:
        m = rx.search(name)
        if m is not None and m.group(1) is not None:
            by_capture.setdefault(m.group(1), []).append(name)
        else:
            leftover.append(name)

    groups: list[tuple[str, tuple[str, ...]]] = [
        (f"layer.{capture}", tuple(sorted(by_capture[capture])))
        for capture in sorted(by_capture, key=_group_sort_key)
    ]
    if leftover:
        groups.append((UNGROUPED, tuple(sorted(leftover))))
    return LayerGrouping(groups=tuple(groups))


def flatten_group(tensors: Mapping[str, np.ndarray], members: Sequence[str]) -> np.ndarray:
    """Concatenate member tensors row-major, in lexicographic name order."""
    missing = [name for name in members if name not in tensors]
    if missing:
        raise ValidationError(f"names missing from tensor map: {sorted(missing)}")
    ordered = sorted(members)
    if not ordered:
        return np.zeros(0, dtype=np.float32)
    return np.concatenate([np.ravel(tensors[name]) for name in ordered])


def unflatten_group(
    flat: np.ndarray,
    shapes: Mapping[str, tuple[int, ...]],
    members: Sequence[str],
) -> dict[str, np.ndarray]:
    """Reverse :func:`flatten_group`, slicing ``flat`` back into named tensors."""
    out: dict[str, np.ndarray] = {}
    offset = 0
    for name in sorted(members):
        shape = shapes[name]
        size = int(np.prod(shape, dtype=np.int64))
        out[name] = np.asarray(flat[offset : offset + size]).reshape(shape)
        offset += size
    if offset != len(flat):
        raise ValidationError(
            f"flat vector holds {len(flat)} values, member shapes demand {offset}"
        )
    return out
