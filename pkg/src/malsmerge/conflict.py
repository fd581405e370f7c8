"""Per-layer inter-task conflict and importance statistics.

Conflict per layer is the mean over task pairs of half the absolute Pearson
correlation plus half the sign-disagreement ratio of the flattened layer
updates; importance is the mean absolute update magnitude averaged over
tasks. All accumulation happens at 64-bit: layer groups can exceed 1e7
elements and 32-bit sums lose the signal.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from typing import Sequence

import numpy as np

from .errors import ValidationError
from .grouping import LayerGrouping, flatten_group
from .task_vectors import TaskVector


@dataclass(frozen=True)
class PairConflict:
    """Per-layer conflict detail for one (i, j) task pair, i < j."""

    task_pair: tuple[int, int]
    per_layer_rho_abs: np.ndarray
    per_layer_sign_disagreement: np.ndarray


@dataclass(frozen=True)
class ConflictReport:
    layer_ids: tuple[str, ...]
    conflict: np.ndarray
    importance: np.ndarray
    pairs: tuple[PairConflict, ...]


def _check_pair(x: np.ndarray, y: np.ndarray) -> None:
    if x.ndim != 1 or y.ndim != 1:
        raise ValueError("inputs must be flat vectors")
    if len(x) != len(y):
        raise ValueError(f"length mismatch: {len(x)} vs {len(y)}")


def pearson_abs(x: np.ndarray, y: np.ndarray) -> float:
    """Absolute Pearson correlation of two equally long flat vectors.

    Returns 0 when either vector has zero variance: a constant update
    carries no directional conflict signal.
    """
    x = np.asarray(x)
    y = np.asarray(y)
    _check_pair(x, y)
    if len(x) == 0:
        raise ValueError("vectors must hold at least one element")
    # np.sum keeps the reduction order fixed regardless of thread count,
    # unlike BLAS-backed dot products.
    dx = x.astype(np.float64) - np.sum(x, dtype=np.float64) / len(x)
    dy = y.astype(np.float64) - np.sum(y, dtype=np.float64) / len(y)
    var_x = float(np.sum(dx * dx))
    var_y = float(np.sum(dy * dy))
    if var_x == 0.0 or var_y == 0.0:
        return 0.0
    prod = var_x * var_y
    if 0.0 < prod < np.inf:
        den = np.sqrt(prod)  # sqrt(v*v) == v, so x == y lands exactly on 1
    else:
        den = np.sqrt(var_x) * np.sqrt(var_y)  # product under/overflowed
    rho = np.sum(dx * dy) / den
    return min(abs(float(rho)), 1.0)


def sign_disagreement(x: np.ndarray, y: np.ndarray) -> float:
    """Ratio of positions where two updates pull in opposite directions.

    Twice the count of opposite-sign positions over the total nonzero counts
    of both vectors; 0 when neither vector has a nonzero entry.
    """
    x = np.asarray(x)
    y = np.asarray(y)
    _check_pair(x, y)
    opposite = int(np.count_nonzero((x > 0) & (y < 0)) + np.count_nonzero((x < 0) & (y > 0)))
    nonzero = int(np.count_nonzero(x)) + int(np.count_nonzero(y))
    if nonzero == 0:
        return 0.0
    return 2.0 * opposite / nonzero


def _layer_flats(task_vectors: Sequence[TaskVector], grouping: LayerGrouping) -> list[list[np.ndarray]]:
    """Flatten every task vector per layer group; [layer][task] order."""
    if not task_vectors:
        raise ValidationError("need at least one task vector")
    grouped = {name for _, members in grouping.groups for name in members}
    for tv in task_vectors:
        if set(tv.deltas) != grouped:
            raise ValidationError(
                f"task vector {tv.label!r} keys do not match the grouping's name set"
            )
    return [
        [flatten_group(tv.deltas, members) for tv in task_vectors]
        for _, members in grouping.groups
    ]


def layer_importance(task_vectors: Sequence[TaskVector], grouping: LayerGrouping) -> np.ndarray:
    """Mean absolute task-vector magnitude per layer, averaged over tasks."""
    flats = _layer_flats(task_vectors, grouping)
    out = np.zeros(len(grouping), dtype=np.float64)
    for l, per_task in enumerate(flats):
        total = 0.0
        for flat in per_task:
            total += float(np.sum(np.abs(flat), dtype=np.float64) / len(flat)) if len(flat) else 0.0
        out[l] = total / len(task_vectors)
    return out


def layer_conflict(task_vectors: Sequence[TaskVector], grouping: LayerGrouping) -> ConflictReport:
    """Score every layer's inter-task conflict and importance.

    With a single task there are no pairs and conflict is zero everywhere,
    deferring the allocation entirely to importance.
    """
    flats = _layer_flats(task_vectors, grouping)
    n_layers = len(grouping)
    n_tasks = len(task_vectors)

    pairs: list[PairConflict] = []
    for i, j in combinations(range(n_tasks), 2):
        rho = np.zeros(n_layers, dtype=np.float64)
        dis = np.zeros(n_layers, dtype=np.float64)
        for l in range(n_layers):
            rho[l] = pearson_abs(flats[l][i], flats[l][j])
            dis[l] = sign_disagreement(flats[l][i], flats[l][j])
        pairs.append(PairConflict(task_pair=(i, j), per_layer_rho_abs=rho, per_layer_sign_disagreement=dis))

    conflict = np.zeros(n_layers, dtype=np.float64)
    if pairs:
        for pair in pairs:  # fixed pair order keeps the reduction bit-stable
            conflict += 0.5 * pair.per_layer_rho_abs + 0.5 * pair.per_layer_sign_disagreement
        conflict /= len(pairs)

    return ConflictReport(
        layer_ids=tuple(grouping.layer_ids),
        conflict=conflict,
        importance=layer_importance(task_vectors, grouping),
        pairs=tuple(pairs),
    )
