"""Command-line front end: merge, analyze, diff, info, and synth subcommands.

Exit codes: 0 success, 1 usage error, 2 validation error (bad config,
shape/key mismatch, malformed archive), 3 numerical failure (allocation
non-convergence).
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass
from pathlib import Path

from .allocation import AllocationConfig, allocate
from .archive import archive_info, read_archive, write_archive
from .conflict import layer_conflict
from .diagnostics import REPORT_FORMATS, LayerDiagnostics
from .errors import ArchiveError, ConvergenceError, ValidationError
from .grouping import DEFAULT_GROUPING_PATTERN, group_layers
from .merging import MergeConfig, config_metadata, merge
from .synthetic import write_synthetic_set
from .task_vectors import compute_task_vector

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3

_CONFIG_KEYS = {
    "base_path", "tuned_paths", "method", "lambda", "sign_election",
    "alpha", "beta", "s_min", "s_max", "s_target", "epsilon",
    "max_iterations", "grouping_pattern", "output_path", "report_path",
    "report_format", "seed",
}


class _Parser(argparse.ArgumentParser):
    """argparse maps usage errors to exit code 1 instead of its default 2."""

    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


@dataclass(frozen=True)
class RunConfig:
    """Validated contents of a merge config file."""

    base_path: str
    tuned_paths: tuple[tuple[str, str], ...]
    output_path: str
    merge_config: MergeConfig
    report_path: str | None = None
    report_format: str = "json"
    seed: int | None = None


def _expect(value: object, types: type | tuple, key: str) -> object:
    if isinstance(value, bool) and bool not in (types if isinstance(types, tuple) else (types,)):
        raise ValidationError(f"config key {key!r} has wrong type: expected {types}, got bool")
    if not isinstance(value, types):
        raise ValidationError(
            f"config key {key!r} has wrong type: expected {types}, got {type(value).__name__}"
        )
    return value


def _parse_tuned_paths(raw: object) -> tuple[tuple[str, str], ...]:
    entries = _expect(raw, list, "tuned_paths")
    if not entries:
        raise ValidationError("tuned_paths must not be empty")
    parsed = []
    for i, entry in enumerate(entries):
        if not isinstance(entry, dict):
            raise ValidationError(f"tuned_paths[{i}] must be an object with 'path' and 'label'")
        unknown = set(entry) - {"path", "label"}
        if unknown:
            raise ValidationError(f"unknown keys in tuned_paths[{i}]: {sorted(unknown)}")
        if "path" not in entry:
            raise ValidationError(f"tuned_paths[{i}] is missing 'path'")
        path = _expect(entry["path"], str, f"tuned_paths[{i}].path")
        label = entry.get("label", Path(path).stem)
        _expect(label, str, f"tuned_paths[{i}].label")
        parsed.append((path, label))
    return tuple(parsed)


def load_run_config(path: str | Path) -> RunConfig:
    """Parse and validate a merge config file; unknown keys are errors."""
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ValidationError("config must be a JSON object")
    unknown = set(raw) - _CONFIG_KEYS
    if unknown:
        raise ValidationError(f"unknown config keys: {sorted(unknown)}")
    for key in ("base_path", "tuned_paths", "output_path"):
        if key not in raw:
            raise ValidationError(f"config is missing required key {key!r}")

    base_path = _expect(raw["base_path"], str, "base_path")
    tuned_paths = _parse_tuned_paths(raw["tuned_paths"])
    output_path = _expect(raw["output_path"], str, "output_path")
    for path in [base_path] + [p for p, _ in tuned_paths]:
        if Path(path) == Path(output_path):
            raise ValidationError(f"output_path {output_path!r} collides with input {path!r}")

    method = _expect(raw.get("method", "mals"), str, "method")
    allocation = AllocationConfig(
        alpha=float(_expect(raw.get("alpha", 1.0), (int, float), "alpha")),
        beta=float(_expect(raw.get("beta", 1.0), (int, float), "beta")),
        s_min=float(_expect(raw.get("s_min", 0.1), (int, float), "s_min")),
        s_max=float(_expect(raw.get("s_max", 0.9), (int, float), "s_max")),
        s_target=float(_expect(raw.get("s_target", 0.5), (int, float), "s_target")),
        epsilon=float(_expect(raw.get("epsilon", 1e-6), (int, float), "epsilon")),
        max_iterations=int(_expect(raw.get("max_iterations", 100), int, "max_iterations")),
    )
    merge_config = MergeConfig(
        method=method,
        lam=float(_expect(raw.get("lambda", 1.0), (int, float), "lambda")),
        sign_election=bool(_expect(raw.get("sign_election", False), bool, "sign_election")),
        allocation=allocation,
        grouping_pattern=_expect(
            raw.get("grouping_pattern", DEFAULT_GROUPING_PATTERN), str, "grouping_pattern"
        ),
    )

    report_path = raw.get("report_path")
    if report_path is not None:
        _expect(report_path, str, "report_path")
    report_format = _expect(raw.get("report_format", "json"), str, "report_format")
    if report_format not in REPORT_FORMATS:
        raise ValidationError(f"report_format must be one of {REPORT_FORMATS}")
    seed = raw.get("seed")
    if seed is not None:
        _expect(seed, int, "seed")
        if seed < 0:
            raise ValidationError("seed must be a non-negative integer")
    return RunConfig(
        base_path=base_path,
        tuned_paths=tuned_paths,
        output_path=output_path,
        merge_config=merge_config,
        report_path=report_path,
        report_format=report_format,
        seed=seed,
    )


def _cmd_merge(args: argparse.Namespace) -> int:
    cfg = load_run_config(args.config)
    base = read_archive(cfg.base_path)
    tuned = [read_archive(path) for path, _ in cfg.tuned_paths]
    labels = [label for _, label in cfg.tuned_paths]
    output = merge(base, tuned, cfg.merge_config, labels=labels)
    write_archive(output.merged, cfg.output_path, metadata=config_metadata(cfg.merge_config))
    print(f"merged {len(tuned)} checkpoints via {output.method} -> {cfg.output_path}")
    if cfg.report_path is not None:
        if output.allocation is None or output.conflict is None:
            print(
                "warning: simple_average produces no per-layer diagnostics; skipping report",
                file=sys.stderr,
            )
        else:
            diag = LayerDiagnostics.from_results(output.conflict, output.allocation, output.method)
            diag.write(cfg.report_path, cfg.report_format)
            print(f"report written to {cfg.report_path}")
    return EXIT_OK


def _cmd_analyze(args: argparse.Namespace) -> int:
    base = read_archive(args.base)
    grouping = group_layers(base, args.pattern)
    task_vectors = [
        compute_task_vector(base, read_archive(path), Path(path).stem) for path in args.tuned
    ]
    conflict = layer_conflict(task_vectors, grouping)
    allocation = allocate(conflict, AllocationConfig())
    diag = LayerDiagnostics.from_results(conflict, allocation, "analyze")
    diag.write(args.out, args.format)
    print(f"analyzed {len(task_vectors)} checkpoints over {len(grouping)} layers -> {args.out}")
    return EXIT_OK


def _cmd_diff(args: argparse.Namespace) -> int:
    base = read_archive(args.base)
    tuned = read_archive(args.tuned)
    tau = compute_task_vector(base, tuned, Path(args.tuned).stem)
    write_archive(tau.deltas, args.out)
    print(f"task vector for {tau.label} -> {args.out}")
    return EXIT_OK


def _cmd_info(args: argparse.Namespace) -> int:
    infos, metadata = archive_info(args.archive)
    for info in infos:
        dims = "x".join(str(d) for d in info.shape) if info.shape else "scalar"
        print(f"{info.name}  {info.dtype}  {dims}  ({info.n_bytes} bytes)")
    if metadata:
        print(f"metadata: {json.dumps(metadata, sort_keys=True)}")
    print(f"{len(infos)} tensors")
    return EXIT_OK


def _cmd_synth(args: argparse.Namespace) -> int:
    try:
        profile = [float(p) for p in args.conflict.split(",") if p.strip() != ""]
    except ValueError as exc:
        raise ValidationError(f"bad conflict profile {args.conflict!r}: {exc}") from exc
    paths = write_synthetic_set(
        args.out_dir, args.seed, args.layers, args.elems, args.tasks, profile
    )
    print(f"base -> {paths['base']}")
    for path in paths["tasks"]:
        print(f"task -> {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="malsmerge", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_merge = sub.add_parser("merge", help="merge checkpoints per a JSON config")
    p_merge.add_argument("--config", required=True, help="path to the merge config JSON")
    p_merge.set_defaults(func=_cmd_merge)

    p_analyze = sub.add_parser("analyze", help="report per-layer conflict and allocation")
    p_analyze.add_argument("--base", required=True)
    p_analyze.add_argument("--tuned", required=True, nargs="+")
    p_analyze.add_argument("--pattern", default=DEFAULT_GROUPING_PATTERN)
    p_analyze.add_argument("--format", default="json", choices=REPORT_FORMATS)
    p_analyze.add_argument("--out", required=True)
    p_analyze.set_defaults(func=_cmd_analyze)

    p_diff = sub.add_parser("diff", help="write a task vector as an archive")
    p_diff.add_argument("--base", required=True)
    p_diff.add_argument("--tuned", required=True)
    p_diff.add_argument("--out", required=True)
    p_diff.set_defaults(func=_cmd_diff)

    p_info = sub.add_parser("info", help="list an archive's tensors")
    p_info.add_argument("--archive", required=True)
    p_info.set_defaults(func=_cmd_info)

    p_synth = sub.add_parser("synth", help="generate synthetic checkpoint sets")
    p_synth.add_argument("--seed", required=True, type=int)
    p_synth.add_argument("--layers", required=True, type=int)
    p_synth.add_argument("--elems", required=True, type=int)
    p_synth.add_argument("--tasks", required=True, type=int)
    p_synth.add_argument("--conflict", required=True, help="comma-separated per-layer targets")
    p_synth.add_argument("--out-dir", required=True)
    p_synth.set_defaults(func=_cmd_synth)
    return parser


def run(argv: list[str] | None = None) -> int:
    """Dispatch a CLI invocation and map failures to exit codes."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except ConvergenceError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ValidationError, ArchiveError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


def entrypoint() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    entrypoint()
