"""Result aggregation and the delimited report format.

A report file carries comment headers, then a tab-separated machine table
with one row per (arm, task) plus a mean row per arm and an asr row for the
attack arm, then a '#'-prefixed human-readable table mirroring the usual
NA-vs-attack presentation. Floats are written with repr so parsing them
back reproduces the values exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass
class ArmResult:
    """Per-task accuracy statistics for one arm ('na' or 'attack')."""

    task_mean: np.ndarray
    task_std: np.ndarray

    @property
    def overall_mean(self) -> float:
        return float(np.mean(self.task_mean))

    @classmethod
    def from_runs(cls, per_run: np.ndarray) -> "ArmResult":
        per_run = np.atleast_2d(np.asarray(per_run, dtype=np.float64))
        return cls(per_run.mean(axis=0), per_run.std(axis=0))


@dataclass
class ExperimentReport:
    learner: str
    scenario: str
    n_runs: int
    seeds: list[int]
    clean: ArmResult
    attacked: ArmResult | None = None
    asr_mean: float | None = None
    asr_std: float | None = None
    target_task: int | None = None
    config_fingerprint: str = ""
    wall_time_s: float = 0.0
    extras: dict = field(default_factory=dict)

    @property
    def n_tasks(self) -> int:
        return len(self.clean.task_mean)


def _rows(report: ExperimentReport) -> list[tuple[str, str, float, float, str]]:
    rows = []
    for arm_name, arm in (("na", report.clean), ("attack", report.attacked)):
        if arm is None:
            continue
        for t in range(report.n_tasks):
            attacked_flag = "1" if (
                arm_name == "attack" and report.target_task == t + 1
            ) else "0"
            rows.append((arm_name, str(t + 1), arm.task_mean[t], arm.task_std[t], attacked_flag))
        rows.append((arm_name, "mean", arm.overall_mean,
                     float(np.mean(arm.task_std)), "-"))
    if report.asr_mean is not None:
        rows.append(("attack", "asr", report.asr_mean, report.asr_std or 0.0, "-"))
    return rows


def machine_table(report: ExperimentReport) -> str:
    lines = ["arm\ttask\tmean\tstd\tattacked"]
    for arm, task, mean, std, flag in _rows(report):
        # repr of a Python float round-trips exactly
        lines.append(f"{arm}\t{task}\t{float(mean)!r}\t{float(std)!r}\t{flag}")
    return "\n".join(lines) + "\n"


def _fmt(mean: float, std: float, with_std: bool) -> str:
    return f"{mean:.3f} ± {std:.1e}" if with_std else f"{mean:.3f}"


def human_table(report: ExperimentReport) -> str:
    """Tasks as rows; NA and With-Attack columns."""
    name = report.learner.upper()
    header = ["Task", f"{name} (NA)"]
    if report.attacked is not None:
        header.append(f"{name} (With Attack)")
    lines = ["  ".join(f"{h:<22}" for h in header).rstrip()]
    for t in range(report.n_tasks):
        cells = [f"T{t + 1}", _fmt(report.clean.task_mean[t], report.clean.task_std[t], False)]
        if report.attacked is not None:
            cells.append(_fmt(report.attacked.task_mean[t], report.attacked.task_std[t], True))
        lines.append("  ".join(f"{c:<22}" for c in cells).rstrip())
    cells = ["Mean", _fmt(report.clean.overall_mean, 0.0, False)]
    if report.attacked is not None:
        cells.append(_fmt(report.attacked.overall_mean, float(np.mean(report.attacked.task_std)), True))
    lines.append("  ".join(f"{c:<22}" for c in cells).rstrip())
    if report.asr_mean is not None:
        cells = ["ASR", "", _fmt(report.asr_mean, report.asr_std or 0.0, True)]
        lines.append("  ".join(f"{c:<22}" for c in cells).rstrip())
    return "\n".join(lines) + "\n"


def render_report(report: ExperimentReport) -> str:
    seeds = ",".join(str(s) for s in report.seeds)
    head = [
        "# clpoison-report v1",
        f"# fingerprint={report.config_fingerprint} learner={report.learner} "
        f"scenario={report.scenario} runs={report.n_runs} seeds={seeds} "
        f"target_task={report.target_task if report.target_task is not None else '-'}",
        f"# wall_time_s={report.wall_time_s:.3f}",
    ]
    body = machine_table(report)
    human = "".join(f"# {line}\n" for line in human_table(report).splitlines())
    return "\n".join(head) + "\n" + body + "#\n" + human


def write_report(report: ExperimentReport, path: str | Path) -> None:
    path = Path(path)
    try:
        path.write_text(render_report(report))
    except OSError as exc:
        raise OSError(f"cannot write report to {path}: {exc}") from exc


def read_report(path: str | Path) -> dict[tuple[str, str], tuple[float, float, str]]:
    """Parse the machine table back as {(arm, task): (mean, std, flag)}."""
    out: dict[tuple[str, str], tuple[float, float, str]] = {}
    for line in Path(path).read_text().splitlines():
        if line.startswith("#") or not line.strip() or line.startswith("arm\t"):
            continue
        arm, task, mean, std, flag = line.split("\t")
        out[(arm, task)] = (float(mean), float(std), flag)
    return out


def comparable_bytes(path: str | Path) -> bytes:
    """Report content minus the wall-time line, for determinism checks."""
    lines = [
        line for line in Path(path).read_text().splitlines()
        if not line.startswith("# wall_time_s=")
    ]
    return ("\n".join(lines) + "\n").encode()
