"""Learning-curve overlays from JSONL round logs."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

CSV_COLUMNS = ("round", "run_id", "best_fid", "best_is")


class LogFormatError(ValueError):
    pass


@dataclass
class Series:
    run_id: str
    label: str
    best_fid: list[float]
    best_is: list[float]


def read_jsonl(path: str | Path) -> list[dict]:
    records = []
    problems = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                problems.append(f"{path}:{lineno}: {exc.msg}")
                continue
            if not isinstance(rec, dict) or "round" not in rec:
                problems.append(f"{path}:{lineno}: not a round record")
                continue
            records.append(rec)
    if problems:
        raise LogFormatError("\n".join(problems))
    return records


def _num(v) -> float:
    return math.inf if v is None else float(v)


def best_per_round(records: list[dict]) -> tuple[list[float], list[float]]:
    """fid_like and is_like of each round's flagged best individual, in log order."""
    groups: dict[tuple, list[dict]] = {}
    for rec in records:
        groups.setdefault((rec.get("stage"), rec.get("cycle", 0), rec["round"]), []).append(rec)
    ordered = []
    for members in groups.values():
        flagged = [r for r in members if r.get("best")]
        ordered.append(flagged[0] if flagged else min(members, key=lambda r: _num(r.get("fid_like"))))
    return [_num(r.get("fid_like")) for r in ordered], [float(r.get("is_like") or 0.0) for r in ordered]


def load_series(path: str | Path) -> Series:
    path = Path(path)
    run_id, label = path.parent.name, path.parent.name
    manifest = path.parent / "manifest.json"
    if manifest.exists():
        meta = json.loads(manifest.read_text())
        run_id = meta.get("run_id", run_id)
        label = meta.get("label", run_id)
    fid, score = best_per_round(read_jsonl(path))
    return Series(run_id, label, fid, score)


def write_csv(series: list[Series], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for s in series:
            for r, (f, i) in enumerate(zip(s.best_fid, s.best_is)):
                w.writerow([r, s.run_id, repr(f), repr(i)])


def plot_series(series: list[Series], out_path: str | Path) -> None:
    fig, (ax_f, ax_i) = plt.subplots(1, 2, figsize=(10, 4))
    for k, s in enumerate(series):
        rounds = list(range(len(s.best_fid)))
        (lf,) = ax_f.plot(rounds, s.best_fid, marker="o", label=s.label)
        (li,) = ax_i.plot(rounds, s.best_is, marker="o", label=s.label)
        lf.set_gid(f"fid-{k}-{s.run_id}")
        li.set_gid(f"is-{k}-{s.run_id}")
    ax_f.set(xlabel="round", ylabel="best fid_like", yscale="log")
    ax_i.set(xlabel="round", ylabel="best is_like")
    ax_f.legend()
    ax_i.legend()
    fig.tight_layout()
    fig.savefig(out_path, format="svg", metadata={"Date": None})
    plt.close(fig)


def render(log_paths, out_path: str | Path) -> list[Series]:
    out_path = Path(out_path)
    series = [load_series(p) for p in log_paths]
    plot_series(series, out_path)
    write_csv(series, out_path.with_suffix(".csv"))
    return series
