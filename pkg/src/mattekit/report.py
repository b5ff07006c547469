"""Cross-method aggregation of evaluation CSVs into comparison tables
and robustness-curve data. Pure transformations: identical inputs give
byte-identical outputs; no hand-entered numbers."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

from .metrics import read_mean_row

SWEEP_COLUMNS = ("method", "set_label", "metric", "value")
METRIC_NAMES = ("sad", "mse", "grad", "conn")


@dataclass
class ComparisonTable:
    rows: list[dict]  # label, sad, mse, grad, conn; ascending by sad

    def to_csv_text(self) -> str:
        lines = ["method,sad,mse,grad,conn"]
        for r in self.rows:
            lines.append(f"{r['label']},{r['sad']:.6g},{r['mse']:.6g},{r['grad']:.6g},{r['conn']:.6g}")
        return "\n".join(lines) + "\n"

    def to_markdown(self) -> str:
        lines = [
            "| Method | SAD | MSE | Grad | Conn |",
            "| --- | ---: | ---: | ---: | ---: |",
        ]
        for r in self.rows:
            lines.append(
                f"| {r['label']} | {r['sad']:.4g} | {r['mse']:.4g} | {r['grad']:.4g} | {r['conn']:.4g} |"
            )
        return "\n".join(lines) + "\n"

    def write(self, out_dir) -> None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "table.csv").write_text(self.to_csv_text())
        (out_dir / "table.md").write_text(self.to_markdown())


def merge_reports(csv_paths, labels) -> ComparisonTable:
    """One row per label from each report CSV's MEAN row, sorted by SAD."""
    csv_paths = [Path(p) for p in csv_paths]
    labels = list(labels)
    if len(csv_paths) != len(labels):
        raise ValueError(f"{len(csv_paths)} csv paths but {len(labels)} labels")
    if len(set(labels)) != len(labels):
        dupes = sorted({x for x in labels if labels.count(x) > 1})
        raise ValueError(f"duplicate method label(s): {', '.join(dupes)}")
    rows = []
    for path, label in zip(csv_paths, labels):
        mean = read_mean_row(path)
        rows.append({"label": label, **{m: mean[m] for m in METRIC_NAMES}})
    rows.sort(key=lambda r: (r["sad"], r["label"]))
    return ComparisonTable(rows=rows)


def write_sweep_csv(path, method: str, per_set_means: dict[str, dict]) -> None:
    """Long-format sweep CSV: one row per (set_label, metric)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SWEEP_COLUMNS)
        for set_label in sorted(per_set_means):
            mean = per_set_means[set_label]
            for metric in METRIC_NAMES:
                writer.writerow([method, set_label, metric, f"{mean[metric]:.10g}"])


def read_sweep_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != SWEEP_COLUMNS:
            raise ValueError(f"{path}: unexpected sweep schema {header}")
        return [
            {"method": r[0], "set_label": r[1], "metric": r[2], "value": float(r[3])}
            for r in reader
            if r
        ]


def robustness_table(sweep_csvs) -> list[dict]:
    """Stack per-method sweep CSVs into one tidy (method, set_label, metric,
    value) table; values pass through unchanged. Every method must carry
    all four metrics for every set label present."""
    rows: list[dict] = []
    for path in sweep_csvs:
        rows.extend(read_sweep_csv(path))
    if not rows:
        raise ValueError("no sweep rows")
    set_labels = sorted({r["set_label"] for r in rows})
    for method in sorted({r["method"] for r in rows}):
        have = {(r["set_label"], r["metric"]) for r in rows if r["method"] == method}
        for label in set_labels:
            for metric in METRIC_NAMES:
                if (label, metric) not in have:
                    raise ValueError(f"method {method!r}: missing set {label!r} metric {metric!r}")
    rows.sort(key=lambda r: (r["method"], r["set_label"], METRIC_NAMES.index(r["metric"])))
    return rows


def write_curves_csv(path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SWEEP_COLUMNS)
        for r in rows:
            writer.writerow([r["method"], r["set_label"], r["metric"], f"{r['value']:.10g}"])
