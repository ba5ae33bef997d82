"""Per-seed aggregation (mean and two sample standard deviations) and summary files."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from .errors import IoError, NoData

METHOD_ORDER = ("Source", "MPol")


@dataclass(frozen=True)
class SeedRow:
    method: str
    seed: int
    values: dict[str, float]


@dataclass(frozen=True)
class Stat:
    mean: float
    two_sigma: float


@dataclass
class BenchmarkSummary:
    stats: dict[str, dict[str, Stat]]
    rows: list[SeedRow]
    provenance: dict[str, str] = field(default_factory=dict)

    @property
    def methods(self) -> list[str]:
        known = [m for m in METHOD_ORDER if m in self.stats]
        return known + sorted(m for m in self.stats if m not in METHOD_ORDER)

    @property
    def metrics(self) -> list[str]:
        names: list[str] = []
        for per_metric in self.stats.values():
            names += [k for k in per_metric if k not in names]
        return names


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, default=str, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _stat(values: list[float]) -> Stat:
    n = len(values)
    # fsum keeps the result independent of row order
    mean = math.fsum(values) / n
    if n == 1:
        return Stat(mean, 0.0)
    var = math.fsum((v - mean) ** 2 for v in values) / (n - 1)
    return Stat(mean, 2.0 * math.sqrt(var))


def aggregate(rows: list[SeedRow], config: dict | None = None, timestamp: str | None = None) -> BenchmarkSummary:
    if not rows:
        raise NoData("no rows to aggregate")
    rows = sorted(rows, key=lambda r: (r.method, r.seed))
    grouped: dict[str, dict[str, list[float]]] = {}
    for r in rows:
        per_metric = grouped.setdefault(r.method, {})
        for k, v in r.values.items():
            per_metric.setdefault(k, []).append(float(v))
    stats = {m: {k: _stat(v) for k, v in per.items()} for m, per in grouped.items()}
    prov = {"seeds": " ".join(str(s) for s in sorted({r.seed for r in rows}))}
    if config is not None:
        prov["config_hash"] = config_hash(config)
    if timestamp is not None:
        prov["timestamp"] = timestamp
    return BenchmarkSummary(stats, rows, prov)


def to_csv(summary: BenchmarkSummary) -> str:
    """Long-format CSV holding provenance, summary statistics and per-seed rows."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["section", "method", "seed", "metric", "value"])
    for k in sorted(summary.provenance):
        w.writerow(["provenance", "", "", k, summary.provenance[k]])
    for method in summary.methods:
        for metric, st in summary.stats[method].items():
            w.writerow(["mean", method, "", metric, repr(st.mean)])
            w.writerow(["two_sigma", method, "", metric, repr(st.two_sigma)])
    for r in summary.rows:
        for metric, v in r.values.items():
            w.writerow(["seed", r.method, r.seed, metric, repr(float(v))])
    return buf.getvalue()


def from_csv(text: str) -> BenchmarkSummary:
    prov: dict[str, str] = {}
    means: dict[tuple[str, str], float] = {}
    sigmas: dict[tuple[str, str], float] = {}
    seed_vals: dict[tuple[str, int], dict[str, float]] = {}
    for row in csv.DictReader(io.StringIO(text)):
        sec, method, metric, value = row["section"], row["method"], row["metric"], row["value"]
        if sec == "provenance":
            prov[metric] = value
        elif sec == "mean":
            means[(method, metric)] = float(value)
        elif sec == "two_sigma":
            sigmas[(method, metric)] = float(value)
        elif sec == "seed":
            seed_vals.setdefault((method, int(row["seed"])), {})[metric] = float(value)
        else:
            raise ValueError(f"unknown section {sec!r}")
    stats: dict[str, dict[str, Stat]] = {}
    for (method, metric), mean in means.items():
        stats.setdefault(method, {})[metric] = Stat(mean, sigmas[(method, metric)])
    rows = [SeedRow(m, s, v) for (m, s), v in seed_vals.items()]
    return BenchmarkSummary(stats, rows, prov)


def to_text_table(summary: BenchmarkSummary, metrics: list[str] | None = None,
                  methods: list[str] | None = None) -> str:
    """One row per method, one column per metric, cells as mean±2sigma."""
    methods = methods or summary.methods
    if metrics is None:
        metrics = [k for k in summary.metrics if any(k in summary.stats[m] for m in methods)]
    cells = [["method"] + metrics]
    for method in methods:
        line = [method]
        for metric in metrics:
            st = summary.stats[method].get(metric)
            line.append("-" if st is None else f"{st.mean:.2f}±{st.two_sigma:.3f}")
        cells.append(line)
    widths = [max(len(row[i]) for row in cells) for i in range(len(cells[0]))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() for row in cells]
    return "\n".join(lines) + "\n"


def emit(summary: BenchmarkSummary, fmt: str, path: str | Path | None = None) -> str:
    if fmt == "csv":
        text = to_csv(summary)
    elif fmt in ("text", "text-table"):
        text = to_text_table(summary)
    else:
        raise ValueError(f"unknown format {fmt!r}")
    if path is not None:
        try:
            Path(path).write_text(text, encoding="utf-8")
        except OSError as exc:
            raise IoError(f"cannot write {path}: {exc}") from exc
    return text
