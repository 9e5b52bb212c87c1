"""Metrics CSV handling and text report rendering.

One schema everywhere: (round, client, split, metric, value). Aggregate
table cells are recomputed from the per-case rows they summarize, never
stored independently, so reports cannot drift from their inputs.
"""

from __future__ import annotations

import csv
import statistics
from dataclasses import dataclass, field
from pathlib import Path

SCHEMA = ("round", "client", "split", "metric", "value")


def _fmt(v: float) -> str:
    return f"{float(v):.17g}"


@dataclass
class MetricRow:
    round_index: int
    client: str
    split: str
    metric: str
    value: float


def write_rows(path, rows, append: bool = False):
    path = Path(path)
    new = not (append and path.exists())
    with open(path, "a" if append else "w", newline="") as f:
        w = csv.writer(f)
        if new:
            w.writerow(SCHEMA)
        for r in rows:
            w.writerow([r.round_index, r.client, r.split, r.metric, _fmt(r.value)])


def read_rows(path) -> list[MetricRow]:
    path = Path(path)
    rows = []
    with open(path, newline="") as f:
        reader = csv.reader(f)
        for lineno, rec in enumerate(reader, start=1):
            if lineno == 1:
                if tuple(rec) != SCHEMA:
                    raise ValueError(
                        f"{path}:1: expected header {','.join(SCHEMA)}, got {','.join(rec)}"
                    )
                continue
            if len(rec) != len(SCHEMA):
                raise ValueError(
                    f"{path}:{lineno}: expected {len(SCHEMA)} columns, got {len(rec)}"
                )
            try:
                rows.append(MetricRow(int(rec[0]), rec[1], rec[2], rec[3],
                                      float(rec[4])))
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
    return rows


# ----------------------------------------------------------------------
# aggregation
# ----------------------------------------------------------------------

@dataclass
class MetricsReport:
    label: str
    per_site_mean: dict[str, float] = field(default_factory=dict)
    per_site_cases: dict[str, list[float]] = field(default_factory=dict)
    matrix: dict[tuple[str, str], float] = field(default_factory=dict)

    @property
    def local_sites(self) -> list[str]:
        return sorted(s for s in self.per_site_mean if s != "central")

    @property
    def avg_local(self) -> float | None:
        sites = self.local_sites
        if not sites:
            return None
        return sum(self.per_site_mean[s] for s in sites) / len(sites)

    @property
    def central(self) -> float | None:
        return self.per_site_mean.get("central")

    def matrix_sites(self) -> list[str]:
        return sorted({a for a, _ in self.matrix} | {b for _, b in self.matrix})

    def row_generalizability(self, train_site: str) -> float | None:
        others = [v for (a, b), v in self.matrix.items()
                  if a == train_site and b != train_site]
        return sum(others) / len(others) if others else None

    def mean_generalizability(self) -> float | None:
        off = [v for (a, b), v in self.matrix.items() if a != b]
        return sum(off) / len(off) if off else None

    def mean_local(self) -> float | None:
        diag = [v for (a, b), v in self.matrix.items() if a == b]
        return sum(diag) / len(diag) if diag else None


def summarize_run(run_dir) -> MetricsReport:
    """Aggregate one run directory's metrics.csv into a report block."""
    run_dir = Path(run_dir)
    label = run_dir.name
    cfg_path = run_dir / "config.yaml"
    if cfg_path.exists():
        import yaml

        with open(cfg_path) as f:
            label = str(yaml.safe_load(f).get("mode", label))
    rows = read_rows(run_dir / "metrics.csv")
    rep = MetricsReport(label=label)
    for r in rows:
        if r.split == "test" and r.metric.startswith("dice/"):
            rep.per_site_cases.setdefault(r.client, []).append(r.value)
        elif r.split == "test" and r.metric.startswith("xdice/"):
            rep.matrix[(r.client, r.metric.split("/", 1)[1])] = r.value
    for site, vals in rep.per_site_cases.items():
        rep.per_site_mean[site] = sum(vals) / len(vals)
    return rep


def _table(header: list[str], rows: list[list[str]]) -> str:
    widths = [max(len(str(r[i])) for r in [header] + rows) for i in range(len(header))]
    def line(cells):
        return "  ".join(str(c).ljust(w) for c, w in zip(cells, widths)).rstrip()
    sep = "-" * (sum(widths) + 2 * (len(widths) - 1))
    return "\n".join([line(header), sep] + [line(r) for r in rows])


def render_report(run_dirs, percent: bool = True) -> str:
    """Deterministic text tables over one or more run directories."""
    reports = [summarize_run(d) for d in run_dirs]
    scale = 100.0 if percent else 1.0
    out = []

    site_reports = [r for r in reports if r.per_site_mean]
    if site_reports:
        sites = sorted({s for r in site_reports for s in r.local_sites})
        header = ["mode", "central"] + sites + ["avg_local"]
        rows = []
        for r in site_reports:
            cells = [r.label]
            cells.append("" if r.central is None else f"{r.central * scale:.2f}")
            for s in sites:
                v = r.per_site_mean.get(s)
                cells.append("" if v is None else f"{v * scale:.2f}")
            avg = r.avg_local
            cells.append("" if avg is None else f"{avg * scale:.2f}")
            rows.append(cells)
        out.append("== mean test overlap per site ==")
        out.append(_table(header, rows))

    dist_reports = [r for r in reports if r.per_site_cases]
    if dist_reports:
        out.append("")
        out.append("== per-case overlap distribution (min / median / max) ==")
        header = ["mode", "site", "n", "min", "median", "max"]
        rows = []
        for r in dist_reports:
            for site in sorted(r.per_site_cases):
                vals = r.per_site_cases[site]
                rows.append([
                    r.label, site, str(len(vals)),
                    f"{min(vals) * scale:.2f}",
                    f"{statistics.median(vals) * scale:.2f}",
                    f"{max(vals) * scale:.2f}",
                ])
        out.append(_table(header, rows))

    mat_reports = [r for r in reports if r.matrix]
    for r in mat_reports:
        sites = r.matrix_sites()
        out.append("")
        out.append(f"== cross-site generalizability: {r.label} ==")
        header = ["train\\test"] + sites + ["gen"]
        rows = []
        for a in sites:
            cells = [a]
            for b in sites:
                v = r.matrix.get((a, b))
                cells.append("" if v is None else f"{v * scale:.2f}")
            g = r.row_generalizability(a)
            cells.append("" if g is None else f"{g * scale:.2f}")
            rows.append(cells)
        loc = r.mean_local()
        gbar = r.mean_generalizability()
        footer = ["mean_local", f"{loc * scale:.2f}" if loc is not None else ""]
        footer += [""] * (len(header) - len(footer) - 1)
        footer.append(f"{gbar * scale:.2f}" if gbar is not None else "")
        rows.append(footer)
        out.append(_table(header, rows))

    if not out:
        return ""
    return "\n".join(out) + "\n"


def write_distribution_files(run_dir):
    """Per-mode min/median/max files for the per-case overlap scores."""
    rep = summarize_run(run_dir)
    path = Path(run_dir) / "distributions.csv"
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["site", "n", "min", "median", "max"])
        for site in sorted(rep.per_site_cases):
            vals = rep.per_site_cases[site]
            w.writerow([site, len(vals), _fmt(min(vals)),
                        _fmt(statistics.median(vals)), _fmt(max(vals))])
    return path
