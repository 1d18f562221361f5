"""Markdown tables and static figures for evaluation and statistics results."""

from __future__ import annotations

import os
from pathlib import Path
from typing import Mapping, Sequence

from .groups import ALL_GROUPS, REFERENCE_GROUP, DemographicGroup

GROUP_DISPLAY = {
    DemographicGroup.BLACK: "Black",
    DemographicGroup.CAUCASIAN: "Caucasian",
    DemographicGroup.EAST_ASIAN: "East Asian",
    DemographicGroup.INDIAN: "Indian",
}
OCCUPATION_ABBREVIATIONS = {"chef": "Chef", "doctor": "Doc", "firefighter": "FF", "mechanic": "Mec", "pilot": "Pilot"}


def fmt_metric(value) -> str:
    return "n/a" if value is None else f"{value:.3f}"


def fmt_percent(value, digits: int = 1) -> str:
    return "n/a" if value is None else f"{value * 100:.{digits}f}%"


def fmt_delta(value) -> str:
    """Percentage-point difference with an explicit sign, e.g. ``-6.09%``."""
    return "n/a" if value is None else f"{value * 100:+.2f}%"


def _group_name(key) -> str:
    return DemographicGroup.parse(key).canonical_name


def model_table(rows: Sequence[Mapping]) -> str:
    """Fairness metric and accuracy per model; rows need ``model``, ``fairness_metric``, ``accuracy``."""
    lines = ["| Model | Fairness Metric | Classification Accuracy |", "|---|---:|---:|"]
    for r in rows:
        lines.append(f"| {r['model']} | {fmt_metric(r['fairness_metric'])} | {fmt_percent(r['accuracy'])} |")
    return "\n".join(lines)


def occupation_table(rows: Sequence[Mapping], occupations: Sequence[str] | None = None,
                     key: str = "fairness_metric") -> str:
    """One row per model, one column per occupation (``per_occupation[occ][key]``)."""
    if occupations is None:
        occupations = sorted({o for r in rows for o in r.get("per_occupation", {})})
    header = "| Model | " + " | ".join(OCCUPATION_ABBREVIATIONS.get(o, o) for o in occupations) + " |"
    lines = [header, "|---|" + "---:|" * len(occupations)]
    fmt = fmt_metric if key == "fairness_metric" else fmt_percent
    for r in rows:
        cells = []
        for o in occupations:
            entry = r.get("per_occupation", {}).get(o)
            cells.append(fmt((entry or {}).get(key)))
        lines.append(f"| {r['model']} | " + " | ".join(cells) + " |")
    return "\n".join(lines)


def delta_table(rows: Sequence[Mapping]) -> str:
    """Accuracy of each group relative to the reference group, per model."""
    groups = [g for g in ALL_GROUPS if g is not REFERENCE_GROUP]
    lines = ["| Model | " + " | ".join(GROUP_DISPLAY[g] for g in groups) + " |",
             "|---|" + "---:|" * len(groups)]
    for r in rows:
        deltas = {_group_name(k): v for k, v in r.get("accuracy_delta", {}).items()}
        lines.append(f"| {r['model']} | " + " | ".join(fmt_delta(deltas.get(g.canonical_name)) for g in groups) + " |")
    return "\n".join(lines)


def comparison_table(comparisons: Sequence[Mapping]) -> str:
    lines = ["| Model A | Model B | chi2 | p | Bonferroni p | Reject | Fairer |", "|---|---|---:|---:|---:|:---:|---|"]
    for c in comparisons:
        lines.append(
            f"| {c['model_a']} | {c['model_b']} | {c['chi2']:.3f} | {c['p_value']:.4g} | "
            f"{c['adjusted_p']:.4g} | {'yes' if c['reject'] else 'no'} | {c.get('fairer') or '-'} |"
        )
    return "\n".join(lines)


def regression_table(model: str, coefficients: Mapping[str, Mapping]) -> str:
    lines = [f"**{model}**", "", "| Term | Coef | SE (clustered) | t | p |", "|---|---:|---:|---:|---:|"]
    for name, c in coefficients.items():
        if not isinstance(c, Mapping):
            continue
        lines.append(f"| {name} | {c['coef']:+.4f} | {c['se']:.4f} | {c['t']:.3f} | {c['p']:.4g} |")
    return "\n".join(lines)


def render_report(report: Mapping) -> str:
    """Markdown document for ``{"label_set": ..., "models": [...]}``."""
    models = report["models"]
    parts = [f"# Fairness report ({report.get('label_set', 'unspecified')} labels)", "", model_table(models), ""]
    per_occ = [e for m in models for e in m.get("per_occupation", {}).values()]
    if any("fairness_metric" in e for e in per_occ):
        parts += ["## Fairness metric by occupation", "", occupation_table(models), ""]
    if any("accuracy" in e for e in per_occ):
        parts += ["## Accuracy by occupation", "", occupation_table(models, key="accuracy"), ""]
    if any(m.get("accuracy_delta") for m in models):
        parts += ["## Accuracy relative to Caucasian", "", delta_table(models), ""]
    return "\n".join(parts)


def write_figures(report: Mapping, out_dir: str | os.PathLike) -> list[Path]:
    """Bar charts of the model table and the per-occupation metric; returns the written files."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    import numpy as np

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    models = report["models"]
    names = [m["model"] for m in models]
    written = []

    fig, axes = plt.subplots(1, 2, figsize=(9, 3.5))
    axes[0].bar(names, [m["fairness_metric"] for m in models], color="tab:blue")
    axes[0].set_ylabel("fairness metric")
    axes[1].bar(names, [m["accuracy"] * 100 for m in models], color="tab:orange")
    axes[1].set_ylabel("accuracy (%)")
    for ax in axes:
        ax.tick_params(axis="x", rotation=30)
    fig.tight_layout()
    path = out_dir / "models.png"
    fig.savefig(path, dpi=100)
    plt.close(fig)
    written.append(path)

    occupations = sorted({o for m in models for o in m.get("per_occupation", {})})
    if occupations:
        fig, ax = plt.subplots(figsize=(9, 3.5))
        width = 0.8 / len(models)
        x = np.arange(len(occupations))
        for i, m in enumerate(models):
            vals = [m["per_occupation"].get(o, {}).get("fairness_metric", np.nan) for o in occupations]
            ax.bar(x + i * width, vals, width, label=m["model"])
        ax.set_xticks(x + width * (len(models) - 1) / 2, [OCCUPATION_ABBREVIATIONS.get(o, o) for o in occupations])
        ax.set_ylabel("fairness metric")
        ax.legend(fontsize="small")
        fig.tight_layout()
        path = out_dir / "occupations.png"
        fig.savefig(path, dpi=100)
        plt.close(fig)
        written.append(path)

    if any(m.get("per_group_accuracy") for m in models):
        fig, ax = plt.subplots(figsize=(9, 3.5))
        width = 0.8 / len(models)
        x = np.arange(len(ALL_GROUPS))
        for i, m in enumerate(models):
            acc = {_group_name(k): v for k, v in m.get("per_group_accuracy", {}).items()}
            ax.bar(x + i * width, [acc.get(g.canonical_name, np.nan) * 100 for g in ALL_GROUPS], width,
                   label=m["model"])
        ax.set_xticks(x + width * (len(models) - 1) / 2, [g.canonical_name for g in ALL_GROUPS])
        ax.set_ylabel("accuracy (%)")
        ax.legend(fontsize="small")
        fig.tight_layout()
        path = out_dir / "groups.png"
        fig.savefig(path, dpi=100)
        plt.close(fig)
        written.append(path)
    return written
