"""Render per-direction translation scores as a results table.

Rows are directions, columns are models. A cell is ``BLEU / chrF`` to two
decimals, or a single metric with ``± stderr``. The best score per
direction is wrapped in ``**``; when one model holds both bests the whole
cell is wrapped once. Missing cells render as an em dash.
"""

from __future__ import annotations

import csv
import io
from typing import Mapping, Sequence

from .metrics import MetricScore

MISSING = "—"
METRICS = ("bleu", "chrf")

Scores = Mapping[str, Mapping[str, Mapping[str, MetricScore]]]


def _fmt(score: MetricScore, show_stderr: bool) -> str:
    text = f"{score.value:.2f}"
    if show_stderr:
        text += f" ± {score.stderr:.2f}"
    return text


def _best(direction: Mapping[str, Mapping[str, MetricScore]], models: Sequence[str],
          metric: str) -> set[str]:
    # compare at display precision so ties in the table are marked alike
    values = {m: round(direction[m][metric].value, 2)
              for m in models if m in direction and metric in direction[m]}
    if not values:
        return set()
    top = max(values.values())
    return {m for m, v in values.items() if v == top}


def _cell(direction, model: str, metrics: Sequence[str], best: Mapping[str, set[str]],
          show_stderr: bool) -> str:
    entry = direction.get(model)
    if entry is None:
        return MISSING
    parts, marks = [], []
    for metric in metrics:
        score = entry.get(metric)
        parts.append(MISSING if score is None else _fmt(score, show_stderr))
        marks.append(score is not None and model in best[metric])
    if all(marks):
        return f"**{' / '.join(parts)}**"
    return " / ".join(f"**{p}**" if mark else p for p, mark in zip(parts, marks))


def table_rows(scores: Scores, models: Sequence[str], metric: str | None = None,
               show_stderr: bool = False) -> list[list[str]]:
    if not scores or not models:
        raise ValueError("need at least one direction and one model")
    metrics = METRICS if metric is None else (metric,)
    for m in metrics:
        if m not in METRICS:
            raise ValueError(f"unknown metric {m!r}")
    rows = [["Direction", *models]]
    for name, direction in scores.items():
        best = {m: _best(direction, models, m) for m in metrics}
        rows.append([name, *(_cell(direction, model, metrics, best, show_stderr) for model in models)])
    return rows


def render_report(scores: Scores, models: Sequence[str], metric: str | None = None,
                  show_stderr: bool = False, fmt: str = "text") -> str:
    """Render ``scores[direction][model][metric]`` as text, TSV or CSV.

    ``metric=None`` shows ``BLEU / chrF`` cells; ``"bleu"`` or ``"chrf"``
    shows one metric, optionally with its standard error.
    """
    rows = table_rows(scores, models, metric, show_stderr)
    if fmt == "text":
        widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]

        def line(cells):
            return "| " + " | ".join(c.ljust(w) for c, w in zip(cells, widths)) + " |"

        out = [line(rows[0]), "|" + "|".join("-" * (w + 2) for w in widths) + "|"]
        out += [line(r) for r in rows[1:]]
        return "\n".join(out) + "\n"
    if fmt in ("tsv", "csv"):
        buf = io.StringIO()
        writer = csv.writer(buf, delimiter="\t" if fmt == "tsv" else ",", lineterminator="\n")
        writer.writerows(rows)
        return buf.getvalue()
    raise ValueError(f"unknown format {fmt!r}")


def scores_from_records(records: Sequence[Mapping]) -> tuple[dict, list[str]]:
    """Group flat ``{model, direction, metric, value, stderr?}`` records.

    Returns the nested score mapping and the models in first-seen order.
    """
    scores: dict = {}
    models: list[str] = []
    for rec in records:
        model = rec.get("model", "model")
        if model not in models:
            models.append(model)
        score = MetricScore(rec["metric"], float(rec["value"]), float(rec.get("stderr", 0.0)),
                            int(rec.get("n_resamples", 0)), int(rec.get("seed", 0)))
        scores.setdefault(rec["direction"], {}).setdefault(model, {})[rec["metric"]] = score
    return scores, models
