"""Flat-file outputs: trace CSVs, summary JSON and optional SVG charts.

Every file starts with the config hash and tool version so results can be
matched to the configuration that produced them.  Nothing time-dependent
is written, which keeps reruns byte-identical.
"""

from __future__ import annotations

import csv
import io
import json
import math
import re
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from markovwaa import __version__
from markovwaa.harness import CSV_COLUMNS, RandomizedRun, RegretTrace


def stamp(config_hash: str) -> str:
    return f"config_hash={config_hash} version={__version__}"


def slug(text: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]+", "-", text).strip("-") or "run"


def _write(path: Path, text: str) -> None:
    # newline="" keeps the bytes identical across platforms
    with open(path, "w", newline="") as fh:
        fh.write(text)


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence], config_hash: str) -> None:
    buf = io.StringIO()
    buf.write(f"# {stamp(config_hash)}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    _write(path, buf.getvalue())


def write_trace(path: Path, trace: RegretTrace, config_hash: str) -> None:
    write_csv(path, CSV_COLUMNS, trace.csv_rows(), config_hash)


def write_paths(path: Path, run: RandomizedRun, n0: int, loss_bound: float, config_hash: str) -> None:
    from markovwaa.harness import lil_envelope

    horizon = run.mean.horizon
    start = min(max(n0, 3), horizon)
    env = lil_envelope(loss_bound, np.arange(start, horizon + 1)) if horizon >= 3 else None
    rows = []
    for p in run.paths:
        avg = p.average_regret()
        dev_g = np.abs(run.learner_deviation(p))[start - 1:]
        dev_d = np.abs(run.rule_deviation(p))[start - 1:]
        inside = env is not None and bool(np.all(dev_g <= env) and np.all(dev_d <= env))
        rows.append([p.seed, repr(float(avg[start - 1:].max())), repr(float(avg[-1])),
                     repr(float(dev_g.max())), repr(float(dev_d.max())), int(inside)])
    write_csv(path, ["seed", "sup_average_regret", "final_average_regret", "max_learner_deviation",
                     "max_rule_deviation", "within_lil_envelope"], rows, config_hash)


def _clean(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.generic):
        return _clean(obj.item())
    return obj


def write_json(path: Path, payload: dict, config_hash: str) -> None:
    body = {"config_hash": config_hash, "version": __version__, **payload}
    _write(path, json.dumps(_clean(body), indent=2, sort_keys=True) + "\n")


def write_regret_svg(path: Path, trace: RegretTrace, config_hash: str, width: int = 640,
                     height: int = 360) -> None:
    """Cumulative regret to the best expert and to the rule, against the regret-bound curve."""
    n = trace.rounds
    learner = np.cumsum(trace.learner_losses)
    series = {
        "regret to best expert": learner - np.cumsum(trace.best_expert_losses),
        "regret to rule": learner - np.cumsum(trace.rule_losses),
        "bound": trace.lemma5_bounds(),
    }
    colors = {"regret to best expert": "#1f77b4", "regret to rule": "#2ca02c", "bound": "#d62728"}
    step = max(1, len(n) // 500)
    idx = np.unique(np.append(np.arange(0, len(n), step), len(n) - 1))
    lo = min(float(s.min()) for s in series.values())
    hi = max(float(s.max()) for s in series.values())
    if hi <= lo:
        hi = lo + 1.0
    pad = 40

    def xy(i, v):
        x = pad + (width - 2 * pad) * (n[i] - 1) / max(1, n[-1] - 1)
        y = height - pad - (height - 2 * pad) * (v - lo) / (hi - lo)
        return f"{x:.2f},{y:.2f}"

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f"<!-- {stamp(config_hash)} -->",
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{pad}" y="20" font-size="13">{trace.scenario} / {trace.rule_name}</text>',
        f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
        f'<text x="{pad}" y="{height - 10}" font-size="11">N = 1 .. {n[-1]}; y from {lo:.3g} to {hi:.3g}</text>',
    ]
    for k, (label, s) in enumerate(series.items()):
        pts = " ".join(xy(i, float(s[i])) for i in idx)
        parts.append(f'<polyline fill="none" stroke="{colors[label]}" stroke-width="1.5" points="{pts}"/>')
        parts.append(f'<text x="{width - pad - 170}" y="{pad + 15 * k}" font-size="11" '
                     f'fill="{colors[label]}">{label}</text>')
    parts.append("</svg>")
    _write(path, "\n".join(parts) + "\n")
