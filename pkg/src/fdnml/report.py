"""Markdown summary of a run, built only from files named in its manifest."""

from __future__ import annotations

import csv
import json
from pathlib import Path

from .errors import DataError

SECTION_TITLES = {
    "ingest": "Data",
    "multifractal": "Multifractal spectra",
    "fracnet": "Fractional network identification",
    "complexity": "Coupling complexity",
    "distance": "Distances between fatigue levels",
    "learn": "Classification",
}

# Published reference values for the CogBeacon recordings; reported next to
# the measured numbers, never asserted.
REFERENCE = {
    "accuracy": 0.9333,
    "auroc": 0.95,
    "lzc_means": {"0": 1.1703, "1": 1.2142, "2": 1.2320},
    "kruskal_p": 0.0671,
    "w1": {"0-1": 0.10, "1-2": 0.13, "0-2": 0.08},
    "level0_precision": 0.8333,
    "n_parameters": 6240,
}


def _file(root: Path, manifest, stage: str, name: str) -> Path:
    rel = f"{stage}/{name}"
    if rel not in manifest.stages.get(stage, {}).get("outputs", {}):
        raise DataError(f"manifest does not list {rel}")
    path = root / rel
    if not path.exists():
        raise DataError(f"stage output missing: {path}")
    return path


def _rows(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _num(v, fmt="{:.4f}"):
    if v is None or v == "":
        return "n/a"
    return fmt.format(float(v))


def _table(header, rows) -> list[str]:
    out = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    out += ["| " + " | ".join(str(c) for c in r) + " |" for r in rows]
    return out


def _ingest(root, m) -> list[str]:
    rows = _rows(_file(root, m, "ingest", "trials.csv"))
    s = m.stages["ingest"]["summary"]
    by_level = {}
    for r in rows:
        by_level.setdefault(r["level"], []).append(r)
    lines = [f"{s['trials']} trials, {s['windows']} windows, channels {', '.join(s['channels'])}; "
             f"{s['rows_dropped']} non-finite rows dropped.", ""]
    lines += _table(["level", "trials", "windows"],
                    [(k, len(v), sum(int(r["n_windows"]) for r in v))
                     for k, v in sorted(by_level.items())])
    return lines + ["", "Source: `ingest/trials.csv`."]


def _multifractal(root, m) -> list[str]:
    rows = _rows(_file(root, m, "multifractal", "dq_by_level.csv"))
    levels = sorted({r["level"] for r in rows})
    qs = sorted({float(r["q"]) for r in rows})
    pick = [q for q in qs if q in (-5.0, -2.0, 2.0, 5.0)] or qs[:4]
    lines = ["Mean D_q per level with an across-trial 95% interval "
             "(per-signal bootstrap intervals, when enabled, are in `trial_bootstrap.json`).", ""]
    body = []
    for lvl in levels:
        cells = [lvl]
        for q in pick:
            r = next(r for r in rows if r["level"] == lvl and float(r["q"]) == q)
            cells.append(f"{_num(r['dq_mean'])} [{_num(r['ci_low'])}, {_num(r['ci_high'])}]")
        body.append(cells)
    lines += _table(["level"] + [f"D({q:+g})" for q in pick], body)
    for w in m.stages["multifractal"]["warnings"]:
        lines.append(f"\nWarning: {w}")
    return lines + ["", "Source: `multifractal/dq_by_level.csv` (full curves), "
                        "`multifractal/windows.csv`."]


def _fracnet(root, m) -> list[str]:
    rows = _rows(_file(root, m, "fracnet", "alphas.csv"))
    s = m.stages["fracnet"]["summary"]
    by_level = {}
    for r in rows:
        by_level.setdefault(r["level"], []).append(float(r["alpha"]))
    lines = [f"{s['invalid_windows']} invalid window fits, {s['unconverged_windows']} "
             "stopped at the iteration cap.", ""]
    lines += _table(["level", "mean alpha", "channel-trials"],
                    [(k, _num(sum(v) / len(v)), len(v)) for k, v in sorted(by_level.items())])
    return lines + ["", "Source: `fracnet/alphas.csv`, `fracnet/trajectories/*.csv`."]


def _complexity(root, m) -> list[str]:
    group = json.loads(_file(root, m, "complexity", "group.json").read_text())
    _file(root, m, "complexity", "lzc.csv")
    means = group.get("means", {})
    lines = _table(["level", "mean complexity index", "reference"],
                   [(k, _num(v), _num(REFERENCE["lzc_means"].get(k))) for k, v in means.items()])
    if "p_value" in group:
        lines += ["", f"Kruskal-Wallis H = {_num(group['kruskal_h'])}, p = {_num(group['p_value'])} "
                      f"(reference p = {REFERENCE['kruskal_p']})."]
    else:
        lines += ["", f"Group test skipped: {group.get('skipped')}."]
    return lines + ["", "Source: `complexity/lzc.csv`, `complexity/group.json` (densities)."]


def _distance(root, m) -> list[str]:
    rows = _rows(_file(root, m, "distance", "wdist_bars.csv"))
    _file(root, m, "distance", "features.csv")
    s = m.stages["distance"]["summary"]
    lines = _table(["pair", "mode", "W1", "reference"],
                   [(r["pair"], r["mode"], _num(r["w1"]), _num(REFERENCE["w1"].get(r["pair"])))
                    for r in rows])
    lines += ["", "`curve` averages W1 over the q grid; `scalar` compares D_q at one q.",
              f"Feature matrix: {s['feature_rows']} windows x {s['n_features']} features, "
              f"{s['dropped']} dropped."]
    return lines + ["", "Source: `distance/wdist.json`, `distance/wdist_bars.csv`, "
                        "`distance/features.csv`."]


def _learn(root, m) -> list[str]:
    report = json.loads(_file(root, m, "learn", "fold_report.json").read_text())
    baseline = json.loads(_file(root, m, "learn", "baseline.json").read_text())
    classes = _rows(_file(root, m, "learn", "metrics.csv"))
    _file(root, m, "learn", "curves.csv")
    _file(root, m, "learn", "confusion.csv")
    s, b = report["summary"], baseline["summary"]
    lines = [f"{len(report['folds'])}-fold stratified cross-validation, evaluation unit "
             f"`{report['unit']}`, {report['n_parameters']} trainable parameters "
             f"(reference {REFERENCE['n_parameters']}).", ""]
    lines += _table(
        ["model", "accuracy", "macro AUROC"],
        [("FDNML", f"{_num(s['accuracy_mean'])} +- {_num(s['accuracy_sd'])}", _num(s["auroc_mean"])),
         ("majority class", _num(b["accuracy_mean"]), _num(b["auroc_mean"])),
         ("reference", _num(REFERENCE["accuracy"]), _num(REFERENCE["auroc"]))])
    lines += ["", "Per-class metrics on pooled held-out predictions:", ""]
    lines += _table(["level", "precision", "sensitivity", "specificity", "F1", "support"],
                    [(r["level"], _num(r["precision"]), _num(r["sensitivity"]),
                      _num(r["specificity"]), _num(r["f1"]), r["support"]) for r in classes])
    lines += ["", f"Reference level-0 precision: {REFERENCE['level0_precision']}."]
    return lines + ["", "Source: `learn/fold_report.json`, `learn/metrics.csv`, "
                        "`learn/confusion.csv`, `learn/curves.csv`."]


_BUILDERS = {"ingest": _ingest, "multifractal": _multifractal, "fracnet": _fracnet,
             "complexity": _complexity, "distance": _distance, "learn": _learn}


def render_report(manifest, root) -> str:
    """Markdown with one section per completed stage.

    A run without the learning stage yields five sections and a notice.
    """
    root = Path(root)
    if not manifest.stages:
        raise DataError("manifest lists no completed stages")
    lines = ["# FDNML run report", "",
             f"Config digest `{manifest.config_digest[:16]}`, code {manifest.code_version}, "
             f"seed {manifest.seed}.", ""]
    for name, build in _BUILDERS.items():
        if name not in manifest.stages:
            continue
        lines += [f"## {SECTION_TITLES[name]}", ""] + build(root, manifest) + [""]
    if "learn" not in manifest.stages:
        lines += ["> Notice: the learning stage did not run; no classification results.", ""]
    return "\n".join(lines)


def write_report(manifest, root) -> Path:
    path = Path(root) / "report.md"
    path.write_text(render_report(manifest, root))
    return path
