"""End-to-end run: ingest, multifractal, fracnet, complexity, distance, learn.

Every stage writes its outputs under ``<output_dir>/<stage>/`` and records
their SHA-256 digests in ``manifest.json``.  Wall-clock times go to the
separate ``timings.json`` so that two runs with the same config and seed
produce byte-identical manifests.
"""

from __future__ import annotations

import csv
import glob
import hashlib
import io
import json
import logging
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import complexity, distance, fracnet, ingest, multifractal, synth
from .config import PipelineConfig, split_seed
from .errors import ConfigError, DataError, FdnmlError, StageError

logger = logging.getLogger(__name__)

# Scaling fits below this R^2 are counted in the stage summary.
R2_WARN = 0.95

STAGES = ("ingest", "multifractal", "fracnet", "complexity", "distance", "learn")
MANIFEST_NAME = "manifest.json"


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def dump_json(obj, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")
    return path


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"cannot serialise {type(o).__name__}")


def write_csv(rows: list[dict], path, columns=None) -> Path:
    path = Path(path)
    columns = columns or (list(rows[0]) if rows else [])
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: _fmt(v) for k, v in row.items()})
    path.write_text(buf.getvalue())
    return path


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v


@dataclass
class RunManifest:
    """Digests of every stage output, keyed by path relative to the run directory."""

    config_digest: str
    code_version: str
    seed: int
    stage_seeds: dict
    stages: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"config_digest": self.config_digest, "code_version": self.code_version,
                "seed": self.seed, "stage_seeds": self.stage_seeds, "stages": self.stages}

    def write(self, out_dir) -> Path:
        return dump_json(self.to_dict(), Path(out_dir) / MANIFEST_NAME)

    @classmethod
    def load(cls, path) -> "RunManifest":
        path = Path(path)
        if path.is_dir():
            path = path / MANIFEST_NAME
        if not path.exists():
            raise DataError(f"manifest not found: {path}")
        d = json.loads(path.read_text())
        if not d:
            raise DataError(f"manifest {path} is empty")
        try:
            return cls(d["config_digest"], d["code_version"], d["seed"], d["stage_seeds"],
                       d.get("stages", {}))
        except KeyError as exc:
            raise DataError(f"manifest {path} lacks field {exc}") from None


# ------------------------------------------------------------------ dataset


def resolve_paths(patterns) -> list[Path]:
    out = []
    for pattern in patterns:
        matches = sorted(glob.glob(pattern))
        if not matches:
            raise DataError(f"no files match {pattern}")
        out += [Path(m) for m in matches]
    return out


def load_recordings(cfg: PipelineConfig, seed: int) -> list[ingest.EegRecording]:
    if cfg.data.synthetic is not None:
        s = cfg.data.synthetic
        return synth.synthetic_cohort(s.subjects, s.trials_per_level, s.n_samples, seed=seed)
    mapping = cfg.data.column_map
    recs = [ingest.load_recording(p, mapping) for p in resolve_paths(cfg.data.paths)]
    ids = [r.trial_id for r in recs]
    if len(set(ids)) != len(ids):
        raise DataError("trial ids are not unique across input files")
    return recs


def window_spec(cfg: PipelineConfig) -> ingest.WindowSpec:
    return ingest.WindowSpec(cfg.window.length, cfg.window.stride, cfg.window.channels)


def validate_run(cfg: PipelineConfig, recs) -> None:
    """Checks that need the data but no computation; raises :class:`ConfigError`."""
    spec = window_spec(cfg)
    if not recs:
        raise ConfigError("no recordings to analyse")
    for r in recs:
        if r.n_samples < spec.length_samples:
            raise ConfigError(f"trial {r.trial_id} ({r.n_samples} samples) is shorter than one window")
    channel_sets = {tuple(spec.channel_subset or r.channels) for r in recs}
    if len(channel_sets) != 1:
        raise ConfigError(f"recordings disagree on channels: {sorted(channel_sets)}")
    n_ch = len(next(iter(channel_sets)))
    jm = cfg.fracnet.J_mem if cfg.fracnet.J_mem is not None else min(cfg.window.length - 1, 100)
    if cfg.window.length <= jm + 10 * n_ch:
        raise ConfigError(f"window length {cfg.window.length} must exceed J_mem + 10 n = {jm + 10 * n_ch}")
    if cfg.fracnet.p >= n_ch:
        raise ConfigError(f"latent dimension p={cfg.fracnet.p} must be below {n_ch} channels")
    if not cfg.learn.enabled:
        return
    t = cfg.learn.train
    levels = np.array([r.fatigue_level for r in recs])
    if t.unit == "trial":
        counts = np.bincount(levels, minlength=3)
    else:
        n_win = np.array([ingest.window_count(r.n_samples, spec.length_samples,
                                              spec.stride_samples) for r in recs])
        counts = np.bincount(levels, weights=n_win, minlength=3).astype(int)
    if (counts < t.folds).any():
        raise ConfigError(f"per-class {t.unit} counts {counts.tolist()} below folds={t.folds}")
    n_fit = int(counts.sum() * (1 - 1 / t.folds) * (1 - t.val_fraction))
    if t.unit == "window" and n_fit < 2 * t.batch_size:
        raise ConfigError(f"about {n_fit} pretraining pairs per fold; need >= {2 * t.batch_size}")


# ------------------------------------------------------------------- stages


class _Stage:
    """Collects output digests and warnings for one stage."""

    def __init__(self, name: str, out_dir: Path):
        self.name = name
        self.root = out_dir
        self.dir = out_dir / name
        self.dir.mkdir(parents=True, exist_ok=True)
        self.outputs: dict[str, str] = {}
        self.warnings: list[str] = []
        self.summary: dict = {}

    def path(self, name: str) -> Path:
        p = self.dir / name
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def record(self, path: Path) -> Path:
        self.outputs[path.relative_to(self.root).as_posix()] = sha256(path)
        return path

    def to_dict(self) -> dict:
        return {"outputs": dict(sorted(self.outputs.items())), "warnings": self.warnings,
                "summary": self.summary}


@dataclass
class RunState:
    """In-memory results passed between stages."""

    recordings: list = field(default_factory=list)
    series: dict = field(default_factory=dict)
    summaries: dict = field(default_factory=dict)
    trajectories: dict = field(default_factory=dict)
    alphas: dict = field(default_factory=dict)
    lzc: dict = field(default_factory=dict)
    features: distance.FeatureSet | None = None
    qs: np.ndarray | None = None


def _map(fn, items, threads: int):
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(threads) as pool:
        return list(pool.map(fn, items))


def stage_ingest(st: _Stage, cfg: PipelineConfig, state: RunState, synthetic: bool):
    spec = window_spec(cfg)
    rows = []
    for rec in state.recordings:
        series = ingest.window(rec, spec)
        state.series[rec.trial_id] = series
        rows.append({"trial_id": rec.trial_id, "level": rec.fatigue_level,
                     "n_samples": rec.n_samples, "rows_read": rec.diagnostics.get("rows_read"),
                     "rows_dropped": rec.diagnostics.get("rows_dropped"),
                     "n_windows": len(series)})
        if synthetic:
            st.record(ingest.write_recording(rec, st.path(f"recordings/{rec.trial_id}.csv")))
    st.record(write_csv(rows, st.path("trials.csv")))
    st.summary = {"trials": len(rows), "windows": int(sum(r["n_windows"] for r in rows)),
                  "rows_dropped": int(sum(r["rows_dropped"] or 0 for r in rows)),
                  "channels": list(next(iter(state.series.values())).channels)}


def _analyze_windows(series, mcfg: multifractal.MFAConfig):
    out, failed, low_r2 = [], 0, 0
    for win in series.windows:
        per_channel = []
        try:
            for ch in win:
                s = multifractal.analyze(ch, mcfg)
                per_channel.append(s)
                # Counted from the fit itself: warning capture is not thread-safe.
                low_r2 += int(np.any(s.r2 < R2_WARN))
        except (DataError, FloatingPointError) as exc:
            logger.info("%s: window analysis failed: %s", series.trial_id, exc)
            per_channel, failed = None, failed + 1
        out.append(per_channel)
    return out, failed, low_r2


def _mfa_config(cfg: PipelineConfig, seed: int, bootstrap: bool = False) -> multifractal.MFAConfig:
    m = cfg.multifractal
    return multifractal.MFAConfig(
        family=m.family, qs=m.qgrid(), j1=m.j1, j2=m.j2, weighted=m.weighted,
        dq_convention=m.dq_convention,
        bootstrap_resamples=m.bootstrap_resamples if bootstrap else 0,
        bootstrap_level=m.bootstrap_level, seed=seed)


def stage_multifractal(st: _Stage, cfg: PipelineConfig, state: RunState, seed: int, threads: int):
    mcfg = _mfa_config(cfg, seed)
    state.qs = mcfg.qs
    trials = list(state.series.values())
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message="scaling fit R")
        results = _map(lambda s: _analyze_windows(s, mcfg), trials, threads)
    qf = distance.feature_qgrid(state.qs)
    keep = np.isin(state.qs, qf)
    rows, trial_rows, failed_total, low_total = [], [], 0, 0
    for series, (summ, failed, low_r2) in zip(trials, results):
        state.summaries[series.trial_id] = summ
        failed_total += failed
        low_total += low_r2
        ok = [s for s in summ if s is not None]
        for w, per_channel in enumerate(summ):
            if per_channel is None:
                continue
            for ch, s in zip(series.channels, per_channel):
                row = {"trial_id": series.trial_id, "level": series.label, "window": w,
                       "channel": ch, "c1": s.cumulants[0], "c2": s.cumulants[1],
                       "c3": s.cumulants[2], "delta_dq": s.delta_dq}
                row.update({f"D{q:+g}": d for q, d in zip(state.qs[keep], s.dq.D[keep])})
                rows.append(row)
        if ok:
            dq = np.mean([[s.dq.D[keep] for s in pc] for pc in ok], axis=(0, 1))
            cum = np.mean([[s.cumulants for s in pc] for pc in ok], axis=(0, 1))
            trial_rows.append({"trial_id": series.trial_id, "level": series.label,
                               "dq_mean": dq, "cumulants_mean": cum,
                               "windows_analysed": len(ok)})
    st.record(write_csv(rows, st.path("windows.csv")))
    st.record(dump_json({"q": state.qs[keep], "trials": trial_rows}, st.path("trials.json")))

    # Level curves with an across-trial 95% normal interval.
    level_rows = []
    for level in sorted({t["level"] for t in trial_rows}):
        curves = np.array([t["dq_mean"] for t in trial_rows if t["level"] == level])
        m = curves.mean(axis=0)
        half = 1.96 * curves.std(axis=0, ddof=1) / np.sqrt(len(curves)) if len(curves) > 1 \
            else np.full_like(m, np.nan)
        for q, mu, h in zip(state.qs[keep], m, half):
            level_rows.append({"level": level, "q": q, "dq_mean": mu, "ci_low": mu - h,
                               "ci_high": mu + h, "n_trials": len(curves)})
    st.record(write_csv(level_rows, st.path("dq_by_level.csv")))

    if cfg.multifractal.bootstrap_resamples:
        bcfg = _mfa_config(cfg, seed, bootstrap=True)
        boot = {}
        for rec in state.recordings:
            boot[rec.trial_id] = {ch: multifractal.analyze(x, bcfg).to_dict()
                                  for ch, x in zip(rec.channels, rec.samples)}
        st.record(dump_json(boot, st.path("trial_bootstrap.json")))
    if failed_total:
        st.warnings.append(f"{failed_total} window(s) could not be analysed")
    if low_total:
        st.warnings.append(f"{low_total} channel fit(s) had a scaling R^2 below 0.95 for some q")
    st.summary = {"windows_failed": failed_total, "low_r2_fits": low_total,
                  "q_features": len(qf)}


def stage_fracnet(st: _Stage, cfg: PipelineConfig, state: RunState, threads: int):
    f = cfg.fracnet
    opts = fracnet.EMOptions(p=f.p, tol=f.tol, max_iter=f.max_iter, J_mem=f.J_mem, ridge=f.ridge)
    recs = {r.trial_id: r for r in state.recordings}

    def run(series):
        rec = recs[series.trial_id]
        idx = [rec.channels.index(c) for c in series.channels]
        est = [fracnet.estimate_alpha(rec.samples[i]) for i in idx]
        alpha = np.array([e.alpha for e in est])
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            traj = fracnet.coupling_trajectory(series, alpha, f.p, opts, f.max_invalid_fraction)
        return alpha, est, traj

    results = _map(run, list(state.series.values()), threads)
    alpha_rows, invalid, unconverged = [], 0, 0
    for series, (alpha, est, traj) in zip(state.series.values(), results):
        state.alphas[series.trial_id] = alpha
        state.trajectories[series.trial_id] = traj
        rows = fracnet.trajectory_rows(traj)
        unconverged += sum(d.get("converged") is False for d in traj.diagnostics)
        invalid += int((~traj.valid).sum())
        st.record(write_csv(rows, st.path(f"trajectories/{series.trial_id}.csv")))
        for ch, a, e in zip(series.channels, alpha, est):
            alpha_rows.append({"trial_id": series.trial_id, "level": series.label, "channel": ch,
                               "alpha": a, "slope": e.slope, "r2": e.r2})
    st.record(write_csv(alpha_rows, st.path("alphas.csv")))
    if invalid:
        st.warnings.append(f"{invalid} window fit(s) failed and were marked invalid")
    if unconverged:
        st.warnings.append(f"{unconverged} window fit(s) stopped at max_iter")
    st.summary = {"invalid_windows": invalid, "unconverged_windows": unconverged}


def stage_complexity(st: _Stage, cfg: PipelineConfig, state: RunState):
    rows, by_level = [], {}
    for tid, traj in state.trajectories.items():
        bits = complexity.binarize(traj)
        res = complexity.lz76(bits)
        state.lzc[tid] = res
        rows.append({"trial_id": tid, "level": traj.fatigue_level, "c": res.c, "ci": res.ci,
                     "n": res.n, "threshold": bits.threshold_used, "degenerate": bits.degenerate})
        by_level.setdefault(traj.fatigue_level, []).append(res.ci)
    st.record(write_csv(rows, st.path("lzc.csv")))
    means = {str(k): float(np.mean(v)) for k, v in sorted(by_level.items())}
    group = {"means": means, "counts": {str(k): len(v) for k, v in sorted(by_level.items())}}
    try:
        group = complexity.group_compare(by_level).to_dict()
    except DataError as exc:
        st.warnings.append(f"group comparison skipped: {exc}")
        group["skipped"] = str(exc)
    st.record(dump_json(group, st.path("group.json")))
    st.summary = {"level_means": means, "p_value": group.get("p_value")}


def stage_distance(st: _Stage, cfg: PipelineConfig, state: RunState):
    qf = distance.feature_qgrid(state.qs)
    keep = np.isin(state.qs, qf)
    samples: dict[int, list] = {}
    for tid, summ in state.summaries.items():
        level = state.series[tid].label
        curves = [np.mean([s.dq.D[keep] for s in pc], axis=0) for pc in summ if pc is not None]
        if not curves:
            continue
        if cfg.distance.granularity == "trial":
            samples.setdefault(level, []).append(np.mean(curves, axis=0))
        else:
            samples.setdefault(level, []).extend(curves)
    dqs = {lvl: distance.DqDistribution(np.array(v), lvl, qf) for lvl, v in samples.items()}
    result, bars = {"granularity": cfg.distance.granularity}, []
    try:
        for mode in ("curve", "scalar"):
            table = distance.pairwise_level_distances(dqs, mode, cfg.distance.scalar_q)
            result[mode] = table.to_dict()
            bars += [{"pair": f"{a}-{b}", "mode": mode, "w1": v} for (a, b), v in table.pairs().items()]
    except DataError as exc:
        st.warnings.append(f"level distances skipped: {exc}")
        result["skipped"] = str(exc)
    st.record(dump_json(result, st.path("wdist.json")))
    st.record(write_csv(bars, st.path("wdist_bars.csv"), ["pair", "mode", "w1"]))

    sets = []
    for tid, traj in state.trajectories.items():
        lzc = [distance.window_lzc(a) if v else np.nan
               for a, v in zip(traj.matrices, traj.valid)]
        sets.append(distance.assemble_features(state.summaries[tid], traj, state.alphas[tid],
                                               lzc, qs=state.qs))
    state.features = distance.FeatureSet.concat(sets)
    st.record(distance.write_features(state.features, st.path("features.csv")))
    if state.features.dropped:
        st.warnings.append(f"{state.features.dropped} window(s) dropped from the feature matrix")
    st.summary = {"pairs": {f"{b['mode']}:{b['pair']}": b["w1"] for b in bars},
                  "feature_rows": len(state.features), "dropped": state.features.dropped,
                  "n_features": len(state.features.names)}


def learn_dataset(state: RunState):
    from .learn import LearnDataset  # deferred: torch is only needed for this stage

    fs = state.features
    raw = np.stack([state.series[t].windows[w] for t, w in zip(fs.trial_ids, fs.window_index)])
    return LearnDataset(raw, fs.X, fs.labels, fs.trial_ids, list(fs.names))


def train_configs(cfg: PipelineConfig, seed: int):
    from .learn import EncoderConfig, TrainConfig

    e = cfg.learn.encoder
    enc = EncoderConfig(**{k: tuple(v) if isinstance(v, list) else v
                           for k, v in e.model_dump().items()})
    return enc, TrainConfig(**cfg.learn.train.model_dump(), seed=seed)


def stage_learn(st: _Stage, cfg: PipelineConfig, state: RunState, seed: int):
    import torch

    from . import learn

    torch.set_num_threads(1)
    torch.use_deterministic_algorithms(True)
    ds = learn_dataset(state)
    enc, tcfg = train_configs(cfg, seed)
    report = learn.crossvalidate(ds, tcfg, enc)
    baseline = learn.majority_baseline(ds, tcfg)
    st.record(dump_json(report.to_dict(), st.path("fold_report.json")))
    st.record(dump_json(baseline.to_dict(), st.path("baseline.json")))
    cm = report.confusion()
    st.record(write_csv([{"true": i, **{f"pred_{j}": int(cm[i, j]) for j in range(cm.shape[1])}}
                         for i in range(cm.shape[0])], st.path("confusion.csv")))
    curve_rows = []
    for f in report.folds:
        for name, values in f.curves.items():
            curve_rows += [{"fold": f.fold, "curve": name, "epoch": e, "value": v}
                           for e, v in enumerate(values)]
    st.record(write_csv(curve_rows, st.path("curves.csv"), ["fold", "curve", "epoch", "value"]))
    pooled = report.summary()["pooled"]
    class_rows = [{"level": c, **{k: m[k] for k in ("precision", "sensitivity", "specificity",
                                                    "f1", "support")}}
                  for c, m in pooled["per_class"].items()]
    class_rows.append({"level": "overall", **pooled["macro"], "support": int(cm.sum())})
    st.record(write_csv(class_rows, st.path("metrics.csv")))
    s, b = report.summary(), baseline.summary()
    st.summary = {"accuracy_mean": s["accuracy_mean"], "accuracy_sd": s["accuracy_sd"],
                  "auroc_mean": s["auroc_mean"], "baseline_accuracy": b["accuracy_mean"],
                  "n_parameters": report.n_parameters, "unit": report.unit,
                  "folds": len(report.folds)}


# --------------------------------------------------------------------- run


def run_pipeline(cfg: PipelineConfig, out_dir=None, threads: int = 1,
                 stop_after: str | None = None) -> RunManifest:
    """Run every stage; returns the manifest (also written to disk).

    Nothing is written until the config has been checked against the data.
    A failing stage raises :class:`StageError` carrying the exit code of the
    underlying error, after the manifest of the completed stages is saved.
    """
    from .report import write_report

    seeds = split_seed(cfg.seed, ("synth",) + STAGES)
    recs = load_recordings(cfg, seeds["synth"])
    validate_run(cfg, recs)
    out = Path(out_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(cfg.digest(), __version__, cfg.seed, seeds)
    dump_json(cfg.model_dump(mode="json"), out / "config.json")
    timings = {}
    state = RunState(recordings=recs)
    stages = {
        "ingest": lambda st: stage_ingest(st, cfg, state, cfg.data.synthetic is not None),
        "multifractal": lambda st: stage_multifractal(st, cfg, state, seeds["multifractal"], threads),
        "fracnet": lambda st: stage_fracnet(st, cfg, state, threads),
        "complexity": lambda st: stage_complexity(st, cfg, state),
        "distance": lambda st: stage_distance(st, cfg, state),
        "learn": lambda st: stage_learn(st, cfg, state, seeds["learn"]),
    }
    for name in STAGES:
        if name == "learn" and not cfg.learn.enabled:
            break
        st = _Stage(name, out)
        t0 = time.perf_counter()
        try:
            stages[name](st)
        except Exception as exc:
            manifest.write(out)
            err = StageError(name, str(exc))
            err.exit_code = exc.exit_code if isinstance(exc, FdnmlError) else 5
            raise err from exc
        timings[name] = time.perf_counter() - t0
        manifest.stages[name] = st.to_dict()
        logger.info("stage %s done in %.1f s", name, timings[name])
        if name == stop_after:
            break
    manifest.write(out)
    dump_json(timings, out / "timings.json")
    if stop_after is None:
        write_report(manifest, out)
    run_pipeline.last_state = state
    return manifest
