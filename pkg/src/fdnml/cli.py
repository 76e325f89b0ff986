"""Command line entry point: ``fdnml <subcommand> [options]``.

Exit codes: 0 success, 2 config error, 3 data error, 4 numerical failure,
5 stage failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, DataError, FdnmlError

logger = logging.getLogger("fdnml")


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", type=Path, help="pipeline config (YAML or JSON)")
    p.add_argument("--seed", type=int, help="master seed (overrides the config)")
    p.add_argument("--threads", type=int, default=None,
                   help="worker threads for per-trial stages (results do not depend on it)")
    p.add_argument("--out", type=Path, help="output directory")
    p.add_argument("--verbose", "-v", action="store_true")
    return p


def _out(args, default: str) -> Path:
    out = Path(args.out or default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _threads(args) -> int:
    import os

    return args.threads if args.threads else (os.cpu_count() or 1)


def _config(args, require: bool = True):
    from .config import load_config

    if args.config is None and require:
        raise ConfigError("--config is required for this command")
    overrides = {"seed": args.seed}
    if getattr(args, "out", None) is not None:
        overrides["output_dir"] = str(args.out)
    return load_config(args.config, overrides)


def _load(path, mapping):
    from .ingest import load_recording

    return load_recording(path, mapping)


# ------------------------------------------------------------- subcommands


def cmd_synth(args) -> int:
    from . import synth
    from .ingest import EegRecording, write_recording

    out = _out(args, "synth_out")
    seed = args.seed or 0
    if args.kind == "cohort":
        recs = synth.synthetic_cohort(args.subjects, args.trials, args.n, seed=seed)
    elif args.kind == "fbm":
        x = synth.gen_fbm(synth.FbmSpec(args.hurst, args.n, seed))
        recs = [EegRecording(["x"], x[None], args.rate, f"fbm_H{args.hurst:g}_s{seed}", args.level)]
    elif args.kind == "cascade":
        depth = int(np.log2(args.n))
        path = synth.gen_cascade(synth.CascadeSpec(depth, args.weight, seed)).path
        recs = [EegRecording(["x"], path[None], args.rate, f"cascade_w{args.weight:g}_s{seed}",
                             args.level)]
    else:  # fdn
        n = args.channels
        rng = np.random.default_rng(seed)
        A = -0.6 * np.eye(n) + 0.1 * np.roll(np.eye(n), 1, axis=1)
        x = synth.simulate_fdn(np.full(n, args.alpha), A, x0=rng.standard_normal(n), T=args.n,
                               noise_std=args.noise, seed=seed)
        recs = [EegRecording([f"ch{i}" for i in range(n)], x, args.rate, f"fdn_s{seed}",
                             args.level)]
    for r in recs:
        write_recording(r, out / f"{r.trial_id}.csv")
    print(f"wrote {len(recs)} recording(s) to {out}")
    return 0


def cmd_ingest(args) -> int:
    from .ingest import WindowSpec, window, write_diagnostics, write_recording
    from .pipeline import resolve_paths, write_csv

    out = _out(args, "ingest_out")
    spec = WindowSpec(args.length, args.stride, args.channels)
    rows = []
    for path in resolve_paths(args.inputs):
        rec = _load(path, args.map)
        series = window(rec, spec)
        write_recording(rec, out / f"{rec.trial_id}.csv")
        write_diagnostics(rec, out / f"{rec.trial_id}.diagnostics.json")
        rows.append({"trial_id": rec.trial_id, "level": rec.fatigue_level,
                     "n_samples": rec.n_samples, "n_windows": len(series),
                     **rec.diagnostics})
    write_csv(rows, out / "trials.csv")
    print(f"ingested {len(rows)} trial(s) into {out}")
    return 0


def cmd_mfa(args) -> int:
    from .multifractal import MFAConfig, analyze
    from .pipeline import dump_json, write_csv

    out = _out(args, "mfa_out")
    kw = {}
    if args.config is not None:
        m = _config(args).multifractal
        kw = dict(family=m.family, qs=m.qgrid(), j1=m.j1, j2=m.j2, weighted=m.weighted,
                  dq_convention=m.dq_convention, bootstrap_level=m.bootstrap_level)
    mcfg = MFAConfig(**kw, bootstrap_resamples=args.bootstrap, seed=args.seed or 0)
    for path in args.inputs:
        rec = _load(path, args.map)
        channels = {ch: analyze(x, mcfg) for ch, x in zip(rec.channels, rec.samples)}
        dump_json({"trial_id": rec.trial_id, "level": rec.fatigue_level,
                   "channels": {ch: s.to_dict() for ch, s in channels.items()}},
                  out / f"{rec.trial_id}.mfa.json")
        rows = []
        for ch, s in channels.items():
            for k, q in enumerate(s.qs):
                rows.append({"channel": ch, "q": q, "dq": s.dq.D[k],
                             "ci_low": s.dq_ci[k, 0] if s.dq_ci is not None else "",
                             "ci_high": s.dq_ci[k, 1] if s.dq_ci is not None else ""})
        write_csv(rows, out / f"{rec.trial_id}.dq.csv")
    print(f"analysed {len(args.inputs)} recording(s) into {out}")
    return 0


def cmd_fdn_fit(args) -> int:
    from .fracnet import EMOptions, coupling_trajectory, estimate_alpha, trajectory_rows
    from .ingest import WindowSpec, window
    from .pipeline import dump_json, write_csv

    out = _out(args, "fdn_out")
    opts = EMOptions(p=args.p, J_mem=args.memory)
    for path in args.inputs:
        rec = _load(path, args.map)
        series = window(rec, WindowSpec(args.length, args.stride))
        alpha = np.array([estimate_alpha(x).alpha for x in rec.samples])
        traj = coupling_trajectory(series, alpha, args.p, opts)
        write_csv(trajectory_rows(traj), out / f"{rec.trial_id}.trajectory.csv")
        dump_json({"trial_id": rec.trial_id, "level": rec.fatigue_level, "alpha": alpha,
                   "channels": rec.channels, "windows": traj.diagnostics},
                  out / f"{rec.trial_id}.diagnostics.json")
    print(f"fitted {len(args.inputs)} recording(s) into {out}")
    return 0


def cmd_lzc(args) -> int:
    from .complexity import binarize, group_compare, lz76
    from .fracnet import read_trajectory
    from .pipeline import dump_json, write_csv

    out = _out(args, "lzc_out")
    rows, by_level = [], {}
    for path in args.inputs:
        traj = read_trajectory(path)
        res = lz76(binarize(traj))
        rows.append({"trial_id": traj.trial_id, "level": traj.fatigue_level, "c": res.c,
                     "ci": res.ci, "n": res.n})
        by_level.setdefault(traj.fatigue_level, []).append(res.ci)
    write_csv(rows, out / "lzc.csv")
    try:
        dump_json(group_compare(by_level).to_dict(), out / "group.json")
    except DataError as exc:
        logger.warning("group test skipped: %s", exc)
    print(f"scored {len(rows)} trajectory file(s) into {out}")
    return 0


def cmd_wdist(args) -> int:
    import json

    from .distance import DqDistribution, feature_qgrid, pairwise_level_distances
    from .pipeline import dump_json, write_csv

    out = _out(args, "wdist_out")
    samples, qf = {}, None
    for path in args.inputs:
        doc = json.loads(Path(path).read_text())
        if "channels" not in doc or "level" not in doc:
            raise DataError(f"{path} is not an mfa summary")
        curves = []
        for s in doc["channels"].values():
            q = np.asarray(s["q"])
            qf = feature_qgrid(q)
            curves.append(np.asarray(s["dq"], dtype=float)[np.isin(q, qf)])
        samples.setdefault(int(doc["level"]), []).append(np.mean(curves, axis=0))
    dqs = {lvl: DqDistribution(np.array(v), lvl, qf) for lvl, v in samples.items()}
    result, bars = {}, []
    for mode in ("curve", "scalar"):
        table = pairwise_level_distances(dqs, mode, args.q)
        result[mode] = table.to_dict()
        bars += [{"pair": f"{a}-{b}", "mode": mode, "w1": v} for (a, b), v in table.pairs().items()]
    dump_json(result, out / "wdist.json")
    write_csv(bars, out / "wdist_bars.csv", ["pair", "mode", "w1"])
    print(f"compared {len(dqs)} level(s) into {out}")
    return 0


def _features_only(cfg, threads):
    """Run the stages up to feature assembly; returns the in-memory state."""
    from .pipeline import run_pipeline

    run_pipeline(cfg, threads=threads, stop_after="distance")
    return run_pipeline.last_state


def cmd_train(args) -> int:
    import torch

    from .config import split_seed
    from .distance import LAYOUT_VERSION
    from .learn import fit_final, save_checkpoint
    from .pipeline import STAGES, learn_dataset, train_configs

    cfg = _config(args)
    torch.set_num_threads(1)
    torch.use_deterministic_algorithms(True)
    state = _features_only(cfg, _threads(args))
    enc, tcfg = train_configs(cfg, split_seed(cfg.seed, ("synth",) + STAGES)["learn"])
    model = fit_final(learn_dataset(state), tcfg, enc, LAYOUT_VERSION)
    path = Path(cfg.output_dir) / "model.pt"
    save_checkpoint(model, path)
    print(f"saved checkpoint {path}")
    return 0


def cmd_evaluate(args) -> int:
    from .distance import LAYOUT_VERSION
    from .learn import confusion_matrix, load_checkpoint, metrics
    from .pipeline import dump_json, learn_dataset

    cfg = _config(args)
    model = load_checkpoint(args.checkpoint, expected_layout=LAYOUT_VERSION)
    ds = learn_dataset(_features_only(cfg, _threads(args)))
    if list(ds.feature_names) != list(model.feature_names):
        raise DataError("feature columns differ from the ones the checkpoint was trained on")
    proba = model.predict_proba(ds.raw, ds.features)
    m = metrics(confusion_matrix(ds.labels, proba.argmax(1)), proba, ds.labels)
    path = dump_json(m, Path(cfg.output_dir) / "evaluation.json")
    print(f"accuracy {m['accuracy']:.4f}, macro AUROC {m['auroc']:.4f} -> {path}")
    return 0


def cmd_run(args) -> int:
    from .pipeline import run_pipeline

    cfg = _config(args)
    manifest = run_pipeline(cfg, threads=_threads(args))
    learn = manifest.stages.get("learn", {}).get("summary", {})
    print(f"run complete: {cfg.output_dir}/report.md"
          + (f" (accuracy {learn['accuracy_mean']:.4f})" if learn else ""))
    return 0


def cmd_report(args) -> int:
    from .pipeline import RunManifest
    from .report import write_report

    root = Path(args.manifest)
    root = root if root.is_dir() else root.parent
    path = write_report(RunManifest.load(args.manifest), root)
    print(f"wrote {path}")
    return 0


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="fdnml", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"fdnml {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="write synthetic recordings")
    p.add_argument("--kind", choices=("fbm", "cascade", "fdn", "cohort"), default="cohort")
    p.add_argument("--n", type=int, default=4096, help="samples per recording")
    p.add_argument("--hurst", type=float, default=0.7)
    p.add_argument("--weight", type=float, default=0.7)
    p.add_argument("--alpha", type=float, default=0.8)
    p.add_argument("--noise", type=float, default=0.01)
    p.add_argument("--channels", type=int, default=4)
    p.add_argument("--subjects", type=int, default=3)
    p.add_argument("--trials", type=int, default=2, help="trials per level per subject")
    p.add_argument("--level", type=int, default=0)
    p.add_argument("--rate", type=float, default=256.0)
    p.set_defaults(func=cmd_synth)

    def with_inputs(name, func, help_text, map_option=True):
        p = sub.add_parser(name, parents=[common], help=help_text)
        p.add_argument("inputs", nargs="+")
        if map_option:
            p.add_argument("--map", help="column-map YAML for non-canonical files")
        p.set_defaults(func=func)
        return p

    p = with_inputs("ingest", cmd_ingest, "load, clean and window recordings")
    p.add_argument("--length", type=int, default=512)
    p.add_argument("--stride", type=int, default=256)
    p.add_argument("--channels", nargs="+")
    p = with_inputs("mfa", cmd_mfa, "wavelet-leader multifractal analysis per channel")
    p.add_argument("--bootstrap", type=int, default=0, help="bootstrap resamples (0: off)")
    p = with_inputs("fdn-fit", cmd_fdn_fit, "fit windowed coupling matrices")
    p.add_argument("--length", type=int, default=512)
    p.add_argument("--stride", type=int, default=256)
    p.add_argument("--p", type=int, default=1, help="latent input dimension")
    p.add_argument("--memory", type=int, default=None, help="GL memory length")
    with_inputs("lzc", cmd_lzc, "LZ76 complexity of trajectory files", map_option=False)
    p = with_inputs("wdist", cmd_wdist, "W1 distances between levels from mfa summaries",
                    map_option=False)
    p.add_argument("--q", type=float, default=2.0, help="moment order for scalar mode")

    p = sub.add_parser("train", parents=[common], help="train on all data, save a checkpoint")
    p.set_defaults(func=cmd_train)
    p = sub.add_parser("evaluate", parents=[common], help="score a checkpoint on configured data")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.set_defaults(func=cmd_evaluate)
    p = sub.add_parser("run", parents=[common], help="run the whole pipeline")
    p.set_defaults(func=cmd_run)
    p = sub.add_parser("report", parents=[common], help="rebuild report.md from a manifest")
    p.add_argument("manifest", type=Path, help="manifest.json or its run directory")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except FdnmlError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except Exception as exc:  # anything unexpected is a stage failure
        logger.debug("unexpected failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 5


if __name__ == "__main__":
    sys.exit(main())
