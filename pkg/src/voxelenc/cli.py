"""Command-line pipeline driver.

One verb per invocation: synth, convolve, fit, score, groupstats, report,
toytune, embed, sweep. Every verb is deterministic given identical inputs
and seeds, and every JSON artifact carries a provenance block (config hash,
seeds, package version). Exit codes are a stable scripting contract:
0 success, 2 validation problem, 3 runtime or numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import validate_config
from .crossval import cross_validate
from .errors import (
    ConfigError,
    CorruptionError,
    FormatError,
    ShapeError,
    ValidationError,
    VoxelencError,
)
from .hrf import HrfParams, convolve_track, zscore_columns
from .matrixio import (
    StimulusTrack,
    load_atlas,
    load_stimulus_track,
    read_matrix,
    save_atlas,
    save_bold_run,
    save_stimulus_track,
    write_matrix,
)
from .ridge import DEFAULT_LAMBDAS, RidgeConfig, fit_path
from .stats import compare_models, pearson, summarize_roi
from .synth import (
    SynthSpec,
    bold_from_signal,
    draw_weights,
    generate,
    plant_effect,
)
from .toylm import (
    ToyLmConfig,
    TuneConfig,
    embed_sequence,
    init_params,
    load_model,
    make_classification_data,
    make_pretrained,
    save_model,
    tune,
)


class StageFailure(Exception):
    """A pipeline stage failed; carries the stage name and the cause."""

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage '{stage}' failed: {cause}")


def _jsonify(value):
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"not JSON serializable: {type(value).__name__}")


def _dump_json(obj):
    return json.dumps(obj, indent=2, sort_keys=True, default=_jsonify) + "\n"


def _write_json(path, obj):
    Path(path).write_text(_dump_json(obj))


def _base(path):
    # provenance records input identity by basename so the fingerprint does
    # not change when the same pipeline runs from a different directory
    return Path(path).name


def provenance(config_obj, seeds):
    """Deterministic fingerprint written into every JSON artifact."""
    blob = json.dumps(config_obj, sort_keys=True, separators=(",", ":"),
                      default=_jsonify)
    return {
        "config_sha256": hashlib.sha256(blob.encode()).hexdigest(),
        "seeds": seeds,
        "version": __version__,
    }


def cli_workers(flag_value):
    """VOXELENC_THREADS wins, then --workers, then logical core count."""
    env = os.environ.get("VOXELENC_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ValidationError(
                f"VOXELENC_THREADS must be an integer, got {env!r}"
            ) from None
        if n < 1:
            raise ValidationError(f"VOXELENC_THREADS must be >= 1, got {n}")
        return n
    if flag_value is not None:
        if flag_value < 1:
            raise ValidationError(f"--workers must be >= 1, got {flag_value}")
        return flag_value
    return os.cpu_count() or 1


def _parse_float_list(text, flag):
    try:
        values = [float(v) for v in text.split(",") if v.strip() != ""]
    except ValueError:
        raise ValidationError(f"{flag} expects comma-separated numbers, "
                              f"got {text!r}") from None
    if not values:
        raise ValidationError(f"{flag} must list at least one number")
    return values


def _parse_hrf(text):
    if text is None:
        return HrfParams()
    values = _parse_float_list(text, "--hrf")
    if len(values) != 7:
        raise ValidationError(
            "--hrf expects 7 numbers: peak shape, undershoot shape, peak "
            f"scale, undershoot scale, ratio, length, oversample; got {len(values)}"
        )
    return HrfParams(*values)


def _ridge_config_from_args(args):
    lambdas = DEFAULT_LAMBDAS if args.lambdas is None \
        else np.asarray(_parse_float_list(args.lambdas, "--lambdas"))
    return RidgeConfig(
        lambdas=lambdas,
        penalty=args.penalty,
        standardize=not args.no_standardize,
        fit_intercept=not args.no_intercept,
    )


def _load_json(path, what):
    try:
        with open(path, "rb") as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ValidationError(f"{what} file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{what} is not valid JSON: {exc}") from None


# ---------------------------------------------------------------- synth


_SYNTH_KEYS = {"n_subjects", "n_voxels", "n_trs", "tr_s", "dim", "snr",
               "noise", "ar1_rho", "seed", "n_events", "hrf", "plant"}


def _synth_spec_from_json(raw):
    problems = []
    if not isinstance(raw, dict):
        raise ConfigError(["synth spec root must be a JSON object"])
    for key in sorted(set(raw) - _SYNTH_KEYS):
        problems.append(f"unknown key {key!r} in synth spec")
    if "tr_s" not in raw:
        problems.append("tr_s is required and never defaulted")
    plant = raw.get("plant")
    if plant is not None:
        if not isinstance(plant, dict) or set(plant) - {"delta", "voxels"}:
            problems.append("plant must be an object with keys delta, voxels")
        elif "delta" not in plant or "voxels" not in plant:
            problems.append("plant needs both delta and voxels")
    if problems:
        raise ConfigError(problems)

    fields = {k: v for k, v in raw.items() if k not in ("hrf", "plant")}
    if "snr" in fields and isinstance(fields["snr"], list):
        fields["snr"] = tuple(fields["snr"])
    if "hrf" in raw:
        try:
            fields["hrf"] = HrfParams(**raw["hrf"])
        except TypeError as exc:
            raise ConfigError([f"synth spec hrf: {exc}"]) from None
    try:
        spec = SynthSpec(**fields)
    except TypeError as exc:
        raise ConfigError([f"synth spec: {exc}"]) from None
    return spec, plant


def cmd_synth(args):
    raw = _load_json(args.spec, "synth spec")
    spec, plant = _synth_spec_from_json(raw)
    ds = generate(spec)
    if plant is not None:
        try:
            ds = plant_effect(ds, float(plant["delta"]),
                              np.asarray(plant["voxels"], dtype=np.int64))
        except IndexError as exc:
            raise ConfigError([f"plant.voxels: {exc}"]) from None

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_matrix(ds.design, out / "design.vem")
    write_matrix(ds.true_weights, out / "weights.vem")
    write_matrix(ds.signal, out / "signal.vem")
    write_matrix(ds.snr_per_voxel[None, :], out / "snr.vem")
    save_atlas(ds.atlas, out / "atlas.vem")
    save_stimulus_track(ds.track, out / "track.json")
    bold_dir = out / "bold"
    bold_dir.mkdir(exist_ok=True)
    for run in ds.bold:
        save_bold_run(run, bold_dir / f"{run.subject_id}.vem")
    _write_json(out / "provenance.json", {
        "subjects": spec.subject_ids(),
        "n_voxels": spec.n_voxels,
        "n_trs": spec.n_trs,
        "provenance": provenance(raw, {"master": spec.seed}),
    })
    print(f"wrote dataset for {spec.n_subjects} subjects to {out}")
    return 0


# ------------------------------------------------------------- convolve


def cmd_convolve(args):
    track = load_stimulus_track(args.track)
    hrf = _parse_hrf(args.hrf)
    design, truncated = convolve_track(track, hrf, args.tr, args.n_trs,
                                       impulse=args.impulse)
    zscored = not args.no_zscore
    if zscored:
        design = zscore_columns(design)
    out = Path(args.out)
    write_matrix(design, out)
    _write_json(out.with_suffix(".json"), {
        "tr_s": args.tr,
        "n_trs": args.n_trs,
        "dim": int(design.shape[1]),
        "truncated_events": int(truncated),
        "zscored": zscored,
        "hrf": hrf.__dict__,
        "provenance": provenance(
            {"track": _base(args.track), "tr_s": args.tr, "n_trs": args.n_trs,
             "hrf": hrf.__dict__, "zscore": zscored, "impulse": args.impulse},
            {},
        ),
    })
    if truncated:
        print(f"warning: {truncated} events extend past the scan end",
              file=sys.stderr)
    print(f"wrote design {design.shape} to {out}")
    return 0


# ------------------------------------------------------------------ fit


def cmd_fit(args):
    Z = read_matrix(args.design)
    X = read_matrix(args.bold)
    cfg = _ridge_config_from_args(args)
    fit = fit_path(Z, X, cfg, n_workers=cli_workers(args.workers))

    out = Path(args.out)
    stem = out.name[:-len(out.suffix)] if out.suffix else out.name
    files = []
    for k in range(fit.lambdas.size):
        if fit.lambdas.size == 1:
            w_path, b_path = out, out.with_name(f"{stem}.intercepts.vem")
        else:
            w_path = out.with_name(f"{stem}.{k:03d}.vem")
            b_path = out.with_name(f"{stem}.intercepts.{k:03d}.vem")
        write_matrix(fit.weights[k], w_path)
        write_matrix(fit.intercepts[k][None, :], b_path)
        files.append({"lambda": float(fit.lambdas[k]), "weights": w_path.name,
                      "intercepts": b_path.name})
    _write_json(out.with_name(f"{stem}.json"), {
        "rank": fit.rank,
        "penalty": cfg.penalty,
        "files": files,
        "provenance": provenance(
            {"design": _base(args.design), "bold": _base(args.bold),
             "lambdas": fit.lambdas, "penalty": cfg.penalty,
             "standardize": cfg.standardize,
             "fit_intercept": cfg.fit_intercept},
            {},
        ),
    })
    print(f"fit {fit.lambdas.size} penalty value(s), rank {fit.rank}, to {out}")
    return 0


# ---------------------------------------------------------------- score


def cmd_score(args):
    Z = read_matrix(args.design)
    X = read_matrix(args.bold)
    cfg = _ridge_config_from_args(args)
    run_lengths = None
    if args.run_lengths is not None:
        run_lengths = [int(v) for v in
                       _parse_float_list(args.run_lengths, "--run-lengths")]
    rep = cross_validate(
        Z, X, cfg, n_folds=args.folds, scheme=args.scheme, seed=args.seed,
        run_lengths=run_lengths, n_workers=cli_workers(args.workers),
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_matrix(rep.r[None, :], out / "r.vem")
    write_matrix(rep.chosen_lambda[None, :], out / "chosen_lambda.vem")
    write_matrix(rep.per_fold_r, out / "per_fold_r.vem")
    write_matrix(rep.excluded[None, :].astype(np.float64), out / "excluded.vem")
    scored = ~rep.excluded
    _write_json(out / "report.json", {
        "n_folds": rep.n_folds,
        "scheme": args.scheme,
        "lambdas": rep.lambdas,
        "chosen_index": rep.chosen_index,
        "n_voxels": int(rep.r.size),
        "n_excluded": int(rep.excluded.sum()),
        "mean_r": float(rep.r[scored].mean()) if scored.any() else None,
        "provenance": provenance(
            {"design": _base(args.design), "bold": _base(args.bold),
             "lambdas": cfg.lambdas, "penalty": cfg.penalty,
             "folds": args.folds, "scheme": args.scheme},
            {"cv": args.seed},
        ),
    })
    print(f"scored {rep.r.size} voxels "
          f"({int(rep.excluded.sum())} excluded) to {out}")
    return 0


# ----------------------------------------------------------- groupstats


def _load_subject_rows(paths, flag):
    if len(paths) < 2:
        raise ValidationError(f"{flag} needs at least 2 subject files")
    rows = []
    width = None
    for p in paths:
        r = read_matrix(p, allow_nonfinite=True).ravel()
        if width is None:
            width = r.size
        elif r.size != width:
            raise ShapeError(
                f"{p}: expected {width} voxels like the first file, got {r.size}"
            )
        rows.append(r)
    return rows


def cmd_groupstats(args):
    rows_a = _load_subject_rows(args.a, "--a")
    rows_b = _load_subject_rows(args.b, "--b")
    if len(rows_a) != len(rows_b):
        raise ValidationError(
            f"paired test needs equal groups, got {len(rows_a)} vs {len(rows_b)}"
        )
    stat = compare_models(rows_a, rows_b, alpha=args.alpha,
                          fisher_z=args.fisher_z)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_matrix(stat.t[None, :], out / "t.vem")
    write_matrix(stat.p[None, :], out / "p.vem")
    write_matrix(stat.q[None, :], out / "q.vem")
    write_matrix(stat.reject[None, :].astype(np.float64), out / "reject.vem")
    _write_json(out / "summary.json", {
        "alpha": stat.alpha,
        "df": stat.df,
        "n_subjects": len(rows_a),
        "n_tests": int(stat.p.size),
        "n_rejected": int(stat.reject.sum()),
        # direction is the sign of mean(a - b), so b wins where it is negative
        "n_b_better": int((stat.reject & (stat.direction < 0)).sum()),
        "n_a_better": int((stat.reject & (stat.direction > 0)).sum()),
        "fisher_z": args.fisher_z,
        "provenance": provenance(
            {"a": [_base(p) for p in args.a], "b": [_base(p) for p in args.b],
             "alpha": args.alpha, "fisher_z": args.fisher_z},
            {},
        ),
    })
    print(f"{int(stat.reject.sum())} of {stat.p.size} voxels significant "
          f"at alpha={args.alpha} to {out}")
    return 0


# --------------------------------------------------------------- report


def cmd_report(args):
    r = read_matrix(args.report).ravel()
    atlas = load_atlas(args.atlas)
    excluded = None
    if args.excluded is not None:
        excluded = read_matrix(args.excluded).ravel().astype(bool)
    rows = summarize_roi(r, atlas, excluded=excluded)
    _write_json(args.out, {
        "rows": rows,
        "provenance": provenance(
            {"report": _base(args.report), "atlas": _base(args.atlas)}, {},
        ),
    })
    print(f"wrote {len(rows)} network rows to {args.out}")
    return 0


# -------------------------------------------------------------- toytune


_TASK_KEYS = {"kind", "model", "n_examples", "context_len", "n_classes",
              "data_seed", "pretrain", "steps", "lr", "batch_size"}


def _load_task(path):
    raw = _load_json(path, "task")
    problems = []
    if not isinstance(raw, dict):
        raise ConfigError(["task root must be a JSON object"])
    for key in sorted(set(raw) - _TASK_KEYS):
        problems.append(f"unknown key {key!r} in task")
    if raw.get("kind", "classification") != "classification":
        problems.append(f"task kind must be 'classification', got {raw.get('kind')!r}")
    model_keys = {"n_layers", "d_model", "n_heads", "vocab", "context",
                  "d_ff"}
    for key in sorted(set(raw.get("model", {})) - model_keys):
        problems.append(f"unknown key {key!r} in task model")
    pretrain = raw.get("pretrain")
    if pretrain is not None:
        for key in sorted(set(pretrain) - {"warmup_steps", "lr", "n_examples"}):
            problems.append(f"unknown key {key!r} in task pretrain")
    if problems:
        raise ConfigError(problems)
    return raw


def _build_task_model(task, seed):
    model_cfg = ToyLmConfig(**task.get("model", {}))
    pretrain = task.get("pretrain")
    if pretrain is None:
        params = init_params(model_cfg, seed=seed)
    else:
        params = make_pretrained(model_cfg, seed=seed, **pretrain)
    ids, mask = make_classification_data(
        model_cfg,
        n_examples=task.get("n_examples", 128),
        context_len=task.get("context_len", 12),
        n_classes=task.get("n_classes", 4),
        seed=task.get("data_seed", 0),
    )
    return model_cfg, params, ids, mask


def cmd_toytune(args):
    task = _load_task(args.task)
    model_cfg, params, ids, mask = _build_task_model(task, args.seed)
    tune_cfg = TuneConfig(
        mode=args.mode,
        steps=task.get("steps", 200),
        lr=task.get("lr", 0.1),
        batch_size=task.get("batch_size", 16),
        seed=args.seed,
        proportion=args.proportion,
        prefix_len=args.prefix_len,
    )
    result = tune(params, model_cfg, ids, mask, tune_cfg)
    out = Path(args.out)
    save_model(out, result.params, model_cfg, prefix=result.prefix,
               extra={
                   "mode": args.mode,
                   "proportion": args.proportion,
                   "prefix_len": args.prefix_len,
                   "loss_history": [float(v) for v in result.history],
                   "provenance": provenance(
                       {"task": task, "mode": args.mode,
                        "proportion": args.proportion,
                        "prefix_len": args.prefix_len},
                       {"tune": args.seed},
                   ),
               })
    print(f"tuned mode={args.mode} for {tune_cfg.steps} steps, "
          f"final loss {result.history[-1]:.4f}, to {out}")
    return 0


# ---------------------------------------------------------------- embed


def _load_sentences(path):
    raw = _load_json(path, "sentences")
    if not isinstance(raw, dict) or "sentences" not in raw:
        raise ValidationError("sentences file must be an object with a "
                              "'sentences' list")
    entries = raw["sentences"]
    if not isinstance(entries, list) or not entries:
        raise ValidationError("'sentences' must be a non-empty list")
    onsets, durations, id_rows = [], [], []
    for i, s in enumerate(entries):
        if not isinstance(s, dict) or not {"onset_s", "duration_s", "ids"} <= set(s):
            raise ValidationError(
                f"sentence {i} needs onset_s, duration_s, and ids"
            )
        onsets.append(float(s["onset_s"]))
        durations.append(float(s["duration_s"]))
        ids = s["ids"]
        if not isinstance(ids, list) or not ids or \
                any(not isinstance(t, int) or isinstance(t, bool) for t in ids):
            raise ValidationError(f"sentence {i}: ids must be a non-empty "
                                  "list of integers")
        id_rows.append(ids)
    return raw.get("run_id", "embedded"), onsets, durations, id_rows


def cmd_embed(args):
    params, cfg, prefix = load_model(args.model)
    run_id, onsets, durations, id_rows = _load_sentences(args.sentences)
    vectors = np.empty((len(id_rows), cfg.d_model))
    for i, ids in enumerate(id_rows):
        vectors[i] = embed_sequence(params, cfg,
                                    np.asarray([ids], dtype=np.int64),
                                    prefix=prefix)[0]
    track = StimulusTrack(onsets=np.asarray(onsets),
                          durations=np.asarray(durations),
                          vectors=vectors, run_id=run_id)
    out = Path(args.out)
    save_stimulus_track(track, out)
    _write_json(out.with_name(out.name[:-len(out.suffix)] + ".provenance.json"
                              if out.suffix else out.name + ".provenance.json"), {
        "n_sentences": len(id_rows),
        "dim": cfg.d_model,
        "prefix_rows": 0 if prefix is None else int(prefix.m.shape[0]),
        "provenance": provenance(
            {"model": _base(args.model), "sentences": _base(args.sentences)}, {},
        ),
    })
    print(f"embedded {len(id_rows)} sentences into {out}")
    return 0


# ---------------------------------------------------------------- sweep


def _stage(name, fn, *a, **kw):
    try:
        return fn(*a, **kw)
    except StageFailure:
        raise
    except Exception as exc:
        raise StageFailure(name, exc) from exc


def _network_means(rep, atlas):
    """Per-network mean r over scored voxels for one subject."""
    out = {}
    scored = ~rep.excluded
    for code in sorted(atlas.names):
        members = (atlas.labels == code) & scored
        out[code] = float(rep.r[members].mean()) if members.any() else np.nan
    return out


def run_sweep(cfg, out_dir, n_workers=1):
    """Tuned-proportion sweep: untuned baseline plus one row per proportion.

    Ground-truth BOLD is generated once from the untuned embeddings, so
    recovery quality measures how far each tuning regime drifts from the
    representation that produced the data.
    """
    sw = cfg.sweep
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "models").mkdir(exist_ok=True)
    (out_dir / "tracks").mkdir(exist_ok=True)

    model_cfg = ToyLmConfig(**sw.model)
    pretrain = {"warmup_steps": 80, "lr": 0.05, "n_examples": 256,
                **sw.pretrain}
    task = {"n_examples": 128, "context_len": 12, "n_classes": 4, **sw.task}
    tune_kw = {"steps": 150, "lr": 0.05, "batch_size": 16, **sw.tune}

    params0 = _stage("pretrain", make_pretrained, model_cfg, seed=sw.seed,
                     **pretrain)

    def make_sentences():
        ids, _ = make_classification_data(
            model_cfg, n_examples=sw.n_sentences,
            context_len=task["context_len"], n_classes=task["n_classes"],
            seed=sw.seed + 101,
        )
        onsets = np.arange(sw.n_sentences) * sw.onset_spacing_s
        durations = np.full(sw.n_sentences, sw.duration_s)
        return ids, onsets, durations

    sent_ids, onsets, durations = _stage("sentences", make_sentences)
    ids, mask = _stage(
        "task-data", make_classification_data, model_cfg,
        n_examples=task["n_examples"], context_len=task["context_len"],
        n_classes=task["n_classes"], seed=sw.seed + 7,
    )

    if cfg.n_trs is not None:
        n_trs = cfg.n_trs
    else:
        n_trs = int(np.ceil(
            (onsets[-1] + sw.duration_s + cfg.hrf.length_s) / cfg.tr_s
        )) + 1

    def embed_row(label, params):
        vectors = np.empty((sw.n_sentences, model_cfg.d_model))
        for i in range(sw.n_sentences):
            vectors[i] = embed_sequence(
                params, model_cfg, sent_ids[i:i + 1])[0]
        track = StimulusTrack(onsets=onsets, durations=durations,
                              vectors=vectors, run_id=f"sweep-{label}")
        save_stimulus_track(track, out_dir / "tracks" / f"{label}.json")
        design, _ = convolve_track(track, cfg.hrf, cfg.tr_s, n_trs)
        return zscore_columns(design)

    rows = [("untuned", None, params0)]
    for p in sw.proportions:
        label = f"p{p:g}"
        result = _stage(
            f"tune({label})", tune, params0, model_cfg, ids, mask,
            TuneConfig(mode="partial", proportion=p, seed=sw.seed, **tune_kw),
        )
        _stage(f"save-model({label})", save_model,
               out_dir / "models" / f"{label}.vem", result.params, model_cfg)
        rows.append((label, p, result.params))
    _stage("save-model(untuned)", save_model,
           out_dir / "models" / "untuned.vem", params0, model_cfg)

    designs = {label: _stage(f"embed({label})", embed_row, label, params)
               for label, _, params in rows}

    def make_dataset():
        spec = SynthSpec(
            n_subjects=sw.n_subjects, n_voxels=sw.n_voxels, n_trs=n_trs,
            tr_s=cfg.tr_s, dim=model_cfg.d_model, snr=sw.snr, noise="white",
            seed=sw.seed, hrf=cfg.hrf,
        )
        W = draw_weights(model_cfg.d_model, sw.n_voxels, sw.seed)
        signal = designs["untuned"] @ W
        runs, atlas, snr_vec = bold_from_signal(spec, signal)
        return runs, atlas

    runs, atlas = _stage("dataset", make_dataset)

    def score_row(label):
        per_subject = []
        for run in runs:
            rep = cross_validate(
                designs[label], run.signal, cfg.ridge, n_folds=cfg.folds,
                scheme=cfg.scheme, seed=cfg.seed, n_workers=n_workers,
            )
            per_subject.append(_network_means(rep, atlas))
        return per_subject

    results = []
    for label, p, _ in rows:
        per_subject = _stage(f"cv({label})", score_row, label)
        for code in sorted(atlas.names):
            vals = np.asarray([s[code] for s in per_subject])
            results.append({
                "proportion": p,
                "label": label,
                "network": atlas.names[code],
                "mean_r": float(np.nanmean(vals)),
                "std_r": float(np.nanstd(vals)),
                "per_subject": [float(v) for v in vals],
            })

    def write_outputs():
        lines = ["proportion,network,mean_r,std_r"]
        for row in results:
            tag = "untuned" if row["proportion"] is None \
                else format(row["proportion"], "g")
            lines.append(
                f"{tag},{row['network']},{format(row['mean_r'], '.10g')},"
                f"{format(row['std_r'], '.10g')}"
            )
        (out_dir / "sweep.csv").write_text("\n".join(lines) + "\n")

        rank_corr = {}
        for code in sorted(atlas.names):
            name = atlas.names[code]
            pairs = [(row["proportion"], row["mean_r"]) for row in results
                     if row["network"] == name and row["proportion"] is not None]
            if len(pairs) >= 3:
                ps = np.asarray([a for a, _ in pairs])
                rs = np.asarray([b for _, b in pairs])
                rank_corr[name] = pearson(np.argsort(np.argsort(ps)).astype(float),
                                          np.argsort(np.argsort(rs)).astype(float))
            else:
                rank_corr[name] = None
        _write_json(out_dir / "sweep.json", {
            "rows": results,
            "rank_correlation": rank_corr,
            "n_trs": n_trs,
            "n_subjects": sw.n_subjects,
            "n_voxels": sw.n_voxels,
            "provenance": provenance(cfg.raw, {
                "sweep": sw.seed, "cv": cfg.seed,
            }),
        })

    _stage("report", write_outputs)
    print(f"sweep complete: {len(rows)} rows x {len(atlas.names)} networks "
          f"to {out_dir}")
    return 0


def cmd_sweep(args):
    cfg = validate_config(args.config)
    out = args.out or cfg.out
    if out is None:
        raise ConfigError(["sweep needs an output directory: pass --out or "
                           "set 'out' in the config"])
    return run_sweep(cfg, out, n_workers=cli_workers(args.workers))


# ----------------------------------------------------------------- main


def build_parser():
    parser = argparse.ArgumentParser(
        prog="voxelenc",
        description="Voxel-wise encoding pipelines over VEM1 matrices.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--spec", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("convolve", help="render a stimulus track into a design")
    p.add_argument("--track", required=True)
    p.add_argument("--tr", type=float, required=True)
    p.add_argument("--n-trs", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--hrf", default=None,
                   help="a1,a2,b1,b2,c,length,oversample")
    p.add_argument("--impulse", action="store_true",
                   help="ignore durations, render events as impulses")
    p.add_argument("--no-zscore", action="store_true",
                   help="keep raw regressor scale")
    p.set_defaults(func=cmd_convolve)

    def add_fit_flags(p):
        p.add_argument("--design", required=True)
        p.add_argument("--bold", required=True)
        p.add_argument("--lambdas", default=None,
                       help="comma-separated penalties, default log grid")
        p.add_argument("--penalty", choices=("l2", "l1"), default="l2")
        p.add_argument("--no-standardize", action="store_true")
        p.add_argument("--no-intercept", action="store_true")
        p.add_argument("--workers", type=int, default=None)

    p = sub.add_parser("fit", help="fit encoders on all rows")
    add_fit_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("score", help="cross-validated voxel scores")
    add_fit_flags(p)
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--scheme", choices=("contiguous", "by_run"),
                   default="contiguous")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--run-lengths", default=None,
                   help="comma-separated TR counts per run (by_run scheme)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("groupstats", help="paired subject-level comparison")
    p.add_argument("--a", nargs="+", required=True)
    p.add_argument("--b", nargs="+", required=True)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--fisher-z", action="store_true", dest="fisher_z")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_groupstats)

    p = sub.add_parser("report", help="aggregate voxel scores by network")
    p.add_argument("--report", required=True)
    p.add_argument("--atlas", required=True)
    p.add_argument("--excluded", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("toytune", help="tune the toy transformer")
    p.add_argument("--mode", choices=("full", "partial", "prefix"),
                   required=True)
    p.add_argument("--proportion", type=float, default=None)
    p.add_argument("--prefix-len", type=int, default=None)
    p.add_argument("--task", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_toytune)

    p = sub.add_parser("embed", help="embed sentences into a stimulus track")
    p.add_argument("--model", required=True)
    p.add_argument("--sentences", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("sweep", help="tuned-proportion sweep")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--workers", type=int, default=None)
    p.set_defaults(func=cmd_sweep)

    return parser


_VALIDATION_ERRORS = (ConfigError, FormatError, CorruptionError,
                      ValidationError, ShapeError, FileNotFoundError,
                      NotADirectoryError, IsADirectoryError)


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except StageFailure as exc:
        print(f"error: sweep aborted at stage '{exc.stage}': {exc.cause}",
              file=sys.stderr)
        return 2 if isinstance(exc.cause, _VALIDATION_ERRORS) else 3
    except _VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ArithmeticError, VoxelencError, IndexError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
