"""Command-line entry point: ``dover <command> [options]``.

Every command resolves a fully explicit configuration (defaults, then an
optional ``--config`` JSON file, then flags, then ``--set key=value``
overrides), runs, and writes a run manifest next to its output recording
that configuration and SHA-256 hashes of inputs and outputs. ``dover rerun
MANIFEST`` replays a run and checks that the outputs are byte-identical.

Exit codes: 0 success, 1 runtime error, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import copy
import hashlib
import json
import os
import sys
from collections.abc import Callable
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import DoverError, __version__
from ._io import atomic_write_text, read_csv, write_csv, write_json
from .fusion import FusionWeights, fit_fusion_weight, fuse, personalized_fuse
from .losses import ObjectiveConfig
from .metrics import correlations
from .model import load_checkpoint, save_checkpoint
from .opinions import (GOLDEN_MAX_FRACTION, GOLDEN_TOLERANCE, aggregate_mos, make_profiles, perspective_report,
                       read_mos, read_opinions, sample_latents, screen_raters, simulate_study, write_mos,
                       write_opinions)
from .rng import derive_seed
from .sampling import (bin_ids, compute_indices, histogram_matched_subset, marginal_emd, read_indices,
                       uniform_subset, write_indices)
from .training import FolderDataset, TrainConfig, disentangle_dataset, predict_many, train, write_folder_dataset
from .video import SynthSpec, load_video, save_video, synth_video
from .views import ViewConfig, decompose, save_views

RUN_FILE = "run.json"
RUN_SUFFIX = ".run.json"


class UsageError(DoverError):
    """Bad flags, unreadable config or a config that violates the schema (exit 2)."""


@dataclass
class Result:
    outputs: list[Path]
    summary: dict = field(default_factory=dict)
    text: str = ""


@dataclass
class Command:
    name: str
    help: str
    defaults: dict
    flags: list[tuple]  # (flag, config key, type, help)
    run: Callable[[dict], Result]
    inputs: tuple[str, ...] = ()
    output: str = "out"  # config key naming the primary output
    output_is_dir: bool = False
    required: tuple[str, ...] = ()


COMMANDS: dict[str, Command] = {}


def command(name, help, defaults, flags, inputs=(), output="out", output_is_dir=False, required=()):
    def wrap(fn):
        COMMANDS[name] = Command(name, help, defaults, flags, fn, tuple(inputs), output, output_is_dir,
                                 tuple(required))
        return fn
    return wrap


# ----------------------------------------------------------------- config logic


def _get(cfg: dict, dotted: str):
    node = cfg
    for part in dotted.split("."):
        node = node[part]
    return node


def _set(cfg: dict, dotted: str, value, schema: dict) -> None:
    parts = dotted.split(".")
    node, ref = cfg, schema
    for part in parts[:-1]:
        if not isinstance(ref.get(part), dict):
            raise UsageError(f"unknown config key {dotted!r}")
        node, ref = node[part], ref[part]
    if parts[-1] not in ref:
        raise UsageError(f"unknown config key {dotted!r}")
    node[parts[-1]] = _coerce(value, ref[parts[-1]], dotted)


def _coerce(value, default, key):
    """Check ``value`` against the type of ``default`` (None accepts anything)."""
    if default is None or value is None:
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise UsageError(f"config key {key!r} expects true/false, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise UsageError(f"config key {key!r} expects an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise UsageError(f"config key {key!r} expects a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise UsageError(f"config key {key!r} expects a string, got {value!r}")
        return value
    if isinstance(default, list):
        if not isinstance(value, list):
            raise UsageError(f"config key {key!r} expects a list, got {value!r}")
        return value
    if isinstance(default, dict):
        if not isinstance(value, dict):
            raise UsageError(f"config key {key!r} expects an object, got {value!r}")
        out = copy.deepcopy(default)
        for k, v in value.items():
            if k not in default:
                raise UsageError(f"unknown config key {key + '.' + k!r}")
            out[k] = _coerce(v, default[k], f"{key}.{k}")
        return out
    return value


def _merge_file(cfg: dict, data: dict, cmd: Command) -> None:
    for key, value in data.items():
        # a real config key wins over a section of the same name ("train")
        if key in cmd.defaults:
            cfg[key] = _coerce(value, cmd.defaults[key], key)
        elif key == cmd.name and isinstance(value, dict):
            _merge_file(cfg, value, cmd)
        elif key in COMMANDS:
            continue  # section for another command
        else:
            raise UsageError(f"unknown config key {key!r} for command {cmd.name!r}")


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def resolve_config(cmd: Command, args: argparse.Namespace) -> dict:
    cfg = copy.deepcopy(cmd.defaults)
    if args.config:
        try:
            data = json.loads(Path(args.config).read_text())
        except (OSError, UnicodeDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise UsageError(f"config {args.config} is not valid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise UsageError(f"config {args.config} must hold a JSON object")
        _merge_file(cfg, data, cmd)
    for _, key, _, _ in cmd.flags:
        value = getattr(args, _dest(key))
        if value is not None:
            _set(cfg, key, value, cmd.defaults)
    for item in args.set or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        key, text = item.split("=", 1)
        _set(cfg, key.strip(), _parse_value(text), cmd.defaults)
    for key in cmd.required:
        if _get(cfg, key) in (None, "", []):
            raise UsageError(f"missing required setting {key!r} (flag or config)")
    return cfg


def _dest(key: str) -> str:
    return "opt_" + key.replace(".", "__")


# -------------------------------------------------------------------- manifests


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def hash_tree(path: Path) -> dict[str, str]:
    """Hashes of a file, or of every file under a directory (run manifests excluded)."""
    path = Path(path)
    if path.is_file():
        return {path.name: sha256_file(path)}
    out = {}
    for p in sorted(path.rglob("*")):
        if p.is_file() and p.name != RUN_FILE and not p.name.endswith(RUN_SUFFIX) and not p.name.startswith("."):
            out[p.relative_to(path).as_posix()] = sha256_file(p)
    return out


def _input_hashes(cmd: Command, cfg: dict) -> dict[str, dict[str, str]]:
    hashes = {}
    for key in cmd.inputs:
        value = _get(cfg, key)
        for p in value if isinstance(value, list) else [value]:
            if p:
                if not Path(p).exists():
                    raise DoverError(f"input not found: {p}")
                hashes[str(p)] = hash_tree(Path(p))
    return hashes


def manifest_path(cmd: Command, cfg: dict) -> Path:
    out = Path(_get(cfg, cmd.output))
    return out / RUN_FILE if cmd.output_is_dir else out.with_name(out.name + RUN_SUFFIX)


def _output_hashes(outputs: list[Path], anchor: Path) -> dict[str, str]:
    hashes = {}
    for p in outputs:
        p = Path(p)
        if p.is_dir():
            for rel, h in hash_tree(p).items():
                hashes[Path(os.path.relpath(p / rel, anchor)).as_posix()] = h
        else:
            hashes[Path(os.path.relpath(p, anchor)).as_posix()] = sha256_file(p)
    return dict(sorted(hashes.items()))


def _absolutize(cmd: Command, cfg: dict) -> dict:
    cfg = copy.deepcopy(cfg)
    for key in (*cmd.inputs, cmd.output, *_extra_outputs(cmd)):
        value = _get(cfg, key)
        if isinstance(value, list):
            value = [str(Path(v).resolve()) for v in value]
        elif value:
            value = str(Path(value).resolve())
        _set(cfg, key, value, cmd.defaults)
    return cfg


def _extra_outputs(cmd: Command) -> tuple[str, ...]:
    return ("trace",) if cmd.name == "train" else ()


def execute(cmd: Command, cfg: dict) -> tuple[Result, dict]:
    cfg = _absolutize(cmd, cfg)
    inputs = _input_hashes(cmd, cfg)
    result = cmd.run(cfg)
    if not _get(cfg, cmd.output):
        return result, {}  # nothing written, so no manifest
    mpath = manifest_path(cmd, cfg)
    anchor = mpath.parent
    manifest = {
        "command": cmd.name,
        "version": __version__,
        "config": cfg,
        "inputs": inputs,
        "outputs": _output_hashes(result.outputs, anchor),
        "summary": result.summary,
    }
    write_json(mpath, manifest)
    return result, manifest


# --------------------------------------------------------------------- commands

SYNTH_SPEC_DEFAULTS = {k: v for k, v in asdict(SynthSpec()).items()}
SYNTH_SPEC_DEFAULTS["seed"] = None
SYNTH_SPEC_DEFAULTS["id"] = None


@command(
    "synth", "render a synthetic video (or a labeled synthetic dataset) to PNG frames",
    {"seed": 0, "out": None, "spec": SYNTH_SPEC_DEFAULTS,
     "dataset": {"n": 0, "size": 256, "frames": 8, "w_a": 0.428, "mos_noise": 0.05, "seed": None}},
    [("--out", "out", str, "output directory"),
     ("--seed", "seed", int, "top-level seed"),
     ("--dataset", "dataset.n", int, "if > 0, render a disentanglement dataset of this many videos"),
     ("--size", "dataset.size", int, "frame side of dataset videos"),
     ("--frames", "dataset.frames", int, "frames per dataset video")],
    output_is_dir=True, required=("out",),
)
def cmd_synth(cfg: dict) -> Result:
    out = Path(cfg["out"])
    d = cfg["dataset"]
    if d["n"] > 0:
        ds = disentangle_dataset(d["n"], d["seed"], d["size"], d["frames"], d["w_a"], d["mos_noise"])
        ids = write_folder_dataset(ds, out)
        return Result([out], {"videos": len(ids)}, f"wrote {len(ids)} videos to {out}")
    spec = SynthSpec.from_dict(cfg["spec"])
    v = synth_video(spec)
    save_video(v, out)
    return Result([out], {"id": v.id, "a_gt": v.metadata["a_gt"], "t_gt": v.metadata["t_gt"]},
                  f"wrote {v.id} ({v.num_frames} frames) to {out}")


def _resolve_synth(cfg: dict) -> None:
    if cfg["spec"]["seed"] is None:
        cfg["spec"]["seed"] = derive_seed(cfg["seed"], "synth")
    if cfg["dataset"]["seed"] is None:
        cfg["dataset"]["seed"] = derive_seed(cfg["seed"], "dataset")


VIEW_DEFAULTS = {**ViewConfig().to_dict(), "mode": "infer", "seed": None}


@command(
    "decompose", "write the aesthetic and technical views of a video as PNG mosaics plus provenance JSON",
    {"seed": 0, "video": None, "out": None, "view": VIEW_DEFAULTS},
    [("--video", "video", str, "input video directory"),
     ("--out", "out", str, "output directory"),
     ("--seed", "seed", int, "top-level seed"),
     ("--mode", "view.mode", str, "train (random offsets, adds the over-downsampled view) or infer")],
    inputs=("video",), output_is_dir=True, required=("video", "out"),
)
def cmd_decompose(cfg: dict) -> Result:
    view_cfg = ViewConfig.from_dict(cfg["view"])
    v = load_video(cfg["video"])
    views = decompose(v, view_cfg, view_cfg.seed)
    written = save_views(views, cfg["out"])
    counts = {k: len(vs) for k, vs in views.items()}
    return Result(written, {"views": counts}, json.dumps(counts, sort_keys=True))


def _resolve_seeded_view(cfg: dict, key: str = "view") -> None:
    if cfg[key]["seed"] is None:
        cfg[key]["seed"] = derive_seed(cfg["seed"], "views")


def _videos_from(cfg: dict) -> list:
    if cfg.get("data"):
        ds = FolderDataset(cfg["data"])
        return [ds.video(i) for i in range(len(ds))]
    return [load_video(p) for p in cfg["videos"]]


@command(
    "indices", "compute spatial/temporal/semantic index features for videos",
    {"videos": [], "data": None, "out": None},
    [("--videos", "videos", lambda s: s.split(","), "comma-separated video directories"),
     ("--data", "data", str, "dataset folder with labels.csv (alternative to --videos)"),
     ("--out", "out", str, "output CSV")],
    inputs=("videos", "data"), required=("out",),
)
def cmd_indices(cfg: dict) -> Result:
    videos = _videos_from(cfg)
    if not videos:
        raise UsageError("no videos given (use --videos or --data)")
    vecs = [compute_indices(v) for v in videos]
    write_indices(cfg["out"], [v.id for v in videos], vecs)
    return Result([Path(cfg["out"])], {"videos": len(videos)}, f"wrote indices for {len(videos)} videos")


TRAIN_DEFAULTS = {**TrainConfig().to_dict(), "seed": None}
TRAIN_DEFAULTS["view"] = {**ViewConfig().to_dict(), "seed": None}


@command(
    "train", "train the two-branch model on a dataset folder",
    {"seed": 0, "data": None, "out": None, "trace": None, "train": TRAIN_DEFAULTS},
    [("--data", "data", str, "dataset folder with labels.csv"),
     ("--out", "out", str, "checkpoint path"),
     ("--trace", "trace", str, "loss trace CSV (default: <out>.trace.csv)"),
     ("--seed", "seed", int, "top-level seed"),
     ("--steps", "train.steps", int, "optimizer steps"),
     ("--objective", "train.objective", str, "lvbs, ds or doverpp"),
     ("--lr", "train.lr", float, "learning rate"),
     ("--batch-size", "train.batch_size", int, "videos per step")],
    inputs=("data",), required=("data", "out"),
)
def cmd_train(cfg: dict) -> Result:
    tcfg = TrainConfig.from_dict(cfg["train"])
    res = train(FolderDataset(cfg["data"]), tcfg)
    out, trace = Path(cfg["out"]), Path(cfg["trace"])
    save_checkpoint(res.model, out)
    keys = sorted({k for row in res.trace for k in row})
    write_csv(trace, keys, ([row.get(k, "") for k in keys] for row in res.trace))
    first, last = res.trace[0]["loss"], res.trace[-1]["loss"]
    return Result([out, trace], {"initial_loss": first, "final_loss": last},
                  f"trained {tcfg.steps} steps, loss {first:.4f} -> {last:.4f}")


def _resolve_train(cfg: dict) -> None:
    if cfg["train"]["seed"] is None:
        cfg["train"]["seed"] = derive_seed(cfg["seed"], "train")
    if cfg["train"]["view"]["seed"] is None:
        cfg["train"]["view"]["seed"] = derive_seed(cfg["seed"], "views")
    if cfg["trace"] is None and cfg["out"]:
        cfg["trace"] = str(cfg["out"]) + ".trace.csv"


@command(
    "predict", "predict aesthetic, technical and fused scores with a checkpoint",
    {"model": None, "videos": [], "data": None, "out": None},
    [("--model", "model", str, "checkpoint path"),
     ("--videos", "videos", lambda s: s.split(","), "comma-separated video directories"),
     ("--data", "data", str, "dataset folder with labels.csv (alternative to --videos)"),
     ("--out", "out", str, "output JSON")],
    inputs=("model", "videos", "data"), required=("model", "out"),
)
def cmd_predict(cfg: dict) -> Result:
    model = load_checkpoint(cfg["model"])
    videos = _videos_from(cfg)
    if not videos:
        raise UsageError("no videos given (use --videos or --data)")
    preds = [p.to_dict() for p in predict_many(model, videos)]
    write_json(cfg["out"], preds)
    return Result([Path(cfg["out"])], {"videos": len(preds)}, f"wrote {len(preds)} predictions")


@command(
    "fuse", "fuse predicted aesthetic and technical scores with a weight or a personal technical impact",
    {"pred": None, "wa": 0.428, "impact": None, "out": None},
    [("--pred", "pred", str, "prediction JSON from `dover predict`"),
     ("--wa", "wa", float, "aesthetic weight w_a (w_t = 1 - w_a)"),
     ("--impact", "impact", float, "personal technical impact in [0, 1]; overrides --wa"),
     ("--out", "out", str, "output JSON")],
    inputs=("pred",), required=("pred", "out"),
)
def cmd_fuse(cfg: dict) -> Result:
    preds = json.loads(Path(cfg["pred"]).read_text())
    rows = []
    for p in preds:
        if cfg["impact"] is not None:
            q = personalized_fuse(p["q_a"], p["q_t"], cfg["impact"])
        else:
            q = fuse(p["q_a"], p["q_t"], FusionWeights.from_w_a(cfg["wa"]))
        rows.append({"video_id": p["video_id"], "q_a": p["q_a"], "q_t": p["q_t"], "q": q})
    write_json(cfg["out"], rows)
    return Result([Path(cfg["out"])], {"videos": len(rows)}, f"fused {len(rows)} scores")


@command(
    "fit-weights", "fit the fusion weight from perspective MOS",
    {"mos": None, "out": None, "grid_step": 0.001},
    [("--mos", "mos", str, "MOS CSV from `dover aggregate`"),
     ("--out", "out", str, "output JSON"),
     ("--grid-step", "grid_step", float, "step of the SROCC grid search diagnostic")],
    inputs=("mos",), required=("mos", "out"),
)
def cmd_fit_weights(cfg: dict) -> Result:
    recs = read_mos(cfg["mos"])
    fit = fit_fusion_weight([r.mos_a for r in recs], [r.mos_t for r in recs], [r.mos for r in recs],
                            cfg["grid_step"])
    out = {"w_a": fit.weights.w_a, "w_t": fit.weights.w_t, "ols_coef": list(fit.ols_coef),
           "intercept": fit.intercept, "grid_w_a": fit.grid_w_a, "grid_srocc": fit.grid_srocc,
           **fit.diagnostics}
    write_json(cfg["out"], out)
    return Result([Path(cfg["out"])], {"w_a": fit.weights.w_a}, f"w_a={fit.weights.w_a:.4f} w_t={fit.weights.w_t:.4f}")


@command(
    "simulate-study", "simulate a subjective study with synthetic raters",
    {"seed": 0, "n_videos": 500, "n_raters": 35, "impact_mean": 0.572, "impact_spread": 0.15,
     "noise_sigma": 0.1, "harshness_sigma": 0.0, "latent": None, "out": None, "study_seed": None},
    [("--out", "out", str, "output opinions CSV (latents go to <out>.latent.csv)"),
     ("--seed", "seed", int, "top-level seed"),
     ("--videos", "n_videos", int, "number of videos"),
     ("--raters", "n_raters", int, "number of raters"),
     ("--impact-mean", "impact_mean", float, "mean technical impact of the raters"),
     ("--impact-spread", "impact_spread", float, "std of per-rating technical impact before quantization"),
     ("--noise", "noise_sigma", float, "rating noise std on the 1-5 scale"),
     ("--harshness-sigma", "harshness_sigma", float, "std of per-rater additive bias"),
     ("--latent", "latent", str, "optional CSV video_id,a_gt,t_gt of per-video latents")],
    inputs=("latent",), required=("out",),
)
def cmd_simulate(cfg: dict) -> Result:
    seed = cfg["study_seed"]
    if cfg["latent"]:
        rows = read_csv(cfg["latent"])
        ids = [r["video_id"] for r in rows]
        latent = np.array([[float(r["a_gt"]), float(r["t_gt"])] for r in rows])
    else:
        latent = sample_latents(cfg["n_videos"], seed)
        ids = [f"v{i:05d}" for i in range(cfg["n_videos"])]
    profiles = make_profiles(cfg["n_raters"], cfg["impact_mean"], cfg["impact_spread"], cfg["noise_sigma"],
                             cfg["harshness_sigma"], seed)
    recs = simulate_study(len(ids), profiles, latent, seed, ids)
    out = Path(cfg["out"])
    write_opinions(out, recs)
    lat = out.with_name(out.name + ".latent.csv")
    write_csv(lat, ["video_id", "a_gt", "t_gt"], ([vid, float(a), float(t)] for vid, (a, t) in zip(ids, latent)))
    return Result([out, lat], {"records": len(recs)}, f"wrote {len(recs)} opinions")


def _resolve_simulate(cfg: dict) -> None:
    if cfg["study_seed"] is None:
        cfg["study_seed"] = derive_seed(cfg["seed"], "opinions")


@command(
    "aggregate", "aggregate opinions into per-video MOS, optionally screening raters with golden videos",
    {"opinions": None, "golden": None, "max_fraction": GOLDEN_MAX_FRACTION, "out": None},
    [("--opinions", "opinions", str, "opinions CSV"),
     ("--golden", "golden", str, f"golden CSV video_id,reference[,tolerance] (tolerance default {GOLDEN_TOLERANCE})"),
     ("--max-fraction", "max_fraction", float, "a rater fails when more than this fraction of golden videos deviate"),
     ("--out", "out", str, "output MOS CSV")],
    inputs=("opinions", "golden"), required=("opinions", "out"),
)
def cmd_aggregate(cfg: dict) -> Result:
    recs = read_opinions(cfg["opinions"])
    summary = {}
    if cfg["golden"]:
        golden = []
        for r in read_csv(cfg["golden"]):
            tol = r.get("tolerance")
            golden.append((r["video_id"], float(r["reference"]), float(tol) if tol else GOLDEN_TOLERANCE))
        recs, results = screen_raters(recs, golden, cfg["max_fraction"])
        summary["rejected_raters"] = sorted(rid for rid, res in results.items() if not res.passed)
    mos = aggregate_mos(recs)
    write_mos(cfg["out"], mos)
    summary["videos"] = len(mos)
    return Result([Path(cfg["out"])], summary, f"aggregated {len(mos)} videos")


@command(
    "report", "correlations of perspective MOS with overall MOS (four-column table)",
    {"mos": None, "out": None},
    [("--mos", "mos", str, "MOS CSV"), ("--out", "out", str, "output JSON (a .md table is written alongside)")],
    inputs=("mos",), required=("mos", "out"),
)
def cmd_report(cfg: dict) -> Result:
    rep = perspective_report(read_mos(cfg["mos"]))
    out = Path(cfg["out"])
    write_json(out, rep.to_dict())
    md = out.with_suffix(".md")
    atomic_write_text(md, rep.to_markdown())
    return Result([out, md], {"fitted_w_a": rep.fit.weights.w_a}, rep.to_markdown().rstrip())


def _score_column(rows: list[dict], col: str | None, path: str) -> str:
    if col:
        if col not in rows[0]:
            raise DoverError(f"{path}: no column {col!r}")
        return col
    for cand in ("q", "score", "mos"):
        if cand in rows[0]:
            return cand
    numeric = [k for k in rows[0] if k != "video_id" and _is_number(rows[0][k])]
    if len(numeric) == 1:
        return numeric[0]
    raise DoverError(f"{path}: cannot pick a score column from {list(rows[0])}; pass it explicitly")


def _is_number(s) -> bool:
    try:
        float(s)
        return True
    except (TypeError, ValueError):
        return False


def _load_scores(path: str, col: str | None) -> dict[str, float] | list[float]:
    if path.endswith(".json"):
        rows = json.loads(Path(path).read_text())
        rows = [{k: v for k, v in r.items() if not isinstance(v, list)} for r in rows]
    else:
        rows = read_csv(path)
    if not rows:
        raise DoverError(f"{path} holds no rows")
    col = _score_column(rows, col, path)
    if "video_id" in rows[0]:
        return {r["video_id"]: float(r[col]) for r in rows}
    return [float(r[col]) for r in rows]


@command(
    "corr", "SROCC, PLCC and KROCC between two score files (joined on video_id when present)",
    {"pred": None, "label": None, "pred_col": None, "label_col": None, "out": None},
    [("--pred", "pred", str, "predictions CSV or JSON"),
     ("--label", "label", str, "labels CSV or JSON"),
     ("--pred-col", "pred_col", str, "prediction column (default: q, score, mos or the only numeric column)"),
     ("--label-col", "label_col", str, "label column (same default rule)"),
     ("--out", "out", str, "optional output JSON")],
    inputs=("pred", "label"), required=("pred", "label"),
)
def cmd_corr(cfg: dict) -> Result:
    p = _load_scores(cfg["pred"], cfg["pred_col"])
    y = _load_scores(cfg["label"], cfg["label_col"])
    if isinstance(p, dict) and isinstance(y, dict):
        common = sorted(set(p) & set(y))
        if len(common) < 2:
            raise DoverError("fewer than 2 shared video ids between prediction and label files")
        a, b = [p[k] for k in common], [y[k] for k in common]
    else:
        a = list(p.values()) if isinstance(p, dict) else p
        b = list(y.values()) if isinstance(y, dict) else y
        if len(a) != len(b):
            raise DoverError(f"row counts differ: {len(a)} vs {len(b)}")
    res = correlations(a, b)
    text = " ".join(f"{k}={res[k]:.4f}" for k in ("SROCC", "PLCC", "KROCC"))
    outputs = []
    if cfg["out"]:
        write_json(cfg["out"], {**res, "n": len(a)})
        outputs.append(Path(cfg["out"]))
    return Result(outputs, {**res, "n": len(a)}, text)


@command(
    "curate", "select a histogram-matched subset of a pool of index vectors",
    {"seed": 0, "pool": None, "k": 500, "bins": 10, "out": None, "subset_seed": None},
    [("--pool", "pool", str, "indices CSV (video_id,spatial,temporal,semantic)"),
     ("-k", "k", int, "subset size"),
     ("--bins", "bins", int, "histogram bins per dimension"),
     ("--seed", "seed", int, "top-level seed"),
     ("--out", "out", str, "output subset CSV")],
    inputs=("pool",), required=("pool", "out"),
)
def cmd_curate(cfg: dict) -> Result:
    ids, vecs = read_indices(cfg["pool"])
    sub = histogram_matched_subset(vecs, cfg["k"], cfg["bins"], cfg["subset_seed"])
    values = np.stack([v.as_array() for v in vecs])
    base = marginal_emd(bin_ids(values, cfg["bins"]), uniform_subset(len(vecs), cfg["k"], cfg["subset_seed"]),
                        cfg["bins"])
    write_indices(cfg["out"], [ids[i] for i in sub.indices], [vecs[i] for i in sub.indices])
    summary = {"emd": sub.emd.tolist(), "uniform_emd": base.tolist(), "k": cfg["k"]}
    text = "EMD " + " ".join(f"{d}={e:.4f}" for d, e in zip(("spatial", "temporal", "semantic"), sub.emd))
    return Result([Path(cfg["out"])], summary, text)


def _resolve_curate(cfg: dict) -> None:
    if cfg["subset_seed"] is None:
        cfg["subset_seed"] = derive_seed(cfg["seed"], "sampling")


RESOLVERS = {
    "synth": _resolve_synth,
    "decompose": _resolve_seeded_view,
    "train": _resolve_train,
    "simulate-study": _resolve_simulate,
    "curate": _resolve_curate,
}


# ------------------------------------------------------------------------ rerun


def rerun(manifest_file: str, out_root: str | None = None) -> tuple[bool, dict]:
    """Replay a run from its manifest; returns (identical, new manifest).

    With ``out_root`` the outputs are written there instead of their
    original location, so the original artifacts stay untouched.
    """
    try:
        old = json.loads(Path(manifest_file).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read manifest {manifest_file}: {exc}") from None
    cmd = COMMANDS.get(old.get("command"))
    if cmd is None:
        raise UsageError(f"manifest names unknown command {old.get('command')!r}")
    cfg = _coerce(old["config"], cmd.defaults, cmd.name)
    current = _input_hashes(cmd, cfg)
    if current != old["inputs"]:
        changed = sorted(k for k in set(current) | set(old["inputs"]) if current.get(k) != old["inputs"].get(k))
        raise DoverError(f"inputs changed since the recorded run: {changed}")
    if out_root is not None:
        cfg = _relocate(cmd, cfg, Path(out_root))
    _, new = execute(cmd, cfg)
    return new["outputs"] == old["outputs"], new


def _relocate(cmd: Command, cfg: dict, root: Path) -> dict:
    """Point the outputs of ``cfg`` into ``root`` keeping their names."""
    cfg = copy.deepcopy(cfg)
    root.mkdir(parents=True, exist_ok=True)
    primary = Path(_get(cfg, cmd.output))
    new_primary = root / primary.name
    _set(cfg, cmd.output, str(new_primary), cmd.defaults)
    for key in _extra_outputs(cmd):
        value = _get(cfg, key)
        if value:
            _set(cfg, key, str(root / Path(value).name), cmd.defaults)
    return cfg


# --------------------------------------------------------------------- argparse


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dover", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"dover {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="command", required=True)
    for cmd in COMMANDS.values():
        p = sub.add_parser(cmd.name, help=cmd.help, description=cmd.help)
        for flag, key, typ, text in cmd.flags:
            shown = "" if "default:" in text else f" (default: {_show(_get(cmd.defaults, key))})"
            p.add_argument(flag, dest=_dest(key), type=typ, default=None,
                           metavar=key.rsplit(".", 1)[-1].upper(), help=text + shown)
        p.add_argument("--config", help="JSON config file; keys mirror the resolved config (default: none)")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config key, dotted for nested keys, value parsed as JSON (repeatable)")
        p.epilog = "resolved config defaults: " + json.dumps(cmd.defaults, sort_keys=True)
    rp = sub.add_parser("rerun", help="replay a run from its manifest and compare output hashes",
                        description="replay a run from its manifest and compare output hashes")
    rp.add_argument("manifest", help="run manifest written by a previous command")
    rp.add_argument("--out-root", default=None,
                    help="write replayed outputs into this directory instead of the original paths (default: none)")
    return parser


def _show(v) -> str:
    return "none" if v is None else json.dumps(v)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if args.command == "rerun":
            same, _ = rerun(args.manifest, args.out_root)
            print("identical" if same else "outputs differ from the recorded run")
            return 0 if same else 1
        cmd = COMMANDS[args.command]
        cfg = resolve_config(cmd, args)
        if cmd.name in RESOLVERS:
            RESOLVERS[cmd.name](cfg)
        result, _ = execute(cmd, cfg)
        if result.text:
            print(result.text)
        return 0
    except UsageError as exc:
        print(f"dover {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (DoverError, OSError, ValueError, KeyError) as exc:
        print(f"dover {args.command}: {exc}", file=sys.stderr)
        return 1


def run(argv: list[str] | None = None) -> int:
    return main(argv)


if __name__ == "__main__":
    sys.exit(main())
