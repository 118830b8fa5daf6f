"""Training loop, inference and synthetic datasets for the two-branch model."""
from __future__ import annotations

import logging
from collections.abc import Mapping, Sequence
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import DoverError
from ._io import read_csv, write_csv
from .fusion import FusionWeights, fuse
from .losses import LossResult, ObjectiveConfig, ds_objective, doverpp_objective, lvbs_objective
from .model import BranchModel, DoverModel
from .rng import keyed_rng
from .video import (BLUR_FULL, NOISE_FULL, SynthSpec, Video, load_video, normalized_degradation, save_video,
                    synth_metadata, synth_video, to_uint8)
from .views import ViewConfig, aesthetic_pair, aesthetic_view, technical_view

log = logging.getLogger(__name__)

OBJECTIVES = ("lvbs", "ds", "doverpp")
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
REQUIRED_LABELS = {"lvbs": ("mos",), "ds": ("mos_a", "mos_t"), "doverpp": ("mos", "mos_a", "mos_t")}


class ConfigError(DoverError, ValueError):
    """Invalid training configuration or dataset for the chosen objective."""


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 8
    steps: int = 500
    lr: float = 1e-2
    optimizer: str = "momentum"
    momentum: float = 0.9
    clip_norm: float | None = 1.0
    seed: int = 0
    objective: str = "lvbs"
    calibrate: bool = True
    calibration_size: int = 256
    warm_start_steps: int = 0
    c1: int = 8
    c2: int = 16
    feat_dim: int = 64
    view: ViewConfig = field(default_factory=ViewConfig)
    loss: ObjectiveConfig = field(default_factory=ObjectiveConfig)

    def __post_init__(self):
        if self.batch_size < 2:
            raise ConfigError("batch_size must be at least 2 for correlation losses")
        if self.steps < 1:
            raise ConfigError("steps must be at least 1")
        if self.optimizer not in ("sgd", "momentum", "adam"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.objective not in OBJECTIVES:
            raise ConfigError(f"unknown objective {self.objective!r}; expected one of {OBJECTIVES}")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "TrainConfig":
        d = dict(d)
        if isinstance(d.get("view"), Mapping):
            d["view"] = ViewConfig(**d["view"])
        if isinstance(d.get("loss"), Mapping):
            d["loss"] = ObjectiveConfig(**d["loss"])
        return cls(**d)


@dataclass
class TrainResult:
    model: DoverModel
    trace: list[dict]


@dataclass
class QualityPrediction:
    video_id: str
    q_a: float
    q_t: float
    clip_scores: list[float]
    q: float

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------- batches


@dataclass
class Batch:
    aesthetic: np.ndarray
    over: np.ndarray | None
    technical: np.ndarray
    labels: dict[str, np.ndarray]


def _stack_labels(items: list[Mapping], names) -> dict[str, np.ndarray]:
    return {n: np.array([float(lab[n]) for lab in items]) for n in names}


def _aesthetic_is_deterministic(video: Video, view_cfg: ViewConfig) -> bool:
    # every segment holds at most one frame, so train-mode sampling has no choice
    return video.num_frames <= view_cfg.aes_frames


def make_batch(items: Sequence[tuple[Video, Mapping]], view_cfg: ViewConfig, root: int,
               with_over: bool = True, label_names=("mos",), memo: dict | None = None) -> Batch:
    """Sample train-mode views for each (video, labels) item.

    ``memo`` (keyed by video id) caches aesthetic views that cannot vary
    between draws; results are identical with or without it.
    """
    aes, over, tech = [], [], []
    for b, (video, _) in enumerate(items):
        cached = memo.get(video.id) if memo is not None else None
        if cached is None:
            a, o = aesthetic_pair(video, view_cfg, keyed_rng(root, "views", b, "aesthetic"))
            cached = (a.data, o.data)
            if memo is not None and _aesthetic_is_deterministic(video, view_cfg):
                memo[video.id] = cached
        aes.append(cached[0])
        if with_over:
            over.append(cached[1])
        tech.append(technical_view(video, view_cfg, keyed_rng(root, "views", b, "technical"))[0].data)
    return Batch(
        np.stack(aes),
        np.stack(over) if with_over else None,
        np.stack(tech),
        _stack_labels([lab for _, lab in items], label_names),
    )


def _objective(name: str, qa, qt, fa, fo, labels, cfg: ObjectiveConfig) -> LossResult:
    if name == "lvbs":
        return lvbs_objective(qa, qt, labels["mos"], fa, fo, cfg)
    if name == "ds":
        return ds_objective(qa, qt, labels["mos_a"], labels["mos_t"], cfg)
    return doverpp_objective(qa, qt, labels["mos"], labels["mos_a"], labels["mos_t"], fa, fo, cfg)


def objective_and_grads(model: DoverModel, batch: Batch, objective: str,
                        cfg: ObjectiveConfig) -> tuple[LossResult, np.ndarray, np.ndarray]:
    """Objective value plus flat parameter gradients of both branches."""
    fa, qa, cache_a = model.aesthetic.forward_batch(batch.aesthetic)
    ft, qt, cache_t = model.technical.forward_batch(batch.technical)
    fo = cache_o = None
    if objective != "ds":
        fo, _, cache_o = model.aesthetic.forward_batch(batch.over)
    res = _objective(objective, qa, qt, fa, fo, batch.labels, cfg)
    d_fa = res.grads.get("f_a", np.zeros_like(fa))
    g_a = model.aesthetic.backward_batch(cache_a, d_fa, res.grads["q_a"])
    if cache_o is not None:
        g_a = g_a + model.aesthetic.backward_batch(cache_o, res.grads["f_a_down"], np.zeros(len(qa)))
    g_t = model.technical.backward_batch(cache_t, np.zeros_like(ft), res.grads["q_t"])
    res.info["q_a"] = qa
    res.info["q_t"] = qt
    return res, g_a, g_t


def evaluate_objective(model: DoverModel, batch: Batch, objective: str, cfg: ObjectiveConfig) -> LossResult:
    fa, qa, _ = model.aesthetic.forward_batch(batch.aesthetic)
    ft, qt, _ = model.technical.forward_batch(batch.technical)
    fo = model.aesthetic.forward_batch(batch.over)[0] if objective != "ds" else None
    return _objective(objective, qa, qt, fa, fo, batch.labels, cfg)


# ---------------------------------------------------------------------- training


def _check_dataset(dataset: Sequence, cfg: TrainConfig) -> None:
    if len(dataset) < cfg.batch_size:
        raise ConfigError(f"dataset has {len(dataset)} items, fewer than batch_size={cfg.batch_size}")
    needed = REQUIRED_LABELS[cfg.objective]
    for i in range(len(dataset)):
        labels = dataset.labels(i) if hasattr(dataset, "labels") else dataset[i][1]
        missing = [n for n in needed if n not in labels or labels[n] is None]
        if missing:
            raise ConfigError(f"item {i} lacks labels {missing} required by objective {cfg.objective!r}")


class _Optimizer:
    """SGD, heavy-ball momentum or Adam on one flat parameter vector, with norm clipping."""

    def __init__(self, cfg: TrainConfig, size: int):
        self.cfg = cfg
        self.velocity = np.zeros(size)
        self.second = np.zeros(size)
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> float:
        norm = float(np.sqrt(grad @ grad))
        if self.cfg.clip_norm is not None and norm > self.cfg.clip_norm:
            grad = grad * (self.cfg.clip_norm / norm)
        self.t += 1
        if self.cfg.optimizer == "adam":
            b1, b2 = self.cfg.momentum, ADAM_BETA2
            self.velocity = b1 * self.velocity + (1 - b1) * grad
            self.second = b2 * self.second + (1 - b2) * grad * grad
            m_hat = self.velocity / (1 - b1**self.t)
            v_hat = self.second / (1 - b2**self.t)
            params -= self.cfg.lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
        elif self.cfg.optimizer == "momentum":
            self.velocity = self.cfg.momentum * self.velocity + grad
            params -= self.cfg.lr * self.velocity
        else:
            params -= self.cfg.lr * grad
        return norm


def train(dataset: Sequence[tuple[Video, Mapping]], cfg: TrainConfig,
          model: DoverModel | None = None, progress=None) -> TrainResult:
    """Optimize both branches with the configured objective.

    ``dataset`` is any sequence of (Video, labels) pairs, where labels maps
    ``mos`` and, for the ``ds``/``doverpp`` objectives, ``mos_a``/``mos_t``.
    Deterministic in ``cfg.seed``. Returns the model and a per-step trace.
    """
    _check_dataset(dataset, cfg)
    view_cfg = cfg.view.with_mode("train")
    if model is None:
        model = DoverModel.initialized(cfg.seed, view_cfg.with_mode("infer"),
                                       c1=cfg.c1, c2=cfg.c2, feat_dim=cfg.feat_dim,
                                       in_channels=dataset[0][0].channels)
        if cfg.warm_start_steps:
            warm_start_aesthetic(model.aesthetic, view_cfg, cfg.warm_start_steps, cfg.seed)
    label_names = REQUIRED_LABELS[cfg.objective]
    # the branches share no parameters, so each gets its own optimizer and clipping budget
    opt_a = _Optimizer(cfg, model.aesthetic.n_params)
    opt_t = _Optimizer(cfg, model.technical.n_params)
    trace = []
    memo: dict = {}
    for step in range(cfg.steps):
        idx = keyed_rng(cfg.seed, "batch", step).choice(len(dataset), size=cfg.batch_size, replace=False)
        batch = make_batch([dataset[int(i)] for i in idx], view_cfg, keyed_rng(cfg.seed, "step", step).integers(2**62),
                           with_over=cfg.objective != "ds", label_names=label_names, memo=memo)
        res, g_a, g_t = objective_and_grads(model, batch, cfg.objective, cfg.loss)
        norm_a = opt_a.step(model.aesthetic.params, g_a)
        norm_t = opt_t.step(model.technical.params, g_t)
        row = {"step": step, "loss": res.value, "grad_norm_a": norm_a, "grad_norm_t": norm_t}
        row.update({k: float(v) for k, v in res.info.items() if np.ndim(v) == 0})
        trace.append(row)
        if progress is not None:
            progress(row)
        if not np.isfinite(res.value):
            raise DoverError(f"training diverged at step {step}")
    if cfg.calibrate:
        calibrate_heads(model, dataset, cfg)
    model.meta = {"train_config": cfg.to_dict(), "steps": cfg.steps}
    return TrainResult(model, trace)


def calibrate_heads(model: DoverModel, dataset: Sequence, cfg: TrainConfig) -> dict[str, tuple[float, float]]:
    """Fold a least-squares affine map (score -> supervising label) into each head.

    Correlation losses leave score scale and offset free; calibration puts
    both branches on their label scale so that weighted fusion is meaningful.
    """
    n = min(len(dataset), cfg.calibration_size)
    idx = np.sort(keyed_rng(cfg.seed, "calibration").choice(len(dataset), size=n, replace=False))
    items = [dataset[int(i)] for i in idx]
    preds = predict_many(model, [v for v, _ in items], model.view_cfg)
    targets = {
        "aesthetic": "mos" if cfg.objective == "lvbs" else "mos_a",
        "technical": "mos" if cfg.objective == "lvbs" else "mos_t",
    }
    out = {}
    for branch_name, q in (("aesthetic", [p.q_a for p in preds]), ("technical", [p.q_t for p in preds])):
        y = np.array([float(lab[targets[branch_name]]) for _, lab in items])
        q = np.asarray(q)
        if np.ptp(q) == 0:
            continue
        slope, intercept = np.polyfit(q, y, 1)
        head = model.branches()[branch_name].blocks()
        head["head.weight"][...] *= slope
        head["head.bias"][...] = slope * head["head.bias"] + intercept
        out[branch_name] = (float(slope), float(intercept))
    return out


def warm_start_aesthetic(branch: BranchModel, view_cfg: ViewConfig, steps: int, seed: int,
                         batch_size: int = 8, lr: float = 1e-2, size: int | None = None) -> list[float]:
    """Pre-train a branch to tell well-composed from badly composed synthetic frames.

    Logistic loss on the score; a stand-in for large-scale aesthetic pre-training.
    """
    size = size or 2 * view_cfg.aes_size
    opt = _Optimizer(TrainConfig(lr=lr), branch.n_params)
    losses = []
    for step in range(steps):
        rng = keyed_rng(seed, "warm", step)
        ys = rng.integers(0, 2, size=batch_size).astype(np.float64)
        views = []
        for b, y in enumerate(ys):
            spec = SynthSpec("thirds_composition", aesthetic_level=float(y), T=view_cfg.aes_frames,
                             H=size, W=size, seed=int(rng.integers(2**62)), id=f"warm-{step}-{b}")
            views.append(aesthetic_view(synth_video(spec), view_cfg, rng).data)
        _, scores, cache = branch.forward_batch(np.stack(views))
        prob = 1.0 / (1.0 + np.exp(-scores))
        losses.append(float(-np.mean(ys * np.log(prob + 1e-12) + (1 - ys) * np.log(1 - prob + 1e-12))))
        grad = branch.backward_batch(cache, np.zeros((batch_size, branch.feat_dim)), (prob - ys) / batch_size)
        opt.step(branch.params, grad)
    return losses


# --------------------------------------------------------------------- inference


def predict(model: DoverModel, v: Video, cfg: ViewConfig | None = None) -> QualityPrediction:
    """Aesthetic score from one view, technical score as the mean over clips."""
    return predict_many(model, [v], cfg)[0]


def predict_many(model: DoverModel, videos: Sequence[Video], cfg: ViewConfig | None = None,
                 chunk: int = 16) -> list[QualityPrediction]:
    cfg = (cfg or model.view_cfg).with_mode("infer")
    out = []
    for start in range(0, len(videos), chunk):
        part = videos[start:start + chunk]
        aes = np.stack([aesthetic_view(v, cfg).data for v in part])
        clips = [technical_view(v, cfg) for v in part]
        n_clips = [len(c) for c in clips]
        tech = np.stack([c.data for cs in clips for c in cs])
        _, q_a, _ = model.aesthetic.forward_batch(aes)
        _, q_clip, _ = model.technical.forward_batch(tech)
        pos = 0
        for v, qa, n in zip(part, q_a, n_clips):
            scores = [float(s) for s in q_clip[pos:pos + n]]
            pos += n
            qt = float(np.mean(scores))
            out.append(QualityPrediction(v.id, float(qa), qt, scores, float(fuse(qa, qt, model.fusion))))
    return out


# ---------------------------------------------------------------------- datasets


class SyntheticDataset(Sequence):
    """Lazily rendered synthetic videos with perspective ground truth.

    Items are (Video, labels) with labels ``mos``, ``mos_a`` (= a_gt),
    ``mos_t`` (= t_gt), ``a_gt`` and ``t_gt``.
    """

    def __init__(self, specs: Sequence[SynthSpec], mos: Sequence[float], cache: bool = False):
        if len(specs) != len(mos):
            raise ValueError("specs and mos must be aligned")
        self.specs = list(specs)
        self.mos = [float(m) for m in mos]
        self.cache = cache
        self._frames: dict[int, np.ndarray] = {}

    def video(self, i: int) -> Video:
        # rendered frames are already quantized to 8 bits, so a uint8 cache is lossless
        if not self.cache:
            return synth_video(self.specs[i])
        if i not in self._frames:
            v = synth_video(self.specs[i])
            self._frames[i] = to_uint8(v.frames)
            return v
        spec = self.specs[i]
        return Video(self._frames[i] / 255.0, spec.fps, spec.video_id, synth_metadata(spec))

    def __len__(self) -> int:
        return len(self.specs)

    def labels(self, i: int) -> dict[str, float]:
        spec = self.specs[i]
        return {
            "mos": self.mos[i],
            "mos_a": spec.aesthetic_level,
            "mos_t": 1.0 - _degradation(spec),
            "a_gt": spec.aesthetic_level,
            "t_gt": 1.0 - _degradation(spec),
        }

    def __getitem__(self, i):
        if isinstance(i, slice):
            return [self[j] for j in range(*i.indices(len(self)))]
        return self.video(i), self.labels(i)

    def subset(self, indices) -> "SyntheticDataset":
        indices = list(indices)
        return SyntheticDataset([self.specs[i] for i in indices], [self.mos[i] for i in indices], self.cache)


def _degradation(spec: SynthSpec) -> float:
    return normalized_degradation(spec.blur_sigma, spec.noise_sigma, spec.jitter_px)


def disentangle_dataset(n: int, seed: int = 0, size: int = 256, frames: int = 8,
                        w_a: float = 0.428, mos_noise: float = 0.05, cache: bool = False) -> SyntheticDataset:
    """Videos where a_gt sets composition and t_gt sets blur/noise.

    The degradation budget 1 - t_gt is split between blur and noise at a
    random proportion; MOS = w_a * a_gt + (1 - w_a) * t_gt + N(0, mos_noise).
    """
    rng = keyed_rng(seed, "disentangle-dataset")
    a = rng.uniform(0.0, 1.0, size=n)
    t = rng.uniform(0.0, 1.0, size=n)
    split = rng.uniform(0.0, 1.0, size=n)
    eps = rng.normal(0.0, mos_noise, size=n)
    specs, mos = [], []
    for i in range(n):
        d = 1.0 - t[i]
        blur = float(split[i] * d * BLUR_FULL)
        noise = float((1.0 - split[i]) * d * NOISE_FULL)
        spec = SynthSpec("thirds_composition", aesthetic_level=float(a[i]), blur_sigma=blur,
                         noise_sigma=noise, T=frames, H=size, W=size, seed=int(rng.integers(2**62)),
                         id=f"syn{seed}-{i:05d}")
        specs.append(spec)
        mos.append(float(w_a * a[i] + (1.0 - w_a) * (1.0 - _degradation(spec)) + eps[i]))
    return SyntheticDataset(specs, mos, cache)


def toy_view_config(**overrides) -> ViewConfig:
    """Desk-scale views: 64x64 aesthetic, 32x32 over-downsampled, 4x4 grid of 16 px fragments."""
    base = ViewConfig(aes_size=64, aes_over_size=32, aes_frames=8, frag_grid=4, frag_patch=16,
                      tech_clip_len=8, tech_clips_infer=3)
    return replace(base, **overrides)


LABEL_FILE = "labels.csv"
LABEL_COLUMNS = ("mos", "mos_a", "mos_t", "a_gt", "t_gt")


class FolderDataset(Sequence):
    """Videos on disk listed in ``labels.csv`` (``video_id,path,<label columns>``).

    Paths are relative to the folder; empty label cells are treated as missing.
    """

    def __init__(self, root):
        self.root = Path(root)
        rows = read_csv(self.root / LABEL_FILE)
        if not rows:
            raise ConfigError(f"{self.root / LABEL_FILE} lists no videos")
        if "video_id" not in rows[0] or "path" not in rows[0]:
            raise ConfigError(f"{self.root / LABEL_FILE} needs video_id and path columns")
        self.rows = rows

    def __len__(self) -> int:
        return len(self.rows)

    def labels(self, i: int) -> dict[str, float]:
        row = self.rows[i]
        return {k: float(row[k]) for k in LABEL_COLUMNS if row.get(k) not in (None, "")}

    def video(self, i: int) -> Video:
        return load_video(self.root / self.rows[i]["path"])

    def __getitem__(self, i):
        return self.video(i), self.labels(i)


def write_folder_dataset(dataset: SyntheticDataset, root) -> list[str]:
    """Save every video of ``dataset`` under ``root/videos/<id>`` plus ``labels.csv``."""
    root = Path(root)
    rows = []
    for i in range(len(dataset)):
        v = dataset.video(i)
        rel = f"videos/{v.id}"
        save_video(v, root / rel)
        lab = dataset.labels(i)
        rows.append([v.id, rel, *(lab[k] for k in LABEL_COLUMNS)])
    write_csv(root / LABEL_FILE, ["video_id", "path", *LABEL_COLUMNS], rows)
    return [r[0] for r in rows]
