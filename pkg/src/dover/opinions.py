"""Subjective opinions: records, MOS aggregation, golden checks and a rater simulator."""
from __future__ import annotations

from collections import defaultdict
from collections.abc import Iterable, Sequence
from dataclasses import asdict, dataclass, field

import numpy as np

from ._io import read_csv, write_csv
from .fusion import FusionFit, fit_fusion_weight
from .metrics import krocc, srocc
from .rng import keyed_rng

IMPACT_LEVELS = (0.0, 0.25, 0.5, 0.75, 1.0)
SCORE_MIN, SCORE_MAX, SCORE_STEP = 1.0, 5.0, 0.5
OPINION_HEADER = ["video_id", "rater_id", "aesthetic", "technical", "overall", "technical_impact"]
MOS_HEADER = ["video_id", "mos_a", "mos_t", "mos", "sigma", "mean_impact", "n_raters"]
GOLDEN_TOLERANCE = 1.5
GOLDEN_MAX_FRACTION = 0.2


@dataclass(frozen=True)
class OpinionRecord:
    video_id: str
    rater_id: str
    aesthetic: float
    technical: float
    overall: float
    technical_impact: float

    def __post_init__(self):
        for name in ("aesthetic", "technical", "overall"):
            s = getattr(self, name)
            if not (np.isfinite(s) and SCORE_MIN <= s <= SCORE_MAX):
                raise ValueError(f"{name} score {s} outside [{SCORE_MIN}, {SCORE_MAX}] "
                                 f"(video {self.video_id}, rater {self.rater_id})")
        if self.technical_impact not in IMPACT_LEVELS:
            raise ValueError(f"technical_impact {self.technical_impact} not in {IMPACT_LEVELS}")


@dataclass(frozen=True)
class MOSRecord:
    video_id: str
    mos_a: float
    mos_t: float
    mos: float
    sigma: float
    mean_impact: float
    n_raters: int

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class RaterProfile:
    rater_id: str
    impact_mean: float = 0.572
    impact_spread: float = 0.15
    noise_sigma: float = 0.1
    harshness: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.impact_mean <= 1.0:
            raise ValueError("impact_mean must lie in [0, 1]")
        if self.impact_spread < 0 or self.noise_sigma < 0:
            raise ValueError("impact_spread and noise_sigma must be non-negative")


# ------------------------------------------------------------------ aggregation


def aggregate_mos(records: Iterable[OpinionRecord]) -> list[MOSRecord]:
    """Per-video means of the three scores; sigma is the population std of overall.

    Output is sorted by video id, so it does not depend on record order
    beyond floating-point summation.
    """
    by_video: dict[str, list[OpinionRecord]] = defaultdict(list)
    for r in records:
        by_video[r.video_id].append(r)
    if not by_video:
        raise ValueError("no opinion records to aggregate")
    out = []
    for vid in sorted(by_video):
        # sort by rater so the float sums are order-independent
        rs = sorted(by_video[vid], key=lambda r: r.rater_id)
        overall = np.array([r.overall for r in rs])
        out.append(MOSRecord(
            video_id=vid,
            mos_a=float(np.mean([r.aesthetic for r in rs])),
            mos_t=float(np.mean([r.technical for r in rs])),
            mos=float(overall.mean()),
            sigma=float(overall.std(ddof=0)),
            mean_impact=float(np.mean([r.technical_impact for r in rs])),
            n_raters=len(rs),
        ))
    return out


@dataclass
class GoldenResult:
    passed: bool
    deviations: dict[str, float]
    n_failed: int
    fraction_failed: float


def golden_check(rater_records: Iterable[OpinionRecord], golden: Sequence[tuple],
                 max_fraction: float = GOLDEN_MAX_FRACTION) -> GoldenResult:
    """Screen one rater against golden videos.

    ``golden`` holds ``(video_id, reference)`` or ``(video_id, reference,
    tolerance)`` entries; tolerance defaults to 1.5. The rater fails when more
    than ``max_fraction`` of golden overall scores deviate by more than their
    tolerance.
    """
    if not golden:
        raise ValueError("golden set is empty")
    seen: dict[str, float] = {}
    for r in rater_records:
        seen.setdefault(r.video_id, r.overall)
    deviations, n_failed = {}, 0
    for entry in golden:
        vid, ref = entry[0], float(entry[1])
        tol = float(entry[2]) if len(entry) > 2 else GOLDEN_TOLERANCE
        if vid not in seen:
            raise ValueError(f"rater did not rate golden video {vid!r}")
        dev = seen[vid] - ref
        deviations[vid] = dev
        n_failed += abs(dev) > tol
    frac = n_failed / len(golden)
    return GoldenResult(frac <= max_fraction, deviations, n_failed, frac)


def screen_raters(records: Sequence[OpinionRecord], golden: Sequence[tuple],
                  max_fraction: float = GOLDEN_MAX_FRACTION) -> tuple[list[OpinionRecord], dict[str, GoldenResult]]:
    """Drop all records of raters failing :func:`golden_check`; golden videos
    themselves are removed from the kept records."""
    by_rater: dict[str, list[OpinionRecord]] = defaultdict(list)
    for r in records:
        by_rater[r.rater_id].append(r)
    results = {rid: golden_check(rs, golden, max_fraction) for rid, rs in sorted(by_rater.items())}
    golden_ids = {g[0] for g in golden}
    kept = [r for r in records if results[r.rater_id].passed and r.video_id not in golden_ids]
    return kept, results


# ------------------------------------------------------------------- simulation


def q5(x):
    """Clip to [1, 5] and round to the nearest half point."""
    return np.round(np.clip(x, SCORE_MIN, SCORE_MAX) / SCORE_STEP) * SCORE_STEP


def quantize_impact(x):
    return np.clip(np.round(np.asarray(x) * 4.0) / 4.0, 0.0, 1.0)


def sample_latents(n_videos: int, seed: int = 0) -> np.ndarray:
    """(n, 2) array of (A_gt, T_gt), independent uniform on [0, 1]."""
    return keyed_rng(seed, "latents").uniform(0.0, 1.0, size=(n_videos, 2))


def make_profiles(n_raters: int, impact_mean: float = 0.572, impact_spread: float = 0.15,
                  noise_sigma: float = 0.1, harshness_sigma: float = 0.0, seed: int = 0) -> list[RaterProfile]:
    """A panel of identical-mean raters, optionally with random per-rater bias."""
    rng = keyed_rng(seed, "profiles")
    harsh = rng.normal(0.0, harshness_sigma, size=n_raters) if harshness_sigma > 0 else np.zeros(n_raters)
    return [RaterProfile(f"r{i:03d}", impact_mean, impact_spread, noise_sigma, float(harsh[i]))
            for i in range(n_raters)]


def simulate_study(n_videos: int, profiles: Sequence[RaterProfile], latent=None, seed: int = 0,
                   video_ids: Sequence[str] | None = None) -> list[OpinionRecord]:
    """Synthetic opinions for every (video, rater) pair.

    With independent eps ~ N(0, noise_sigma) per prompt:
    aesthetic_raw = 4 A + 1 + eps_a, technical_raw = 4 T + 1 + eps_t and
    overall = q5(impact * technical_raw + (1 - impact) * aesthetic_raw + harshness + eps_o),
    where impact is a normal(impact_mean, impact_spread) draw clipped to
    [0, 1] and rounded to a quarter. Each pair uses its own keyed generator.
    """
    if not profiles:
        raise ValueError("at least one rater profile is required")
    latent = sample_latents(n_videos, seed) if latent is None else np.asarray(latent, dtype=np.float64)
    if latent.shape != (n_videos, 2):
        raise ValueError(f"latent must have shape ({n_videos}, 2), got {latent.shape}")
    if np.any((latent < 0) | (latent > 1)):
        raise ValueError("latent values must lie in [0, 1]")
    ids = list(video_ids) if video_ids is not None else [f"v{i:05d}" for i in range(n_videos)]
    records = []
    for i in range(n_videos):
        a_gt, t_gt = latent[i]
        for p in profiles:
            rng = keyed_rng(seed, "opinion", ids[i], p.rater_id)
            impact = float(quantize_impact(np.clip(rng.normal(p.impact_mean, p.impact_spread), 0.0, 1.0)))
            eps_a, eps_t, eps_o = rng.normal(0.0, 1.0, size=3) * p.noise_sigma
            aes_raw = 4.0 * a_gt + 1.0 + eps_a
            tech_raw = 4.0 * t_gt + 1.0 + eps_t
            overall = impact * tech_raw + (1.0 - impact) * aes_raw + p.harshness + eps_o
            records.append(OpinionRecord(ids[i], p.rater_id, float(q5(aes_raw)), float(q5(tech_raw)),
                                         float(q5(overall)), impact))
    return records


# ----------------------------------------------------------------------- report


@dataclass
class PerspectiveReport:
    """SROCC/KROCC against overall MOS for four score columns."""
    columns: list[str]
    rows: dict[str, list[float]]
    fit: FusionFit
    n_videos: int
    extra: dict = field(default_factory=dict)

    def value(self, row: str, column: str) -> float:
        return self.rows[row][self.columns.index(column)]

    def to_dict(self) -> dict:
        return {
            "columns": self.columns,
            "rows": self.rows,
            "fitted_w_a": self.fit.weights.w_a,
            "fitted_w_t": self.fit.weights.w_t,
            "n_videos": self.n_videos,
        }

    def to_markdown(self) -> str:
        lines = ["| | " + " | ".join(self.columns) + " |", "|---" * (len(self.columns) + 1) + "|"]
        for name, vals in self.rows.items():
            lines.append(f"| {name} | " + " | ".join(f"{v:.4f}" for v in vals) + " |")
        return "\n".join(lines) + "\n"


def perspective_report(mos_records: Sequence[MOSRecord]) -> PerspectiveReport:
    """Correlations of MOS_A, MOS_T, MOS_A+MOS_T and the fitted blend with MOS."""
    a = np.array([r.mos_a for r in mos_records])
    t = np.array([r.mos_t for r in mos_records])
    y = np.array([r.mos for r in mos_records])
    fit = fit_fusion_weight(a, t, y)
    w = fit.weights
    blend_name = f"{w.w_a:.3f}MOS_A+{w.w_t:.3f}MOS_T"
    scores = {"MOS_A": a, "MOS_T": t, "MOS_A+MOS_T": a + t, blend_name: w.w_a * a + w.w_t * t}
    columns = list(scores)
    rows = {
        "SROCC": [srocc(s, y) for s in scores.values()],
        "KROCC": [krocc(s, y) for s in scores.values()],
    }
    return PerspectiveReport(columns, rows, fit, len(mos_records))


# ------------------------------------------------------------------------- CSV


def write_opinions(path, records: Iterable[OpinionRecord]):
    return write_csv(path, OPINION_HEADER, ([getattr(r, k) for k in OPINION_HEADER] for r in records))


def read_opinions(path) -> list[OpinionRecord]:
    rows = read_csv(path)
    out = []
    for n, row in enumerate(rows, start=2):
        missing = [k for k in OPINION_HEADER if k not in row]
        if missing:
            raise ValueError(f"{path}: missing columns {missing}")
        try:
            out.append(OpinionRecord(row["video_id"], row["rater_id"], float(row["aesthetic"]),
                                     float(row["technical"]), float(row["overall"]),
                                     float(row["technical_impact"])))
        except ValueError as exc:
            raise ValueError(f"{path}:{n}: {exc}") from None
    return out


def write_mos(path, records: Iterable[MOSRecord]):
    return write_csv(path, MOS_HEADER, ([getattr(r, k) for k in MOS_HEADER] for r in records))


def read_mos(path) -> list[MOSRecord]:
    return [MOSRecord(r["video_id"], float(r["mos_a"]), float(r["mos_t"]), float(r["mos"]),
                      float(r["sigma"]), float(r["mean_impact"]), int(r["n_raters"]))
            for r in read_csv(path)]
