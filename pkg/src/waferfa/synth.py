"""Procedural wafer-map rendering and dataset writing.

Nine generators produce the full defect-class taxonomy on the 256x256 grid:

* scratch: linear band 1-3 die wide (perpendicular width) at a random angle
  spanning 60-90% of the wafer diameter
* particle_contamination: per-die Bernoulli draws from a spatially varying
  intensity field (sum of three random 2-D cosines), the discrete analog of
  an inhomogeneous Poisson point process
* edge_crack: dense arc in the outer 8-12% of the wafer radius
* center_cluster: Gaussian blob at the center, sigma 0.08-0.18 R, truncated
  at 0.24 R so the cluster always sits inside the 25%-radius disc
* local_cluster: Gaussian blob at a random off-center location
* ring_pattern: annulus at 0.55-0.80 R, width 0.05-0.12 R
* random_defects: homogeneous Bernoulli noise at 2-8% density
* near_full_wafer: Bernoulli at 62-90% density
* no_defect: background noise only, always below 2% density

Non-background classes also receive a small random failing-die background,
capped at 2% of the primary defect's cell count (and confined to the outer
annulus for edge_crack) so the per-class geometry guarantees hold for every
sample. Everything is driven by one numpy Generator per call: identical
(class, params, seed) give bit-identical maps.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .features import spatial_stats
from .knowledge import KnowledgeBase
from .narrative import SECTION_DESCRIPTION, TemplateNarrative
from .wafermap import GRID_SIZE, WaferMap, die_angle, normalized_radius, wafer_mask

CLASSES = (
    "scratch",
    "particle_contamination",
    "edge_crack",
    "center_cluster",
    "local_cluster",
    "ring_pattern",
    "random_defects",
    "near_full_wafer",
    "no_defect",
)

SEVERITIES = ("CRITICAL", "MAJOR", "MINOR", "NONE")

# class -> ((severity, probability), ...)
SEVERITY_TABLE: dict[str, tuple[tuple[str, float], ...]] = {
    "near_full_wafer": (("CRITICAL", 1.0),),
    "no_defect": (("NONE", 1.0),),
    "scratch": (("MAJOR", 0.65), ("MINOR", 0.35)),
    "edge_crack": (("MAJOR", 0.65), ("MINOR", 0.35)),
    "center_cluster": (("MAJOR", 0.80), ("MINOR", 0.20)),
    "ring_pattern": (("MAJOR", 0.80), ("MINOR", 0.20)),
    "particle_contamination": (("MAJOR", 0.40), ("MINOR", 0.60)),
    "local_cluster": (("MAJOR", 0.40), ("MINOR", 0.60)),
    "random_defects": (("MINOR", 0.85), ("MAJOR", 0.15)),
}

# deterministic equipment assignment per class (documented id scheme)
EQUIPMENT_BY_CLASS = {
    "scratch": "EQ-INSP-01",
    "center_cluster": "EQ-CVD-03",
    "ring_pattern": "EQ-ETCH-07",
    "edge_crack": "EQ-DICE-12",
    "no_defect": "EQ-LITHO-02",
    "particle_contamination": "EQ-IMPL-05",
    "local_cluster": "EQ-ETCH-09",
    "random_defects": "EQ-PVD-04",
    "near_full_wafer": "EQ-WET-08",
}

# image counts per class (synthetic analog of the published table)
PRESET_PAPER_SYNTHETIC = {"scratch": 112, "particle_contamination": 106, "edge_crack": 100}
PRESET_FULL_9CLASS = {
    "scratch": 112,
    "particle_contamination": 106,
    "edge_crack": 100,
    "center_cluster": 106,
    "local_cluster": 100,
    "ring_pattern": 94,
    "random_defects": 106,
    "near_full_wafer": 94,
    "no_defect": 112,
}
# published per-class validation counts (790 train / 140 val)
VAL_COUNTS_FULL_9CLASS = {
    "scratch": 18,
    "particle_contamination": 10,
    "edge_crack": 16,
    "center_cluster": 13,
    "local_cluster": 21,
    "ring_pattern": 23,
    "random_defects": 13,
    "near_full_wafer": 17,
    "no_defect": 9,
}
VAL_COUNTS_PAPER_SYNTHETIC = {"scratch": 18, "particle_contamination": 10, "edge_crack": 16}

PRESETS = {
    "paper-synthetic": (PRESET_PAPER_SYNTHETIC, VAL_COUNTS_PAPER_SYNTHETIC),
    "full-9class": (PRESET_FULL_9CLASS, VAL_COUNTS_FULL_9CLASS),
}

MANIFEST_NAME = "manifest.json"
RECORDS_NAME = "records.jsonl"
ANNOTATION_FIELDS = (
    "defect_class",
    "modality",
    "severity",
    "description",
    "equipment_id",
    "lot_id",
    "wafer_id",
    "source",
)


class UnknownClassError(ValueError):
    pass


class CorruptManifestError(Exception):
    pass


@dataclass(frozen=True)
class GeneratorParams:
    """Per-class parameter ranges; defaults follow the documented recipes."""

    scratch_width: tuple[float, float] = (1.0, 3.0)
    scratch_span: tuple[float, float] = (0.6, 0.9)
    poisson_base_density: tuple[float, float] = (0.01, 0.05)
    poisson_cosines: int = 3
    edge_crack_depth: tuple[float, float] = (0.08, 0.12)
    edge_arc_extent: tuple[float, float] = (np.pi / 9, np.pi / 2)
    center_sigma: tuple[float, float] = (0.08, 0.18)
    center_clip_radius: float = 0.24
    local_sigma: tuple[float, float] = (0.05, 0.12)
    local_offset: tuple[float, float] = (0.30, 0.65)
    ring_radius: tuple[float, float] = (0.55, 0.80)
    ring_width: tuple[float, float] = (0.05, 0.12)
    random_density: tuple[float, float] = (0.02, 0.08)
    near_full_density: tuple[float, float] = (0.62, 0.90)
    no_defect_density: tuple[float, float] = (0.001, 0.015)
    background_fraction: float = 0.02  # of the primary defect's cell count

    def __post_init__(self) -> None:
        def _within(name, rng, bounds):
            if not (bounds[0] <= rng[0] <= rng[1] <= bounds[1]):
                raise ValueError(f"{name} range {rng} outside physical bounds {bounds}")

        _within("scratch_width", self.scratch_width, (1.0, 3.0))
        _within("scratch_span", self.scratch_span, (0.6, 0.9))
        _within("edge_crack_depth", self.edge_crack_depth, (0.08, 0.12))


DEFAULT_PARAMS = GeneratorParams()

_R = GRID_SIZE / 2.0


def _die_centers() -> tuple[np.ndarray, np.ndarray]:
    idx = np.arange(GRID_SIZE) + 0.5
    yy = np.repeat(idx[:, None], GRID_SIZE, axis=1)
    xx = np.repeat(idx[None, :], GRID_SIZE, axis=0)
    return yy, xx


_YY, _XX = _die_centers()


def _background(rng: np.random.Generator, fails: np.ndarray, params: GeneratorParams, region: np.ndarray | None = None) -> np.ndarray:
    """Sprinkle a few extra failing die without breaking geometry invariants."""
    budget = int(params.background_fraction * fails.sum())
    if budget <= 0:
        return fails
    count = int(rng.integers(0, budget + 1))
    if count == 0:
        return fails
    candidates = np.logical_and(wafer_mask(), ~fails)
    if region is not None:
        candidates = np.logical_and(candidates, region)
    coords = np.argwhere(candidates)
    if len(coords) == 0:
        return fails
    picks = coords[rng.choice(len(coords), size=min(count, len(coords)), replace=False)]
    out = fails.copy()
    out[picks[:, 0], picks[:, 1]] = True
    return out


def _render_scratch(rng, params):
    angle = rng.uniform(0.0, np.pi)
    span_frac = rng.uniform(*params.scratch_span)
    width = rng.uniform(*params.scratch_width)
    offset = rng.uniform(-0.2, 0.2) * _R
    direction = np.array([np.cos(angle), np.sin(angle)])
    normal = np.array([-np.sin(angle), np.cos(angle)])
    center = np.array([_R, _R]) + offset * normal
    rel_y = _YY - center[0]
    rel_x = _XX - center[1]
    along = rel_y * direction[0] + rel_x * direction[1]
    perp = rel_y * normal[0] + rel_x * normal[1]
    band = (
        (np.abs(perp) <= width / 2.0)
        & (np.abs(along) <= span_frac * _R)
        & wafer_mask()
    )
    fails = _background(rng, band, params)
    info = {
        "angle": float(angle),
        "width": float(width),
        "span_fraction": float(span_frac),
        "offset": float(offset),
        "band_cells": int(band.sum()),
    }
    return fails, info


def _render_particle(rng, params):
    base = rng.uniform(*params.poisson_base_density)
    norm = np.stack([_YY / GRID_SIZE, _XX / GRID_SIZE])
    fld = np.zeros((GRID_SIZE, GRID_SIZE))
    for _ in range(params.poisson_cosines):
        freq = rng.uniform(0.5, 2.0, size=2)
        phase = rng.uniform(0, 2 * np.pi)
        amp = rng.uniform(0.5, 1.0)
        fld += amp * np.cos(2 * np.pi * (freq[0] * norm[0] + freq[1] * norm[1]) + phase)
    intensity = np.exp(fld)
    intensity *= base / intensity[wafer_mask()].mean()
    intensity = np.clip(intensity, 0.0, 0.6)
    fails = (rng.random((GRID_SIZE, GRID_SIZE)) < intensity) & wafer_mask()
    return fails, {"base_density": float(base)}


def _render_edge_crack(rng, params):
    depth = rng.uniform(*params.edge_crack_depth)
    inner = 1.0 - depth
    phi0 = rng.uniform(0, 2 * np.pi)
    extent = rng.uniform(*params.edge_arc_extent)
    density = rng.uniform(0.7, 1.0)
    wrapped = np.abs((die_angle() - phi0 + np.pi) % (2 * np.pi) - np.pi)
    arc = (normalized_radius() >= inner) & (wrapped <= extent / 2.0) & wafer_mask()
    fails = arc & (rng.random((GRID_SIZE, GRID_SIZE)) < density)
    outer_band = normalized_radius() >= 0.88
    fails = _background(rng, fails, params, region=outer_band)
    info = {"inner_radius": float(inner), "arc_center": float(phi0), "arc_extent": float(extent)}
    return fails, info


def _gaussian_blob(rng, center_yx, sigma_die, peak, clip_mask=None):
    d2 = (_YY - center_yx[0]) ** 2 + (_XX - center_yx[1]) ** 2
    prob = peak * np.exp(-d2 / (2.0 * sigma_die**2))
    blob = (rng.random((GRID_SIZE, GRID_SIZE)) < prob) & wafer_mask()
    if clip_mask is not None:
        blob &= clip_mask
    return blob


def _render_center_cluster(rng, params):
    sigma = rng.uniform(*params.center_sigma)
    peak = rng.uniform(0.6, 0.95)
    clip = normalized_radius() <= params.center_clip_radius
    fails = _gaussian_blob(rng, (_R, _R), sigma * _R, peak, clip_mask=clip)
    fails = _background(rng, fails, params)
    return fails, {"sigma": float(sigma), "peak": float(peak)}


def _render_local_cluster(rng, params):
    sigma = rng.uniform(*params.local_sigma)
    peak = rng.uniform(0.6, 0.95)
    offset_r = rng.uniform(*params.local_offset)
    phi = rng.uniform(0, 2 * np.pi)
    center = (_R + offset_r * _R * np.sin(phi), _R + offset_r * _R * np.cos(phi))
    fails = _gaussian_blob(rng, center, sigma * _R, peak)
    fails = _background(rng, fails, params)
    return fails, {"sigma": float(sigma), "offset_radius": float(offset_r), "offset_angle": float(phi)}


def _render_ring(rng, params):
    r_mid = rng.uniform(*params.ring_radius)
    width = rng.uniform(*params.ring_width)
    density = rng.uniform(0.5, 0.9)
    r1, r2 = r_mid - width / 2.0, r_mid + width / 2.0
    band = (normalized_radius() >= r1) & (normalized_radius() <= r2) & wafer_mask()
    fails = band & (rng.random((GRID_SIZE, GRID_SIZE)) < density)
    fails = _background(rng, fails, params)
    return fails, {"r1": float(r1), "r2": float(r2), "density": float(density)}


def _render_bernoulli(rng, density_range):
    density = rng.uniform(*density_range)
    fails = (rng.random((GRID_SIZE, GRID_SIZE)) < density) & wafer_mask()
    return fails, {"density": float(density)}


_RENDERERS = {
    "scratch": _render_scratch,
    "particle_contamination": _render_particle,
    "edge_crack": _render_edge_crack,
    "center_cluster": _render_center_cluster,
    "local_cluster": _render_local_cluster,
    "ring_pattern": _render_ring,
    "random_defects": lambda rng, p: _render_bernoulli(rng, p.random_density),
    "near_full_wafer": lambda rng, p: _render_bernoulli(rng, p.near_full_density),
    "no_defect": lambda rng, p: _render_bernoulli(rng, p.no_defect_density),
}


def render_info(defect_class: str, seed: int, params: GeneratorParams | None = None) -> tuple[WaferMap, dict]:
    """Render one map plus the generator's own geometry parameters."""
    if defect_class not in _RENDERERS:
        raise UnknownClassError(f"unknown defect class {defect_class!r}")
    params = params or DEFAULT_PARAMS
    rng = np.random.default_rng(seed)
    fails, info = _RENDERERS[defect_class](rng, params)
    info["defect_class"] = defect_class
    info["seed"] = int(seed)
    return WaferMap.from_fail_mask(fails), info


def render(defect_class: str, seed: int, params: GeneratorParams | None = None) -> WaferMap:
    return render_info(defect_class, seed, params)[0]


def assign_severity(defect_class: str, wafer_map: WaferMap | None, seed: int) -> str:
    """Sample a severity label from the per-class distribution.

    wafer_map is accepted for interface parity with the renderer but the
    published distribution depends only on the class; the two deterministic
    rows (near_full_wafer, no_defect) need no draw at all.
    """
    if defect_class not in SEVERITY_TABLE:
        raise UnknownClassError(f"unknown defect class {defect_class!r}")
    table = SEVERITY_TABLE[defect_class]
    if len(table) == 1:
        return table[0][0]
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5E7]))
    draw = rng.random()
    cumulative = 0.0
    for severity, prob in table:
        cumulative += prob
        if draw < cumulative:
            return severity
    return table[-1][0]


def sample_seed(dataset_seed: int, defect_class: str, index: int) -> int:
    class_idx = CLASSES.index(defect_class)
    return int(np.random.SeedSequence([dataset_seed, class_idx, index]).generate_state(1)[0])


def _principal_line(coords: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    centroid = coords.mean(axis=0)
    centered = coords - centroid
    cov = centered.T @ centered / len(coords)
    _, eigvecs = np.linalg.eigh(cov)
    return centroid, eigvecs[:, -1]


def band_concentration(wmap: WaferMap) -> float:
    """Fraction of failing die within a 3-die-wide strip of the best-fit line.

    The line is a trimmed principal-axis fit (one refit pass keeping die
    within 5 die of the first fit, so a handful of stray background die
    cannot tilt it). The strip half-width is 1.5 die (the maximum band
    half-width) plus 0.5 die of die-center quantization slack.
    """
    fails = wmap.fail_mask
    if fails.sum() < 2:
        return 0.0
    coords = np.argwhere(fails).astype(float)
    centroid, axis = _principal_line(coords)
    perp = (coords - centroid) @ np.array([-axis[1], axis[0]])
    inliers = coords[np.abs(perp) <= 5.0]
    if len(inliers) >= 2:
        centroid, axis = _principal_line(inliers)
    perp = (coords - centroid) @ np.array([-axis[1], axis[0]])
    return float((np.abs(perp) <= 2.0).mean())


def min_fail_radius(wmap: WaferMap) -> float:
    fails = wmap.fail_mask
    if not fails.any():
        return 1.0
    return float(normalized_radius()[fails].min())


def annulus_concentration(wmap: WaferMap, r1: float, r2: float) -> float:
    fails = wmap.fail_mask
    if not fails.any():
        return 0.0
    radius = normalized_radius()[fails]
    return float(((radius >= r1 - 1.0 / GRID_SIZE) & (radius <= r2 + 1.0 / GRID_SIZE)).mean())


def center_concentration(wmap: WaferMap, radius: float = 0.25) -> float:
    fails = wmap.fail_mask
    if not fails.any():
        return 0.0
    return float((normalized_radius()[fails] <= radius).mean())


# --- dataset writing ---------------------------------------------------------

_HUMAN_TURN = (
    "<image>\nYou are a semiconductor failure-analysis engineer. Describe the "
    "defect pattern on this wafer map, its spatial distribution, the most "
    "likely physical mechanism, and the recommended corrective action."
)


def _split_ids(ids_by_class: dict[str, list[str]], val_counts: dict[str, int], rng: np.random.Generator):
    train, val = [], []
    for defect_class in sorted(ids_by_class):
        ids = list(ids_by_class[defect_class])
        n_val = min(val_counts.get(defect_class, 0), len(ids))
        order = rng.permutation(len(ids))
        chosen = {ids[i] for i in order[:n_val]}
        val.extend(sorted(chosen))
        train.extend(i for i in ids if i not in chosen)
    return train, val


def write_dataset(
    counts: dict[str, int],
    out_dir: str | Path,
    seed: int = 0,
    val_counts: dict[str, int] | None = None,
    val_fraction: float = 0.15,
    params: GeneratorParams | None = None,
) -> dict:
    """Render counts[class] samples per class and write images + annotations.

    Produces images/<class>/<class>_<k>.png, records.jsonl (one annotation
    per line), and manifest.json with the stratified train/val split. When
    val_counts is omitted, each class contributes round(count * val_fraction)
    validation samples.
    """
    out_dir = Path(out_dir)
    unknown = set(counts) - set(CLASSES)
    if unknown:
        raise UnknownClassError(f"unknown classes in spec: {sorted(unknown)}")
    for defect_class, count in counts.items():
        if count < 0:
            raise ValueError(f"negative count for {defect_class}")
    out_dir.mkdir(parents=True, exist_ok=True)
    narrative = TemplateNarrative(KnowledgeBase.load_default())

    if val_counts is None:
        val_counts = {c: round(n * val_fraction) for c, n in counts.items()}

    records = []
    manifest_samples = []
    ids_by_class: dict[str, list[str]] = {}
    lot_serial = 0
    for defect_class in CLASSES:
        count = counts.get(defect_class, 0)
        if count == 0:
            continue
        image_dir = out_dir / "images" / defect_class
        image_dir.mkdir(parents=True, exist_ok=True)
        for k in range(count):
            s = sample_seed(seed, defect_class, k)
            wmap = render(defect_class, s, params)
            severity = assign_severity(defect_class, wmap, s)
            stats = spatial_stats(wmap)
            if k % 25 == 0:
                lot_serial += 1
            sample_id = f"{defect_class}_{k:04d}"
            image_rel = f"images/{defect_class}/{sample_id}.png"
            wmap.save_png(out_dir / image_rel)
            description = narrative.narrate(
                SECTION_DESCRIPTION,
                {"defect_class": defect_class, "spatial_stats": stats},
            )
            record = {
                "sample_id": sample_id,
                "image": image_rel,
                "defect_class": defect_class,
                "modality": "wafer_map",
                "severity": severity,
                "description": description,
                "equipment_id": EQUIPMENT_BY_CLASS[defect_class],
                "lot_id": f"LOT-2024-{lot_serial:03d}",
                "wafer_id": f"W{(k % 25) + 1:02d}",
                "source": "synthetic",
                "seed": s,
                "conversations": [
                    {"from": "human", "value": _HUMAN_TURN},
                    {"from": "assistant", "value": description},
                ],
            }
            records.append(record)
            manifest_samples.append(
                {
                    "sample_id": sample_id,
                    "image": image_rel,
                    "defect_class": defect_class,
                    "severity": severity,
                    "source": "synthetic",
                    "seed": s,
                }
            )
            ids_by_class.setdefault(defect_class, []).append(sample_id)

    split_rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5911]))
    train_ids, val_ids = _split_ids(ids_by_class, val_counts, split_rng)

    with open(out_dir / RECORDS_NAME, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record) + "\n")

    manifest = {
        "format_version": 1,
        "seed": seed,
        "counts": {c: counts.get(c, 0) for c in CLASSES if counts.get(c, 0)},
        "total": len(records),
        "samples": manifest_samples,
        "split": {"train": train_ids, "val": val_ids},
    }
    with open(out_dir / MANIFEST_NAME, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return manifest


def load_manifest(dataset_dir: str | Path) -> dict:
    path = Path(dataset_dir) / MANIFEST_NAME
    try:
        with open(path, "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise CorruptManifestError(f"cannot read {path}: {exc}") from exc
    for key in ("samples", "split", "total"):
        if key not in manifest:
            raise CorruptManifestError(f"{path}: missing key {key!r}")
    return manifest


def dataset_stats(dataset_dir: str | Path) -> dict:
    """Aggregate per-class/per-severity/per-source counts from a manifest."""
    manifest = load_manifest(dataset_dir)
    per_class: dict[str, int] = {}
    per_severity: dict[str, int] = {}
    per_source: dict[str, int] = {}
    for sample in manifest["samples"]:
        per_class[sample["defect_class"]] = per_class.get(sample["defect_class"], 0) + 1
        per_severity[sample["severity"]] = per_severity.get(sample["severity"], 0) + 1
        per_source[sample["source"]] = per_source.get(sample["source"], 0) + 1
    total = len(manifest["samples"])
    if total != manifest["total"]:
        raise CorruptManifestError("manifest total does not match sample list")
    return {
        "total": total,
        "per_class": dict(sorted(per_class.items())),
        "per_severity": dict(sorted(per_severity.items())),
        "per_source": dict(sorted(per_source.items())),
        "train": len(manifest["split"]["train"]),
        "val": len(manifest["split"]["val"]),
    }
