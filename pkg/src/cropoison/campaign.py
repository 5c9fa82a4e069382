"""Poison budgets, batch crafting, manifests and analysis reports.

A campaign is described by a JSON config (see ``CampaignConfig.from_dict``)
whose relative paths resolve against the config file's directory. Every
output image gets its own seed derived from ``(master_seed, index)``, so a
campaign is reproducible from its config alone and independent of ``jobs``.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import shutil
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .crafter import (
    DEFAULT_FREE_RATIO,
    DEFAULT_TEMPLATES,
    REGULAR,
    SUPPORT,
    TYPE_I,
    TYPE_II,
    BackgroundPool,
    CenterFraction,
    OptimalCenter,
    ReferenceObject,
    TriggerSpec,
    craft_multimodal_pair,
    craft_poisoned_image,
    craft_support_poisoned_image,
    load_rgb,
    multimodal_split,
    save_png,
    support_pairs,
)
from .errors import DomainError
from .geometry import LayoutKind, PoisonGeometry, validate
from .optimizer import RatioGrid, search_free_ratio
from .probability import breakpoints, p1, p2, total_p
from .simulator import CropPolicy, estimate_p, estimate_record

SCHEMA_VERSION = 1
SINGLE = "single"
MULTI = "multi"
IMAGE_EXTS = {".png", ".jpg", ".jpeg", ".bmp", ".webp", ".tif", ".tiff"}


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def budget(clean_size: int, ratio: float) -> int:
    """Number of poisons ``N`` such that ``N / (clean_size + N)`` is as close
    to ``ratio`` as a whole count allows: ``round(ratio * clean / (1 - ratio))``
    with halves rounded up."""
    if clean_size < 1:
        raise DomainError("clean_size must be >= 1")
    if not (0 <= ratio < 1):
        raise DomainError(f"poisoning ratio must lie in [0, 1), got {ratio}")
    return round_half_up(ratio * clean_size / (1.0 - ratio))


def realized_ratio(clean_size: int, n_poisoned: int) -> float:
    total = clean_size + n_poisoned
    return n_poisoned / total if total else 0.0


def split_support(n: int, lam: float) -> tuple[int, int]:
    """``(regular, support)`` with ``support = round(n * lam / (1 + lam))``."""
    if n < 0 or lam < 0:
        raise DomainError("need n >= 0 and lambda >= 0")
    support = round_half_up(n * lam / (1.0 + lam))
    return n - support, support


@dataclass
class TargetSpec:
    label: str
    class_id: str
    trigger: TriggerSpec
    class_name: str | None = None
    objects: list[dict] = field(default_factory=list)
    reference_images: list[str] = field(default_factory=list)
    support_images: list[str] = field(default_factory=list)

    @property
    def caption_name(self) -> str:
        return self.class_name or self.class_id


def _placement_from(d):
    d = d or {"kind": "center_fraction", "fraction": 0.25}
    kind = d.get("kind", "center_fraction")
    if kind == "optimal":
        return OptimalCenter()
    if kind == "center_fraction":
        return CenterFraction(float(d.get("fraction", 0.25)))
    raise DomainError(f"unknown placement kind {kind!r}")


def _placement_dict(p) -> dict:
    if isinstance(p, CenterFraction):
        return {"kind": "center_fraction", "fraction": p.fraction}
    return {"kind": "optimal"}


def _trigger_from(d: dict, base: Path) -> TriggerSpec:
    raster = None
    if d.get("image"):
        raster = load_rgb(base / d["image"])
    return TriggerSpec(
        kind=d.get("kind", "random"),
        l=int(d.get("l", 40)),
        trigger_id=d["trigger_id"],
        seed=int(d.get("seed", 0)),
        color=tuple(d.get("color", (255, 255, 255))),
        raster=raster,
        alpha=float(d.get("alpha", 0.2)),
    )


@dataclass
class CampaignConfig:
    """Campaign description.

    JSON keys: ``targets`` (list of ``{label, class_id, class_name,
    trigger: {kind, l, trigger_id, seed, color, image, alpha}, objects:
    [{image, mask}], reference_images, support_images}``), ``backgrounds``
    (directory), ``clean_size`` plus ``poisoning_ratio`` or an absolute
    ``num_poisons``, ``lambda``, ``modality`` (``single``/``multi``),
    ``placement`` (``{kind: optimal}`` or ``{kind: center_fraction,
    fraction}``), ``layout`` (``random`` or a layout name),
    ``free_ratio``, ``templates`` and ``master_seed``.
    """

    targets: list[TargetSpec]
    backgrounds: str | None = None
    clean_size: int | None = None
    poisoning_ratio: float | None = 0.005
    num_poisons: int | None = None
    lam: float = 0.0
    modality: str = SINGLE
    placement: object = field(default_factory=lambda: CenterFraction(0.25))
    layout: LayoutKind | None = None
    free_ratio: float = DEFAULT_FREE_RATIO
    templates: tuple[str, ...] = DEFAULT_TEMPLATES
    master_seed: int = 0
    base_dir: Path = field(default_factory=Path.cwd)
    raw: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.targets:
            raise DomainError("campaign needs at least one target")
        ids = [t.trigger.trigger_id for t in self.targets]
        if len(set(ids)) != len(ids):
            raise DomainError(f"trigger ids must be unique per target, got {ids}")
        if self.modality not in (SINGLE, MULTI):
            raise DomainError(f"unknown modality {self.modality!r}")
        if self.lam < 0:
            raise DomainError("lambda must be >= 0")
        if self.num_poisons is None:
            if self.clean_size is None or self.poisoning_ratio is None:
                raise DomainError("give num_poisons or clean_size with poisoning_ratio")
            if not (0 < self.poisoning_ratio < 1):
                raise DomainError("poisoning_ratio must lie in (0, 1)")
        elif self.num_poisons < 0:
            raise DomainError("num_poisons must be >= 0")

    def total_poisons(self) -> int:
        if self.num_poisons is not None:
            return int(self.num_poisons)
        return budget(self.clean_size, self.poisoning_ratio)

    @classmethod
    def from_dict(cls, d: dict, base_dir=None) -> "CampaignConfig":
        base = Path(base_dir) if base_dir is not None else Path.cwd()
        targets = []
        for i, t in enumerate(d.get("targets", [])):
            trig = dict(t.get("trigger", {}))
            trig.setdefault("trigger_id", f"trigger{i}")
            targets.append(
                TargetSpec(
                    label=t.get("label", f"task{i}"),
                    class_id=t["class_id"],
                    class_name=t.get("class_name"),
                    trigger=_trigger_from(trig, base),
                    objects=list(t.get("objects", [])),
                    reference_images=list(t.get("reference_images", [])),
                    support_images=list(t.get("support_images", [])),
                )
            )
        layout = d.get("layout", "random")
        return cls(
            targets=targets,
            backgrounds=d.get("backgrounds"),
            clean_size=d.get("clean_size"),
            poisoning_ratio=d.get("poisoning_ratio", 0.005),
            num_poisons=d.get("num_poisons"),
            lam=float(d.get("lambda", 0.0)),
            modality=d.get("modality", SINGLE),
            placement=_placement_from(d.get("placement")),
            layout=None if layout in (None, "random") else LayoutKind(layout),
            free_ratio=float(d.get("free_ratio", DEFAULT_FREE_RATIO)),
            templates=tuple(d.get("templates", DEFAULT_TEMPLATES)),
            master_seed=int(d.get("master_seed", 0)),
            base_dir=base,
            raw=d,
        )

    @classmethod
    def load(cls, path) -> "CampaignConfig":
        path = Path(path)
        with open(path) as fh:
            return cls.from_dict(json.load(fh), path.parent)

    def snapshot(self) -> dict:
        """Normalised, path-independent view of the config for the manifest."""
        return {
            "targets": [
                {
                    "label": t.label,
                    "class_id": t.class_id,
                    "class_name": t.caption_name,
                    "trigger": t.trigger.to_dict(),
                    "objects": t.objects,
                    "reference_images": t.reference_images,
                    "support_images": t.support_images,
                }
                for t in self.targets
            ],
            "backgrounds": self.backgrounds,
            "clean_size": self.clean_size,
            "poisoning_ratio": self.poisoning_ratio,
            "num_poisons": self.num_poisons,
            "lambda": self.lam,
            "modality": self.modality,
            "placement": _placement_dict(self.placement),
            "layout": self.layout.value if self.layout else "random",
            "free_ratio": self.free_ratio,
            "templates": list(self.templates),
            "master_seed": self.master_seed,
        }


@dataclass
class CampaignPools:
    """Loaded inputs, indexed like ``CampaignConfig.targets``."""

    backgrounds: BackgroundPool
    objects: list[list[ReferenceObject]]
    reference_images: list[list[tuple[str, np.ndarray]]] = field(default_factory=list)
    support_images: list[list[tuple[str, np.ndarray]]] = field(default_factory=list)

    @classmethod
    def load(cls, config: CampaignConfig) -> "CampaignPools":
        base = config.base_dir
        if not config.backgrounds:
            raise DomainError("config has no backgrounds directory")
        bgs = BackgroundPool.from_dir(base / config.backgrounds, seed=config.master_seed)
        objects, refs, sups = [], [], []
        for t in config.targets:
            objs = [
                ReferenceObject.from_files(
                    base / o["image"], base / o["mask"], t.class_id, o.get("object_id")
                )
                for o in t.objects
            ]
            objects.append(objs)
            refs.append([(Path(p).name, load_rgb(base / p)) for p in t.reference_images])
            sups.append([(Path(p).name, load_rgb(base / p)) for p in t.support_images])
        return cls(bgs, objects, refs, sups)


def image_seed(master_seed: int, index: int) -> int:
    return int(np.random.SeedSequence([master_seed, index]).generate_state(1)[0])


def plan_entries(config: CampaignConfig) -> list[tuple[int, str, int]]:
    """``(index, category, target)`` for every poison, in output order.

    Targets are assigned round-robin over the global index, so per-target
    totals differ by at most one and any remainder goes to the lowest
    target indices.
    """
    n = config.total_poisons()
    if config.modality == MULTI:
        first, second = multimodal_split(n)
        cats = [TYPE_I] * first + [TYPE_II] * second
    else:
        regular, support = split_support(n, config.lam)
        cats = [REGULAR] * regular + [SUPPORT] * support
    k = len(config.targets)
    return [(i, c, i % k) for i, c in enumerate(cats)]


def _check_pools(config: CampaignConfig, pools: CampaignPools, plan) -> None:
    needed = {(c, t) for _, c, t in plan}
    for c, t in needed:
        label = config.targets[t].label
        if c in (REGULAR, TYPE_II) and not pools.objects[t]:
            raise DomainError(f"target {label} has no reference objects")
        if c == SUPPORT:
            if not pools.support_images or not pools.support_images[t]:
                raise DomainError(f"target {label} has no support images")
            if not (pools.reference_images and pools.reference_images[t]) and not pools.objects[t]:
                raise DomainError(f"target {label} has no reference images")


def _reference_list(pools: CampaignPools, t: int) -> list[tuple[str, np.ndarray]]:
    if pools.reference_images and pools.reference_images[t]:
        return pools.reference_images[t]
    # Fall back to the segmented objects' bounding-box crops.
    return [(o.object_id, o.image) for o in pools.objects[t]]


def _craft_one(config: CampaignConfig, pools: CampaignPools, item, support_slot):
    index, category, t = item
    target = config.targets[t]
    seed = image_seed(config.master_seed, index)
    rng = np.random.default_rng(seed)
    if category == REGULAR:
        objs = pools.objects[t]
        obj = objs[int(rng.integers(len(objs)))]
        crafted = craft_poisoned_image(
            obj, pools.backgrounds, target.trigger, config.placement, config.layout, rng,
            config.free_ratio,
        )
    elif category == SUPPORT:
        refs = _reference_list(pools, t)
        sups = pools.support_images[t]
        i, j = support_slot
        crafted = craft_support_poisoned_image(
            refs[i][1], sups[j][1], refs[i][0], sups[j][0], target.class_id
        )
    else:
        obj = None
        if category == TYPE_II:
            objs = pools.objects[t]
            obj = objs[int(rng.integers(len(objs)))]
        crafted = craft_multimodal_pair(
            category, pools.backgrounds, target.caption_name, config.templates,
            trigger=target.trigger, obj=obj, rng=rng,
        )
    crafted.provenance.seed = seed
    crafted.class_id = target.class_id
    return crafted, seed


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class PoisonManifest:
    config: dict
    entries: list[dict]
    counts: dict[str, int]
    target_counts: dict[str, int]
    clean_size: int | None
    schema_version: int = SCHEMA_VERSION

    @property
    def n_poisoned(self) -> int:
        return len(self.entries)

    @property
    def realized_ratio(self) -> float | None:
        if self.clean_size is None:
            return None
        return realized_ratio(self.clean_size, self.n_poisoned)

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "config": self.config,
            "entries": self.entries,
            "counts": self.counts,
            "target_counts": self.target_counts,
            "stats": {
                "clean_size": self.clean_size,
                "poisoned_size": self.n_poisoned,
                "realized_ratio": self.realized_ratio,
            },
        }

    def write(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def read(cls, path) -> "PoisonManifest":
        with open(path) as fh:
            d = json.load(fh)
        if d.get("schema_version") != SCHEMA_VERSION:
            raise DomainError(f"unsupported manifest schema {d.get('schema_version')}")
        return cls(
            config=d["config"],
            entries=d["entries"],
            counts=d["counts"],
            target_counts=d["target_counts"],
            clean_size=d["stats"]["clean_size"],
            schema_version=d["schema_version"],
        )

    def audit(self, root) -> list[str]:
        """Files that are missing or whose digest differs from the record."""
        root = Path(root)
        bad = []
        for e in self.entries:
            p = root / e["file"]
            if not p.is_file() or sha256_file(p) != e["sha256"]:
                bad.append(e["file"])
        return bad


def run_campaign(
    config: CampaignConfig, pools: CampaignPools, out_dir, jobs: int = 1
) -> PoisonManifest:
    """Craft every budgeted poison into ``out_dir`` and write ``manifest.json``.

    Multi-modal campaigns also get a ``captions.tsv`` sidecar.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    plan = plan_entries(config)
    _check_pools(config, pools, plan)

    # Support pairs are fixed up front so each item is self-contained.
    slots = {}
    per_target = {}
    for index, c, t in plan:
        if c == SUPPORT:
            per_target.setdefault(t, []).append(index)
    for t, idxs in per_target.items():
        pairs = support_pairs(len(_reference_list(pools, t)), len(pools.support_images[t]), len(idxs))
        slots.update(zip(idxs, pairs))

    def work(item):
        crafted, seed = _craft_one(config, pools, item, slots.get(item[0]))
        name = f"{item[1]}_{item[0]:06d}_{seed}.png"
        path = out / name
        try:
            save_png(crafted.image, path)
        except OSError as exc:
            raise OSError(f"cannot write {path}: {exc}") from exc
        rec = crafted.record()
        target = config.targets[item[2]]
        rec.update(
            file=name,
            index=item[0],
            seed=seed,
            sha256=sha256_file(path),
            target={"label": target.label, "class_id": target.class_id, "trigger_id": target.trigger.trigger_id},
        )
        return rec

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as ex:
            entries = list(ex.map(work, plan))
    else:
        entries = [work(item) for item in plan]

    counts = {c: 0 for c in ((TYPE_I, TYPE_II) if config.modality == MULTI else (REGULAR, SUPPORT))}
    target_counts = {t.label: 0 for t in config.targets}
    for e in entries:
        counts[e["category"]] += 1
        target_counts[e["target"]["label"]] += 1

    if config.modality == MULTI:
        with open(out / "captions.tsv", "w", newline="") as fh:
            w = csv.writer(fh, delimiter="\t", lineterminator="\n")
            for e in entries:
                w.writerow([e["file"], e["caption"]])

    manifest = PoisonManifest(
        config=config.snapshot(),
        entries=entries,
        counts=counts,
        target_counts=target_counts,
        clean_size=config.clean_size,
    )
    manifest.write(out / "manifest.json")
    return manifest


@dataclass
class InjectReport:
    clean_size: int
    poisoned_size: int
    realized_ratio: float
    files: list[str]

    def to_dict(self) -> dict:
        return {
            "clean_size": self.clean_size,
            "poisoned_size": self.poisoned_size,
            "realized_ratio": self.realized_ratio,
            "files": self.files,
        }


def count_images(root) -> int:
    root = Path(root)
    if not root.exists():
        return 0
    return sum(1 for p in root.rglob("*") if p.is_file() and p.suffix.lower() in IMAGE_EXTS)


def inject(poison_dir, dataset_dir, layout: str = "flat") -> InjectReport:
    """Copy the poisons listed in ``poison_dir/manifest.json`` into a dataset.

    ``layout`` is ``"flat"`` (all files in ``dataset_dir``) or
    ``"class-folder"`` (each poison under ``dataset_dir/<class_id>/``).
    Captions, when present, are appended to ``dataset_dir/captions.tsv``.
    The clean size is the number of images already in the dataset.
    """
    if layout not in ("flat", "class-folder"):
        raise DomainError(f"unknown dataset layout {layout!r}")
    poison_dir, dataset_dir = Path(poison_dir), Path(dataset_dir)
    manifest = PoisonManifest.read(poison_dir / "manifest.json")
    bad = manifest.audit(poison_dir)
    if bad:
        raise DomainError(f"manifest audit failed for {len(bad)} file(s), first {bad[0]}")
    clean = count_images(dataset_dir)
    dataset_dir.mkdir(parents=True, exist_ok=True)
    placed = []
    captions = []
    for e in manifest.entries:
        rel = Path(e["target"]["class_id"]) / e["file"] if layout == "class-folder" else Path(e["file"])
        dest = dataset_dir / rel
        if dest.exists():
            raise DomainError(f"{dest} already exists")
        dest.parent.mkdir(parents=True, exist_ok=True)
        shutil.copyfile(poison_dir / e["file"], dest)
        placed.append(rel.as_posix())
        if "caption" in e:
            captions.append((rel.as_posix(), e["caption"]))
    if captions:
        with open(dataset_dir / "captions.tsv", "a", newline="") as fh:
            w = csv.writer(fh, delimiter="\t", lineterminator="\n")
            w.writerows(captions)
    return InjectReport(clean, len(placed), realized_ratio(clean, len(placed)), placed)


# Reports


def write_csv(path, rows: Sequence[dict]) -> None:
    if not rows:
        Path(path).write_text("")
        return
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


def write_jsonl(path, records: Sequence[dict]) -> None:
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")


def analyze_report(geom: PoisonGeometry, n_points: int = 50, quadrature=None) -> dict:
    """Total probability, breakpoints and a ``(s, p1, p2, p1*p2)`` table."""
    problems = validate(geom)
    if problems:
        raise DomainError("invalid geometry: " + "; ".join(problems))
    tp = total_p(geom, quadrature)
    bps = breakpoints(geom)
    grid = np.linspace(0.0, geom.S, n_points + 1)[1:]
    ss = sorted(set(float(s) for s in grid) | set(bps))
    rows = []
    for s in ss:
        a, b = p1(geom, s), p2(geom, s)
        rows.append({"s": s, "p1": a, "p2": b, "product": a * b})
    return {
        "geometry": geom.to_dict(),
        "total_p": tp.value,
        "abs_error": tp.abs_error,
        "breakpoints": bps,
        "profile": rows,
    }


def optimize_report(
    o_w: float, o_h: float, l: float, layouts=None, grid: RatioGrid | None = None, jobs: int = 1
) -> dict:
    """Free-ratio search per layout with its trace."""
    layouts = [LayoutKind(x) for x in (layouts or [LayoutKind.LEFT_RIGHT])]
    results = []
    trace_rows = []
    for lay in layouts:
        res = search_free_ratio(lay, o_w, o_h, l, grid=grid, jobs=jobs)
        results.append(res.to_dict() | {"layout": lay.value})
        for r, p in res.search_trace:
            trace_rows.append({"layout": lay.value, "o_w": o_w, "o_h": o_h, "l": l, "ratio": r, "p": p})
    return {"results": results, "trace": trace_rows}


def simulate_report(
    geom: PoisonGeometry, policies: Sequence[CropPolicy], n: int, seed: int, jobs: int = 1
) -> dict:
    records = []
    for pol in policies:
        est = estimate_p(geom, pol, n=n, seed=seed, jobs=jobs)
        records.append(estimate_record(geom, pol, est))
    return {"records": records, "analytic": total_p(geom).value}


def defense_sweep(
    geom: PoisonGeometry,
    deltas: Sequence[float] = (0.1, 0.2, 0.3, 0.5),
    n: int = 1_000_000,
    seed: int = 0,
    jobs: int = 1,
    k: float = 3.0,
) -> dict:
    """Pair probability under localized cropping across ``deltas``, with the
    plain random-crop baseline and a statistical monotonicity flag."""
    base = estimate_p(geom, CropPolicy.random(), n=n, seed=seed, jobs=jobs)
    rows = []
    for d in sorted(deltas):
        est = estimate_p(geom, CropPolicy.localized(d), n=n, seed=seed, jobs=jobs)
        rows.append(
            {
                "delta": d,
                "p": est.value,
                "std_error": est.std_error,
                "relative_to_random": est.value / base.value if base.value > 0 else math.nan,
            }
        )
    monotone = all(
        b["p"] >= a["p"] - k * math.hypot(a["std_error"], b["std_error"])
        for a, b in zip(rows, rows[1:])
    )
    return {
        "geometry": geom.to_dict(),
        "random": base.to_dict(),
        "rows": rows,
        "non_decreasing": monotone,
        "n": n,
        "seed": seed,
    }


REPORT_KINDS = ("analyze", "optimize", "simulate", "defense-sweep")


def report(kind: str, params: dict) -> dict:
    """Dispatch to one of the report builders by name."""
    if kind == "analyze":
        return analyze_report(params["geometry"], params.get("n_points", 50))
    if kind == "optimize":
        return optimize_report(
            params["o_w"], params["o_h"], params["l"], params.get("layouts"),
            params.get("grid"), params.get("jobs", 1),
        )
    if kind == "simulate":
        return simulate_report(
            params["geometry"], params.get("policies", [CropPolicy.random()]),
            params.get("n", 1_000_000), params.get("seed", 0), params.get("jobs", 1),
        )
    if kind == "defense-sweep":
        return defense_sweep(
            params["geometry"], params.get("deltas", (0.1, 0.2, 0.3, 0.5)),
            params.get("n", 1_000_000), params.get("seed", 0), params.get("jobs", 1),
        )
    raise DomainError(f"unknown report kind {kind!r}; choose from {', '.join(REPORT_KINDS)}")
