"""Synthetic paired-data harness: seeded halo generation and manifests.

Each reference image is degraded by one or more randomly drawn halo layers
(element-wise multiplication), producing (degraded, reference, halo) triples.
Draw ranges: light center uniform over the middle 60% of the frame, sigma
uniform in [0.15, 0.45] * min(h, w), ambient uniform in [0.1, 0.5], model
picked from {gaussian, cosine4}.

All randomness is derived per record from (dataset seed, record index), so
results are independent of processing order and reruns are byte-identical.
The manifest is JSON with stable key order; paths are stored relative to the
manifest's directory.
"""

from __future__ import annotations

import datetime as _dt
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, List, Sequence, Tuple, TypeVar, Union

import cv2
import numpy as np

from .errors import EmptyDatasetError, FormatError
from .imgcore import load_image, save_image
from .radial import HaloParams, LightCenter, apply_halo, save_halo, synth_halo

_T = TypeVar("_T")
_R = TypeVar("_R")

REFERENCE_SUFFIXES = (".png", ".ppm")


@dataclass(frozen=True)
class ManifestRecord:
    index: int
    reference_path: str
    degraded_path: str
    halo_path: str
    center: LightCenter
    halo_params: HaloParams
    seed: Tuple[int, int]  # (dataset seed, record index)

    def to_json(self) -> dict:
        return {
            "index": self.index,
            "reference_path": self.reference_path,
            "degraded_path": self.degraded_path,
            "halo_path": self.halo_path,
            "center": {"x0": self.center.x0, "y0": self.center.y0},
            "halo_params": {
                "model": self.halo_params.model_tag,
                "sigma": self.halo_params.sigma,
                "ambient": self.halo_params.ambient,
                "beta": self.halo_params.beta,
            },
            "seed": list(self.seed),
        }

    @staticmethod
    def from_json(obj: dict) -> "ManifestRecord":
        hp = obj["halo_params"]
        return ManifestRecord(
            index=int(obj["index"]),
            reference_path=obj["reference_path"],
            degraded_path=obj["degraded_path"],
            halo_path=obj["halo_path"],
            center=LightCenter(float(obj["center"]["x0"]), float(obj["center"]["y0"])),
            halo_params=HaloParams(
                model_tag=hp["model"],
                sigma=float(hp["sigma"]),
                ambient=float(hp["ambient"]),
                beta=float(hp["beta"]),
            ),
            seed=(int(obj["seed"][0]), int(obj["seed"][1])),
        )


@dataclass
class Manifest:
    seed: int
    created: str
    records: List[ManifestRecord]
    root: Path  # directory the relative paths are anchored to

    def resolve(self, rel: str) -> Path:
        return (self.root / rel).resolve()


def save_manifest(manifest: Manifest, path: Union[str, Path]) -> None:
    payload = {
        "created": manifest.created,
        "records": [r.to_json() for r in manifest.records],
        "seed": manifest.seed,
    }
    Path(path).write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def load_manifest(path: Union[str, Path]) -> Manifest:
    path = Path(path)
    payload = json.loads(path.read_text(encoding="utf-8"))
    records = [ManifestRecord.from_json(o) for o in payload["records"]]
    return Manifest(
        seed=int(payload["seed"]),
        created=payload["created"],
        records=records,
        root=path.parent,
    )


def list_reference_images(ref_dir: Union[str, Path]) -> List[Path]:
    ref_dir = Path(ref_dir)
    paths = sorted(
        p for p in ref_dir.iterdir() if p.suffix.lower() in REFERENCE_SUFFIXES
    )
    if not paths:
        raise EmptyDatasetError(f"no PNG/PPM reference images in {ref_dir}")
    return paths


def draw_halo_params(
    rng: np.random.Generator, height: int, width: int
) -> Tuple[HaloParams, LightCenter]:
    """One random halo draw; the draw order is part of the format contract."""
    model = "gaussian" if rng.integers(0, 2) == 0 else "cosine4"
    x0 = rng.uniform(0.2 * width, 0.8 * width)
    y0 = rng.uniform(0.2 * height, 0.8 * height)
    sigma = rng.uniform(0.15, 0.45) * min(height, width)
    ambient = rng.uniform(0.1, 0.5)
    return HaloParams(model_tag=model, sigma=sigma, ambient=ambient, beta=1.0), LightCenter(x0, y0)


def map_records(
    fn: Callable[[_T], _R], items: Sequence[_T], jobs: int = 1
) -> List[_R]:
    """Apply fn to every item, optionally with a bounded thread pool."""
    if jobs <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def synth_pairs(
    ref_dir: Union[str, Path],
    out_dir: Union[str, Path],
    n_per_image: int = 1,
    seed: int = 0,
    jobs: int = 1,
) -> Manifest:
    """Generate degraded/halo pairs for every reference image, write a manifest."""
    out_dir = Path(out_dir)
    refs = list_reference_images(ref_dir)
    (out_dir / "degraded").mkdir(parents=True, exist_ok=True)
    (out_dir / "halos").mkdir(parents=True, exist_ok=True)

    tasks = []
    for ref_idx, ref_path in enumerate(refs):
        for j in range(n_per_image):
            tasks.append((ref_idx * n_per_image + j, ref_path, j))

    def build(task) -> ManifestRecord:
        index, ref_path, j = task
        img = load_image(ref_path)
        rng = np.random.default_rng([seed, index])
        params, center = draw_halo_params(rng, img.height, img.width)
        halo = synth_halo(img.height, img.width, params, center)
        degraded = apply_halo(img, halo)
        stem = f"{ref_path.stem}_h{j:02d}"
        degraded_rel = f"degraded/{stem}.png"
        halo_rel = f"halos/{stem}.png"
        save_image(degraded, out_dir / degraded_rel)
        save_halo(halo, out_dir / halo_rel, params)
        ref_rel = os.path.relpath(ref_path.resolve(), out_dir.resolve())
        return ManifestRecord(
            index=index,
            reference_path=ref_rel,
            degraded_path=degraded_rel,
            halo_path=halo_rel,
            center=halo.center,
            halo_params=params,
            seed=(seed, index),
        )

    records = map_records(build, tasks, jobs)
    manifest = Manifest(
        seed=seed,
        created=_dt.datetime.now(_dt.timezone.utc).isoformat(),
        records=records,
        root=out_dir,
    )
    save_manifest(manifest, out_dir / "manifest.json")
    return manifest


def regenerate_halo_png(record: ManifestRecord, height: int, width: int) -> bytes:
    """Re-synthesize a record's halo and encode it exactly as synth_pairs did."""
    halo = synth_halo(height, width, record.halo_params, record.center)
    q = np.rint(np.clip(halo.values, 0.0, 1.0) * 65535.0).astype(np.uint16)
    ok, buf = cv2.imencode(".png", q)
    if not ok:
        raise FormatError("PNG encoding failed during regeneration")
    return buf.tobytes()
