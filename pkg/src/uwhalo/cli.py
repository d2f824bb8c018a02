"""Command-line front end.

Subcommands: synth, pipeline, eval, train-toy, gradcheck, bench.
Exit codes: 0 success, 1 check/assertion failure, 2 usage error.

The optional config file is plain-text key = value lines with sections in
brackets ([separation], [train], [metrics]); see README for the keys.
"""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import sys
import time
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from . import dataset as ds
from . import metrics as mx
from .errors import ConfigError, MissingPredictionError, UwhaloError
from .imgcore import ImageF, load_image, save_image
from .radial import HaloParams, LightCenter, estimate_center, synth_halo
from .recovery import (
    RadnParams,
    TrainConfig,
    init_params,
    load_checkpoint,
    loss_curve_csv,
    radn_forward,
    save_checkpoint,
    train_toy,
)
from .recovery.gradcheck import REL_TOL, all_passed, run_all
from .separation import (
    SeparationConfig,
    blind_separate,
    diagnostics_record,
    remove_halo,
)

log = logging.getLogger("uwhalo")


@dataclass(frozen=True)
class PipelineConfig:
    separation: SeparationConfig = SeparationConfig()
    train: TrainConfig = TrainConfig()
    full_reference: bool = True
    no_reference: bool = True


def _coerce(value: str, target_type):
    if target_type is int:
        return int(value)
    if target_type is float:
        return float(value)
    if target_type is bool:
        return value.strip().lower() in ("1", "true", "yes", "on")
    return value


def _section_into(dc, section: configparser.SectionProxy):
    """Overlay key = value pairs onto a dataclass instance."""
    by_name = {f.name: f for f in fields(dc)}
    alias = {"lambda": "lambda_"}
    updates = {}
    for key, value in section.items():
        name = alias.get(key, key)
        if name not in by_name:
            raise ConfigError(f"unknown config key {key!r}")
        if value.strip() == "":
            updates[name] = None
            continue
        f = by_name[name]
        base = f.type if isinstance(f.type, type) else None
        current = getattr(dc, name)
        target = type(current) if current is not None else (base or float)
        if name == "n_bins":
            target = int
        updates[name] = _coerce(value, target)
    return replace(dc, **updates)


def load_config(path: Optional[Path]) -> PipelineConfig:
    cfg = PipelineConfig()
    if path is None:
        return cfg
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise ConfigError(f"cannot read config file {path}")
    sep, train = cfg.separation, cfg.train
    full_ref, no_ref = cfg.full_reference, cfg.no_reference
    if parser.has_section("separation"):
        sep = _section_into(sep, parser["separation"])
    if parser.has_section("train"):
        train = _section_into(train, parser["train"])
    if parser.has_section("metrics"):
        m = parser["metrics"]
        full_ref = m.getboolean("full_reference", fallback=full_ref)
        no_ref = m.getboolean("no_reference", fallback=no_ref)
    sep.validate()
    train.validate()
    return PipelineConfig(sep, train, full_ref, no_ref)


# --- pipeline ---------------------------------------------------------------------

def run_pipeline_on_image(
    img: ImageF,
    sep_cfg: SeparationConfig,
    radn: Optional[RadnParams] = None,
) -> Tuple[ImageF, Optional[ImageF], dict]:
    """estimate_center -> blind_separate -> remove_halo -> optional recovery."""
    center = estimate_center(img)
    halo, state = blind_separate(img, center, sep_cfg)
    dehaloed = remove_halo(img, halo, sep_cfg.div_floor)
    recovered = radn_forward(radn, dehaloed) if radn is not None else None
    diag = diagnostics_record(halo, state)
    return dehaloed, recovered, diag


def _cmd_pipeline(args, cfg: PipelineConfig) -> int:
    out_dir = Path(args.out)
    for sub in ("dehaloed", "recovered", "diagnostics"):
        (out_dir / sub).mkdir(parents=True, exist_ok=True)
    radn = load_checkpoint(args.checkpoint) if args.recover else None

    input_path = Path(args.input)
    if input_path.suffix == ".json":
        manifest = ds.load_manifest(input_path)
        items = [(manifest.resolve(r.degraded_path)) for r in manifest.records]
    else:
        items = [input_path]

    failures = []  # list.append is atomic under the GIL

    def process(path: Path) -> None:
        try:
            img = load_image(path)
            dehaloed, recovered, diag = run_pipeline_on_image(img, cfg.separation, radn)
            save_image(dehaloed, out_dir / "dehaloed" / f"{path.stem}.png")
            if recovered is not None:
                save_image(recovered, out_dir / "recovered" / f"{path.stem}.png")
            (out_dir / "diagnostics" / f"{path.stem}.json").write_text(
                json.dumps(diag, indent=2, sort_keys=True) + "\n", encoding="utf-8"
            )
            log.info("pipeline: processed %s", path.name)
        except (UwhaloError, OSError) as exc:
            failures.append(path)
            log.error("pipeline: skipping %s: %s", path, exc)

    ds.map_records(process, items, args.jobs)
    return 1 if failures else 0


def _cmd_synth(args, cfg: PipelineConfig) -> int:
    manifest = ds.synth_pairs(
        args.ref_dir, args.out, n_per_image=args.n_per_image, seed=args.seed, jobs=args.jobs
    )
    log.info("synth: wrote %d records to %s", len(manifest.records), args.out)
    return 0


def _cmd_eval(args, cfg: PipelineConfig) -> int:
    manifest = ds.load_manifest(args.manifest)
    pred_dir = Path(args.pred_dir)
    missing = []
    for record in manifest.records:
        pred = pred_dir / Path(record.degraded_path).name
        if not pred.exists():
            missing.append(str(pred))
    if missing:
        raise MissingPredictionError("missing predictions: " + ", ".join(missing))

    report = mx.MetricReport()
    for record in manifest.records:
        pred_path = pred_dir / Path(record.degraded_path).name
        pred = load_image(pred_path)
        row = {}
        ref_path = manifest.resolve(record.reference_path)
        if cfg.full_reference and ref_path.exists():
            ref = load_image(ref_path)
            row.update(mx.full_reference_row(pred, ref))
        if cfg.no_reference:
            row.update(mx.no_reference_row(pred))
        report.add(pred_path.name, row)

    out_dir = Path(args.out) if args.out else pred_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "metrics.csv").write_text(report.to_csv_text(), encoding="utf-8")
    (out_dir / "summary.json").write_text(report.to_json_text(), encoding="utf-8")
    log.info("eval: %d rows -> %s", len(report.rows), out_dir / "metrics.csv")
    return 0


def _cmd_train_toy(args, cfg: PipelineConfig) -> int:
    manifest = ds.load_manifest(args.manifest)
    pairs = []
    for record in manifest.records:
        degraded = load_image(manifest.resolve(record.degraded_path))
        reference = load_image(manifest.resolve(record.reference_path))
        halo, _ = blind_separate(degraded, record.center, cfg.separation)
        dehaloed = remove_halo(degraded, halo, cfg.separation.div_floor)
        pairs.append((dehaloed, reference, record.center))
    train_cfg = cfg.train
    if args.steps is not None:
        train_cfg = replace(train_cfg, steps=args.steps)
    if args.seed is not None:
        train_cfg = replace(train_cfg, seed=args.seed)

    params = init_params(seed=train_cfg.seed)
    params, curve = train_toy(params, pairs, train_cfg)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_checkpoint(params, out_dir / "radn.ckpt")
    (out_dir / "loss_curve.csv").write_text(loss_curve_csv(curve), encoding="utf-8")
    log.info("train-toy: %d steps, final loss %.6f", len(curve), curve[-1][1])
    return 0


def _cmd_gradcheck(args, cfg: PipelineConfig) -> int:
    results = run_all(seed=args.seed, corrupt=args.corrupt)
    for name, err in results:
        status = "PASS" if err <= REL_TOL else "FAIL"
        print(f"{name}: max_rel_err={err:.3e} {status}")
    return 0 if all_passed(results) else 1


def _cmd_bench(args, cfg: PipelineConfig) -> int:
    size = args.size
    rng = np.random.default_rng(args.seed)
    base = np.clip(
        0.55 + 0.2 * rng.standard_normal((3, 8, 8)), 0.2, 0.9
    )
    from .imgcore import resize_bilinear

    ref = resize_bilinear(ImageF(base), size, size)
    params = HaloParams(model_tag="gaussian", sigma=0.3 * size, ambient=0.25)

    timings = []

    def timed(name, fn):
        t0 = time.perf_counter()
        result = fn()
        timings.append((name, (time.perf_counter() - t0) * 1e3))
        return result

    center = LightCenter(size * 0.45, size * 0.55)
    halo = timed("synth_halo", lambda: synth_halo(size, size, params, center))
    from .radial import apply_halo

    degraded = timed("apply_halo", lambda: apply_halo(ref, halo))
    est = timed("estimate_center", lambda: estimate_center(degraded))
    halo_est, _ = timed("blind_separate", lambda: blind_separate(degraded, est, cfg.separation))
    dehaloed = timed("remove_halo", lambda: remove_halo(degraded, halo_est))
    net = init_params(seed=0)
    timed("radn_forward", lambda: radn_forward(net, dehaloed))
    timed("full_reference_metrics", lambda: mx.full_reference_row(dehaloed, ref))
    timed("no_reference_metrics", lambda: mx.no_reference_row(dehaloed))
    width = max(len(n) for n, _ in timings)
    for name, ms in timings:
        print(f"{name:<{width}}  {ms:9.2f} ms")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="uwhalo",
        description="Synthesize, separate and remove artificial-light halos "
        "in underwater images; evaluate and train the toy recovery network.",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="RNG seed")
    common.add_argument("--config", type=Path, default=None, help="config file (key = value)")
    common.add_argument("--out", type=str, default="out", help="output directory")
    common.add_argument("--jobs", type=int, default=1, help="worker threads for batch commands")
    common.add_argument("--quiet", action="store_true", help="suppress progress logging")

    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate synthetic degraded pairs")
    p.add_argument("ref_dir", help="directory of reference images (PNG/PPM)")
    p.add_argument("--n-per-image", type=int, default=1)
    p.set_defaults(fn=_cmd_synth)

    p = sub.add_parser("pipeline", parents=[common], help="separate and remove halos")
    p.add_argument("input", help="manifest.json or a single image")
    p.add_argument("--checkpoint", type=Path, default=None, help="recovery network weights")
    p.add_argument("--recover", action="store_true", help="run the recovery network stage")
    p.set_defaults(fn=_cmd_pipeline)

    p = sub.add_parser("eval", parents=[common], help="score predictions against a manifest")
    p.add_argument("manifest")
    p.add_argument("pred_dir")
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("train-toy", parents=[common], help="desk-scale recovery training")
    p.add_argument("manifest")
    p.add_argument("--steps", type=int, default=None)
    p.set_defaults(fn=_cmd_train_toy, seed=None)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient checks")
    p.add_argument("--corrupt", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(fn=_cmd_gradcheck)

    p = sub.add_parser("bench", parents=[common], help="time the main stages")
    p.add_argument("--size", type=int, default=128)
    p.set_defaults(fn=_cmd_bench)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING if args.quiet else logging.INFO,
        format="%(levelname)s %(message)s",
    )
    if args.command == "pipeline" and args.recover:
        if args.checkpoint is None or not Path(args.checkpoint).exists():
            parser.error("--recover requires an existing --checkpoint file")
    try:
        cfg = load_config(args.config)
        return args.fn(args, cfg)
    except (UwhaloError, OSError) as exc:
        log.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
