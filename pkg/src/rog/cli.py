"""Command-line pipeline: asset preparation, training, sampling, evaluation,
and the guidance ablation grid.

Every command is deterministic given --seed, writes its artifacts under the
--out directory, and drops a run.json manifest embedding the resolved
configuration and the SHA-256 of each input. Exit codes: 0 success, 2 bad
usage or input, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys

import numpy as np

from . import config as config_mod
from . import diffusion, guidance, idf, mesh, metrics, motion, nn, synth
from .models import Condition, MotionGenModel, RelationModel, train_generation, train_relation

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERICAL = 3


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_json(payload, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _write_run_manifest(out_dir, command: str, cfg: dict, inputs: dict, outputs: list) -> None:
    _write_json(
        {
            "command": command,
            "config": cfg,
            "inputs": {name: _sha256(path) for name, path in inputs.items()},
            "outputs": sorted(outputs),
        },
        os.path.join(out_dir, "run.json"),
    )


def _schedule_from_config(cfg: dict) -> diffusion.NoiseSchedule:
    d = cfg["diffusion"]
    return diffusion.make_linear_schedule(d["steps"], d["beta_start"], d["beta_end"])


def cmd_keypoints(args, cfg) -> int:
    os.makedirs(args.out, exist_ok=True)
    m = mesh.load_obj(args.obj)
    kps = mesh.sample_object_keypoints(m, seed=args.seed)
    out_path = os.path.join(args.out, "keypoints.json")
    with open(out_path, "w", encoding="utf-8") as fh:
        fh.write(kps.to_json())
    _write_run_manifest(args.out, "keypoints", cfg, {"obj": args.obj}, ["keypoints.json"])
    return EXIT_OK


def cmd_generate_data(args, cfg) -> int:
    s = cfg["synth"]
    train_m, test_m = synth.generate_dataset(
        args.out, count=args.count, split_ratio=s["split_ratio"], seed=args.seed,
        frames=s["frames"], fps=s["fps"], jitter=s["jitter"],
    )
    outputs = [os.path.relpath(p, args.out) for p in (train_m, test_m)]
    _write_run_manifest(args.out, "generate-data", cfg, {}, outputs)
    return EXIT_OK


def _build_gen_model(cfg: dict, seed: int) -> MotionGenModel:
    g = cfg["generator"]
    return MotionGenModel(vocab=g["vocab"], width=g["width"], layers=g["layers"],
                          heads=g["heads"], seed=seed)


def _build_rel_model(cfg: dict, seed: int) -> RelationModel:
    r = cfg["relation"]
    return RelationModel(vocab=r["vocab"], width=r["width"], blocks=r["blocks"],
                         heads=r["heads"], seed=seed)


def cmd_train(args, cfg) -> int:
    os.makedirs(args.out, exist_ok=True)
    dataset = [rec.training_item() for rec in synth.load_dataset(args.manifest)]
    sched = _schedule_from_config(cfg)
    tr = cfg["training"]
    seed = args.seed if args.seed is not None else tr["seed"]
    if args.kind == "gen":
        model = _build_gen_model(cfg, seed)
        losses = train_generation(
            dataset, sched, model, steps=tr["steps"], lr=tr["lr"],
            lambda_idf=tr["lambda_idf"], weight_decay=tr["weight_decay"],
            seed=seed, idf_metric=cfg["idf"]["metric"],
        )
        stem = "generation"
    else:
        model = _build_rel_model(cfg, seed)
        losses = train_relation(
            dataset, sched, model, steps=tr["steps"], lr=tr["lr"],
            weight_decay=tr["weight_decay"], seed=seed, idf_metric=cfg["idf"]["metric"],
        )
        stem = "relation"
    ckpt = os.path.join(args.out, f"{stem}.ntc")
    nn.save_checkpoint(model.store.state_arrays(), ckpt)
    with open(os.path.join(args.out, f"{stem}_loss.csv"), "w", encoding="utf-8") as fh:
        fh.write("step,loss\n")
        for i, v in enumerate(losses):
            fh.write(f"{i},{float(v)!r}\n")
    _write_json(
        {
            "kind": args.kind,
            "seed": seed,
            "steps": int(tr["steps"]),
            "lr": tr["lr"],
            "lambda_idf": tr["lambda_idf"] if args.kind == "gen" else None,
            "schedule": sched.to_json_dict(),
            "model": model.config_dict(),
            "idf_metric": cfg["idf"]["metric"],
            "dataset_hash": _sha256(args.manifest),
            "final_loss": float(losses[-1]),
        },
        os.path.join(args.out, f"{stem}.json"),
    )
    _write_run_manifest(
        args.out, f"train-{args.kind}", cfg, {"manifest": args.manifest},
        [f"{stem}.ntc", f"{stem}_loss.csv", f"{stem}.json"],
    )
    return EXIT_OK


def _load_gen_model(ckpt_path) -> tuple[MotionGenModel, diffusion.NoiseSchedule, dict]:
    manifest_path = os.path.splitext(ckpt_path)[0] + ".json"
    with open(manifest_path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    model = MotionGenModel(**manifest["model"])
    model.store.load_state_arrays(nn.load_checkpoint(ckpt_path))
    return model, diffusion.NoiseSchedule.from_json_dict(manifest["schedule"]), manifest


def _load_rel_model(ckpt_path) -> tuple[RelationModel, diffusion.NoiseSchedule, dict]:
    manifest_path = os.path.splitext(ckpt_path)[0] + ".json"
    with open(manifest_path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    model = RelationModel(**manifest["model"])
    model.store.load_state_arrays(nn.load_checkpoint(ckpt_path))
    return model, diffusion.NoiseSchedule.from_json_dict(manifest["schedule"]), manifest


def _copy_file(src, dst) -> None:
    with open(src, "rb") as fin, open(dst, "wb") as fout:
        fout.write(fin.read())


def cmd_sample(args, cfg) -> int:
    os.makedirs(args.out, exist_ok=True)
    gen_model, sched, _ = _load_gen_model(args.gen_checkpoint)
    rel_model = None
    if args.guided:
        if not args.rel_checkpoint:
            raise ValueError("--guided sampling needs --rel-checkpoint")
        rel_model, rel_sched, _ = _load_rel_model(args.rel_checkpoint)
        if rel_sched.to_json_dict() != sched.to_json_dict():
            raise ValueError("generation and relation checkpoints use different schedules")
    with open(args.keypoints, "r", encoding="utf-8") as fh:
        kps = mesh.KeyPointSet.from_json(fh.read())
    cond = Condition(args.label, motion.REST_JOINTS, kps.points)
    gcfg = guidance.GuidanceConfig(
        window_fraction=cfg["guidance"]["window_fraction"] if args.guided else 0.0,
        iterations=cfg["guidance"]["iterations"],
        history=cfg["guidance"]["history"],
        grad_tol=cfg["guidance"]["grad_tol"],
        idf_metric=cfg["idf"]["metric"],
    )
    outputs = []
    asset_dir = os.path.join(args.out, "assets")
    os.makedirs(asset_dir, exist_ok=True)
    obj_rel = None
    if args.object:
        obj_rel = os.path.join("assets", os.path.basename(args.object))
        _copy_file(args.object, os.path.join(args.out, obj_rel))
        outputs.append(obj_rel)
    kp_rel = os.path.join("assets", "keypoints.json")
    _copy_file(args.keypoints, os.path.join(args.out, kp_rel))
    outputs.append(kp_rel)

    entries = []
    for i in range(args.count):
        trace: list | None = [] if args.guided else None
        frames = guidance.sample_guided(
            args.frames, cond, gen_model, rel_model, sched, gcfg, seed=args.seed + i,
            trace=trace,
        )
        seq = motion.MotionSequence(frames, cfg["synth"]["fps"], args.label)
        stem = f"sample_{i:04d}"
        motion.save_hoim(seq, os.path.join(args.out, f"{stem}.hoim"))
        outputs.append(f"{stem}.hoim")
        if args.guided:
            trace_name = f"{stem}_trace.jsonl"
            with open(os.path.join(args.out, trace_name), "w", encoding="utf-8") as fh:
                for row in trace:
                    fh.write(json.dumps(row, sort_keys=True) + "\n")
            outputs.append(trace_name)
        entries.append({
            "path": f"{stem}.hoim", "idf": None, "label": int(args.label),
            "object": "object", "seed": int(args.seed + i),
        })
    set_manifest = {
        "version": 1, "fps": cfg["synth"]["fps"], "frames": args.frames,
        "jitter": 0.0,
        "objects": {"object": {"obj": obj_rel, "keypoints": kp_rel}},
        "sequences": entries,
    }
    _write_json(set_manifest, os.path.join(args.out, "set_manifest.json"))
    outputs.append("set_manifest.json")
    inputs = {"gen_checkpoint": args.gen_checkpoint, "keypoints": args.keypoints}
    if args.rel_checkpoint:
        inputs["rel_checkpoint"] = args.rel_checkpoint
    if args.object:
        inputs["object"] = args.object
    _write_run_manifest(args.out, "sample", cfg, inputs, outputs)
    return EXIT_OK


def _eval_items_from_manifest(manifest_path, cfg) -> list[metrics.EvalItem]:
    records = synth.load_dataset(manifest_path)
    sdf_cache: dict[str, mesh.SignedDistanceGrid] = {}
    items = []
    for rec in records:
        if rec.object_kind not in sdf_cache:
            sdf_cache[rec.object_kind] = mesh.build_sdf_grid(
                rec.mesh, resolution=cfg["metrics"]["sdf_resolution"],
                padding=cfg["metrics"]["sdf_padding"],
            )
        items.append(metrics.EvalItem(
            sequence=rec.sequence, mesh=rec.mesh, sdf=sdf_cache[rec.object_kind],
            keypoints=rec.keypoints.points, gt_idf=rec.clean_idf,
            name=os.path.basename(rec.path),
        ))
    return items


def cmd_evaluate(args, cfg) -> int:
    os.makedirs(args.out, exist_ok=True)
    items = _eval_items_from_manifest(args.manifest, cfg)
    reference = _eval_items_from_manifest(args.reference, cfg) if args.reference else None
    m = cfg["metrics"]
    report = metrics.evaluate(
        items, reference,
        contact_threshold=m["contact_threshold"],
        collision_threshold=m["collision_threshold"],
        mdev_alpha=m["mdev_alpha"], fid_frames=m["fid_frames"],
        seed=args.seed, collision_proxy=m["collision_proxy"],
    )
    with open(os.path.join(args.out, "report.json"), "w", encoding="utf-8") as fh:
        fh.write(report.to_json())
    with open(os.path.join(args.out, "report.csv"), "w", encoding="utf-8") as fh:
        fh.write(report.to_csv())
    outputs = ["report.json", "report.csv"]
    if reference is not None:
        ref_report = metrics.evaluate(
            reference, reference,
            contact_threshold=m["contact_threshold"],
            collision_threshold=m["collision_threshold"],
            mdev_alpha=m["mdev_alpha"], fid_frames=m["fid_frames"],
            seed=args.seed, collision_proxy=m["collision_proxy"],
        )
        _write_json(
            {"reference": "reference-vs-self", "delta": metrics.report_delta(ref_report, report)},
            os.path.join(args.out, "delta.json"),
        )
        outputs.append("delta.json")
    inputs = {"manifest": args.manifest}
    if args.reference:
        inputs["reference"] = args.reference
    _write_run_manifest(args.out, "evaluate", cfg, inputs, outputs)
    return EXIT_OK


def _ablation_cell(test_records, gen_model, rel_model, sched, cfg, window: float,
                   iterations: int, seed: int) -> dict:
    gcfg = guidance.GuidanceConfig(
        window_fraction=window, iterations=iterations,
        history=cfg["guidance"]["history"], grad_tol=cfg["guidance"]["grad_tol"],
        idf_metric=cfg["idf"]["metric"],
    )
    idf_errors = []
    mdevs = []
    for i, rec in enumerate(test_records):
        cond = Condition(rec.label, motion.REST_JOINTS, rec.keypoints.points)
        frames = guidance.sample_guided(
            len(rec.sequence.frames), cond, gen_model,
            rel_model if window > 0 else None, sched, gcfg, seed=seed + i,
        )
        seq = motion.MotionSequence(frames, rec.sequence.fps, rec.label)
        gt = rec.clean_idf
        if gt is None:
            gt = idf.compute_idf(
                motion.joints_of(rec.sequence.frames), motion.object_keypoints_of(rec.sequence.frames)
            )
        idf_errors.append(metrics.sequence_idf_error(seq, gt))
        rot, trans = metrics._object_transforms(seq.frames)
        kp_world = motion.object_keypoints_world(rec.keypoints.points, trans, rot)
        joints = motion.joints_of(seq.frames).astype(np.float64)
        mdevs.append(metrics.mdev(joints[:, list(motion.PALM_JOINTS)], kp_world).value_mm)
    return {
        "window_fraction": window, "iterations": iterations, "seed": seed,
        "mean_idf_error": float(np.mean(idf_errors)),
        "mean_mdev_mm": float(np.mean(mdevs)),
        "sequences": len(test_records),
    }


def cmd_ablate(args, cfg) -> int:
    os.makedirs(args.out, exist_ok=True)
    cell_dir = os.path.join(args.out, "cells")
    os.makedirs(cell_dir, exist_ok=True)
    gen_model, sched, _ = _load_gen_model(args.gen_checkpoint)
    rel_model, rel_sched, _ = _load_rel_model(args.rel_checkpoint)
    if rel_sched.to_json_dict() != sched.to_json_dict():
        raise ValueError("generation and relation checkpoints use different schedules")
    test_records = synth.load_dataset(args.manifest)
    if args.limit:
        test_records = test_records[: args.limit]
    windows = [float(w) for w in args.windows.split(",")]
    iterations = [int(k) for k in args.iterations.split(",")]
    input_hash = hashlib.sha256(
        (_sha256(args.manifest) + _sha256(args.gen_checkpoint) + _sha256(args.rel_checkpoint)).encode()
    ).hexdigest()

    rows = []
    skipped = 0
    for window in windows:
        for k in iterations:
            key = json.dumps(
                {"window": window, "k": k, "seed": args.seed, "limit": args.limit,
                 "inputs": input_hash, "idf_metric": cfg["idf"]["metric"]},
                sort_keys=True,
            )
            cell_hash = hashlib.sha256(key.encode()).hexdigest()[:16]
            cell_path = os.path.join(cell_dir, f"cell_{cell_hash}.json")
            if os.path.exists(cell_path):
                with open(cell_path, "r", encoding="utf-8") as fh:
                    rows.append(json.load(fh))
                skipped += 1
                continue
            row = _ablation_cell(test_records, gen_model, rel_model, sched, cfg, window, k, args.seed)
            row["cell"] = cell_hash
            _write_json(row, cell_path)
            rows.append(row)

    csv_path = os.path.join(args.out, "ablation.csv")
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write("window_fraction,iterations,mean_idf_error,mean_mdev_mm,sequences\n")
        for row in rows:
            fh.write(
                f"{row['window_fraction']!r},{row['iterations']},{row['mean_idf_error']!r},"
                f"{row['mean_mdev_mm']!r},{row['sequences']}\n"
            )
    svg_path = os.path.join(args.out, "ablation.svg")
    with open(svg_path, "w", encoding="utf-8") as fh:
        fh.write(_ablation_svg(rows, windows, iterations))
    outputs = ["ablation.csv", "ablation.svg"] + [
        os.path.join("cells", f) for f in sorted(os.listdir(cell_dir))
    ]
    _write_run_manifest(
        args.out, "ablate", cfg,
        {"manifest": args.manifest, "gen_checkpoint": args.gen_checkpoint,
         "rel_checkpoint": args.rel_checkpoint},
        outputs,
    )
    return EXIT_OK


def _ablation_svg(rows, windows, iterations) -> str:
    """Line chart of mean IDF error vs guidance window, one polyline per k."""
    width, height, margin = 640, 400, 60
    by_k: dict[int, list] = {k: [] for k in iterations}
    for row in rows:
        by_k[row["iterations"]].append((row["window_fraction"], row["mean_idf_error"]))
    values = [v for pts in by_k.values() for _, v in pts]
    vmin, vmax = min(values), max(values)
    if vmax - vmin < 1e-12:
        vmax = vmin + 1.0
    xs = sorted(set(windows))

    def x_pos(w):
        return margin + (width - 2 * margin) * xs.index(w) / max(len(xs) - 1, 1)

    def y_pos(v):
        return height - margin - (height - 2 * margin) * (v - vmin) / (vmax - vmin)

    colors = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#8c564b")
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{margin}" y1="{height - margin}" x2="{width - margin}" y2="{height - margin}" stroke="black"/>',
        f'<line x1="{margin}" y1="{margin}" x2="{margin}" y2="{height - margin}" stroke="black"/>',
        f'<text x="{width // 2}" y="{height - 15}" text-anchor="middle" font-size="13">guidance window fraction</text>',
        f'<text x="18" y="{height // 2}" text-anchor="middle" font-size="13" transform="rotate(-90 18 {height // 2})">mean IDF error</text>',
    ]
    for w in xs:
        parts.append(
            f'<text x="{x_pos(w):.1f}" y="{height - margin + 18}" text-anchor="middle" font-size="11">{w:g}</text>'
        )
    parts.append(
        f'<text x="{margin - 8}" y="{y_pos(vmin):.1f}" text-anchor="end" font-size="11">{vmin:.4g}</text>'
    )
    parts.append(
        f'<text x="{margin - 8}" y="{y_pos(vmax):.1f}" text-anchor="end" font-size="11">{vmax:.4g}</text>'
    )
    for idx, (k, pts) in enumerate(sorted(by_k.items())):
        pts = sorted(pts)
        coords = " ".join(f"{x_pos(w):.1f},{y_pos(v):.1f}" for w, v in pts)
        color = colors[idx % len(colors)]
        parts.append(f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="2"/>')
        parts.append(
            f'<text x="{width - margin + 6}" y="{margin + 16 * idx + 10}" font-size="11" fill="{color}">k={k}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rog", description=__doc__)
    parser.add_argument("--config", help="JSON or TOML config file")
    parser.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                        help="override one config value (repeatable)")
    parser.add_argument("--paper-scale", action="store_true",
                        help="use the reference-scale model configuration")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("keypoints", help="sample the 24 object keypoints from an OBJ")
    p.add_argument("--obj", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("generate-data", help="write a synthetic interaction dataset")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train the generation or relation model")
    p.add_argument("kind", choices=("gen", "rel"))
    p.add_argument("--manifest", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)

    p = sub.add_parser("sample", help="generate sequences from checkpoints")
    p.add_argument("--gen-checkpoint", required=True)
    p.add_argument("--rel-checkpoint")
    p.add_argument("--keypoints", required=True, help="KeyPointSet JSON for the object")
    p.add_argument("--object", help="object OBJ file, copied into the output set")
    p.add_argument("--label", type=int, required=True)
    p.add_argument("--frames", type=int, default=24)
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--guided", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("evaluate", help="score a sequence set against the metric suite")
    p.add_argument("--manifest", required=True)
    p.add_argument("--reference", help="optional second set for FID and deltas")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("ablate", help="sweep guidance windows and iteration counts")
    p.add_argument("--gen-checkpoint", required=True)
    p.add_argument("--rel-checkpoint", required=True)
    p.add_argument("--manifest", required=True, help="test manifest providing conditions")
    p.add_argument("--windows", default="0,0.001,0.01,0.1,0.5,1.0")
    p.add_argument("--iterations", default="1,5,10")
    p.add_argument("--limit", type=int, default=0, help="cap the number of test sequences")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    return parser


_COMMANDS = {
    "keypoints": cmd_keypoints,
    "generate-data": cmd_generate_data,
    "train": cmd_train,
    "sample": cmd_sample,
    "evaluate": cmd_evaluate,
    "ablate": cmd_ablate,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = config_mod.load_config(args.config, set_pairs=args.set, paper_scale=args.paper_scale)
        return _COMMANDS[args.command](args, cfg)
    except (config_mod.ConfigError, ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (RuntimeError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
