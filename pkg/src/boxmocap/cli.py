"""Command-line entry point.

Subcommands cover the whole pipeline: fit-boxes, keyframes, synth-dataset,
train, generate, eval. Every run with an -o target also writes a
machine-readable run manifest (input hashes, config hash, seed, versions)
so outputs can be traced; nothing is written outside the -o target.

Exit codes: 0 success, 1 domain error, 2 usage error.
"""

import argparse
import dataclasses
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__, checkpoint, diffusion, formats, synthesis
from .errors import DomainError, SchemaError
from .geometry import FilterConfig, NormalizeConfig, expand_keyframes, propagate_boxes
from .guidance import GuidanceConfig, containment_rate, guidance_loss, mean_center_distance
from .synthesis import AugmentConfig, ProceduralConfig

log = logging.getLogger("boxmocap")


def _csv_ints(text: str):
    try:
        return [int(part) for part in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _config_from(mapping: dict, cls, section: str):
    """Build a config dataclass from a JSON section, rejecting unknown keys."""
    values = dict(mapping.get(section, {}))
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise SchemaError(f"unknown {section} config keys: {', '.join(unknown)}")
    return cls(**values)


def _load_json(path) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: invalid JSON ({exc.msg})") from exc
    if not isinstance(doc, dict):
        raise SchemaError(f"{path}: expected a JSON object")
    return doc


def _apply_overrides(cfg, args, names):
    """Replace dataclass fields from CLI flags when the flag was given."""
    changes = {}
    for field, attr in names.items():
        value = getattr(args, attr, None)
        if value is not None:
            changes[field] = value
    return dataclasses.replace(cfg, **changes) if changes else cfg


def _hash_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _hash_input(path) -> str:
    path = Path(path)
    if path.is_dir():
        digest = hashlib.sha256()
        for child in sorted(p for p in path.rglob("*") if p.is_file()):
            digest.update(child.name.encode())
            digest.update(child.read_bytes())
        return digest.hexdigest()
    return _hash_file(path)


def _versions() -> dict:
    import numpy
    import torch

    return {
        "boxmocap": __version__,
        "python": sys.version.split()[0],
        "numpy": numpy.__version__,
        "torch": torch.__version__,
    }


def _write_manifest(out_target: Path, command: str, inputs: dict, config: dict, seed):
    manifest = {
        "command": command,
        "inputs": {name: {"path": str(p), "sha256": _hash_input(p)} for name, p in inputs.items()},
        "config_hash": hashlib.sha256(
            json.dumps(config, sort_keys=True).encode()
        ).hexdigest(),
        "config": config,
        "seed": seed,
        "versions": _versions(),
    }
    if out_target.is_dir():
        path = out_target / "run_manifest.json"
    else:
        path = out_target.with_name(out_target.name + ".manifest.json")
    path.write_text(json.dumps(manifest, sort_keys=True, separators=(",", ":")) + "\n")


# ---------------------------------------------------------------- subcommands


def _cmd_fit_boxes(args) -> int:
    base = _load_json(args.config) if args.config else {}
    filter_cfg = _apply_overrides(
        _config_from(base, FilterConfig, "filter"),
        args,
        {"confidence_min": "confidence_min", "knn_k": "knn_k", "knn_sigma": "knn_sigma"},
    )
    norm_cfg = _apply_overrides(
        _config_from(base, NormalizeConfig, "normalize"),
        args,
        {"target_height": "target_height", "smoothing": "smoothing"},
    )
    session = formats.parse_capture(Path(args.capture).read_text())
    seq = propagate_boxes(session, filter_cfg, norm_cfg)
    Path(args.output).write_text(formats.serialize_boxes(seq))
    log.info("fit %d boxes over %d frames", seq.num_boxes, seq.num_frames)
    _write_manifest(
        Path(args.output),
        "fit-boxes",
        {"capture": args.capture},
        {"filter": dataclasses.asdict(filter_cfg), "normalize": dataclasses.asdict(norm_cfg)},
        None,
    )
    return 0


def _cmd_keyframes(args) -> int:
    keys = formats.parse_boxes(Path(args.keys).read_text())
    seq = expand_keyframes(keys, args.between)
    Path(args.output).write_text(formats.serialize_boxes(seq))
    log.info("expanded %d keys to %d frames", keys.num_frames, seq.num_frames)
    _write_manifest(
        Path(args.output), "keyframes", {"keys": args.keys}, {"between": args.between}, None
    )
    return 0


def _cmd_synth_dataset(args) -> int:
    base = _load_json(args.config)
    proc = _config_from(base, ProceduralConfig, "procedural")
    aug = _config_from(base, AugmentConfig, "augment")
    levels = base.get("levels", [1, 2, 4, 6])
    items = synthesis.build_dataset(proc, levels, aug)
    synthesis.write_dataset(items, args.output, proc, levels, aug)
    log.info("wrote %d pairs to %s", len(items), args.output)
    _write_manifest(
        Path(args.output),
        "synth-dataset",
        {"config": args.config},
        {
            "procedural": {k: v for k, v in dataclasses.asdict(proc).items() if k != "skeleton"},
            "levels": sorted(set(int(v) for v in levels)),
            "augment": dataclasses.asdict(aug),
        },
        proc.seed,
    )
    return 0


def _cmd_train(args) -> int:
    base = _load_json(args.config) if args.config else {}
    items = synthesis.load_dataset(args.dataset)
    motion = items[0][1]
    diff_section = dict(base.get("diffusion", {}))
    diff_section.setdefault("frames", motion.num_frames)
    diff_section.setdefault("joints", motion.num_joints)
    cfg = _apply_overrides(
        _config_from({"diffusion": diff_section}, diffusion.DiffusionConfig, "diffusion"),
        args,
        {"steps": "steps", "d_model": "d_model", "layers": "layers", "heads": "heads"},
    )
    train_section = dict(base.get("train", {}))
    train_kwargs = {
        "phase_a_steps": args.phase_a_steps or train_section.get("phase_a_steps", 3000),
        "phase_b_steps": args.phase_b_steps or train_section.get("phase_b_steps", 2000),
        "batch_size": args.batch_size or train_section.get("batch_size", 32),
        "lr": args.lr or train_section.get("lr", 1e-3),
        "seed": args.seed if args.seed is not None else train_section.get("seed", 0),
        "encoder_hidden": args.encoder_hidden or train_section.get("encoder_hidden", 128),
    }

    def progress(phase, step, loss):
        if step % 100 == 0:
            log.info("phase %s step %d loss %.5f", phase, step, loss)

    bundle, history = diffusion.train_model(items, cfg, progress=progress, **train_kwargs)
    checkpoint.save_checkpoint(bundle, args.output)
    curve_path = Path(args.output) / "loss_curve.json"
    curve_path.write_text(json.dumps(history, separators=(",", ":")) + "\n")
    log.info(
        "trained: phase A loss %.5f -> %.5f, phase B %.5f -> %.5f",
        history["phase_a"][0], history["phase_a"][-1],
        history["phase_b"][0], history["phase_b"][-1],
    )
    _write_manifest(
        Path(args.output),
        "train",
        {"dataset": args.dataset},
        {"diffusion": dataclasses.asdict(cfg), "train": train_kwargs},
        train_kwargs["seed"],
    )
    return 0


def _cmd_generate(args) -> int:
    bundle = checkpoint.load_checkpoint(args.checkpoint)
    seq = formats.parse_boxes(Path(args.boxes).read_text()) if args.boxes else None
    gcfg = _apply_overrides(
        GuidanceConfig(),
        args,
        {
            "tau": "tau",
            "containment_margin": "margin",
            "step_scale": "step_scale",
            "inner_steps": "inner_steps",
            "active_fraction": "active_fraction",
        },
    )
    motion = diffusion.sample_motion(
        bundle, label=args.label, seq=seq, gcfg=gcfg, seed=args.seed, cfg_scale=args.cfg_scale
    )
    Path(args.output).write_text(formats.serialize_motion(motion))
    log.info("sampled %d frames (label=%s)", motion.num_frames, args.label)
    inputs = {"checkpoint": args.checkpoint}
    if args.boxes:
        inputs["boxes"] = args.boxes
    _write_manifest(
        Path(args.output),
        "generate",
        inputs,
        {"label": args.label, "guidance": dataclasses.asdict(gcfg), "cfg_scale": args.cfg_scale},
        args.seed,
    )
    return 0


def _cmd_eval(args) -> int:
    motion = formats.parse_motion(Path(args.motion).read_text())
    seq = formats.parse_boxes(Path(args.boxes).read_text())
    gcfg = _apply_overrides(GuidanceConfig(), args, {"tau": "tau", "containment_margin": "margin"})
    result = {
        "containment_rate": containment_rate(motion.joints, seq, gcfg),
        "mean_center_dist": mean_center_distance(motion.joints, seq),
        "guidance_loss": guidance_loss(motion.joints, seq, gcfg),
    }
    print(json.dumps(result, separators=(",", ":")))
    return 0


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="boxmocap",
        description="Proxy motion capture with oriented boxes and box-guided motion generation.",
    )
    parser.add_argument("--log-level", default=None, help="debug, info, warning, or error")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit-boxes", help="capture.jsonl -> boxes.json")
    p.add_argument("capture")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--config", default=None, help="JSON with filter/normalize sections")
    p.add_argument("--confidence-min", dest="confidence_min", type=float)
    p.add_argument("--knn-k", dest="knn_k", type=int)
    p.add_argument("--knn-sigma", dest="knn_sigma", type=float)
    p.add_argument("--target-height", dest="target_height", type=float)
    p.add_argument("--smoothing", type=float)
    p.set_defaults(func=_cmd_fit_boxes)

    p = sub.add_parser("keyframes", help="interpolate key boxes into a full sequence")
    p.add_argument("keys")
    p.add_argument("--between", type=_csv_ints, required=True, help="e.g. 3,3,3")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=_cmd_keyframes)

    p = sub.add_parser("synth-dataset", help="build a paired box/motion dataset")
    p.add_argument("config")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=_cmd_synth_dataset)

    p = sub.add_parser("train", help="train the diffusion model on a dataset")
    p.add_argument("dataset")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--config", default=None, help="JSON with diffusion/train sections")
    p.add_argument("--steps", type=int)
    p.add_argument("--d-model", dest="d_model", type=int)
    p.add_argument("--layers", type=int)
    p.add_argument("--heads", type=int)
    p.add_argument("--phase-a-steps", dest="phase_a_steps", type=int)
    p.add_argument("--phase-b-steps", dest="phase_b_steps", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--encoder-hidden", dest="encoder_hidden", type=int)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("generate", help="sample a motion from a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("--boxes", default=None)
    p.add_argument("--label", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--cfg-scale", dest="cfg_scale", type=float, default=None)
    p.add_argument("--tau", type=float)
    p.add_argument("--margin", type=float)
    p.add_argument("--step-scale", dest="step_scale", type=float)
    p.add_argument("--inner-steps", dest="inner_steps", type=int)
    p.add_argument("--active-fraction", dest="active_fraction", type=float)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("eval", help="score a motion against a box sequence")
    p.add_argument("motion")
    p.add_argument("boxes")
    p.add_argument("--tau", type=float)
    p.add_argument("--margin", type=float)
    p.set_defaults(func=_cmd_eval)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = args.log_level or os.environ.get("BOXMOCAP_LOG", "warning")
    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.WARNING),
        stream=sys.stderr,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except DomainError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
