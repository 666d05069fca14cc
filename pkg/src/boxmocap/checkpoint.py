"""Checkpoint container: a JSON manifest naming every parameter block plus a
raw little-endian float32 payload, with the training config echoed in."""

import json
from pathlib import Path

import numpy as np
import torch

from .diffusion import DiffusionConfig, ModelBundle, MotionDenoiser, make_schedule
from .encoder import BoxMotionEncoder
from .errors import SchemaError
from .types import LabelVocabulary

MANIFEST_NAME = "manifest.json"
PAYLOAD_NAME = "params.bin"
CHECKPOINT_VERSION = 1

_CONFIG_FIELDS = (
    "steps", "beta_start", "beta_end", "d_model", "layers", "heads",
    "frames", "joints", "cfg_scale", "label_drop",
)


def _named_params(bundle: ModelBundle):
    for prefix, module in (("denoiser", bundle.denoiser), ("encoder", bundle.encoder)):
        for name, param in module.named_parameters():
            yield f"{prefix}.{name}", param


def save_checkpoint(bundle: ModelBundle, out_dir) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    chunks = []
    offset = 0
    for name, param in _named_params(bundle):
        arr = param.detach().cpu().numpy().astype("<f4")
        entries.append(
            {"name": name, "shape": list(arr.shape), "offset": offset, "numel": int(arr.size)}
        )
        chunks.append(arr.tobytes())
        offset += int(arr.size)
    manifest = {
        "version": CHECKPOINT_VERSION,
        "config": {field: getattr(bundle.cfg, field) for field in _CONFIG_FIELDS},
        "encoder_hidden": bundle.encoder.hidden,
        "fps": bundle.fps,
        "normalization": {"mean": bundle.mean.tolist(), "std": bundle.std.tolist()},
        "vocab": list(bundle.vocab.labels),
        "params": entries,
    }
    (out_dir / MANIFEST_NAME).write_text(json.dumps(manifest, separators=(",", ":")) + "\n")
    (out_dir / PAYLOAD_NAME).write_bytes(b"".join(chunks))
    return out_dir


def load_checkpoint(ckpt_dir) -> ModelBundle:
    ckpt_dir = Path(ckpt_dir)
    manifest_path = ckpt_dir / MANIFEST_NAME
    if not manifest_path.exists():
        raise SchemaError(f"no {MANIFEST_NAME} in {ckpt_dir}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"checkpoint manifest: invalid JSON ({exc.msg})") from exc
    if manifest.get("version") != CHECKPOINT_VERSION:
        raise SchemaError("unsupported checkpoint version")
    for key in ("config", "encoder_hidden", "fps", "normalization", "vocab", "params"):
        if key not in manifest:
            raise SchemaError(f"checkpoint manifest missing {key!r}")

    cfg = DiffusionConfig(**manifest["config"])
    vocab = LabelVocabulary(tuple(manifest["vocab"]))
    denoiser = MotionDenoiser(cfg, num_labels=len(vocab), encoder_hidden=manifest["encoder_hidden"])
    encoder = BoxMotionEncoder(hidden=manifest["encoder_hidden"])

    payload = np.frombuffer((ckpt_dir / PAYLOAD_NAME).read_bytes(), dtype="<f4")
    tensors = {}
    for entry in manifest["params"]:
        lo, hi = entry["offset"], entry["offset"] + entry["numel"]
        if hi > payload.size:
            raise SchemaError(f"parameter {entry['name']!r} overruns the payload")
        tensors[entry["name"]] = torch.from_numpy(
            payload[lo:hi].reshape(entry["shape"]).copy()
        )

    for prefix, module in (("denoiser", denoiser), ("encoder", encoder)):
        state = {}
        for name, param in module.named_parameters():
            full = f"{prefix}.{name}"
            if full not in tensors:
                raise SchemaError(f"checkpoint missing parameter {full!r}")
            if tuple(tensors[full].shape) != tuple(param.shape):
                raise SchemaError(f"parameter {full!r} has wrong shape")
            state[name] = tensors[full]
        module.load_state_dict(state, strict=False)

    norm = manifest["normalization"]
    return ModelBundle(
        cfg,
        denoiser,
        encoder,
        make_schedule(cfg),
        np.asarray(norm["mean"], dtype=np.float64),
        np.asarray(norm["std"], dtype=np.float64),
        vocab,
        manifest["fps"],
    )
