"""Desk-scale motion diffusion: DDPM over fixed-length joint-position
sequences with label conditioning (classifier-free), box conditioning
(ControlNet-style zero-initialized residual branch fed by the box encoder),
and inference-time spatial guidance.

The denoiser predicts x0 directly. Training is two-phase: the base network
is trained first on (motion, label); it is then frozen, its blocks are
copied into the control branch, and only the box encoder and control branch
are trained on full (boxes, motion, label) triples.
"""

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch
from torch import nn

from .encoder import BoxMotionEncoder, prepare_sequence
from .errors import EmptyDataset, InvariantError, ShapeMismatch
from .guidance import GuidanceConfig, guidance_grad
from .types import BoxMotionSequence, LabelVocabulary, SkeletonMotion

GROUND_TOL = 0.05
STD_FLOOR = 1e-6


@dataclass(frozen=True)
class DiffusionConfig:
    steps: int = 1000  # desk-scale tests use 100
    beta_start: float = 1e-4
    beta_end: float = 0.02
    d_model: int = 128
    layers: int = 4
    heads: int = 4
    frames: int = 60
    joints: int = 22
    cfg_scale: float = 2.5
    label_drop: float = 0.1

    def __post_init__(self):
        if self.steps < 1:
            raise InvariantError("steps must be >= 1")
        if not 0.0 < self.beta_start <= self.beta_end < 1.0:
            raise InvariantError("need 0 < beta_start <= beta_end < 1")
        if min(self.d_model, self.layers, self.heads, self.frames, self.joints) < 1:
            raise InvariantError("model dimensions must be positive")
        if self.d_model % self.heads or self.d_model % 2:
            raise InvariantError("d_model must be even and divisible by heads")
        if not 0.0 <= self.label_drop <= 1.0:
            raise InvariantError("label_drop must lie in [0, 1]")


@dataclass(frozen=True)
class NoiseSchedule:
    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray
    posterior_variance: np.ndarray

    def __post_init__(self):
        ab = self.alpha_bars
        if np.any(ab <= 0) or np.any(ab >= 1) or np.any(np.diff(ab) >= 0):
            raise InvariantError("alpha_bars must be strictly decreasing within (0, 1)")


def make_schedule(cfg: DiffusionConfig) -> NoiseSchedule:
    betas = np.linspace(cfg.beta_start, cfg.beta_end, cfg.steps)
    alphas = 1.0 - betas
    alpha_bars = np.cumprod(alphas)
    prev = np.concatenate([[1.0], alpha_bars[:-1]])
    posterior = betas * (1.0 - prev) / (1.0 - alpha_bars)
    return NoiseSchedule(betas, alphas, alpha_bars, posterior)


def q_sample(x0, t, noise, schedule: NoiseSchedule):
    """Forward process: x_t = sqrt(a_bar_t) x0 + sqrt(1 - a_bar_t) noise."""
    idx = np.asarray(t, dtype=np.int64) - 1
    ab = schedule.alpha_bars[idx]
    if torch.is_tensor(x0):
        ab_t = torch.as_tensor(ab, dtype=x0.dtype, device=x0.device)
        while ab_t.dim() < x0.dim():
            ab_t = ab_t.unsqueeze(-1)
        return torch.sqrt(ab_t) * x0 + torch.sqrt(1.0 - ab_t) * noise
    if np.ndim(ab) == 1:
        ab = ab.reshape((-1,) + (1,) * (np.ndim(x0) - 1))
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * noise


def sinusoidal_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float64) / half)
    args = t.double().reshape(-1, 1) * freqs.reshape(1, -1)
    return torch.cat([torch.sin(args), torch.cos(args)], dim=-1)


class AttentionBlock(nn.Module):
    """Pre-LN transformer block: self-attention + feed-forward, residual."""

    def __init__(self, d_model: int, heads: int):
        super().__init__()
        self.heads = heads
        self.ln1 = nn.LayerNorm(d_model)
        self.qkv = nn.Linear(d_model, 3 * d_model)
        self.proj = nn.Linear(d_model, d_model)
        self.ln2 = nn.LayerNorm(d_model)
        self.ff1 = nn.Linear(d_model, 2 * d_model)
        self.ff2 = nn.Linear(2 * d_model, d_model)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, n, d = x.shape
        hd = d // self.heads
        q, k, v = self.qkv(self.ln1(x)).chunk(3, dim=-1)
        q = q.view(b, n, self.heads, hd).transpose(1, 2)
        k = k.view(b, n, self.heads, hd).transpose(1, 2)
        v = v.view(b, n, self.heads, hd).transpose(1, 2)
        att = torch.softmax(q @ k.transpose(-2, -1) / math.sqrt(hd), dim=-1)
        out = (att @ v).transpose(1, 2).reshape(b, n, d)
        x = x + self.proj(out)
        return x + self.ff2(torch.nn.functional.silu(self.ff1(self.ln2(x))))


class MotionDenoiser(nn.Module):
    """x0-predicting denoiser: a token per frame plus one conditioning token
    (timestep + label), with a control branch mirroring the base blocks."""

    def __init__(self, cfg: DiffusionConfig, num_labels: int, encoder_hidden: int = 128):
        super().__init__()
        self.cfg = cfg
        d = cfg.d_model
        self.in_proj = nn.Linear(3 * cfg.joints, d)
        self.t_mlp = nn.Sequential(nn.Linear(d, d), nn.SiLU(), nn.Linear(d, d))
        self.label_emb = nn.Embedding(num_labels + 1, d)  # index 0 = null label
        self.blocks = nn.ModuleList(AttentionBlock(d, cfg.heads) for _ in range(cfg.layers))
        self.out_proj = nn.Linear(d, 3 * cfg.joints)
        self.ctrl_blocks = nn.ModuleList(AttentionBlock(d, cfg.heads) for _ in range(cfg.layers))
        self.box_proj = nn.Linear(encoder_hidden, d)
        self.zero_projs = nn.ModuleList(nn.Linear(d, d) for _ in range(cfg.layers))
        for zp in self.zero_projs:
            nn.init.zeros_(zp.weight)
            nn.init.zeros_(zp.bias)
        pos = sinusoidal_embedding(torch.arange(cfg.frames + 1), d).float()
        self.register_buffer("pos", pos.unsqueeze(0))

    def base_parameters(self):
        mods = [self.in_proj, self.t_mlp, self.label_emb, self.blocks, self.out_proj]
        for m in mods:
            yield from m.parameters()

    def control_parameters(self):
        for m in (self.ctrl_blocks, self.box_proj, self.zero_projs):
            yield from m.parameters()

    def init_control_from_base(self):
        """Clone trained base block weights into the control branch."""
        self.ctrl_blocks.load_state_dict(self.blocks.state_dict())

    def forward(
        self,
        x: torch.Tensor,
        t: torch.Tensor,
        label_idx: torch.Tensor,
        frame_codes: Optional[torch.Tensor] = None,
    ) -> torch.Tensor:
        cfg = self.cfg
        if x.dim() != 3 or x.shape[1] != cfg.frames or x.shape[2] != 3 * cfg.joints:
            raise ShapeMismatch(
                f"denoiser expects (B, {cfg.frames}, {3 * cfg.joints}), got {tuple(x.shape)}"
            )
        cond = self.t_mlp(sinusoidal_embedding(t, cfg.d_model).to(x.dtype))
        cond = cond + self.label_emb(label_idx)
        tokens = torch.cat([cond.unsqueeze(1), self.in_proj(x)], dim=1) + self.pos
        if frame_codes is None:
            z = tokens
            for blk in self.blocks:
                z = blk(z)
        else:
            if frame_codes.shape[:2] != (x.shape[0], cfg.frames):
                raise ShapeMismatch(
                    f"frame_codes must be (B, {cfg.frames}, h), got {tuple(frame_codes.shape)}"
                )
            pad = torch.zeros(x.shape[0], 1, cfg.d_model, dtype=x.dtype)
            c = tokens + torch.cat([pad, self.box_proj(frame_codes)], dim=1)
            z = tokens
            for blk, cblk, zp in zip(self.blocks, self.ctrl_blocks, self.zero_projs):
                c = cblk(c)
                z = blk(z) + zp(c)
        return self.out_proj(z[:, 1:])


def denoise(x_t, t, label_idx, frame_codes, params: MotionDenoiser) -> torch.Tensor:
    """Single denoiser evaluation; scalar t / label accepted for convenience."""
    if not torch.is_tensor(t):
        t = torch.full((x_t.shape[0],), int(t))
    if not torch.is_tensor(label_idx):
        label_idx = torch.full((x_t.shape[0],), int(label_idx), dtype=torch.long)
    return params(x_t, t, label_idx, frame_codes)


def predict_x0(
    params: MotionDenoiser,
    x: torch.Tensor,
    t: torch.Tensor,
    label_idx: int,
    frame_codes: Optional[torch.Tensor],
    cfg_scale: float,
) -> torch.Tensor:
    """Classifier-free combination over the label condition."""
    lbl = torch.full((x.shape[0],), label_idx, dtype=torch.long)
    cond = params(x, t, lbl, frame_codes)
    if label_idx == 0 or cfg_scale == 1.0:
        return cond
    uncond = params(x, t, torch.zeros_like(lbl), frame_codes)
    return uncond + cfg_scale * (cond - uncond)


class ModelBundle:
    """Trained denoiser + box encoder + everything needed to sample."""

    def __init__(self, cfg, denoiser, encoder, schedule, mean, std, vocab, fps):
        self.cfg = cfg
        self.denoiser = denoiser
        self.encoder = encoder
        self.schedule = schedule
        self.mean = np.asarray(mean, dtype=np.float64)
        self.std = np.asarray(std, dtype=np.float64)
        self.vocab = vocab
        self.fps = float(fps)

    def normalize(self, joints: np.ndarray) -> np.ndarray:
        flat = np.asarray(joints, dtype=np.float64).reshape(-1, 3 * self.cfg.joints)
        return (flat - self.mean) / self.std

    def denormalize(self, flat) -> np.ndarray:
        if torch.is_tensor(flat):
            flat = flat.detach().cpu().numpy()
        flat = np.asarray(flat, dtype=np.float64) * self.std + self.mean
        return flat.reshape(-1, self.cfg.joints, 3)


def train_model(
    items,
    cfg: DiffusionConfig,
    *,
    phase_a_steps: int = 3000,
    phase_b_steps: int = 2000,
    batch_size: int = 32,
    lr: float = 1e-3,
    seed: int = 0,
    encoder_hidden: int = 128,
    vocab: LabelVocabulary = LabelVocabulary(),
    progress=None,
):
    """Two-phase training over (boxes, motion, label) triples.

    Phase A trains the base denoiser with label dropout; phase B freezes it,
    copies its blocks into the control branch, and trains the box encoder
    plus control branch only. Returns (bundle, loss history).
    """
    if not items:
        raise EmptyDataset("training needs at least one (boxes, motion, label) triple")
    F, J = cfg.frames, cfg.joints
    for _, motion, _ in items:
        if motion.num_frames != F or motion.num_joints != J:
            raise ShapeMismatch(
                f"motion is {motion.num_frames}x{motion.num_joints}, config wants {F}x{J}"
            )

    x0 = np.stack([m.joints.reshape(F, 3 * J) for _, m, _ in items])
    mean = x0.mean(axis=(0, 1))
    std = np.maximum(x0.std(axis=(0, 1)), STD_FLOOR)
    data = torch.as_tensor((x0 - mean) / std, dtype=torch.float32)
    labels = torch.as_tensor([vocab.index(lbl) for _, _, lbl in items], dtype=torch.long)
    schedule = make_schedule(cfg)

    torch.manual_seed(seed)
    denoiser = MotionDenoiser(cfg, num_labels=len(vocab), encoder_hidden=encoder_hidden)
    box_encoder = BoxMotionEncoder(hidden=encoder_hidden)
    gen = torch.Generator().manual_seed(seed)
    n = len(items)
    history = {"phase_a": [], "phase_b": []}

    def batch_inputs():
        idx = torch.randint(n, (batch_size,), generator=gen)
        t = torch.randint(1, cfg.steps + 1, (batch_size,), generator=gen)
        noise = torch.randn(batch_size, F, 3 * J, generator=gen)
        lbl = labels[idx]
        drop = torch.rand(batch_size, generator=gen) < cfg.label_drop
        lbl = torch.where(drop, torch.zeros_like(lbl), lbl)
        return idx, t, noise, lbl

    opt = torch.optim.Adam(denoiser.base_parameters(), lr=lr)
    for step in range(phase_a_steps):
        idx, t, noise, lbl = batch_inputs()
        x_t = q_sample(data[idx], t, noise, schedule)
        loss = torch.mean((denoiser(x_t, t, lbl, None) - data[idx]) ** 2)
        opt.zero_grad()
        loss.backward()
        opt.step()
        history["phase_a"].append(loss.item())
        if progress:
            progress("a", step, history["phase_a"][-1])

    for p in denoiser.base_parameters():
        p.requires_grad_(False)
    denoiser.init_control_from_base()

    slots = max(boxes.num_boxes for boxes, _, _ in items)
    all_verts, all_masks = [], []
    for boxes, _, _ in items:
        verts, mask = prepare_sequence(boxes.frames, num_slots=slots)
        all_verts.append(verts)
        all_masks.append(mask)
    all_verts = torch.as_tensor(np.stack(all_verts), dtype=torch.float32)
    all_masks = torch.as_tensor(np.stack(all_masks))

    opt = torch.optim.Adam(
        list(denoiser.control_parameters()) + list(box_encoder.parameters()), lr=lr
    )
    for step in range(phase_b_steps):
        idx, t, noise, lbl = batch_inputs()
        codes = box_encoder.forward_prepared(all_verts[idx], all_masks[idx])
        x_t = q_sample(data[idx], t, noise, schedule)
        loss = torch.mean((denoiser(x_t, t, lbl, codes) - data[idx]) ** 2)
        opt.zero_grad()
        loss.backward()
        opt.step()
        history["phase_b"].append(loss.item())
        if progress:
            progress("b", step, history["phase_b"][-1])

    bundle = ModelBundle(
        cfg, denoiser, box_encoder, schedule, mean, std, vocab,
        fps=items[0][1].fps,
    )
    return bundle, history


def sample_motion(
    bundle: ModelBundle,
    label: Optional[str] = None,
    seq: Optional[BoxMotionSequence] = None,
    gcfg: GuidanceConfig = GuidanceConfig(),
    seed: int = 0,
    cfg_scale: Optional[float] = None,
) -> SkeletonMotion:
    """Ancestral DDPM sampling with optional box conditioning and guidance."""
    cfg = bundle.cfg
    sched = bundle.schedule
    scale = cfg.cfg_scale if cfg_scale is None else cfg_scale
    if seq is not None and seq.num_frames != cfg.frames:
        raise ShapeMismatch(f"box sequence has {seq.num_frames} frames, model wants {cfg.frames}")
    label_idx = bundle.vocab.index(label)

    codes = None
    if seq is not None:
        with torch.no_grad():
            codes = bundle.encoder.encode_sequence(seq).unsqueeze(0)

    t_active = max(1, int(round(gcfg.active_fraction * cfg.steps)))
    guided = seq is not None and gcfg.inner_steps > 0 and gcfg.step_scale > 0
    if guided:
        # guidance_grad averages over present (frame, box) pairs so the loss
        # is comparable across abstraction levels; the sampler steps with the
        # summed pull so per-joint strength does not shrink with F * B.
        n_present = sum(1 for row in seq.frames for box in row if box is not None)

    gen = torch.Generator().manual_seed(seed)
    x = torch.randn(1, cfg.frames, 3 * cfg.joints, generator=gen)
    for t in range(cfg.steps, 0, -1):
        t_tensor = torch.full((1,), t)
        with torch.no_grad():
            pred = predict_x0(bundle.denoiser, x, t_tensor, label_idx, codes, scale)
        if guided and t <= t_active:
            joints = bundle.denormalize(pred[0])
            step = gcfg.step_scale * max(sched.posterior_variance[t - 1], gcfg.variance_floor)
            # Trust region: the softmin gradient has repulsive terms whose
            # magnitude grows with distance, so uncapped steps diverge when
            # the x0 estimate starts far from the boxes. Cap each joint's
            # move per inner step at 2*tau, the association length scale.
            cap = 2.0 * gcfg.tau
            for _ in range(gcfg.inner_steps):
                delta = step * n_present * guidance_grad(joints, seq, gcfg)
                norms = np.linalg.norm(delta, axis=2, keepdims=True)
                delta *= np.minimum(1.0, cap / np.maximum(norms, 1e-300))
                joints = joints - delta
            pred = torch.as_tensor(bundle.normalize(joints), dtype=x.dtype).unsqueeze(0)
        if t > 1:
            ab_t = sched.alpha_bars[t - 1]
            ab_prev = sched.alpha_bars[t - 2]
            c0 = math.sqrt(ab_prev) * sched.betas[t - 1] / (1.0 - ab_t)
            c1 = math.sqrt(sched.alphas[t - 1]) * (1.0 - ab_prev) / (1.0 - ab_t)
            noise = torch.randn(x.shape, generator=gen)
            x = c0 * pred + c1 * x + math.sqrt(sched.posterior_variance[t - 1]) * noise
        else:
            x = pred

    joints = bundle.denormalize(x[0])
    # Clamp stray joints at the ground boundary instead of translating the
    # whole motion: a global lift would drag guided joints off their boxes.
    low = joints[:, :, 1] < -GROUND_TOL
    if low.any():
        joints = joints.copy()
        joints[:, :, 1] = np.maximum(joints[:, :, 1], -GROUND_TOL)
    return SkeletonMotion(fps=bundle.fps, joints=joints, label=label)
