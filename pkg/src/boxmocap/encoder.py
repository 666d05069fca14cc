"""Permutation-invariant box motion encoder.

Per box: each of the 8 vertices goes through a small MLP, then mean and max
pooled features are summed. Per frame: present-box codes interact through a
single-head self-attention layer and are pooled the same way; frames with no
present box yield a zero sentinel code.

Invariance is exact, not just up to summation order: vertices and box codes
are sorted lexicographically before any reduction, and absent slots are
packed to the back as exact zeros, so permuting the inputs cannot change the
floating-point result.
"""

import math
from typing import Optional, Sequence

import numpy as np
import torch
from torch import nn

from .types import BoxMotionSequence, BoxPose

_MASK_FILL = -1e30  # exact-zero attention weight after softmax underflow


def box_vertices(box: BoxPose) -> np.ndarray:
    """The 8 corner vertices in fixed sign order."""
    return box.corners()


def _sort_rows(rows: np.ndarray) -> np.ndarray:
    return np.lexsort(rows.T[::-1])


def prepare_sequence(frames, num_slots: Optional[int] = None):
    """Pack per-frame boxes into (F, S, 8, 3) sorted vertices + (F, S) mask.

    Present boxes go to the front of each frame row; absent slots are zero.
    """
    frames = [list(row) for row in frames]
    if num_slots is None:
        num_slots = max((len(row) for row in frames), default=1)
    F = len(frames)
    verts = np.zeros((F, num_slots, 8, 3))
    mask = np.zeros((F, num_slots), dtype=bool)
    for f, row in enumerate(frames):
        present = [box for box in row if box is not None]
        for s, box in enumerate(present):
            v = box.corners()
            verts[f, s] = v[_sort_rows(v)]
            mask[f, s] = True
    return verts, mask


class BoxMotionEncoder(nn.Module):
    def __init__(self, hidden: int = 128, dtype: torch.dtype = torch.float32):
        super().__init__()
        self.hidden = hidden
        self.vertex_in = nn.Linear(3, hidden, dtype=dtype)
        self.vertex_out = nn.Linear(hidden, hidden, dtype=dtype)
        self.wq = nn.Linear(hidden, hidden, dtype=dtype)
        self.wk = nn.Linear(hidden, hidden, dtype=dtype)
        self.wv = nn.Linear(hidden, hidden, dtype=dtype)
        self.wo = nn.Linear(hidden, hidden, dtype=dtype)

    @property
    def dtype(self) -> torch.dtype:
        return self.vertex_in.weight.dtype

    def _pooled(self, feats: torch.Tensor, dim: int) -> torch.Tensor:
        """Mean plus max over `dim`, max taking the first index on ties."""
        idx = feats.detach().argmax(dim=dim, keepdim=True)
        mx = feats.gather(dim, idx.expand(*feats.shape[:dim], 1, *feats.shape[dim + 1 :]))
        return feats.mean(dim=dim) + mx.squeeze(dim)

    def _canonical_order(self, codes: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        """Per-frame permutation: present codes in lexicographic row order.

        One global lexsort with the frame index as the most significant key;
        stability keeps ties (and the identical absent codes) in slot order.
        """
        codes_np = codes.detach().cpu().numpy()
        mask_np = mask.cpu().numpy()
        F, S = mask_np.shape
        flat = codes_np.reshape(F * S, -1)
        keys = tuple(flat[:, c] for c in range(flat.shape[1] - 1, -1, -1))
        keys += ((~mask_np).ravel(), np.repeat(np.arange(F), S))
        order = np.lexsort(keys).reshape(F, S) - np.arange(F)[:, None] * S
        return torch.as_tensor(order, device=codes.device)

    def forward_prepared(self, verts: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        """(..., S, 8, 3) vertices + (..., S) mask -> (..., hidden) frame codes."""
        lead = mask.shape[:-1]
        S = mask.shape[-1]
        verts = verts.reshape(-1, S, 8, 3)
        mask = mask.reshape(-1, S)
        feats = self.vertex_out(torch.nn.functional.silu(self.vertex_in(verts)))
        codes = self._pooled(feats, dim=2)  # (F, S, hidden)

        order = self._canonical_order(codes, mask)
        codes = codes.gather(1, order.unsqueeze(-1).expand(-1, -1, self.hidden))
        counts = mask.sum(dim=1)
        packed = torch.arange(S).unsqueeze(0) < counts.unsqueeze(1)  # present-first mask

        q, k, v = self.wq(codes), self.wk(codes), self.wv(codes)
        logits = q @ k.transpose(1, 2) / math.sqrt(self.hidden)
        logits = logits.masked_fill(~packed.unsqueeze(1), _MASK_FILL)
        attended = codes + self.wo(torch.softmax(logits, dim=2) @ v)

        keep = packed.unsqueeze(-1).to(attended.dtype)
        mean = (attended * keep).sum(dim=1) / counts.clamp(min=1).unsqueeze(1)
        masked = attended.masked_fill(~packed.unsqueeze(-1), -math.inf)
        idx = masked.detach().argmax(dim=1, keepdim=True)
        mx = attended.gather(1, idx.expand(-1, 1, self.hidden)).squeeze(1)
        out = mean + mx
        out = torch.where(counts.unsqueeze(1) > 0, out, torch.zeros_like(out))
        return out.reshape(*lead, self.hidden)

    def encode_sequence(self, seq) -> torch.Tensor:
        frames = seq.frames if isinstance(seq, BoxMotionSequence) else tuple(seq)
        verts, mask = prepare_sequence(frames)
        return self.forward_prepared(
            torch.as_tensor(verts, dtype=self.dtype), torch.as_tensor(mask)
        )

    def encode_frame(self, boxes: Sequence[Optional[BoxPose]]) -> torch.Tensor:
        return self.encode_sequence([list(boxes)])[0]

    def encode_box(self, box: BoxPose) -> torch.Tensor:
        verts = box_vertices(box)
        verts = verts[_sort_rows(verts)]
        t = torch.as_tensor(verts, dtype=self.dtype).unsqueeze(0)
        feats = self.vertex_out(torch.nn.functional.silu(self.vertex_in(t)))
        return self._pooled(feats, dim=1)[0]


def encode_box(box: BoxPose, params: BoxMotionEncoder) -> torch.Tensor:
    return params.encode_box(box)


def encode_frame(boxes, params: BoxMotionEncoder) -> torch.Tensor:
    return params.encode_frame(boxes)


def encode_sequence(seq, params: BoxMotionEncoder) -> torch.Tensor:
    return params.encode_sequence(seq)


def encoder_backward(seq, params: BoxMotionEncoder, upstream: torch.Tensor) -> dict:
    """Parameter gradients of sum(codes * upstream) via the exact chain rule."""
    codes = params.encode_sequence(seq)
    named = list(params.named_parameters())
    grads = torch.autograd.grad(
        codes,
        [p for _, p in named],
        grad_outputs=upstream.to(codes.dtype),
        allow_unused=True,
    )
    return {
        name: (g if g is not None else torch.zeros_like(p))
        for (name, p), g in zip(named, grads)
    }
