"""Joint-face adapter attention inside a small frozen transformer backbone.

The backbone treats each cube face as an independent image: per-face
self-attention, cross-attention to condition tokens, and an MLP per block,
all randomly initialized and frozen. Between the self-attention and the
cross-attention, a trainable adapter concatenates the six faces of each
panorama along the token axis, normalizes them with one shared LayerNorm,
and runs full softmax attention over all faces' tokens so information can
flow across faces. Queries and keys carry a rotary embedding of each token's
unit direction on the sphere, and the adapter's output projection starts at
zero so an untrained adapter is exactly the identity.
"""

from __future__ import annotations

import math

import numpy as np
import torch
from torch import nn

from .fileio import RunConfig, load_checkpoint, save_checkpoint
from .geometry import FaceId, dir_from_face_pixel

__all__ = [
    "joint_reshape",
    "joint_unreshape",
    "spherical_rope",
    "full_attention",
    "JointFaceAdapter",
    "ToyPanoramaNet",
    "token_directions",
    "save_model",
    "load_model",
]

NUM_FACES = 6


def joint_reshape(z: torch.Tensor) -> torch.Tensor:
    """(B*6, N, C) -> (B, 6N, C); face f of panorama b fills slots [fN, (f+1)N)."""
    if z.ndim != 3 or z.shape[0] % NUM_FACES != 0:
        raise ValueError(f"expected (B*6, N, C), got {tuple(z.shape)}")
    b6, n, c = z.shape
    return z.reshape(b6 // NUM_FACES, NUM_FACES * n, c)


def joint_unreshape(z_joint: torch.Tensor) -> torch.Tensor:
    """Inverse of :func:`joint_reshape`, bitwise."""
    if z_joint.ndim != 3 or z_joint.shape[1] % NUM_FACES != 0:
        raise ValueError(f"expected (B, 6N, C), got {tuple(z_joint.shape)}")
    b, t, c = z_joint.shape
    return z_joint.reshape(b * NUM_FACES, t // NUM_FACES, c)


def spherical_rope(x: torch.Tensor, dirs: torch.Tensor, rope_base: float = 10000.0) -> torch.Tensor:
    """Rotate channel pairs of queries/keys by angles set by the token's 3D direction.

    The last dimension d (divisible by 6) is split into three equal groups,
    one per axis; pair m inside a group is rotated by
    rope_base**(-2m / (d/3)) times that axis coordinate. Norm-preserving.
    """
    d = x.shape[-1]
    if d % 6 != 0:
        raise ValueError(f"head dim {d} must be divisible by 6 for 3-axis rotary pairs")
    t = x.shape[-2]
    if dirs.shape != (t, 3):
        raise ValueError(f"dirs must be ({t}, 3), got {tuple(dirs.shape)}")
    pairs = d // 6
    m = torch.arange(pairs, dtype=x.dtype, device=x.device)
    theta = rope_base ** (-2.0 * m / (d / 3.0))
    angles = dirs.to(x.dtype)[:, :, None] * theta[None, None, :]  # (T, 3, pairs)
    cos = torch.cos(angles)
    sin = torch.sin(angles)
    shaped = x.reshape(*x.shape[:-1], 3, pairs, 2)
    x1, x2 = shaped[..., 0], shaped[..., 1]
    out = torch.stack((x1 * cos - x2 * sin, x1 * sin + x2 * cos), dim=-1)
    return out.reshape(x.shape)


def full_attention(
    q: torch.Tensor, k: torch.Tensor, v: torch.Tensor, return_weights: bool = False
):
    """softmax(Q K^T / sqrt(d)) V over the full token axis, per head."""
    d = q.shape[-1]
    scores = q @ k.transpose(-2, -1) / math.sqrt(d)
    weights = torch.softmax(scores, dim=-1)
    out = weights @ v
    return (out, weights) if return_weights else out


def _split_heads(x: torch.Tensor, heads: int) -> torch.Tensor:
    b, t, c = x.shape
    return x.reshape(b, t, heads, c // heads).transpose(1, 2)


def _merge_heads(x: torch.Tensor) -> torch.Tensor:
    b, h, t, dh = x.shape
    return x.transpose(1, 2).reshape(b, t, h * dh)


class JointFaceAdapter(nn.Module):
    """Trainable cross-face attention block; identity while w_o stays zero."""

    def __init__(self, channels: int, heads: int, rope_base: float = 10000.0,
                 generator: torch.Generator | None = None):
        super().__init__()
        if channels % heads != 0 or (channels // heads) % 6 != 0:
            raise ValueError("channels must split into heads with head dim divisible by 6")
        self.heads = heads
        self.rope_base = rope_base
        self.ln = nn.LayerNorm(channels)
        self.w_q = nn.Linear(channels, channels, bias=False)
        self.w_k = nn.Linear(channels, channels, bias=False)
        self.w_v = nn.Linear(channels, channels, bias=False)
        self.w_o = nn.Linear(channels, channels, bias=False)
        std = 1.0 / math.sqrt(channels)
        for lin in (self.w_q, self.w_k, self.w_v):
            lin.weight.data.normal_(0.0, std, generator=generator)
        self.w_o.weight.data.zero_()

    def forward(self, z: torch.Tensor, dirs: torch.Tensor) -> torch.Tensor:
        zj = joint_reshape(z)
        y = self.ln(zj)
        q = spherical_rope(_split_heads(self.w_q(y), self.heads), dirs, self.rope_base)
        k = spherical_rope(_split_heads(self.w_k(y), self.heads), dirs, self.rope_base)
        v = _split_heads(self.w_v(y), self.heads)
        attn = _merge_heads(full_attention(q, k, v))
        zj = zj + self.w_o(attn)
        return joint_unreshape(zj)


class PerFaceAttention(nn.Module):
    """Frozen stand-in for the backbone's own token mixer, one face at a time."""

    def __init__(self, channels: int, heads: int, generator: torch.Generator):
        super().__init__()
        self.heads = heads
        self.ln = nn.LayerNorm(channels)
        self.qkv = nn.Linear(channels, 3 * channels, bias=False)
        self.proj = nn.Linear(channels, channels, bias=False)
        std = 1.0 / math.sqrt(channels)
        self.qkv.weight.data.normal_(0.0, std, generator=generator)
        self.proj.weight.data.normal_(0.0, std, generator=generator)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        q, k, v = self.qkv(self.ln(z)).chunk(3, dim=-1)
        out = full_attention(
            _split_heads(q, self.heads), _split_heads(k, self.heads), _split_heads(v, self.heads)
        )
        return self.proj(_merge_heads(out))


class ConditionCrossAttention(nn.Module):
    """Frozen cross-attention from face tokens to the panorama's condition tokens."""

    def __init__(self, channels: int, heads: int, generator: torch.Generator):
        super().__init__()
        self.heads = heads
        self.ln = nn.LayerNorm(channels)
        self.w_q = nn.Linear(channels, channels, bias=False)
        self.w_k = nn.Linear(channels, channels, bias=False)
        self.w_v = nn.Linear(channels, channels, bias=False)
        self.proj = nn.Linear(channels, channels, bias=False)
        std = 1.0 / math.sqrt(channels)
        for lin in (self.w_q, self.w_k, self.w_v, self.proj):
            lin.weight.data.normal_(0.0, std, generator=generator)

    def forward(self, z: torch.Tensor, cond_tokens: torch.Tensor) -> torch.Tensor:
        q = _split_heads(self.w_q(self.ln(z)), self.heads)
        k = _split_heads(self.w_k(cond_tokens), self.heads)
        v = _split_heads(self.w_v(cond_tokens), self.heads)
        return self.proj(_merge_heads(full_attention(q, k, v)))


class FeedForward(nn.Module):
    def __init__(self, channels: int, generator: torch.Generator):
        super().__init__()
        hidden = 4 * channels
        self.ln = nn.LayerNorm(channels)
        self.fc1 = nn.Linear(channels, hidden)
        self.fc2 = nn.Linear(hidden, channels)
        self.fc1.weight.data.normal_(0.0, 1.0 / math.sqrt(channels), generator=generator)
        self.fc2.weight.data.normal_(0.0, 1.0 / math.sqrt(hidden), generator=generator)
        self.fc1.bias.data.zero_()
        self.fc2.bias.data.zero_()

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        return self.fc2(torch.nn.functional.gelu(self.fc1(self.ln(z))))


class Block(nn.Module):
    """Frozen face attention -> adapter -> frozen cross-attention -> frozen MLP."""

    def __init__(self, cfg: RunConfig, generator: torch.Generator):
        super().__init__()
        self.face_attn = PerFaceAttention(cfg.channels, cfg.heads, generator)
        self.adapter = JointFaceAdapter(cfg.channels, cfg.heads, cfg.rope_base, generator)
        self.cross_attn = ConditionCrossAttention(cfg.channels, cfg.heads, generator)
        self.mlp = FeedForward(cfg.channels, generator)

    def forward(self, z, dirs, cond_tokens):
        z = z + self.face_attn(z)
        z = self.adapter(z, dirs)
        z = z + self.cross_attn(z, cond_tokens)
        z = z + self.mlp(z)
        return z


class TimeEmbedding(nn.Module):
    """Sinusoidal features of t projected by a frozen two-layer MLP."""

    def __init__(self, channels: int, generator: torch.Generator):
        super().__init__()
        half = channels // 2
        freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float64) / half)
        self.register_buffer("freqs", freqs)
        self.fc1 = nn.Linear(channels, channels)
        self.fc2 = nn.Linear(channels, channels)
        std = 1.0 / math.sqrt(channels)
        self.fc1.weight.data.normal_(0.0, std, generator=generator)
        self.fc2.weight.data.normal_(0.0, std, generator=generator)
        self.fc1.bias.data.zero_()
        self.fc2.bias.data.zero_()

    def forward(self, t: torch.Tensor) -> torch.Tensor:
        args = t[:, None].to(self.freqs.dtype) * 1000.0 * self.freqs[None, :]
        feats = torch.cat([torch.sin(args), torch.cos(args)], dim=-1)
        return self.fc2(torch.nn.functional.silu(self.fc1(feats.to(self.fc1.weight.dtype))))


def token_directions(face_size: int, patch_size: int) -> np.ndarray:
    """Unit direction of every patch center, shape (6, N, 3), FaceId order."""
    grid = face_size // patch_size
    half = (patch_size - 1) / 2.0
    dirs = np.empty((NUM_FACES, grid * grid, 3))
    for face in FaceId:
        for gy in range(grid):
            for gx in range(grid):
                dirs[int(face), gy * grid + gx] = dir_from_face_pixel(
                    face, gx * patch_size + half, gy * patch_size + half, face_size
                )
    return dirs


class ToyPanoramaNet(nn.Module):
    """Velocity-field network over six face latents with adapter-only training.

    All backbone tensors are frozen at their random initialization; only the
    per-block adapters (shared LayerNorm + attention projections) train.
    """

    def __init__(self, cfg: RunConfig, seed: int = 0, dtype: torch.dtype = torch.float64):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.patch_dim = cfg.face_channels * cfg.patch_size * cfg.patch_size
        gen = torch.Generator().manual_seed(seed)

        self.patch_embed = nn.Linear(self.patch_dim, cfg.channels)
        self.patch_embed.weight.data.normal_(0.0, 1.0 / math.sqrt(self.patch_dim), generator=gen)
        self.patch_embed.bias.data.zero_()
        self.time_embed = TimeEmbedding(cfg.channels, gen)
        cond = torch.empty(cfg.vocab_size, cfg.cond_tokens, cfg.channels)
        cond.normal_(0.0, 1.0, generator=gen)
        self.cond_table = nn.Parameter(cond)
        self.blocks = nn.ModuleList(Block(cfg, gen) for _ in range(cfg.depth))
        self.final_ln = nn.LayerNorm(cfg.channels)
        self.head = nn.Linear(cfg.channels, self.patch_dim)
        self.head.weight.data.normal_(0.0, 1.0 / math.sqrt(cfg.channels), generator=gen)
        self.head.bias.data.zero_()

        dirs = token_directions(cfg.face_size, cfg.patch_size).reshape(-1, 3)
        self.register_buffer("token_dirs", torch.from_numpy(dirs))

        self.to(dtype)
        # Freeze everything, then re-enable the adapters.
        self.requires_grad_(False)
        for block in self.blocks:
            block.adapter.requires_grad_(True)

    def adapter_parameters(self):
        for block in self.blocks:
            yield from block.adapter.parameters()

    def frozen_parameters(self):
        for p in self.parameters():
            if not p.requires_grad:
                yield p

    def _patchify(self, faces: torch.Tensor) -> torch.Tensor:
        b, f, ch, s, _ = faces.shape
        p = self.cfg.patch_size
        g = s // p
        x = faces.reshape(b * f, ch, g, p, g, p)
        x = x.permute(0, 2, 4, 1, 3, 5).reshape(b * f, g * g, ch * p * p)
        return x

    def _unpatchify(self, tokens: torch.Tensor, batch: int) -> torch.Tensor:
        p = self.cfg.patch_size
        ch = self.cfg.face_channels
        s = self.cfg.face_size
        g = s // p
        x = tokens.reshape(batch * NUM_FACES, g, g, ch, p, p)
        x = x.permute(0, 3, 1, 4, 2, 5).reshape(batch, NUM_FACES, ch, s, s)
        return x

    def forward(
        self,
        faces: torch.Tensor,
        t: torch.Tensor,
        cond: torch.Tensor,
        gamma: torch.Tensor | None = None,
        dirs: torch.Tensor | None = None,
    ) -> torch.Tensor:
        """Predict per-face velocity fields.

        faces: (B, 6, C, S, S) noisy latents; when gamma is 1 for a sample,
        slot 0 must carry the clean conditioning view. t: (B,) in [0, 1].
        cond: (B,) condition ids.
        """
        if faces.ndim != 5 or faces.shape[1] != NUM_FACES:
            raise ValueError(f"faces must be (B, 6, C, S, S), got {tuple(faces.shape)}")
        b = faces.shape[0]
        t = torch.as_tensor(t, dtype=faces.dtype).reshape(-1)
        if t.shape[0] != b:
            raise ValueError("one timestep per batch sample required")
        if torch.any(t < 0.0) or torch.any(t > 1.0):
            raise ValueError("timesteps must lie in [0, 1]")
        cond = torch.as_tensor(cond, dtype=torch.long).reshape(-1)
        if torch.any(cond < 0) or torch.any(cond >= self.cfg.vocab_size):
            raise ValueError("condition id out of vocabulary")
        if gamma is not None:
            gamma = torch.as_tensor(gamma).reshape(-1)
            if not torch.all((gamma == 0) | (gamma == 1)):
                raise ValueError("gamma must be 0 or 1")
        if dirs is None:
            dirs = self.token_dirs

        tokens = self.patch_embed(self._patchify(faces))
        temb = self.time_embed(t)
        tokens = tokens + temb.repeat_interleave(NUM_FACES, dim=0)[:, None, :]
        cond_tokens = self.cond_table[cond].repeat_interleave(NUM_FACES, dim=0)
        for block in self.blocks:
            tokens = block(tokens, dirs, cond_tokens)
        out = self.head(self.final_ln(tokens))
        return self._unpatchify(out, b)


_META_FIELDS = (
    "depth", "channels", "heads", "rope_base", "vocab_size", "cond_tokens",
    "face_size", "face_channels", "patch_size",
)


def save_model(path, model: ToyPanoramaNet) -> None:
    """Checkpoint = named f32 tensor table; sizes ride along as meta.* scalars."""
    tensors = {name: value.detach().cpu().numpy() for name, value in model.state_dict().items()}
    for field in _META_FIELDS:
        tensors[f"meta.{field}"] = np.float32(getattr(model.cfg, field))
    save_checkpoint(path, tensors)


def load_model(path, dtype: torch.dtype = torch.float64) -> ToyPanoramaNet:
    tensors = load_checkpoint(path)
    kwargs = {}
    for field in _META_FIELDS:
        key = f"meta.{field}"
        if key not in tensors:
            raise ValueError(f"{path}: checkpoint missing {key}")
        value = float(tensors.pop(key))
        kwargs[field] = value if field == "rope_base" else int(value)
    cfg = RunConfig(**kwargs).validate()
    model = ToyPanoramaNet(cfg, seed=0, dtype=dtype)
    state = {name: torch.from_numpy(arr.copy()).to(dtype) for name, arr in tensors.items()}
    model.load_state_dict(state)
    return model
