"""Rectified-flow training and sampling over six-face latents.

One model serves both generation modes through a per-sample binary switch:
with the switch off it denoises all six faces from a condition id alone;
with the switch on, face 0 is held at the clean conditioning view, the other
five are denoised, and face 0 drops out of the loss. Paths are straight
lines between data and noise, so the regression target is the constant
velocity noise - data.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .geometry import FaceId, cubemap_from_sphere_function
from .jointface import NUM_FACES, ToyPanoramaNet

__all__ = [
    "TrainingError",
    "FlowBatch",
    "SamplerConfig",
    "noisify",
    "target_velocity",
    "sample_switch",
    "flow_loss",
    "make_flow_batch",
    "train_step",
    "train_model",
    "euler_sample",
    "ToyDataset",
    "make_toy_dataset",
    "condition_direction",
]


class TrainingError(RuntimeError):
    """Raised when a training step produces a non-finite loss."""


def noisify(f: torch.Tensor, eps: torch.Tensor, t) -> torch.Tensor:
    """Straight-path point (1 - t) * f + t * eps; t may be per-sample."""
    if f.shape != eps.shape:
        raise ValueError(f"shape mismatch: {tuple(f.shape)} vs {tuple(eps.shape)}")
    t = torch.as_tensor(t, dtype=f.dtype)
    if torch.any(t < 0.0) or torch.any(t > 1.0):
        raise ValueError("t must lie in [0, 1]")
    while t.ndim < f.ndim:
        t = t.unsqueeze(-1)
    return (1.0 - t) * f + t * eps


def target_velocity(f: torch.Tensor, eps: torch.Tensor) -> torch.Tensor:
    """Ground-truth straight-path velocity eps - f."""
    if f.shape != eps.shape:
        raise ValueError(f"shape mismatch: {tuple(f.shape)} vs {tuple(eps.shape)}")
    return eps - f


def sample_switch(rng: np.random.Generator) -> int:
    """Fair binary mode switch: 0 denoises all faces, 1 pins a clean face 0."""
    return int(rng.integers(0, 2))


@dataclass
class FlowBatch:
    """One training batch; face 0 of switched samples holds the clean view."""

    clean: torch.Tensor  # (B, 6, C, S, S)
    noise: torch.Tensor
    noisy: torch.Tensor
    t: torch.Tensor  # (B,)
    gamma: torch.Tensor  # (B,) in {0, 1}
    cond: torch.Tensor  # (B,)
    mask: torch.Tensor  # (B, 6) float; 1 = supervised

    def __post_init__(self):
        b = self.clean.shape[0]
        if self.clean.shape[1] != NUM_FACES:
            raise ValueError("clean faces must be (B, 6, C, S, S)")
        for name in ("noise", "noisy"):
            if getattr(self, name).shape != self.clean.shape:
                raise ValueError(f"{name} shape differs from clean")
        if self.t.shape != (b,) or self.gamma.shape != (b,) or self.cond.shape != (b,):
            raise ValueError("t, gamma, cond must be one per sample")
        if self.mask.shape != (b, NUM_FACES):
            raise ValueError("mask must be (B, 6)")


def make_flow_batch(
    clean: torch.Tensor,
    cond: torch.Tensor,
    rng_noise: np.random.Generator,
    rng_time: np.random.Generator,
    rng_switch: np.random.Generator,
) -> FlowBatch:
    """Draw noise, timesteps, and the mode switch from independent streams."""
    b = clean.shape[0]
    eps = torch.from_numpy(rng_noise.standard_normal(tuple(clean.shape))).to(clean.dtype)
    t_np = rng_time.uniform(0.0, 1.0, b)
    t_np[t_np == 0.0] = 0.5  # open interval; measure-zero guard
    t = torch.from_numpy(t_np).to(clean.dtype)
    gamma = torch.tensor([sample_switch(rng_switch) for _ in range(b)], dtype=torch.long)
    noisy = noisify(clean, eps, t)
    mask = torch.ones(b, NUM_FACES, dtype=clean.dtype)
    for i in range(b):
        if gamma[i] == 1:
            noisy[i, 0] = clean[i, 0]
            mask[i, 0] = 0.0
    return FlowBatch(
        clean=clean, noise=eps, noisy=noisy, t=t, gamma=gamma,
        cond=torch.as_tensor(cond, dtype=torch.long), mask=mask,
    )


def flow_loss(pred: torch.Tensor, batch: FlowBatch) -> torch.Tensor:
    """Per-face MSE against eps - f, averaged over the supervised faces.

    The per-sample normalizer is 1 / (number of supervised faces), i.e.
    1/6 with the switch off and 1/5 with it on.
    """
    if pred.shape != batch.clean.shape:
        raise ValueError("prediction shape differs from batch")
    target = target_velocity(batch.clean, batch.noise)
    per_face = ((pred - target) ** 2).flatten(2).mean(dim=2)  # (B, 6)
    per_sample = (per_face * batch.mask).sum(dim=1) / batch.mask.sum(dim=1)
    return per_sample.mean()


def train_step(model: ToyPanoramaNet, batch: FlowBatch, lr: float) -> float:
    """One plain-SGD step on the adapter parameters only; returns the loss."""
    pred = model(batch.noisy, batch.t, batch.cond, batch.gamma)
    loss = flow_loss(pred, batch)
    if not torch.isfinite(loss):
        raise TrainingError(f"non-finite loss {loss.item()!r}; step aborted")
    params = list(model.adapter_parameters())
    grads = torch.autograd.grad(loss, params)
    with torch.no_grad():
        for p, g in zip(params, grads):
            p.sub_(lr * g)
    return float(loss)


def train_model(
    model: ToyPanoramaNet,
    dataset: "ToyDataset",
    steps: int,
    lr: float,
    seed: int = 0,
    batch_size: int = 4,
    optimizer: str = "sgd",
    log_every: int = 0,
) -> list[float]:
    """Adapter-only training loop over the toy dataset; returns per-step losses."""
    streams = np.random.SeedSequence(seed).spawn(4)
    rng_batch = np.random.default_rng(streams[0])
    rng_noise = np.random.default_rng(streams[1])
    rng_time = np.random.default_rng(streams[2])
    rng_switch = np.random.default_rng(streams[3])

    opt = None
    if optimizer == "adam":
        opt = torch.optim.Adam(model.adapter_parameters(), lr=lr)
    elif optimizer != "sgd":
        raise ValueError(f"unknown optimizer {optimizer!r}")

    losses = []
    for step in range(steps):
        idx = rng_batch.integers(0, len(dataset), batch_size)
        batch = make_flow_batch(
            dataset.faces[idx], dataset.cond_ids[idx], rng_noise, rng_time, rng_switch
        )
        if opt is None:
            loss = train_step(model, batch, lr)
        else:
            opt.zero_grad()
            pred = model(batch.noisy, batch.t, batch.cond, batch.gamma)
            loss_t = flow_loss(pred, batch)
            if not torch.isfinite(loss_t):
                raise TrainingError(f"non-finite loss {loss_t.item()!r}; step aborted")
            loss_t.backward()
            opt.step()
            loss = float(loss_t)
        losses.append(loss)
        if log_every and (step + 1) % log_every == 0:
            recent = np.mean(losses[-log_every:])
            print(f"step {step + 1}/{steps}  loss {recent:.4f}", flush=True)
    return losses


@dataclass
class SamplerConfig:
    steps: int = 50
    seed: int = 0
    mode: str = "t2p"

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.mode not in ("t2p", "v2p"):
            raise ValueError("mode must be 't2p' or 'v2p'")


def euler_sample(
    model,
    cond: int,
    cfg: SamplerConfig,
    view_face: torch.Tensor | None = None,
    shape: tuple[int, int, int] | None = None,
) -> torch.Tensor:
    """Integrate x' = -v from t = 1 to 0 on a uniform grid; returns (6, C, S, S).

    In view-conditioned mode, slot 0 is re-pinned to the clean view before
    every model call and its predicted velocity is discarded; the returned
    face 0 is the input view tensor, bit for bit.
    """
    if cfg.mode == "v2p":
        if view_face is None:
            raise ValueError("v2p sampling requires view_face")
        shape = tuple(view_face.shape)
    elif shape is None:
        if isinstance(model, ToyPanoramaNet):
            shape = (model.cfg.face_channels, model.cfg.face_size, model.cfg.face_size)
        else:
            raise ValueError("t2p sampling needs an explicit face shape for this model")

    rng = np.random.default_rng(cfg.seed)
    dtype = view_face.dtype if view_face is not None else torch.float64
    x = torch.from_numpy(rng.standard_normal((1, NUM_FACES) + shape)).to(dtype)
    gamma = torch.tensor([1 if cfg.mode == "v2p" else 0])
    cond_t = torch.tensor([cond], dtype=torch.long)
    dt = 1.0 / cfg.steps
    with torch.no_grad():
        for k in range(cfg.steps):
            t_k = 1.0 - k * dt
            if cfg.mode == "v2p":
                x[0, 0] = view_face
            v = model(x, torch.tensor([t_k], dtype=x.dtype), cond_t, gamma)
            x = x - dt * v
    out = x[0]
    if cfg.mode == "v2p":
        out[0] = view_face
    return out


_CONDITION_DIRS = np.array(
    [
        [0.0, 0.0, 1.0],   # front
        [1.0, 0.0, 0.0],   # right
        [0.0, 0.0, -1.0],  # back
        [-1.0, 0.0, 0.0],  # left
        [0.0, 1.0, 0.0],   # up
        [0.0, -1.0, 0.0],  # down
    ]
)


def condition_direction(cond_id: int) -> np.ndarray:
    """Axis direction of the bright lobe tied to a condition id."""
    return _CONDITION_DIRS[cond_id % len(_CONDITION_DIRS)].copy()


@dataclass
class ToyDataset:
    """Synthetic seamless panoramas: smooth sphere functions as cubemaps."""

    faces: torch.Tensor  # (n, 6, C, S, S) float64
    cond_ids: torch.Tensor  # (n,) long
    seed: int

    def __len__(self) -> int:
        return self.faces.shape[0]


def _scene_function(rng: np.random.Generator, channels: int, cond_id: int):
    """Gentle harmonic mixture plus a bright lobe toward the condition axis."""
    coef = rng.uniform(-1.0, 1.0, (channels, 8))
    bound = np.array([1, 1, 1, 0.5, 0.5, 0.5, 1, 2.0])
    coef = coef / (np.abs(coef) @ bound)[:, None] * 0.04
    lobe_amp = rng.uniform(0.07, 0.10, channels)
    lobe_dir = condition_direction(cond_id)
    sharp = 1.2

    def fn(d):
        x, y, z = d[..., 0], d[..., 1], d[..., 2]
        basis = np.stack(
            [x, y, z, x * y, y * z, z * x, x * x - y * y, 3 * z * z - 1], axis=-1
        )
        vals = np.tensordot(basis, coef, axes=([-1], [1]))
        lobe = np.exp(sharp * (d @ lobe_dir - 1.0))
        return 0.45 + vals + lobe[..., None] * lobe_amp

    return fn


def make_toy_dataset(
    n_scenes: int,
    face_size: int,
    seed: int,
    channels: int = 3,
    n_conditions: int = 4,
) -> ToyDataset:
    """Seamless synthetic cubemaps with round-robin condition assignment.

    Each scene is a smooth low-frequency sphere function whose dominant
    feature is a lobe toward one of ``n_conditions`` axis directions; the
    scene's condition id names that lobe.
    """
    if not 1 <= n_conditions <= 6:
        raise ValueError("n_conditions must be in 1..6")
    root = np.random.SeedSequence(seed)
    faces = np.empty((n_scenes, NUM_FACES, channels, face_size, face_size))
    cond_ids = np.empty(n_scenes, dtype=np.int64)
    for i, child in enumerate(root.spawn(n_scenes)):
        rng = np.random.default_rng(child)
        cond = i % n_conditions
        cube = cubemap_from_sphere_function(
            _scene_function(rng, channels, cond), face_size, channels
        )
        faces[i] = cube.faces.transpose(0, 3, 1, 2)  # channels-first per face
        cond_ids[i] = cond
    return ToyDataset(
        faces=torch.from_numpy(faces), cond_ids=torch.from_numpy(cond_ids), seed=seed
    )


def dataset_cubemap(dataset: ToyDataset, index: int):
    """One scene back as a channels-last Cubemap."""
    from .geometry import Cubemap

    return Cubemap(dataset.faces[index].numpy().transpose(0, 2, 3, 1))
