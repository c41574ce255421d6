"""Forward corruption, noise-prediction loss, ancestral sampling and decoding.

The diffused object is the joint state: RGB channels in [-1, 1] stacked with
the analog-bit segmentation channels. Conditioning (normalized distance map
plus encoded class map) is concatenated to the network input at every step
and is never part of the diffused state itself.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import torch

from .analog_bits import ClassAlphabet, decode, encode
from .denoiser import ConditionalUNet, DenoiserConfig
from .geometry import BoundingBox, ConditioningMaps, normalize_distance
from .schedule import NoiseSchedule

CHECKPOINT_MAGIC = "BOXFORGE-CKPT-v1"


class TrainingError(RuntimeError):
    """Non-finite loss or other unrecoverable training failure."""


class SamplingError(RuntimeError):
    """Non-finite state encountered mid-chain."""


class CheckpointError(RuntimeError):
    """Unreadable or wrong-format checkpoint file."""


@dataclass
class GeneratedSample:
    """A decoded synthetic pair plus the provenance needed to reproduce it."""

    image: np.ndarray  # H x W x 3 uint8
    mask: np.ndarray  # H x W class values in {1..C}
    boxes: list[BoundingBox] = field(default_factory=list)
    seed: Optional[int] = None
    steps: Optional[int] = None
    sae: Optional[float] = None
    ebr: Optional[float] = None


def conditioning_channels(
    maps: ConditioningMaps, alphabet: ClassAlphabet, dtype=torch.float32
) -> torch.Tensor:
    """Stack the normalized distance map with the analog-bit class map.

    Returns (1 + b, H, W). Class-map values are box class ids with 0 for
    background; shifting by one turns them into mask-space classes so the
    same alphabet encodes both segmentation masks and conditioning.
    """
    h, w = maps.height, maps.width
    norm = normalize_distance(maps, h, w)
    class_grid = maps.class_map.astype(np.int64) + 1
    bits = encode(class_grid, alphabet)  # H x W x b
    stacked = np.concatenate([norm[:, :, None], bits], axis=2)
    return torch.from_numpy(stacked.transpose(2, 0, 1).copy()).to(dtype)


def _coef(schedule: NoiseSchedule, values: np.ndarray, t, like: torch.Tensor) -> torch.Tensor:
    """Per-step coefficient(s) shaped to broadcast over ``like``."""
    if torch.is_tensor(t):
        idx = t.long().cpu().numpy() - 1
    else:
        idx = int(t) - 1
    c = torch.as_tensor(values[idx], dtype=like.dtype, device=like.device)
    if c.ndim == 0:
        return c
    return c.view(-1, *([1] * (like.ndim - 1)))


def forward_diffuse(
    x0: torch.Tensor, t, noise: torch.Tensor, schedule: NoiseSchedule
) -> torch.Tensor:
    """Closed-form corruption: sqrt(acp_t) * x0 + sqrt(1 - acp_t) * noise.

    ``t`` is 1-based (1..T) and may be a scalar or a per-sample batch of
    steps; the caller supplies the noise so trajectories stay reproducible.
    """
    if x0.shape != noise.shape:
        raise ValueError(f"noise shape {tuple(noise.shape)} != x0 shape {tuple(x0.shape)}")
    _check_t(t, schedule)
    acp = schedule.alphas_cumprod
    return _coef(schedule, np.sqrt(acp), t, x0) * x0 + _coef(
        schedule, np.sqrt(1.0 - acp), t, x0
    ) * noise


def _check_t(t, schedule: NoiseSchedule) -> None:
    tmin = int(t.min()) if torch.is_tensor(t) else int(t)
    tmax = int(t.max()) if torch.is_tensor(t) else int(t)
    if tmin < 1 or tmax > schedule.num_steps:
        raise ValueError(f"step {t} outside 1..{schedule.num_steps}")


def training_loss(
    x0: torch.Tensor,
    cond: Optional[torch.Tensor],
    t,
    noise: torch.Tensor,
    denoiser,
    schedule: NoiseSchedule,
) -> torch.Tensor:
    """Mean squared error between the injected and the predicted noise."""
    x_t = forward_diffuse(x0, t, noise, schedule)
    net_in = x_t if cond is None else torch.cat([x_t, cond], dim=-3)
    pred = denoiser(net_in, t)
    loss = ((noise - pred) ** 2).mean()
    if not torch.isfinite(loss):
        raise TrainingError(
            f"non-finite loss at step t={t}: pred range "
            f"[{float(pred.min())}, {float(pred.max())}]"
        )
    return loss


def sampling_timesteps(schedule: NoiseSchedule, t_sample: Optional[int]) -> list[int]:
    """Descending step indices for the reverse chain.

    With fewer steps than the schedule, an evenly spaced subset is used and
    each transition re-derives its variance from the cumulative products.
    """
    T = schedule.num_steps
    if t_sample is None:
        t_sample = T
    if not (1 <= t_sample <= T):
        raise ValueError(f"t_sample must be in 1..{T}, got {t_sample}")
    # anchored at T: the chain always starts from the pure-noise level
    steps = np.unique(np.linspace(T, 1, t_sample).round().astype(int))
    return steps[::-1].tolist()


@torch.no_grad()
def sample(
    cond: Optional[torch.Tensor],
    denoiser,
    schedule: NoiseSchedule,
    seed: int,
    t_sample: Optional[int] = None,
    shape: Optional[tuple] = None,
    clamp_x0: bool = True,
) -> torch.Tensor:
    """Ancestral reverse chain from pure noise; the seed fixes the trajectory.

    Each step turns the noise prediction into an x0 estimate, clamps it to
    [-1, 1], and draws the posterior-mean transition with sigma^2 equal to
    the step's beta (zero noise on the final step). Returns the x0 estimate.

    ``cond`` is (B, 1+b, H, W) or (1+b, H, W); ``shape`` must supply
    (channels, H, W) or (B, channels, H, W) when ``cond`` is None.
    """
    squeeze = False
    if cond is not None:
        if cond.ndim == 3:
            cond = cond[None]
            squeeze = True
        out_ch = getattr(getattr(denoiser, "config", None), "out_channels", None)
        if out_ch is None:
            raise ValueError("shape inference needs a denoiser with a config")
        shape = (cond.shape[0], out_ch, cond.shape[-2], cond.shape[-1])
    else:
        if shape is None:
            raise ValueError("shape is required when cond is None")
        if len(shape) == 3:
            shape = (1,) + tuple(shape)
            squeeze = True

    gen = torch.Generator().manual_seed(int(seed))
    x = torch.randn(*shape, generator=gen)
    acp = schedule.alphas_cumprod

    steps = sampling_timesteps(schedule, t_sample)
    for k, t in enumerate(steps):
        t_prev = steps[k + 1] if k + 1 < len(steps) else 0
        a_t = acp[t - 1]
        a_prev = 1.0 if t_prev == 0 else acp[t_prev - 1]
        beta_eff = 1.0 - a_t / a_prev

        net_in = x if cond is None else torch.cat([x, cond.to(x.dtype)], dim=1)
        eps = denoiser(net_in, t)
        x0_hat = (x - float(np.sqrt(1.0 - a_t)) * eps) / float(np.sqrt(a_t))
        if clamp_x0:
            x0_hat = x0_hat.clamp(-1.0, 1.0)

        mean = (
            float(np.sqrt(a_prev) * beta_eff / (1.0 - a_t)) * x0_hat
            + float(np.sqrt(a_t / a_prev) * (1.0 - a_prev) / (1.0 - a_t)) * x
        )
        if t_prev == 0:
            x = mean
        else:
            z = torch.randn(*shape, generator=gen)
            x = mean + float(np.sqrt(beta_eff)) * z
        if not torch.isfinite(x).all():
            raise SamplingError(f"non-finite state after reverse step t={t}")

    if clamp_x0:
        x = x.clamp(-1.0, 1.0)
    return x[0] if squeeze else x


def decode_sample(x: torch.Tensor, alphabet: ClassAlphabet) -> GeneratedSample:
    """Split a joint state into an 8-bit RGB image and a discrete mask.

    RGB maps [-1, 1] to [0, 255] with round-half-up; the bit channels go
    through the analog-bit decoder.
    """
    arr = x.detach().cpu().numpy()
    if arr.ndim != 3 or arr.shape[0] != 3 + alphabet.bit_width:
        raise ValueError(f"expected ({3 + alphabet.bit_width}, H, W), got {tuple(arr.shape)}")
    rgb = arr[:3].transpose(1, 2, 0)
    image = np.clip(np.floor((rgb + 1.0) * 127.5 + 0.5), 0, 255).astype(np.uint8)
    bits = arr[3:].transpose(1, 2, 0)
    mask = decode(bits, alphabet)
    return GeneratedSample(image=image, mask=mask)


def encode_joint_state(
    image: np.ndarray, mask: np.ndarray, alphabet: ClassAlphabet, dtype=torch.float32
) -> torch.Tensor:
    """Inverse of :func:`decode_sample` up to quantization: (3+b, H, W) in [-1, 1]."""
    rgb = image.astype(np.float64) / 127.5 - 1.0
    bits = encode(mask, alphabet)
    joint = np.concatenate([rgb, bits], axis=2)
    return torch.from_numpy(joint.transpose(2, 0, 1).copy()).to(dtype)


def save_checkpoint(
    path,
    denoiser: ConditionalUNet,
    schedule: NoiseSchedule,
    alphabet: ClassAlphabet,
    seed: int,
    extra: Optional[dict] = None,
) -> None:
    """Write a self-describing checkpoint keyed by the format magic string."""
    payload = {
        "magic": CHECKPOINT_MAGIC,
        "denoiser_config": denoiser.config.to_dict(),
        "state_dict": denoiser.state_dict(),
        "schedule": schedule.to_dict(),
        "alphabet": alphabet.to_dict(),
        "seed": int(seed),
        "extra": extra or {},
    }
    torch.save(payload, path)


@dataclass
class Checkpoint:
    denoiser: ConditionalUNet
    schedule: NoiseSchedule
    alphabet: ClassAlphabet
    seed: int
    extra: dict


def load_checkpoint(path) -> Checkpoint:
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    if not isinstance(payload, dict) or payload.get("magic") != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path} is not a {CHECKPOINT_MAGIC} checkpoint")
    config = DenoiserConfig.from_dict(payload["denoiser_config"])
    denoiser = ConditionalUNet(config)
    denoiser.load_state_dict(payload["state_dict"])
    denoiser.eval()
    return Checkpoint(
        denoiser=denoiser,
        schedule=NoiseSchedule.from_dict(payload["schedule"]),
        alphabet=ClassAlphabet.from_dict(payload["alphabet"]),
        seed=int(payload["seed"]),
        extra=payload.get("extra", {}),
    )
