"""Conditional Euler sampling at caller-chosen resolution.

The target grid is whatever the request asks for, independent of the
condition image's shape. Classifier-free guidance uses one unconditional
branch with both the text and condition segments nulled.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .model import PosterDiT, encode_text, image_to_tensor, tensor_to_image

DEFAULT_STEPS = 50
DEFAULT_GUIDANCE = 3.0


@dataclass
class SampleRequest:
    prompt: str
    size: tuple[int, int]  # (w, h)
    condition: np.ndarray | None = None  # uint8 HxWx3
    steps: int = DEFAULT_STEPS
    guidance: float = DEFAULT_GUIDANCE
    seed: int = 0

    def validate(self, model: PosterDiT) -> None:
        p = model.config.patch
        w, h = self.size
        if w % p or h % p:
            raise ValueError(f"target size {w}x{h} not divisible by patch size {p}")
        if w // p > model.config.max_grid or h // p > model.config.max_grid:
            raise ValueError(f"target size {w}x{h} exceeds the max token grid")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.guidance < 0:
            raise ValueError("guidance scale must be >= 0")


@torch.no_grad()
def sample(model: PosterDiT, request: SampleRequest) -> np.ndarray:
    """Euler-integrate the learned velocity field from t=1 noise to t=0.

    x <- x - (1/N) * v_hat at t = 1, 1-1/N, ...; with
    v_hat = v_uncond + g * (v_cond - v_uncond). Output is clamped to the
    valid pixel range and quantized (round half away from zero).
    """
    request.validate(model)
    model.eval()
    w, h = request.size
    gen = torch.Generator()
    gen.manual_seed(request.seed)
    x = torch.randn((1, model.config.channels, h, w), generator=gen)
    ids = encode_text(request.prompt, model.config.text_len)[None, :]
    cond = (
        image_to_tensor(request.condition)[None] if request.condition is not None else None
    )
    n = request.steps
    for k in range(n):
        t = torch.tensor([1.0 - k / n])
        v_uncond = model(cond, ids, x, t, drop_text=True, drop_cond=True)
        if request.guidance == 0.0:
            v_hat = v_uncond
        else:
            v_cond = model(cond, ids, x, t)
            v_hat = v_uncond + request.guidance * (v_cond - v_uncond)
        x = x - v_hat / n
    return tensor_to_image(x[0])


@torch.no_grad()
def sample_grid(
    model: PosterDiT, request: SampleRequest, ratios: list[tuple[int, int]]
) -> list[np.ndarray | Exception]:
    """One sample per requested size; per-size failures are returned in
    place so siblings still render."""
    out: list[np.ndarray | Exception] = []
    for i, size in enumerate(ratios):
        sub = SampleRequest(
            prompt=request.prompt,
            size=tuple(size),
            condition=request.condition,
            steps=request.steps,
            guidance=request.guidance,
            seed=request.seed + i,
        )
        try:
            out.append(sample(model, sub))
        except ValueError as e:
            out.append(e)
    return out
