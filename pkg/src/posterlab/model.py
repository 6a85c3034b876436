"""Multimodal diffusion transformer over one concatenated token sequence.

Sequence = [condition-image tokens | text tokens | noisy-target tokens].
Images are pixel-space patches (no autoencoder); text is character-level.
Role embeddings distinguish the three segments; image tokens get a shared
2D sin/cos positional table indexed by (row, col) inside their own grid,
text gets a 1D table. Full bidirectional self-attention; the model reads
out a rectified-flow velocity at the TARGET positions only, so condition
and target grids are free to differ in shape.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import torch
import torch.nn as nn
import torch.nn.functional as F

ROLE_COND, ROLE_TEXT, ROLE_TARGET = 0, 1, 2

PAD_ID, UNK_ID = 0, 1
_SPECIALS = 2
VOCAB_CHARS = (
    "ABCDEFGHIJKLMNOPQRSTUVWXYZ"
    "abcdefghijklmnopqrstuvwxyz"
    "0123456789"
    " .,'\"!?%&+-:;()/#*=<>@$_"
)
VOCAB_SIZE = _SPECIALS + len(VOCAB_CHARS)
_CHAR_TO_ID = {c: i + _SPECIALS for i, c in enumerate(VOCAB_CHARS)}


def encode_text(prompt: str, length: int) -> torch.Tensor:
    """Character ids, truncated to `length`, right-padded with PAD_ID."""
    ids = [_CHAR_TO_ID.get(c, UNK_ID) for c in prompt[:length]]
    ids += [PAD_ID] * (length - len(ids))
    return torch.tensor(ids, dtype=torch.long)


@dataclass
class ModelConfig:
    depth: int = 6
    width: int = 192
    heads: int = 6
    patch: int = 8
    channels: int = 3
    text_len: int = 64
    max_grid: int = 16  # max tokens per image side
    vocab_size: int = VOCAB_SIZE

    def __post_init__(self):
        if self.width % self.heads:
            raise ValueError("width must be divisible by heads")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


MICRO_CONFIG = ModelConfig(depth=1, width=8, heads=2, text_len=8, max_grid=16)


def patchify(img: torch.Tensor, p: int) -> tuple[torch.Tensor, tuple[int, int]]:
    """(B, C, H, W) -> (B, (H/p)*(W/p), p*p*C) tokens plus the grid shape."""
    b, c, h, w = img.shape
    if h % p or w % p:
        raise ValueError(f"image dims {h}x{w} not divisible by patch size {p}")
    hp, wp = h // p, w // p
    x = img.reshape(b, c, hp, p, wp, p)
    x = x.permute(0, 2, 4, 3, 5, 1).reshape(b, hp * wp, p * p * c)
    return x, (hp, wp)


def unpatchify(tokens: torch.Tensor, grid: tuple[int, int], p: int, c: int) -> torch.Tensor:
    """Exact inverse of patchify."""
    b = tokens.shape[0]
    hp, wp = grid
    x = tokens.reshape(b, hp, wp, p, p, c)
    x = x.permute(0, 5, 1, 3, 2, 4).reshape(b, c, hp * p, wp * p)
    return x


def _sincos_1d(positions: torch.Tensor, dim: int) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(
        -math.log(10000.0) * torch.arange(half, dtype=torch.float64) / max(half - 1, 1)
    )
    args = positions.to(torch.float64)[:, None] * freqs[None, :]
    emb = torch.cat([torch.sin(args), torch.cos(args)], dim=1)
    if emb.shape[1] < dim:
        emb = F.pad(emb, (0, dim - emb.shape[1]))
    return emb


def pos_embed_2d(hp: int, wp: int, dim: int) -> torch.Tensor:
    """Shared (row, col) sin/cos table: half the channels encode the row
    index, half the column index."""
    rows = _sincos_1d(torch.arange(hp).repeat_interleave(wp), dim // 2)
    cols = _sincos_1d(torch.arange(wp).repeat(hp), dim - dim // 2)
    return torch.cat([rows, cols], dim=1)


@dataclass
class TokenSequence:
    """One concatenated sequence: COND, TEXT, TARGET segments in order."""

    features: torch.Tensor  # (B, L_total, width)
    role_ids: torch.Tensor  # (L_total,)
    target_grid: tuple[int, int]
    cond_grid: tuple[int, int] | None
    text_len: int

    @property
    def target_slice(self) -> slice:
        n_tgt = self.target_grid[0] * self.target_grid[1]
        return slice(self.features.shape[1] - n_tgt, self.features.shape[1])


class Block(nn.Module):
    def __init__(self, width: int, heads: int):
        super().__init__()
        self.heads = heads
        self.norm1 = nn.LayerNorm(width)
        self.qkv = nn.Linear(width, 3 * width)
        self.proj = nn.Linear(width, width)
        self.norm2 = nn.LayerNorm(width)
        self.mlp = nn.Sequential(
            nn.Linear(width, 4 * width), nn.GELU(), nn.Linear(4 * width, width)
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, l, d = x.shape
        h = self.norm1(x)
        q, k, v = self.qkv(h).chunk(3, dim=-1)
        q = q.view(b, l, self.heads, d // self.heads).transpose(1, 2)
        k = k.view(b, l, self.heads, d // self.heads).transpose(1, 2)
        v = v.view(b, l, self.heads, d // self.heads).transpose(1, 2)
        a = F.scaled_dot_product_attention(q, k, v)
        a = a.transpose(1, 2).reshape(b, l, d)
        x = x + self.proj(a)
        return x + self.mlp(self.norm2(x))


class PosterDiT(nn.Module):
    """Velocity predictor over the concatenated multimodal sequence."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        c = config
        tok_dim = c.patch * c.patch * c.channels
        self.patch_embed = nn.Linear(tok_dim, c.width)
        self.text_embed = nn.Embedding(c.vocab_size, c.width)
        self.role_embed = nn.Parameter(torch.zeros(3, c.width))
        # learned null vectors for classifier-free dropping of text / cond
        self.null_text = nn.Parameter(torch.zeros(c.width))
        self.null_cond = nn.Parameter(torch.zeros(c.width))
        self.time_mlp = nn.Sequential(
            nn.Linear(c.width, c.width), nn.SiLU(), nn.Linear(c.width, c.width)
        )
        self.blocks = nn.ModuleList(Block(c.width, c.heads) for _ in range(c.depth))
        self.head_norm = nn.LayerNorm(c.width)
        self.head = nn.Linear(c.width, tok_dim)
        nn.init.normal_(self.role_embed, std=0.02)
        nn.init.normal_(self.null_text, std=0.02)
        nn.init.normal_(self.null_cond, std=0.02)
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)
        self.register_buffer(
            "pos2d",
            pos_embed_2d(c.max_grid, c.max_grid, c.width).to(torch.float32),
            persistent=False,
        )
        self.register_buffer(
            "pos1d",
            _sincos_1d(torch.arange(c.text_len), c.width).to(torch.float32),
            persistent=False,
        )

    # --- parameter groups for partial fine-tuning -------------------------

    def parameter_groups(self) -> dict[str, list[str]]:
        """Label -> parameter names; every parameter in exactly one group."""
        groups: dict[str, list[str]] = {
            "patch_embed": [],
            "text_embed": [],
            "role_embed": [],
            "null_embed": [],
            "time_embed": [],
            "head": [],
        }
        for i in range(self.config.depth):
            groups[f"block_{i}"] = []
        for name, _ in self.named_parameters():
            groups[self.group_of(name)].append(name)
        return groups

    def group_of(self, param_name: str) -> str:
        if param_name.startswith("patch_embed"):
            return "patch_embed"
        if param_name.startswith("text_embed"):
            return "text_embed"
        if param_name.startswith("role_embed"):
            return "role_embed"
        if param_name.startswith(("null_text", "null_cond")):
            return "null_embed"
        if param_name.startswith("time_mlp"):
            return "time_embed"
        if param_name.startswith("blocks."):
            return f"block_{param_name.split('.')[1]}"
        if param_name.startswith(("head_norm", "head")):
            return "head"
        raise KeyError(f"unlabeled parameter {param_name}")

    # --- sequence assembly -------------------------------------------------

    def _grid_pos(self, grid: tuple[int, int]) -> torch.Tensor:
        hp, wp = grid
        mg = self.config.max_grid
        if hp > mg or wp > mg:
            raise ValueError(f"grid {grid} exceeds max side {mg}")
        idx = (torch.arange(hp).repeat_interleave(wp) * mg) + torch.arange(wp).repeat(hp)
        return self.pos2d[idx]

    def build_sequence(
        self,
        cond_img: torch.Tensor | None,
        text_ids: torch.Tensor,
        x_t: torch.Tensor,
        t: torch.Tensor,
        drop_text: bool = False,
        drop_cond: bool = False,
    ) -> TokenSequence:
        """Embed, add role + positional (+ time on TARGET) embeddings and
        concatenate segments in (COND, TEXT, TARGET) order."""
        c = self.config
        dtype = self.patch_embed.weight.dtype
        b = x_t.shape[0]
        parts, roles = [], []

        cond_grid = None
        if cond_img is not None:
            cond_tokens, cond_grid = patchify(cond_img.to(dtype), c.patch)
            feats = self.patch_embed(cond_tokens)
            if drop_cond:
                feats = self.null_cond.expand_as(feats)
            feats = feats + self._grid_pos(cond_grid).to(dtype) + self.role_embed[ROLE_COND]
            parts.append(feats)
            roles.append(torch.full((feats.shape[1],), ROLE_COND))

        if text_ids.ndim == 1:
            text_ids = text_ids[None, :].expand(b, -1)
        tfeats = self.text_embed(text_ids)
        if drop_text:
            tfeats = self.null_text.expand_as(tfeats)
        tfeats = tfeats + self.pos1d[: text_ids.shape[1]].to(dtype) + self.role_embed[ROLE_TEXT]
        parts.append(tfeats)
        roles.append(torch.full((tfeats.shape[1],), ROLE_TEXT))

        tgt_tokens, tgt_grid = patchify(x_t.to(dtype), c.patch)
        time_vec = self.time_mlp(_sincos_1d(t.reshape(-1), c.width).to(dtype))
        gfeats = (
            self.patch_embed(tgt_tokens)
            + self._grid_pos(tgt_grid).to(dtype)
            + self.role_embed[ROLE_TARGET]
            + time_vec[:, None, :]
        )
        parts.append(gfeats)
        roles.append(torch.full((gfeats.shape[1],), ROLE_TARGET))

        return TokenSequence(
            features=torch.cat(parts, dim=1),
            role_ids=torch.cat(roles),
            target_grid=tgt_grid,
            cond_grid=cond_grid,
            text_len=text_ids.shape[1],
        )

    def forward_sequence(self, seq: TokenSequence) -> torch.Tensor:
        """Predicted velocity image, read from TARGET positions only."""
        x = seq.features
        for blk in self.blocks:
            x = blk(x)
        out = self.head(self.head_norm(x[:, seq.target_slice]))
        return unpatchify(out, seq.target_grid, self.config.patch, self.config.channels)

    def forward(
        self,
        cond_img: torch.Tensor | None,
        text_ids: torch.Tensor,
        x_t: torch.Tensor,
        t: torch.Tensor,
        drop_text: bool = False,
        drop_cond: bool = False,
    ) -> torch.Tensor:
        seq = self.build_sequence(cond_img, text_ids, x_t, t, drop_text, drop_cond)
        return self.forward_sequence(seq)


@dataclass
class NoisedSample:
    x_t: torch.Tensor
    t: torch.Tensor
    v_target: torch.Tensor


def flow_interpolate(x_data: torch.Tensor, x_noise: torch.Tensor, t) -> NoisedSample:
    """Rectified-flow interpolation: x_t = (1-t) x_data + t x_noise,
    constant velocity target x_noise - x_data."""
    if x_data.shape != x_noise.shape:
        raise ValueError("data/noise shapes differ")
    t = torch.as_tensor(t, dtype=x_data.dtype)
    if t.ndim == 0:
        t = t.reshape(1)
    tb = t.reshape(-1, *([1] * (x_data.ndim - 1)))
    if (tb < 0).any() or (tb > 1).any():
        raise ValueError("t must lie in [0, 1]")
    return NoisedSample(
        x_t=(1 - tb) * x_data + tb * x_noise, t=t, v_target=x_noise - x_data
    )


def flow_loss(
    model: PosterDiT,
    cond_img: torch.Tensor | None,
    text_ids: torch.Tensor,
    target_img: torch.Tensor,
    t,
    noise: torch.Tensor,
    drop_text: bool = False,
    drop_cond: bool = False,
) -> torch.Tensor:
    """Flow-matching MSE over TARGET tokens."""
    sample = flow_interpolate(target_img, noise, t)
    pred = model(cond_img, text_ids, sample.x_t, sample.t, drop_text, drop_cond)
    return F.mse_loss(pred, sample.v_target)


def image_to_tensor(img) -> torch.Tensor:
    """uint8 (H, W, 3) -> float32 (3, H, W) in [-1, 1]."""
    t = torch.from_numpy(img.copy()).to(torch.float32).permute(2, 0, 1) / 255.0
    return t * 2.0 - 1.0


def tensor_to_image(t: torch.Tensor):
    """(3, H, W) in [-1, 1] -> uint8 (H, W, 3), clamp then round half away
    from zero."""
    import numpy as np

    x = ((t.detach().to(torch.float64) + 1.0) / 2.0).clamp(0.0, 1.0) * 255.0
    arr = x.permute(1, 2, 0).numpy()
    return np.floor(arr + 0.5).astype(np.uint8)


# --- checkpoint format -------------------------------------------------------


def save_checkpoint(path, model: PosterDiT, extra: dict | None = None) -> None:
    """Archive layout: model config header + per-group tensors (+ training
    extras such as optimizer moments and rng states)."""
    groups = model.parameter_groups()
    state = model.state_dict()
    payload = {
        "config": model.config.to_dict(),
        "groups": {g: {n: state[n] for n in names} for g, names in groups.items()},
    }
    if extra:
        payload["extra"] = extra
    torch.save(payload, path)


def load_checkpoint(path) -> tuple[PosterDiT, dict]:
    payload = torch.load(path, weights_only=False)
    config = ModelConfig.from_dict(payload["config"])
    model = PosterDiT(config)
    expected = model.parameter_groups()
    state = {}
    for g, names in expected.items():
        if g not in payload["groups"]:
            raise ValueError(f"checkpoint missing parameter group {g!r}")
        for n in names:
            if n not in payload["groups"][g]:
                raise ValueError(f"checkpoint group {g!r} missing tensor {n!r}")
            tensor = payload["groups"][g][n]
            if tuple(tensor.shape) != tuple(model.state_dict()[n].shape):
                raise ValueError(f"checkpoint tensor {n!r} has wrong shape")
            state[n] = tensor
    model.load_state_dict(state)
    return model, payload.get("extra", {})
