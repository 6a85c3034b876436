"""Three-stage progressive training driver.

Stage 1 trains text addition only, stage 2 mixes all five tasks uniformly,
stage 3 keeps the mixture but restricts data to the top aesthetic scores.
Each stage declares its own task mixture, data filter, trainable parameter
groups, step budget and learning rate. The optimizer is a hand-rolled
AdamW so frozen parameters and their moments stay bit-identical.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
import torch

from .model import ModelConfig, PosterDiT, encode_text, flow_loss, image_to_tensor
from .pairs import TASKS, TrainingPair

log = logging.getLogger(__name__)

ADAM_BETAS = (0.9, 0.95)
WEIGHT_DECAY = 0.01
HIGH_AESTHETIC = 0.75


@dataclass
class StageConfig:
    name: str
    mixture: dict[str, float]
    steps: int
    learning_rate: float = 1e-3
    min_aesthetic: float = 0.0
    trainable_groups: tuple[str, ...] | None = None  # None = all
    use_glyph_caption: bool = True
    use_layout_caption: bool = True

    def __post_init__(self):
        if not self.mixture:
            raise ValueError("mixture must be nonempty")
        total = sum(self.mixture.values())
        if any(w < 0 for w in self.mixture.values()) or total <= 0:
            raise ValueError("mixture weights must be >= 0 and sum > 0")
        if abs(total - 1.0) > 1e-9:
            self.mixture = {k: w / total for k, w in self.mixture.items()}
        if self.steps <= 0:
            raise ValueError("steps must be > 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        if self.trainable_groups is not None:
            d["trainable_groups"] = list(self.trainable_groups)
        return d


@dataclass
class CurriculumConfig:
    stages: list[StageConfig]
    seed: int = 0
    batch_size: int = 8
    checkpoint_every: int = 200

    def __post_init__(self):
        if not self.stages:
            raise ValueError("need at least one stage")
        names = [s.name for s in self.stages]
        if len(set(names)) != len(names):
            raise ValueError("stage names must be unique")

    def to_dict(self) -> dict:
        return {
            "stages": [s.to_dict() for s in self.stages],
            "seed": self.seed,
            "batch_size": self.batch_size,
            "checkpoint_every": self.checkpoint_every,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CurriculumConfig":
        stages = []
        for s in d["stages"]:
            s = dict(s)
            if s.get("trainable_groups") is not None:
                s["trainable_groups"] = tuple(s["trainable_groups"])
            stages.append(StageConfig(**s))
        return cls(
            stages=stages,
            seed=int(d.get("seed", 0)),
            batch_size=int(d.get("batch_size", 8)),
            checkpoint_every=int(d.get("checkpoint_every", 200)),
        )


def default_curriculum(
    steps: tuple[int, int, int] = (300, 500, 200),
    learning_rate: float = 1e-3,
    seed: int = 0,
    batch_size: int = 8,
    checkpoint_every: int = 200,
) -> CurriculumConfig:
    uniform = {t: 1.0 / len(TASKS) for t in TASKS}
    return CurriculumConfig(
        stages=[
            StageConfig("text_addition", {"text_addition": 1.0}, steps[0], learning_rate),
            StageConfig("multi_task", dict(uniform), steps[1], learning_rate),
            StageConfig(
                "aesthetic_finetune",
                dict(uniform),
                steps[2],
                learning_rate * 0.3,
                min_aesthetic=HIGH_AESTHETIC,
            ),
        ],
        seed=seed,
        batch_size=batch_size,
        checkpoint_every=checkpoint_every,
    )


def load_curriculum_toml(path) -> CurriculumConfig:
    try:
        import tomllib
    except ModuleNotFoundError:
        import tomli as tomllib

    with open(path, "rb") as f:
        doc = tomllib.load(f)
    top = doc.get("curriculum", {})
    return CurriculumConfig.from_dict(
        {
            "stages": doc["stage"],
            "seed": top.get("seed", 0),
            "batch_size": top.get("batch_size", 8),
            "checkpoint_every": top.get("checkpoint_every", 200),
        }
    )


# --- data access -------------------------------------------------------------


class PairData:
    """Training pairs plus image loading, filtered and grouped per stage."""

    def __init__(self, pairs: list[TrainingPair], load_image):
        self.pairs = list(pairs)
        self.load_image = load_image

    def stage_pools(self, stage: StageConfig) -> dict[str, list[TrainingPair]]:
        pools: dict[str, list[TrainingPair]] = {}
        for task, weight in sorted(stage.mixture.items()):
            if weight <= 0:
                continue
            pool = [
                p
                for p in self.pairs
                if p.task == task and p.aesthetic >= stage.min_aesthetic
            ]
            if not pool:
                raise ValueError(
                    f"stage {stage.name!r}: no pairs for task {task!r} after filtering"
                )
            pools[task] = pool
        return pools


def sample_batch(
    stage: StageConfig,
    pools: dict[str, list[TrainingPair]],
    rng: np.random.Generator,
    batch_size: int,
) -> list[TrainingPair]:
    """Tasks drawn independently from the stage mixture, pairs uniform
    within task. Deterministic given the rng state."""
    tasks = sorted(t for t, w in stage.mixture.items() if w > 0)
    weights = np.array([stage.mixture[t] for t in tasks])
    weights = weights / weights.sum()
    picks = rng.choice(len(tasks), size=batch_size, p=weights)
    batch = []
    for k in picks:
        pool = pools[tasks[int(k)]]
        batch.append(pool[int(rng.integers(len(pool)))])
    return batch


# --- optimizer ---------------------------------------------------------------


class AdamW:
    """Decoupled weight decay Adam over named parameters, with exact
    freezing: parameters outside the trainable set, and their moments, are
    untouched by a step."""

    def __init__(self, model: PosterDiT, betas=ADAM_BETAS, weight_decay=WEIGHT_DECAY, eps=1e-8):
        self.betas = betas
        self.weight_decay = weight_decay
        self.eps = eps
        self.m = {n: torch.zeros_like(p) for n, p in model.named_parameters()}
        self.v = {n: torch.zeros_like(p) for n, p in model.named_parameters()}
        self.counts = {n: 0 for n, _ in model.named_parameters()}

    def step(self, model: PosterDiT, lr: float, trainable: set[str]) -> None:
        b1, b2 = self.betas
        with torch.no_grad():
            for name, p in model.named_parameters():
                if name not in trainable or p.grad is None:
                    continue
                self.counts[name] += 1
                k = self.counts[name]
                g = p.grad
                self.m[name].mul_(b1).add_(g, alpha=1 - b1)
                self.v[name].mul_(b2).addcmul_(g, g, value=1 - b2)
                mhat = self.m[name] / (1 - b1**k)
                vhat = self.v[name] / (1 - b2**k)
                p.add_(mhat / (vhat.sqrt() + self.eps), alpha=-lr)
                p.add_(p, alpha=-lr * self.weight_decay)

    def state_dict(self) -> dict:
        return {"m": self.m, "v": self.v, "counts": self.counts}

    def load_state_dict(self, d: dict) -> None:
        self.m = d["m"]
        self.v = d["v"]
        self.counts = d["counts"]


def trainable_names(model: PosterDiT, groups: tuple[str, ...] | None) -> set[str]:
    all_groups = model.parameter_groups()
    if groups is None:
        groups = tuple(all_groups)
    unknown = set(groups) - set(all_groups)
    if unknown:
        raise ValueError(f"unknown parameter groups: {sorted(unknown)}")
    return {n for g in groups for n in all_groups[g]}


def apply_freeze(
    model: PosterDiT, trainable_groups: tuple[str, ...] | None
) -> set[str]:
    """Zero the gradients of every parameter outside trainable_groups and
    return the trainable parameter-name set."""
    keep = trainable_names(model, trainable_groups)
    for name, p in model.named_parameters():
        if name not in keep and p.grad is not None:
            p.grad.zero_()
    return keep


def cosine_lr(base: float, step: int, total: int) -> float:
    return base * 0.5 * (1.0 + float(np.cos(np.pi * step / max(total, 1))))


# --- training loop -----------------------------------------------------------


@dataclass
class TraceEntry:
    stage: str
    step: int
    task: str
    loss: float
    lr: float

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainState:
    stage_index: int
    step: int  # next step to run within the stage
    optimizer: dict
    np_rng: dict
    torch_rng: torch.Tensor
    trace: list[dict] = field(default_factory=list)


def _prompt_for(pair: TrainingPair, stage: StageConfig) -> str:
    parts = [pair.instruction]
    if stage.use_glyph_caption:
        parts.append(pair.glyph_caption)
    if stage.use_layout_caption:
        parts.append(pair.layout_caption)
    return " ".join(parts)


def _batch_loss(
    model: PosterDiT,
    batch: list[TrainingPair],
    stage: StageConfig,
    data: PairData,
    rng: np.random.Generator,
    gen: torch.Generator,
    drop_p: float = 0.1,
) -> torch.Tensor:
    """Mean loss over the batch; samples are grouped by shape and CFG drop
    flags so differing aspect-ratio pairs can share one batch."""
    cfg = model.config
    groups: dict[tuple, list[int]] = {}
    for i, pair in enumerate(batch):
        drop_text = bool(rng.random() < drop_p)
        drop_cond = bool(rng.random() < drop_p)
        key = (pair.source_dims, pair.target_dims, drop_text, drop_cond)
        groups.setdefault(key, []).append(i)
    total = 0.0
    for key, idxs in sorted(groups.items()):
        (sw, sh), (tw, th), drop_text, drop_cond = key
        conds, tgts, texts = [], [], []
        for i in idxs:
            pair = batch[i]
            conds.append(image_to_tensor(data.load_image(pair.source_image)))
            tgts.append(image_to_tensor(data.load_image(pair.target_image)))
            texts.append(encode_text(_prompt_for(pair, stage), cfg.text_len))
        cond = torch.stack(conds)
        tgt = torch.stack(tgts)
        ids = torch.stack(texts)
        t = torch.rand(len(idxs), generator=gen)
        noise = torch.randn(tgt.shape, generator=gen)
        loss = flow_loss(model, cond, ids, tgt, t, noise, drop_text, drop_cond)
        total = total + loss * len(idxs)
    return total / len(batch)


def train(
    curriculum: CurriculumConfig,
    data: PairData,
    model: PosterDiT,
    out_dir: Path | str | None = None,
    resume_state: TrainState | None = None,
) -> tuple[PosterDiT, list[TraceEntry]]:
    """Run all stages in order, each continuing from the previous stage's
    parameters. Checkpoints at the configured cadence and at every stage
    boundary; a resumed run reproduces the uninterrupted trace exactly."""
    from .model import save_checkpoint

    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    opt = AdamW(model)
    if resume_state is not None:
        opt.load_state_dict(resume_state.optimizer)
        rng = np.random.default_rng()
        rng.bit_generator.state = resume_state.np_rng
        gen = torch.Generator()
        gen.set_state(resume_state.torch_rng)
        start_stage = resume_state.stage_index
        start_step = resume_state.step
        trace = [TraceEntry(**e) for e in resume_state.trace]
    else:
        rng = np.random.default_rng(curriculum.seed)
        gen = torch.Generator()
        gen.manual_seed(curriculum.seed)
        start_stage = 0
        start_step = 0
        trace = []

    trace_path = out_dir / "trace.jsonl" if out_dir is not None else None
    if trace_path is not None:
        # rewrite so a resumed run's file matches its in-memory trace
        with open(trace_path, "w") as f:
            for e in trace:
                f.write(json.dumps(e.to_dict()) + "\n")

    def checkpoint(tag: str, stage_idx: int, step: int):
        if out_dir is None:
            return
        state = TrainState(
            stage_index=stage_idx,
            step=step,
            optimizer=opt.state_dict(),
            np_rng=rng.bit_generator.state,
            torch_rng=gen.get_state(),
            trace=[e.to_dict() for e in trace],
        )
        save_checkpoint(out_dir / f"ckpt_{tag}.pt", model, {"train_state": state.__dict__})

    for stage_idx in range(start_stage, len(curriculum.stages)):
        stage = curriculum.stages[stage_idx]
        try:
            pools = data.stage_pools(stage)
        except ValueError as e:
            raise ValueError(f"stage {stage.name!r} aborted: {e}") from e
        keep = trainable_names(model, stage.trainable_groups)
        first = start_step if stage_idx == start_stage else 0
        for step in range(first, stage.steps):
            batch = sample_batch(stage, pools, rng, curriculum.batch_size)
            lr = cosine_lr(stage.learning_rate, step, stage.steps)
            model.zero_grad(set_to_none=True)
            loss = _batch_loss(model, batch, stage, data, rng, gen)
            loss.backward()
            apply_freeze(model, stage.trainable_groups)
            opt.step(model, lr, keep)
            entry = TraceEntry(
                stage=stage.name,
                step=step,
                task=",".join(sorted({p.task for p in batch})),
                loss=float(loss.item()),
                lr=lr,
            )
            trace.append(entry)
            if trace_path is not None:
                with open(trace_path, "a") as f:
                    f.write(json.dumps(entry.to_dict()) + "\n")
            done = step + 1
            if done % curriculum.checkpoint_every == 0 and done < stage.steps:
                checkpoint(f"s{stage_idx}_{done}", stage_idx, done)
        checkpoint(f"stage{stage_idx}_final", stage_idx + 1, 0)
        log.info("stage %s done (%d steps)", stage.name, stage.steps)
    return model, trace


def resume_from_checkpoint(path) -> tuple[PosterDiT, TrainState]:
    from .model import load_checkpoint

    model, extra = load_checkpoint(path)
    if "train_state" not in extra:
        raise ValueError("checkpoint has no training state")
    return model, TrainState(**extra["train_state"])
