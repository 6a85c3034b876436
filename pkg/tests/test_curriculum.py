import numpy as np
import pytest
import scipy.stats
import torch

from posterlab.curriculum import (
    HIGH_AESTHETIC,
    AdamW,
    CurriculumConfig,
    PairData,
    StageConfig,
    apply_freeze,
    cosine_lr,
    default_curriculum,
    load_curriculum_toml,
    resume_from_checkpoint,
    sample_batch,
    train,
    trainable_names,
)
from posterlab.model import MICRO_CONFIG, ModelConfig, PosterDiT
from posterlab.pairs import TASKS


def _data(pair_set):
    pairs, store = pair_set
    return PairData(pairs, lambda ref: store[ref])


def test_default_curriculum_shape():
    cur = default_curriculum()
    assert len(cur.stages) == 3
    assert cur.stages[0].mixture == {"text_addition": 1.0}
    assert set(cur.stages[1].mixture) == set(TASKS)
    assert cur.stages[2].min_aesthetic == HIGH_AESTHETIC
    for s in cur.stages:
        assert sum(s.mixture.values()) == pytest.approx(1.0)


def test_stage3_filter_strict_subset(pair_set):
    pairs, _ = pair_set
    high = [p for p in pairs if p.aesthetic >= HIGH_AESTHETIC]
    assert 0 < len(high) < len(pairs)


def test_stage_config_validation():
    with pytest.raises(ValueError):
        StageConfig("s", {}, 10)
    with pytest.raises(ValueError):
        StageConfig("s", {"text_addition": 1.0}, 0)
    with pytest.raises(ValueError):
        CurriculumConfig(stages=[])
    with pytest.raises(ValueError):
        CurriculumConfig(
            stages=[
                StageConfig("a", {"text_addition": 1.0}, 1),
                StageConfig("a", {"text_addition": 1.0}, 1),
            ]
        )


def test_mixture_normalization():
    s = StageConfig("s", {"text_addition": 2.0, "restyle": 2.0}, 10)
    assert s.mixture["text_addition"] == pytest.approx(0.5)


def test_stage1_batches_pure(pair_set):
    data = _data(pair_set)
    stage = StageConfig("s1", {"text_addition": 1.0}, 10)
    rng = np.random.default_rng(0)
    pools = data.stage_pools(stage)
    for _ in range(20):
        batch = sample_batch(stage, pools, rng, 8)
        assert all(p.task == "text_addition" for p in batch)


def test_mixture_chi_square(pair_set):
    data = _data(pair_set)
    stage = StageConfig("s2", {t: 0.2 for t in TASKS}, 10)
    pools = data.stage_pools(stage)
    rng = np.random.default_rng(1)
    counts = dict.fromkeys(TASKS, 0)
    n = 10_000
    for p in sample_batch(stage, pools, rng, n):
        counts[p.task] += 1
    chi2, p_value = scipy.stats.chisquare(list(counts.values()))
    assert p_value > 0.01, (counts, p_value)


def test_sample_batch_deterministic(pair_set):
    data = _data(pair_set)
    stage = StageConfig("s2", {t: 0.2 for t in TASKS}, 10)
    pools = data.stage_pools(stage)
    a = sample_batch(stage, pools, np.random.default_rng(2), 16)
    b = sample_batch(stage, pools, np.random.default_rng(2), 16)
    assert [p.pair_id for p in a] == [p.pair_id for p in b]


def test_empty_pool_names_task(pair_set):
    pairs, store = pair_set
    data = PairData([p for p in pairs if p.task != "restyle"], lambda r: store[r])
    stage = StageConfig("s", {"restyle": 1.0}, 10)
    with pytest.raises(ValueError, match="restyle"):
        data.stage_pools(stage)


def test_trainable_names_unknown_label():
    model = PosterDiT(MICRO_CONFIG)
    with pytest.raises(ValueError):
        trainable_names(model, ("nonsense",))


def test_freeze_all_is_identity():
    torch.manual_seed(0)
    model = PosterDiT(MICRO_CONFIG)
    before = {n: p.clone() for n, p in model.named_parameters()}
    for p in model.parameters():
        p.grad = torch.randn(p.shape)
    keep = apply_freeze(model, ())  # nothing trainable
    assert keep == set()
    opt = AdamW(model)
    opt.step(model, 1e-3, keep)
    for n, p in model.named_parameters():
        assert torch.equal(p, before[n]), n


def test_freeze_all_but_role_embeddings():
    torch.manual_seed(1)
    model = PosterDiT(MICRO_CONFIG)
    before = {n: p.clone() for n, p in model.named_parameters()}
    for p in model.parameters():
        p.grad = torch.ones(p.shape)
    keep = apply_freeze(model, ("role_embed",))
    opt = AdamW(model)
    opt.step(model, 1e-3, keep)
    for n, p in model.named_parameters():
        if n in keep:
            assert not torch.equal(p, before[n]), n
        else:
            assert torch.equal(p, before[n]), n


def test_frozen_moments_do_not_advance():
    torch.manual_seed(2)
    model = PosterDiT(MICRO_CONFIG)
    groups = model.parameter_groups()
    frozen_group = "role_embed"
    trainable_labels = tuple(g for g in groups if g != frozen_group)
    opt = AdamW(model)
    for p in model.parameters():
        p.grad = torch.ones(p.shape)
    keep = apply_freeze(model, trainable_labels)
    opt.step(model, 1e-3, keep)
    for name in groups[frozen_group]:
        assert opt.counts[name] == 0
        assert not opt.m[name].any()
        assert not opt.v[name].any()


def test_cosine_lr_endpoints():
    assert cosine_lr(1.0, 0, 100) == pytest.approx(1.0)
    assert cosine_lr(1.0, 100, 100) == pytest.approx(0.0)
    assert cosine_lr(1.0, 50, 100) == pytest.approx(0.5)


def _tiny_curriculum(steps=(4, 4, 3), **kw):
    cur = default_curriculum(steps=steps, batch_size=2, checkpoint_every=3, **kw)
    return cur


def test_train_trace_structure(pair_set, tmp_path):
    data = _data(pair_set)
    torch.manual_seed(3)
    model = PosterDiT(ModelConfig(depth=1, width=16, heads=2))
    model, trace = train(_tiny_curriculum(), data, model, out_dir=tmp_path)
    assert len(trace) == 11
    assert all(e.task == "text_addition" for e in trace if e.stage == "text_addition")
    # a batch's task tag is the comma-joined set of tasks it mixes
    stage2_tasks = {t for e in trace if e.stage == "multi_task" for t in e.task.split(",")}
    assert stage2_tasks <= set(TASKS)
    assert (tmp_path / "trace.jsonl").exists()
    assert (tmp_path / "ckpt_stage2_final.pt").exists()


def test_single_stage_equals_plain_training(pair_set, tmp_path):
    data = _data(pair_set)
    cfg = ModelConfig(depth=1, width=16, heads=2)
    stage = StageConfig("only", {"text_addition": 1.0}, 5)
    torch.manual_seed(4)
    m1 = PosterDiT(cfg)
    _, t1 = train(CurriculumConfig([stage], seed=9, batch_size=2), data, m1)
    torch.manual_seed(4)
    m2 = PosterDiT(cfg)
    _, t2 = train(CurriculumConfig([stage], seed=9, batch_size=2), data, m2)
    assert [e.to_dict() for e in t1] == [e.to_dict() for e in t2]


def test_resume_reproduces_trace(pair_set, tmp_path):
    data = _data(pair_set)
    cfg = ModelConfig(depth=1, width=16, heads=2)
    cur = _tiny_curriculum()

    torch.manual_seed(5)
    full_model, full_trace = train(cur, data, PosterDiT(cfg), out_dir=tmp_path / "full")

    torch.manual_seed(5)
    train(cur, data, PosterDiT(cfg), out_dir=tmp_path / "int")
    model, state = resume_from_checkpoint(tmp_path / "int" / "ckpt_s1_3.pt")
    res_model, res_trace = train(
        cur, data, model, out_dir=tmp_path / "res", resume_state=state
    )
    assert [e.to_dict() for e in full_trace] == [e.to_dict() for e in res_trace]
    for (n1, p1), (n2, p2) in zip(
        sorted(full_model.state_dict().items()), sorted(res_model.state_dict().items())
    ):
        assert n1 == n2 and torch.equal(p1, p2), n1


def test_curriculum_toml_round_trip(tmp_path):
    doc = """
[curriculum]
seed = 5
batch_size = 2
checkpoint_every = 7

[[stage]]
name = "warmup"
steps = 3
learning_rate = 0.001
[stage.mixture]
text_addition = 1.0

[[stage]]
name = "mix"
steps = 4
learning_rate = 0.0005
min_aesthetic = 0.75
trainable_groups = ["head", "block_0"]
[stage.mixture]
text_addition = 0.5
restyle = 0.5
"""
    path = tmp_path / "c.toml"
    path.write_text(doc)
    cur = load_curriculum_toml(path)
    assert cur.seed == 5 and cur.batch_size == 2 and cur.checkpoint_every == 7
    assert [s.name for s in cur.stages] == ["warmup", "mix"]
    assert cur.stages[1].trainable_groups == ("head", "block_0")
    assert cur.stages[1].min_aesthetic == 0.75
