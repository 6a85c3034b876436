"""Pipeline orchestration CLI.

Subcommands: corpus | filter | pair | caption | train | sample | eval |
report | run-all. Every stage appends a provenance record (stage, config
hash, input hashes, output hashes) to a run ledger; run-all executes the
stages in order and can resume from the last completed one.

Exit codes: 0 success, 2 validation error (bad arguments, missing
upstream artifacts), 3 runtime error.

Config: one TOML document with per-stage sections; flags override config
keys, and environment variables POSTERLAB_<SECTION>_<KEY> override both.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

log = logging.getLogger("posterlab")

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_RUNTIME = 3

STAGE_ORDER = ("corpus", "filter", "pair", "caption", "train", "sample", "eval")

DEFAULT_CONFIG: dict = {
    "io": {"root": "run"},
    "corpus": {"seed": 7, "count": 24, "buckets": "64x64,64x96,96x64,48x96"},
    "filter": {"tau": 0.5},
    "pair": {"tasks": "all", "seed": 0},
    "model": {"depth": 6, "width": 192, "heads": 6},
    "train": {
        "steps": [30, 40, 20],
        "learning_rate": 1e-3,
        "batch_size": 4,
        "checkpoint_every": 50,
        "seed": 0,
    },
    "sample": {"sizes": "64x64,64x96,96x64,48x96", "steps": 8, "cfg": 3.0, "seed": 7},
    "eval": {},
}


class ValidationFailure(Exception):
    pass


def parse_buckets(text: str) -> list[tuple[int, int]]:
    out = []
    for part in text.split(","):
        w, _, h = part.strip().partition("x")
        try:
            out.append((int(w), int(h)))
        except ValueError as e:
            raise ValidationFailure(f"bad size {part!r}: expected WxH") from e
    return out


def file_sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def tree_sha256(path: Path) -> str:
    """Hash of a file, or of the sorted (name, file hash) list of a tree."""
    if path.is_file():
        return file_sha256(path)
    h = hashlib.sha256()
    for p in sorted(path.rglob("*")):
        if p.is_file():
            h.update(p.relative_to(path).as_posix().encode())
            h.update(file_sha256(p).encode())
    return h.hexdigest()


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()


def load_config(path: str | None) -> dict:
    cfg = json.loads(json.dumps(DEFAULT_CONFIG))  # deep copy
    if path:
        try:
            import tomllib
        except ModuleNotFoundError:
            import tomli as tomllib

        p = Path(path)
        if not p.exists():
            raise ValidationFailure(f"config file not found: {p}")
        with open(p, "rb") as f:
            user = tomllib.load(f)
        for section, values in user.items():
            cfg.setdefault(section, {}).update(values)
    for section, values in cfg.items():
        if not isinstance(values, dict):
            continue
        for key in list(values):
            env = f"POSTERLAB_{section.upper()}_{key.upper()}"
            if env in os.environ:
                raw = os.environ[env]
                old = values[key]
                if isinstance(old, bool):
                    values[key] = raw.lower() in ("1", "true", "yes")
                elif isinstance(old, int):
                    values[key] = int(raw)
                elif isinstance(old, float):
                    values[key] = float(raw)
                elif isinstance(old, list):
                    values[key] = json.loads(raw)
                else:
                    values[key] = raw
    return cfg


class Ledger:
    def __init__(self, root: Path):
        self.path = root / "ledger.jsonl"

    def records(self) -> list[dict]:
        if not self.path.exists():
            return []
        with open(self.path) as f:
            return [json.loads(line) for line in f if line.strip()]

    def append(self, stage: str, cfg: dict, inputs: dict[str, str], outputs: dict[str, str]):
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.path, "a") as f:
            f.write(
                json.dumps(
                    {
                        "stage": stage,
                        "config_hash": config_hash(cfg),
                        "input_hashes": inputs,
                        "output_hashes": outputs,
                    },
                    sort_keys=True,
                )
                + "\n"
            )

    def completed(self) -> set[str]:
        return {r["stage"] for r in self.records()}


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise ValidationFailure(f"missing upstream artifact for {what}: {path}")
    return path


# --- stage implementations ----------------------------------------------------


def stage_corpus(cfg: dict, root: Path, ledger: Ledger) -> Path:
    from .corpus import generate_corpus, write_corpus

    c = cfg["corpus"]
    out = root / "corpus"
    pairs = generate_corpus(int(c["seed"]), int(c["count"]), parse_buckets(c["buckets"]))
    manifest = write_corpus(pairs, out)
    ledger.append("corpus", c, {}, {"corpus": tree_sha256(out)})
    log.info("corpus: %d records -> %s", len(pairs), manifest)
    return out


def stage_filter(cfg: dict, root: Path, ledger: Ledger) -> Path:
    from .corpus import load_image, read_manifest
    from .filtering import filter_record, write_decisions

    c = cfg["filter"]
    corpus_dir = _require(root / "corpus", "filter")
    manifest = _require(corpus_dir / "corpus.jsonl", "filter")
    records = read_manifest(manifest)
    decisions = []
    for rec in records:
        img = load_image(corpus_dir / f"{rec.id}.png")
        decisions.append((rec.id, filter_record(img, float(c["tau"]))))
    out = root / "filtered.jsonl"
    write_decisions(decisions, out)
    kept = sum(1 for _, d in decisions if d.keep)
    ledger.append(
        "filter", c, {"corpus": tree_sha256(corpus_dir)}, {"filtered": file_sha256(out)}
    )
    log.info("filter: kept %d/%d", kept, len(decisions))
    return out


def stage_pair(cfg: dict, root: Path, ledger: Ledger) -> Path:
    from .corpus import load_image, read_manifest, save_image
    from .filtering import DetectedSpan, read_decisions
    from .pairs import PairBuildConfig, TASKS, make_pairs, write_pairs

    c = cfg["pair"]
    corpus_dir = _require(root / "corpus", "pair")
    filtered = _require(root / "filtered.jsonl", "pair")
    records = {r.id: r for r in read_manifest(corpus_dir / "corpus.jsonl")}
    img_dir = root / "pair_images"
    img_dir.mkdir(parents=True, exist_ok=True)

    tasks = tuple(TASKS) if c["tasks"] == "all" else tuple(c["tasks"].split(","))
    unknown = set(tasks) - set(TASKS)
    if unknown:
        raise ValidationFailure(f"unknown tasks: {sorted(unknown)}")
    build_cfg = PairBuildConfig(
        tasks=tasks,
        seed=int(c["seed"]),
        buckets=tuple(parse_buckets(cfg["corpus"]["buckets"])),
    )

    def saver(name, arr):
        save_image(arr, img_dir / name)
        return name

    all_pairs = []
    for entry in read_decisions(filtered):
        if not entry["keep"]:
            continue
        rec = records[entry["id"]]
        img = load_image(corpus_dir / f"{rec.id}.png")
        ocr = [DetectedSpan.from_dict(d) for d in entry["ocr"]]
        all_pairs.extend(
            make_pairs(
                rec, img, ocr, build_cfg,
                aesthetic=entry["report"]["score"], save_image=saver,
            )
        )
    out = root / "pairs.jsonl"
    write_pairs(all_pairs, out)
    ledger.append(
        "pair",
        c,
        {"corpus": tree_sha256(corpus_dir), "filtered": file_sha256(filtered)},
        {"pairs": file_sha256(out), "pair_images": tree_sha256(img_dir)},
    )
    log.info("pair: %d pairs", len(all_pairs))
    return out


def stage_caption(cfg: dict, root: Path, ledger: Ledger) -> Path:
    from .captioner import caption_bundle
    from .corpus import read_manifest
    from .filtering import read_decisions

    corpus_dir = _require(root / "corpus", "caption")
    filtered = _require(root / "filtered.jsonl", "caption")
    records = {r.id: r for r in read_manifest(corpus_dir / "corpus.jsonl")}
    out = root / "captions.jsonl"
    with open(out, "w") as f:
        for entry in read_decisions(filtered):
            if not entry["keep"]:
                continue
            b = caption_bundle(records[entry["id"]])
            f.write(
                json.dumps(
                    {
                        "id": entry["id"],
                        "glyph_caption": b.glyph_caption,
                        "layout_caption": b.layout_caption,
                    },
                    sort_keys=True,
                )
                + "\n"
            )
    ledger.append(
        "caption", {}, {"filtered": file_sha256(filtered)}, {"captions": file_sha256(out)}
    )
    return out


def _param_hash(model) -> str:
    import torch

    h = hashlib.sha256()
    for name, p in sorted(model.named_parameters()):
        h.update(name.encode())
        h.update(p.detach().to(torch.float64).numpy().tobytes())
    return h.hexdigest()


def stage_train(cfg: dict, root: Path, ledger: Ledger, curriculum_path: str | None = None) -> Path:
    import torch

    from .curriculum import (
        PairData, default_curriculum, load_curriculum_toml, train,
    )
    from .corpus import load_image
    from .model import ModelConfig, PosterDiT, save_checkpoint
    from .pairs import read_pairs

    c = cfg["train"]
    pairs_file = _require(root / "pairs.jsonl", "train")
    img_dir = _require(root / "pair_images", "train")
    pairs = read_pairs(pairs_file)
    if curriculum_path:
        curriculum = load_curriculum_toml(curriculum_path)
    else:
        curriculum = default_curriculum(
            steps=tuple(int(s) for s in c["steps"]),
            learning_rate=float(c["learning_rate"]),
            seed=int(c["seed"]),
            batch_size=int(c["batch_size"]),
            checkpoint_every=int(c["checkpoint_every"]),
        )
    m = cfg["model"]
    torch.manual_seed(int(c["seed"]))
    model = PosterDiT(
        ModelConfig(depth=int(m["depth"]), width=int(m["width"]), heads=int(m["heads"]))
    )
    data = PairData(pairs, lambda ref: load_image(img_dir / ref))
    out = root / "ckpts"
    model, trace = train(curriculum, data, model, out_dir=out)
    final = out / "model_final.pt"
    save_checkpoint(final, model)
    ledger.append(
        "train",
        {**c, "model": m},
        {"pairs": file_sha256(pairs_file), "pair_images": tree_sha256(img_dir)},
        {"params": _param_hash(model), "trace": file_sha256(out / "trace.jsonl")},
    )
    log.info("train: %d steps total, final loss %.4f", len(trace), trace[-1].loss)
    return final


def stage_sample(cfg: dict, root: Path, ledger: Ledger) -> Path:
    from .corpus import load_image, save_image
    from .model import load_checkpoint
    from .pairs import read_pairs
    from .sampler import SampleRequest, sample

    c = cfg["sample"]
    ckpt = _require(root / "ckpts" / "model_final.pt", "sample")
    pairs_file = _require(root / "pairs.jsonl", "sample")
    img_dir = root / "pair_images"
    model, _ = load_checkpoint(ckpt)
    sizes = parse_buckets(c["sizes"])
    add_pairs = [p for p in read_pairs(pairs_file) if p.task == "text_addition"]
    if not add_pairs:
        raise ValidationFailure("no text_addition pairs to sample from")
    out_dir = root / "samples"
    out_dir.mkdir(parents=True, exist_ok=True)
    requests = []
    for i, size in enumerate(sizes):
        pair = add_pairs[i % len(add_pairs)]
        cond = load_image(img_dir / pair.source_image)
        prompt = f"{pair.instruction} {pair.glyph_caption} {pair.layout_caption}"
        req = SampleRequest(
            prompt=prompt,
            size=tuple(size),
            condition=cond,
            steps=int(c["steps"]),
            guidance=float(c["cfg"]),
            seed=int(c["seed"]) + i,
        )
        img = sample(model, req)
        name = f"sample_{i:03d}_{size[0]}x{size[1]}.png"
        save_image(img, out_dir / name)
        requests.append(
            {
                "id": name,
                "output": name,
                "texts": _requested_texts(pair),
                "cond": pair.source_image,
                "record_id": pair.record_id,
            }
        )
    req_path = root / "requests.jsonl"
    with open(req_path, "w") as f:
        for r in requests:
            f.write(json.dumps(r, sort_keys=True) + "\n")
    ledger.append(
        "sample", c, {"ckpt": file_sha256(ckpt)},
        {"samples": tree_sha256(out_dir), "requests": file_sha256(req_path)},
    )
    return out_dir


def _requested_texts(pair) -> list[str]:
    import re

    return re.findall(r'"([^"]+)"', pair.instruction)


def stage_eval(cfg: dict, root: Path, ledger: Ledger, model_name: str = "posterlab") -> Path:
    from .corpus import load_image
    from .evalharness import MetricReport, design_sense, prompt_following, subject_preservation
    from .filtering import run_ocr
    from .pairs import segment_subject

    out_dir = _require(root / "samples", "eval")
    req_path = _require(root / "requests.jsonl", "eval")
    img_dir = root / "pair_images"
    per_sample = []
    with open(req_path) as f:
        requests = [json.loads(line) for line in f if line.strip()]
    for r in requests:
        out_img = load_image(out_dir / r["output"])
        det = run_ocr(out_img, exact=False)
        pf = prompt_following(out_img, r["texts"], detections=det) if r["texts"] else 0.0
        ds = design_sense(det, (out_img.shape[1], out_img.shape[0]))
        sp = None
        if r.get("cond"):
            cond = load_image(img_dir / r["cond"])
            mask = segment_subject(image=cond).mask
            if mask.any():
                sp = subject_preservation(cond, out_img, mask)
        per_sample.append(
            {"id": r["id"], "prompt_following": pf, "design_sense": ds, "subject_preservation": sp}
        )
    sp_vals = [s["subject_preservation"] for s in per_sample if s["subject_preservation"] is not None]
    report = MetricReport(
        prompt_following=float(np.mean([s["prompt_following"] for s in per_sample])),
        subject_preservation=float(np.mean(sp_vals)) if sp_vals else 0.0,
        design_sense=float(np.mean([s["design_sense"] for s in per_sample])),
        per_sample=per_sample,
    )
    out = root / "report.json"
    with open(out, "w") as f:
        json.dump({"model": model_name, **report.to_dict()}, f, indent=2, sort_keys=True)
    ledger.append(
        "eval",
        cfg.get("eval", {}),
        {"samples": tree_sha256(out_dir), "requests": file_sha256(req_path)},
        {"report": file_sha256(out)},
    )
    return out


def cmd_report(args) -> int:
    from .evalharness import RADAR_AXES, emit_radar

    values = {}
    for path in args.reports:
        p = Path(path)
        if not p.exists():
            raise ValidationFailure(f"report not found: {p}")
        with open(p) as f:
            doc = json.load(f)
        vals = []
        for axis in RADAR_AXES:
            vals.append(float(doc.get(axis, 0.0)))
        values[doc.get("model", p.stem)] = vals
    emit_radar(values, path=args.radar)
    print(f"radar data written to {args.radar}")
    return EXIT_OK


# --- command wiring -----------------------------------------------------------


def _root(args, cfg) -> Path:
    return Path(args.out or cfg["io"]["root"])


def run_stage(name: str, cfg: dict, root: Path, ledger: Ledger, **kw):
    fn = {
        "corpus": stage_corpus,
        "filter": stage_filter,
        "pair": stage_pair,
        "caption": stage_caption,
        "train": stage_train,
        "sample": stage_sample,
        "eval": stage_eval,
    }[name]
    return fn(cfg, root, ledger, **kw)


def cmd_run_all(args, cfg) -> int:
    root = _root(args, cfg)
    ledger = Ledger(root)
    done = ledger.completed() if args.resume else set()
    for name in STAGE_ORDER:
        if name in done:
            log.info("run-all: skipping completed stage %s", name)
            continue
        log.info("run-all: stage %s", name)
        run_stage(name, cfg, root, ledger)
    summary = {
        "stages": [r["stage"] for r in ledger.records()],
    }
    report = root / "report.json"
    if report.exists():
        with open(report) as f:
            doc = json.load(f)
        summary["metrics"] = {
            k: doc[k] for k in ("prompt_following", "subject_preservation", "design_sense")
        }
    with open(root / "summary.json", "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
    print(json.dumps(summary["stages"]))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="posterlab", description=__doc__)
    ap.add_argument("--config", help="pipeline TOML config")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def add(name, **kw):
        p = sub.add_parser(name, **kw)
        p.add_argument("--out", help="pipeline root directory")
        return p

    p = add("corpus", help="generate the synthetic poster corpus")
    p.add_argument("--seed", type=int)
    p.add_argument("--count", type=int)
    p.add_argument("--buckets")

    p = add("filter", help="run the OCR + aesthetic gates")
    p.add_argument("--tau", type=float)

    p = add("pair", help="build training pairs")
    p.add_argument("--tasks")
    p.add_argument("--seed", type=int)

    add("caption", help="emit caption bundles for kept records")

    p = add("train", help="run the staged curriculum")
    p.add_argument("--curriculum", help="curriculum TOML file")
    p.add_argument("--seed", type=int)

    p = add("sample", help="sample posters from a checkpoint")
    p.add_argument("--ckpt")
    p.add_argument("--cond")
    p.add_argument("--prompt")
    p.add_argument("--size")
    p.add_argument("--steps", type=int)
    p.add_argument("--cfg", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--output", help="output PNG for single-image mode")

    add("eval", help="score sampled posters")

    p = sub.add_parser("report", help="merge metric reports into radar data")
    p.add_argument("--reports", nargs="+", required=True)
    p.add_argument("--radar", required=True)

    p = add("run-all", help="run the whole pipeline")
    p.add_argument("--resume", action="store_true")
    p.add_argument("--seed", type=int)
    return ap


def _apply_flag_overrides(args, cfg) -> None:
    mapping = {
        "corpus": [("seed", "seed"), ("count", "count"), ("buckets", "buckets")],
        "filter": [("tau", "tau")],
        "pair": [("tasks", "tasks"), ("seed", "seed")],
        "train": [("seed", "seed")],
        "sample": [("steps", "steps"), ("cfg", "cfg"), ("seed", "seed")],
    }
    for section, keys in mapping.items():
        if args.command not in (section, "run-all"):
            continue
        for flag, key in keys:
            val = getattr(args, flag, None)
            if val is not None:
                cfg[section][key] = val
    if args.command == "run-all" and getattr(args, "seed", None) is not None:
        cfg["corpus"]["seed"] = args.seed
        cfg["train"]["seed"] = args.seed
        cfg["sample"]["seed"] = args.seed


def _single_sample(args, cfg) -> int:
    from .corpus import load_image, save_image
    from .model import load_checkpoint
    from .sampler import SampleRequest, sample

    if not args.ckpt or not args.size or not args.output:
        raise ValidationFailure("single-image sampling needs --ckpt, --size and --output")
    ckpt = _require(Path(args.ckpt), "sample")
    model, _ = load_checkpoint(ckpt)
    size = parse_buckets(args.size)[0]
    cond = load_image(args.cond) if args.cond else None
    req = SampleRequest(
        prompt=args.prompt or "",
        size=size,
        condition=cond,
        steps=args.steps or int(cfg["sample"]["steps"]),
        guidance=args.cfg if args.cfg is not None else float(cfg["sample"]["cfg"]),
        seed=args.seed if args.seed is not None else int(cfg["sample"]["seed"]),
    )
    save_image(sample(model, req), args.output)
    print(f"wrote {args.output}")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = load_config(getattr(args, "config", None))
        _apply_flag_overrides(args, cfg)
        if args.command == "report":
            return cmd_report(args)
        if args.command == "run-all":
            return cmd_run_all(args, cfg)
        if args.command == "sample" and (args.ckpt or args.output):
            return _single_sample(args, cfg)
        root = _root(args, cfg)
        ledger = Ledger(root)
        kw = {}
        if args.command == "train" and getattr(args, "curriculum", None):
            kw["curriculum_path"] = args.curriculum
        run_stage(args.command, cfg, root, ledger, **kw)
        return EXIT_OK
    except ValidationFailure as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except (ValueError, FileNotFoundError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as e:  # noqa: BLE001 - runtime failures map to exit 3
        log.exception("stage failed")
        print(f"runtime error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
