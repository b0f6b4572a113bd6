"""``talc`` command line: data, training, generation, evaluation and reports."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional

from . import __version__
from .config import (
    base_defaults, desk_defaults, model_config, parse_overrides, parse_scene_counts, read_config_file, resolve,
    section, train_config, write_snapshot,
)
from .errors import ConfigError, TalcError, UsageError

log = logging.getLogger("talc")

EXIT_OK, EXIT_FAILED, EXIT_USAGE = 0, 1, 2


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--seed", type=int, help="root random seed")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override any config key")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="talc", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-synthetic", help="render a synthetic moving-shape corpus")
    _common(p)
    p.add_argument("--count", type=int, help="videos per scene count")
    p.add_argument("--scenes", help="scene counts, e.g. 1-4 or 2,3")
    p.add_argument("--frames-per-scene", type=int)

    p = sub.add_parser("make-dataset", help="scene-cut and caption a directory of videos")
    _common(p)
    p.add_argument("input", help="directory of *.talcvid files or PPM frame directories")
    p.add_argument("--threshold", type=float)
    p.add_argument("--endpoint", help="chat-completions URL of the captioning model")

    p = sub.add_parser("scene-cut", help="print scene boundaries of one video as JSON")
    p.add_argument("video")
    p.add_argument("--threshold", type=float)
    p.add_argument("--config")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--out", help="write the JSON here instead of stdout")

    p = sub.add_parser("train", help="fine-tune a denoiser on a manifest")
    _common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--mode", choices=("talc", "merge_captions"))
    p.add_argument("--steps", type=int)
    p.add_argument("--frames-per-scene", type=int)

    p = sub.add_parser("generate", help="sample videos for multi-scene scripts")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--scripts", help="JSON-lines scripts ('builtin' for the shipped examples)")
    src.add_argument("--scene", action="append", help="one scene description (repeat per scene)")
    p.add_argument("--mode", choices=("talc", "merge_captions", "merge_videos"))
    p.add_argument("--steps", type=int)
    p.add_argument("--guidance", type=float)
    p.add_argument("--frames-per-scene", type=int)

    p = sub.add_parser("evaluate", help="score generated videos")
    _common(p)
    p.add_argument("--generated", required=True, help="output directory of 'generate'")
    p.add_argument("--judge", choices=("oracle", "external"))
    p.add_argument("--endpoint")

    p = sub.add_parser("report", help="aggregate score files into tables")
    _common(p)
    p.add_argument("--scores", action="append", default=[], help="scores.jsonl from 'evaluate'")
    p.add_argument("--human", action="append", default=[], help="human ratings CSV")

    p = sub.add_parser("reproduce-desk", help="desk-scale end-to-end comparison of the three modes")
    _common(p)
    p.add_argument("--steps", type=int, help="training steps per checkpoint")
    p.add_argument("--scenes", help="training scene counts")
    p.add_argument("--guidance", type=float)
    return parser


# flag -> config key, per command
FLAG_KEYS = {
    "make-synthetic": {"count": "data.count", "scenes": "data.scenes", "frames_per_scene": "data.frames_per_scene"},
    "make-dataset": {"threshold": "scenes.threshold", "endpoint": "client.endpoint"},
    "scene-cut": {"threshold": "scenes.threshold"},
    "train": {"mode": "train.mode", "steps": "train.steps", "frames_per_scene": "train.frames_per_scene"},
    "generate": {"mode": "sample.mode", "steps": "sample.steps", "guidance": "sample.guidance",
                 "frames_per_scene": "sample.frames_per_scene"},
    "evaluate": {"judge": "eval.judge", "endpoint": "client.endpoint"},
    "report": {},
    "reproduce-desk": {"steps": "train.steps", "scenes": "data.scenes", "guidance": "desk.guidance"},
}


def resolve_args(args) -> Dict:
    defaults = desk_defaults() if args.command == "reproduce-desk" else base_defaults()
    file_layer = read_config_file(args.config) if getattr(args, "config", None) else {}
    flags = {key: getattr(args, attr) for attr, key in FLAG_KEYS[args.command].items()
             if getattr(args, attr, None) is not None}
    if getattr(args, "seed", None) is not None:
        flags["seed"] = args.seed
    return resolve(defaults, file_layer, flags, parse_overrides(getattr(args, "set", [])))


def client_config(cfg):
    from .remote import ClientConfig

    c = section(cfg, "client")
    if not c["endpoint"]:
        raise UsageError("no endpoint: pass --endpoint or set client.endpoint")
    return ClientConfig(c["endpoint"], c["model"], timeout=c["timeout"], max_retries=c["max_retries"],
                        backoff=c["backoff"])


def cmd_make_synthetic(args, cfg, out: Path):
    from .datapipe.corpus import random_specs, write_corpus
    from .numerics import Rng

    specs = random_specs(Rng(cfg["seed"]).child("corpus"), parse_scene_counts(cfg["data.scenes"]), cfg["data.count"],
                         "syn", cfg["data.frames_per_scene"], cfg["data.size"], cfg["data.shape_size"],
                         cfg["data.distinct_motions"])
    manifest = write_corpus(out, specs)
    print(f"wrote {len(manifest)} videos, {out / 'manifest.jsonl'} and {out / 'scripts.jsonl'}")


def cmd_make_dataset(args, cfg, out: Path):
    from .datapipe.captioner import caption_scenes, make_dataset

    client = client_config(cfg)
    manifest = make_dataset(args.input, out / "manifest.jsonl", lambda fr, c: caption_scenes(fr, c, client),
                            cfg["scenes.threshold"], cfg["scenes.min_len"],
                            progress=lambda name, n: log.info("%s: %d scenes", name, n))
    print(f"wrote {len(manifest)} records to {out / 'manifest.jsonl'}")


def cmd_scene_cut(args, cfg, out: Optional[Path]):
    from .datapipe.scenes import detect_scenes
    from .videoio import read_video

    cuts = detect_scenes(read_video(args.video), cfg["scenes.threshold"], cfg["scenes.min_len"])
    text = json.dumps(cuts.to_dict(), sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)


def cmd_train(args, cfg, out: Path):
    from .datapipe.manifest import DatasetManifest
    from .trainer import fit

    manifest, bad = DatasetManifest.read(args.manifest)
    if bad:
        log.warning("%d malformed manifest lines skipped", bad)

    def progress(step, res):
        if step % 50 == 0 or step == 1:
            log.info("step %d loss %.5f grad_norm %.4f lr %.2e", step, res.loss, res.grad_norm, res.lr)

    final, state, skipped = fit(manifest, train_config(cfg), model_config(cfg), out, cfg["text.max_tokens"],
                                progress=progress)
    print(f"trained {state.step} steps ({skipped} unreadable entries skipped); checkpoint {final}")


def _load_jobs(args):
    from .conditioning import MultiSceneScript, builtin_scripts
    from .datapipe.corpus import read_jobs

    if args.scene:
        return [(MultiSceneScript(tuple(args.scene), "synthetic", "script"), None)]
    if args.scripts == "builtin":
        return [(s, None) for s in builtin_scripts()]
    jobs = read_jobs(args.scripts)
    return [(s if s.id else MultiSceneScript(s.scenes, s.scenario, f"script{k:04d}"), spec)
            for k, (s, spec) in enumerate(jobs)]


def cmd_generate(args, cfg, out: Path):
    from .checkpoint import load_checkpoint
    from .pipeline import generate_jobs

    model, schedule, header = load_checkpoint(args.checkpoint)
    fps = cfg["sample.frames_per_scene"] or header.get("extra", {}).get("train", {}).get("frames_per_scene", 16)
    index = generate_jobs(_load_jobs(args), {cfg["sample.mode"]: (model, schedule)}, out, fps,
                          cfg["sample.steps"], cfg["sample.guidance"], cfg["seed"], sheets=4)
    print(f"generated {len(index)} videos into {out}")


def cmd_evaluate(args, cfg, out: Path):
    from .pipeline import read_index, score_index, write_scores

    gen = Path(args.generated)
    judge = cfg["eval.judge"]
    client = client_config(cfg) if judge == "external" else None
    scores = score_index(read_index(gen / "index.jsonl"), gen, judge, client)
    write_scores(out / "scores.jsonl", scores)
    print(f"scored {len(scores)} videos -> {out / 'scores.jsonl'}")


def cmd_report(args, cfg, out: Path):
    from .evaluator.aggregate import aggregate, read_human_csv
    from .pipeline import items_from_scores, read_scores, score_flags, write_report

    if not args.scores and not args.human:
        raise UsageError("report needs --scores and/or --human inputs")
    records = [r for p in args.scores for r in read_scores(p)]
    items = items_from_scores(records)
    for p in args.human:
        items += read_human_csv(Path(p).read_text(encoding="utf-8"))
    report = aggregate(items, score_flags(records))
    txt, _ = write_report(out, report)
    print(txt.read_text(encoding="utf-8"), end="")


def cmd_reproduce_desk(args, cfg, out: Path):
    from .pipeline import reproduce_desk

    reproduce_desk(cfg, out, progress=lambda msg: log.info("%s", msg))
    print((out / "report.txt").read_text(encoding="utf-8"), end="")


COMMANDS = {
    "make-synthetic": cmd_make_synthetic,
    "make-dataset": cmd_make_dataset,
    "scene-cut": cmd_scene_cut,
    "train": cmd_train,
    "generate": cmd_generate,
    "evaluate": cmd_evaluate,
    "report": cmd_report,
    "reproduce-desk": cmd_reproduce_desk,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_args(args)
        out = Path(args.out) if getattr(args, "out", None) else None
        if out is not None and args.command != "scene-cut":
            out.mkdir(parents=True, exist_ok=True)
            write_snapshot(out, cfg)
        COMMANDS[args.command](args, cfg, out)
    except (ConfigError, UsageError) as exc:
        print(f"talc {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TalcError, OSError) as exc:
        print(f"talc {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILED
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
