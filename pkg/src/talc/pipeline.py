"""Generate, score and report stages, and the desk-scale end-to-end run."""
from __future__ import annotations

import json
import logging
import time
from fractions import Fraction
from pathlib import Path
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

from .checkpoint import load_checkpoint
from .conditioning import MultiSceneScript, allocate_frames
from .config import model_config, parse_scene_counts, train_config
from .datapipe.corpus import random_specs, write_corpus, write_jobs
from .datapipe.synthetic import SyntheticSpec, grammar_vocabulary_texts
from .denoiser import Denoiser
from .errors import TalcError, UsageError
from .evaluator.aggregate import AggregateReport, ScoredItem, aggregate
from .evaluator.judge import external_judge
from .evaluator.oracle import EvalScore, oracle_score
from .numerics import Rng
from .remote import ClientConfig
from .sampler import SAMPLE_MODES, SampleConfig, generate
from .schedule import NoiseSchedule
from .textenc import Vocabulary
from .trainer import fit
from .videoio import contact_sheet, read_video, write_ppm, write_video

log = logging.getLogger(__name__)

GENERALIZED_PROMPT_FLAG = "external judge prompts for more than two scenes use the generalized template"
ORACLE_FLAG = "scores come from the synthetic ground-truth oracle, not a multimodal judge"


def job_seed(seed: int, job_id: str) -> int:
    """Sampling seed of one script; shared by every mode so comparisons are paired."""
    return int(Rng(seed).child(("sample", job_id)).integers(0, 2 ** 31))


def generate_jobs(jobs, models: Mapping[str, Tuple[Denoiser, NoiseSchedule]], out_dir, frames_per_scene: int,
                  steps: int, guidance: float, seed: int, sheets: int = 0,
                  progress: Optional[Callable[[str], None]] = None) -> List[dict]:
    """Sample every (script, mode) pair; ``models`` maps mode -> (model, schedule).

    Writes ``<mode>/<id>.talcvid`` and ``index.jsonl`` under ``out_dir``;
    the first ``sheets`` scripts per (mode, scene count) also get a contact sheet.
    """
    out = Path(out_dir)
    index, sheet_count = [], {}
    for mode, (model, schedule) in models.items():
        if mode not in SAMPLE_MODES:
            raise UsageError(f"unknown generation mode {mode!r}")
        (out / mode).mkdir(parents=True, exist_ok=True)
        for script, spec in jobs:
            if not script.id:
                raise UsageError("every script needs an id to name its output")
            cfg = SampleConfig(mode, frames_per_scene, steps, guidance, job_seed(seed, script.id))
            video = generate(script, model, schedule, cfg)
            rel = f"{mode}/{script.id}.talcvid"
            write_video(out / rel, video)
            key = (mode, script.n)
            if sheet_count.get(key, 0) < sheets:
                sheet_count[key] = sheet_count.get(key, 0) + 1
                (out / "sheets").mkdir(exist_ok=True)
                write_ppm(out / "sheets" / f"{mode}_{script.id}.ppm", contact_sheet(video, scale=2))
            entry = {"id": script.id, "mode": mode, "scenario": script.scenario, "scenes": list(script.scenes),
                     "n_scenes": script.n, "video": rel, "frames_per_scene": frames_per_scene,
                     "seed": cfg.seed}
            if spec is not None:
                entry["spec"] = spec.to_dict()
            index.append(entry)
            if progress is not None:
                progress(f"{mode} {script.id}")
    with open(out / "index.jsonl", "w", encoding="utf-8") as fh:
        for e in index:
            fh.write(json.dumps(e, sort_keys=True) + "\n")
    return index


def read_index(path) -> List[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(l) for l in fh if l.strip()]


def score_index(index: Sequence[dict], root, judge: str = "oracle", client: Optional[ClientConfig] = None,
                sleep=None) -> List[dict]:
    """Score generated videos. Returns score records in index order."""
    if judge not in ("oracle", "external"):
        raise UsageError(f"unknown judge {judge!r}")
    if judge == "external" and client is None:
        raise UsageError("the external judge needs an endpoint")
    root = Path(root)
    records = []
    for e in index:
        video = read_video(root / e["video"])
        script = MultiSceneScript(tuple(e["scenes"]), e["scenario"], e["id"])
        if judge == "oracle":
            spec = SyntheticSpec.from_dict(e["spec"]) if e.get("spec") else None
            score = oracle_score(video, script, spec)
        else:
            kwargs = {"sleep": sleep} if sleep is not None else {}
            score = external_judge(video, script, allocate_frames(len(video), script.n), client, **kwargs)
        records.append({"id": e["id"], "mode": e["mode"], "scenario": e["scenario"], "n_scenes": script.n,
                        "entity": score.entity, "background": score.background,
                        "text_adherence": score.text_adherence, "judge": score.judge,
                        "generalized_prompt": judge == "external" and script.n > 2})
    return records


def write_scores(path, records: Sequence[dict]):
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")


def read_scores(path) -> List[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(l) for l in fh if l.strip()]


def items_from_scores(records: Sequence[dict]) -> List[ScoredItem]:
    return [ScoredItem(EvalScore(r["entity"], r["background"], r["text_adherence"], r["judge"]),
                       r["scenario"], int(r["n_scenes"]), r["mode"], r.get("id", "")) for r in records]


def score_flags(records: Sequence[dict]) -> List[str]:
    flags = []
    if any(r.get("generalized_prompt") for r in records):
        flags.append(GENERALIZED_PROMPT_FLAG)
    if any(r.get("judge") == "oracle" for r in records):
        flags.append(ORACLE_FLAG)
    return flags


def write_report(out_dir, report: AggregateReport, stem: str = "report") -> Tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    txt, csv_path = out / f"{stem}.txt", out / f"{stem}.csv"
    txt.write_text(report.to_text(), encoding="utf-8")
    csv_path.write_text(report.to_csv(), encoding="utf-8")
    return txt, csv_path


def _frac(x: Optional[Fraction]):
    return None if x is None else {"exact": f"{x.numerator}/{x.denominator}", "value": float(x)}


def mode_summary(report: AggregateReport) -> Dict[str, dict]:
    """Exact per-mode means (fractions of 1, not percent)."""
    return {mode: {"videos": r.count, "entity": _frac(r.entity), "background": _frac(r.background),
                   "vc": _frac(r.visual_consistency), "ta": _frac(r.text_adherence), "overall": _frac(r.overall)}
            for mode, r in report.by_mode().items()}


# ---------------------------------------------------------------- desk run

STAGE_FILE = "STAGE"


class StageMarker:
    """Records the running stage in ``<out>/STAGE``; failures leave ``failed: <stage>``."""

    def __init__(self, out_dir):
        self.path = Path(out_dir) / STAGE_FILE
        self.current = None

    def enter(self, name: str):
        self.current = name
        self.path.write_text(f"running: {name}\n", encoding="utf-8")
        log.info("stage %s", name)

    def fail(self, exc: BaseException):
        self.path.write_text(f"failed: {self.current}\n{type(exc).__name__}: {exc}\n", encoding="utf-8")

    def done(self):
        self.path.write_text("complete\n", encoding="utf-8")


def reproduce_desk(resolved: Mapping, out_dir, progress: Optional[Callable[[str], None]] = None) -> dict:
    """Corpus -> two checkpoints -> three generation modes -> oracle scores -> report.

    Randomness derives from ``resolved["seed"]``: Rng(seed).child("corpus")
    and ("test") for specs, the training seed for init/batches/noise, and
    per-script sampling seeds shared across modes.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    marker = StageMarker(out)
    seed = resolved["seed"]
    root = Rng(seed)
    say = progress or (lambda msg: None)
    timings = {}
    fps = resolved["data.frames_per_scene"]
    geometry = dict(frames_per_scene=fps, size=resolved["data.size"], shape_size=resolved["data.shape_size"],
                    distinct_motions=resolved["data.distinct_motions"])
    try:
        t0 = time.time()
        marker.enter("corpus")
        train_counts = parse_scene_counts(resolved["data.scenes"])
        specs = random_specs(root.child("corpus"), train_counts, resolved["desk.train_per_n"], "train", **geometry)
        manifest = write_corpus(out / "corpus", specs)
        test_specs = random_specs(root.child("test"), (2, 3, 4), resolved["desk.test_per_n"], "test", **geometry)
        jobs = [(s.script(), s) for s in test_specs]
        write_jobs(out / "test_scripts.jsonl", jobs)
        timings["corpus"] = time.time() - t0

        vocab = Vocabulary.build(grammar_vocabulary_texts())
        mcfg = model_config(resolved)
        ckpts = {}
        for mode in ("talc", "merge_captions"):
            t0 = time.time()
            marker.enter(f"train-{mode}")
            tcfg = train_config({**resolved, "train.mode": mode, "train.frames_per_scene": fps})

            def report_step(step, res, mode=mode):
                if step % 100 == 0:
                    say(f"train {mode} step {step} loss {res.loss:.4f}")

            final, _, skipped = fit(manifest, tcfg, mcfg, out / f"ckpt_{mode}", resolved["text.max_tokens"],
                                    vocab, report_step)
            if skipped:
                raise UsageError(f"{skipped} corpus videos could not be read")
            ckpts[mode] = final
            timings[f"train-{mode}"] = time.time() - t0

        t0 = time.time()
        marker.enter("generate")
        talc = load_checkpoint(ckpts["talc"])[:2]
        merged = load_checkpoint(ckpts["merge_captions"])[:2]
        models = {"talc": talc, "merge_captions": merged, "merge_videos": talc}
        index = generate_jobs(jobs, models, out / "generated", fps, resolved["desk.sample_steps"],
                              resolved["desk.guidance"], seed,
                              sheets=1 if resolved["desk.sheets"] else 0, progress=say)
        timings["generate"] = time.time() - t0

        t0 = time.time()
        marker.enter("evaluate")
        scores = score_index(index, out / "generated", "oracle")
        write_scores(out / "scores.jsonl", scores)
        timings["evaluate"] = time.time() - t0

        marker.enter("report")
        report = aggregate(items_from_scores(scores), score_flags(scores))
        write_report(out, report)
        summary = mode_summary(report)
        (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        (out / "timings.json").write_text(json.dumps({k: round(v, 1) for k, v in timings.items()}, indent=2)
                                          + "\n", encoding="utf-8")
        marker.done()
        return summary
    except (TalcError, OSError, ValueError, ArithmeticError) as exc:
        marker.fail(exc)
        raise
