"""External multimodal judge: frame sampling, prompt construction, reply parsing."""
from __future__ import annotations

import hashlib
import re
from importlib import resources
from typing import List, Sequence, Tuple

import numpy as np

from ..conditioning import FramePlan, MultiSceneScript
from ..errors import ParseError, UsageError
from ..remote import ClientConfig, chat
from .oracle import EvalScore

FRAMES_PER_SCENE = 4
ANSWERS = {"yes": 1.0, "partially": 0.5, "no": 0.0}
CATEGORIES = ("entity consistency", "background consistency", "text adherence")

_WORDS = ("zero one two three four five six seven eight nine ten eleven twelve thirteen fourteen "
          "fifteen sixteen seventeen eighteen nineteen twenty").split()


def number_word(n: int) -> str:
    if not 0 <= n < len(_WORDS):
        raise UsageError(f"no number word for {n}")
    return _WORDS[n]


def eval_frame_indices(start: int, end: int, k: int = FRAMES_PER_SCENE) -> List[int]:
    """Evenly spaced indices in [start, end): floor(start + i*(len-1)/(k-1))."""
    n = end - start
    if n < 1:
        raise UsageError(f"empty segment [{start}, {end})")
    return [start + (i * (n - 1)) // (k - 1) for i in range(k)]


def sample_eval_frames(video: np.ndarray, plan: FramePlan) -> List[np.ndarray]:
    """Four frames per scene, in temporal order."""
    return [np.asarray(video[i]) for a, b in plan.segments for i in eval_frame_indices(a, b)]


def judge_template() -> str:
    return resources.files("talc").joinpath("assets/judge_prompt.txt").read_text(encoding="utf-8")


def judge_template_sha256() -> str:
    return hashlib.sha256(judge_template().encode("utf-8")).hexdigest()


def uses_generalized_prompt(script: MultiSceneScript) -> bool:
    return script.n > 2


def build_judge_prompt(script: MultiSceneScript) -> str:
    """The shipped two-scene prompt; for n > 2 the scene count, the frame count
    (4n) and the scene list are extended."""
    n = script.n
    if n < 2:
        raise UsageError("the judge prompt needs a script with at least two scenes")
    text = judge_template()
    head, block = text.split("Scene 1: {scene1}")
    if n == 2:
        return text.replace("{scene1}", script.scenes[0], 1).replace("{scene2}", script.scenes[1], 1)
    word = number_word(n)
    head = head.replace("two-scene", f"{word}-scene").replace("Two-scene", f"{word.capitalize()}-scene")
    head = head.replace("eight video frames", f"{number_word(FRAMES_PER_SCENE * n)} video frames")
    lines = "\n".join(f"Scene {j + 1}: {s}" for j, s in enumerate(script.scenes))
    return head + lines


_ANSWER = re.compile(r"\b(yes|partially|no)\b", re.IGNORECASE)
_MARKERS = [re.compile(rf"(?<![\w.]){i + 1}\s*[.):]|{name}", re.IGNORECASE) for i, name in enumerate(CATEGORIES)]


def parse_judge_reply(reply: str) -> Tuple[float, float, float]:
    """(entity, background, text adherence) from a judge reply.

    Categories are located by their number ("1.") or name; each takes the last
    YES/PARTIALLY/NO inside its sections. Unnumbered replies with at least
    three answers use the final three in order.
    """
    marks = sorted((m.start(), m.end(), c) for c, rx in enumerate(_MARKERS) for m in rx.finditer(reply))
    if not marks:
        found = [ANSWERS[m.group(1).lower()] for m in _ANSWER.finditer(reply)]
        if len(found) < 3:
            raise ParseError(f"judge reply has {len(found)} answers, need 3", reply)
        return tuple(found[-3:])
    picked = [None, None, None]
    for k, (_, end, cat) in enumerate(marks):
        stop = marks[k + 1][0] if k + 1 < len(marks) else len(reply)
        hits = _ANSWER.findall(reply[end:stop])
        if hits:
            picked[cat] = ANSWERS[hits[-1].lower()]
    missing = [CATEGORIES[c] for c in range(3) if picked[c] is None]
    if missing:
        raise ParseError(f"judge reply lacks an answer for {', '.join(missing)}", reply)
    return tuple(picked)


def external_judge(video: np.ndarray, script: MultiSceneScript, plan: FramePlan, cfg: ClientConfig,
                   sleep=None) -> EvalScore:
    frames = sample_eval_frames(video, plan)
    kwargs = {"sleep": sleep} if sleep is not None else {}
    reply = chat(build_judge_prompt(script), frames, cfg, **kwargs)
    entity, background, ta = parse_judge_reply(reply)
    if script.scenario == "S2":
        entity = None
    return EvalScore(entity=entity, background=background, text_adherence=ta, judge="external")
