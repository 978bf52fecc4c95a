"""The three image-editing agents: lane localization, prompt optimization with
in-context exemplars, and the two-step cascading design generation.
"""

from __future__ import annotations

import logging
import re

from .domain import CandidateDesign, DesignScenario, LaneDescription, OptimizedPrompt, Stage, StreetScene
from .providers.base import ImageEditor, PartialBatchError, ProviderError, VisionDescriber
from .templating import ExemplarSet, PromptTemplate, load_default_exemplars, load_template

logger = logging.getLogger(__name__)

POOL_SIZE_MIN = 5
POOL_SIZE_MAX = 10
DEFAULT_POOL_SIZE = 6
DEFAULT_HIGHLIGHT_COLOR = "green"

# Fixed clause appended to every final generation prompt so the model knows
# what the first cascade step marked.
HIGHLIGHT_MEANING_CLAUSE = "The highlighted regions in the image represent bike lanes."

DEFAULT_ABSENCE_PHRASES = ("no bike lane", "not present")


class EmptyOptimizationError(RuntimeError):
    """The optimizer returned an empty response."""


class PartialPoolError(RuntimeError):
    """Candidate generation could not fill the pool; carries what completed."""

    def __init__(self, message: str, completed: list[CandidateDesign]):
        super().__init__(message)
        self.completed = completed


_SENTENCE_SPLIT = re.compile(r"(?<=[.!?])\s+")

_LABELS = {
    "markings": "markings",
    "marking": "markings",
    "pattern": "pattern",
    "width": "width_estimate",
    "position": "relative_position",
    "location": "relative_position",
}

_KEYWORDS = {
    "markings": ("white line", "white lines", "marking", "painted line"),
    "pattern": ("pattern", "stripe", "solid", "dashed", "glyph", "surface"),
    "width_estimate": ("feet", " ft", "wide", "width"),
    "relative_position": (
        "right side",
        "left side",
        "adjacent",
        "curb",
        "sidewalk",
        "between",
        "next to",
    ),
}


def parse_lane_sections(text: str) -> dict[str, str]:
    """Labeled-section heuristic over locator prose.

    Prefers explicit "Label: ..." sentences, then falls back to keyword
    matches; the first hit per field wins.
    """
    fields: dict[str, str] = {}
    sentences = [s.strip() for s in _SENTENCE_SPLIT.split(text) if s.strip()]
    for sentence in sentences:
        head, sep, rest = sentence.partition(":")
        if sep and rest.strip():
            label = head.strip().lower().split()[-1] if head.strip() else ""
            field = _LABELS.get(label)
            if field and field not in fields:
                fields[field] = rest.strip()
    for sentence in sentences:
        lowered = sentence.lower()
        for field, needles in _KEYWORDS.items():
            if field not in fields and any(n in lowered for n in needles):
                fields[field] = sentence
    return fields


def locate_lane(
    scene: StreetScene,
    describer: VisionDescriber,
    *,
    template: PromptTemplate | None = None,
    absence_phrases: tuple[str, ...] = DEFAULT_ABSENCE_PHRASES,
) -> LaneDescription:
    """Describe the existing bike lane, or flag the scene for exclusion."""
    tpl = template or load_template("locator")
    rendered = tpl.render({})
    raw = describer.describe(scene.image, rendered.system, rendered.user)
    lowered = raw.lower()
    if any(phrase in lowered for phrase in absence_phrases):
        return LaneDescription(present=False, raw_text=raw)
    sections = parse_lane_sections(raw)
    if not sections:
        logger.warning("locator response for %s had no parseable sections", scene.scene_id)
        return LaneDescription(present=True, raw_text=raw, parse_warning=True)
    return LaneDescription(
        present=True,
        raw_text=raw,
        markings=sections.get("markings", ""),
        pattern=sections.get("pattern", ""),
        width_estimate=sections.get("width_estimate", ""),
        relative_position=sections.get("relative_position", ""),
    )


def optimize_prompt(
    user_prompt: str,
    scenario: DesignScenario,
    exemplars: ExemplarSet | None,
    describer: VisionDescriber,
    *,
    template: PromptTemplate | None = None,
) -> OptimizedPrompt:
    """Rewrite the user's draft into a precise generation prompt."""
    if not user_prompt:
        raise ValueError("user_prompt must be non-empty")
    exemplars = exemplars or load_default_exemplars()
    tpl = template or load_template("optimizer")
    rendered = tpl.render(
        {
            "EXEMPLARS": exemplars.rendered(),
            "BOUNDARY_CLAUSES": scenario.prompt_fragment,
            "USER_PROMPT": user_prompt,
        }
    )
    text = describer.describe(None, rendered.system, rendered.user).strip()
    if not text:
        raise EmptyOptimizationError("optimizer returned an empty prompt")
    return OptimizedPrompt.from_text(
        text,
        scenario_id=scenario.scenario_id,
        user_prompt=user_prompt,
        exemplar_set_id=exemplars.exemplar_set_id,
    )


def compose_generation_prompt(opt: OptimizedPrompt, lane: LaneDescription) -> str:
    """Optimized text + lane description + the fixed highlight-meaning clause."""
    if not lane.present:
        raise ValueError("cannot compose a generation prompt for an excluded scene")
    return f"{opt.text}\n\n{lane.raw_text}\n\n{HIGHLIGHT_MEANING_CLAUSE}"


def generate_highlight(
    scene: StreetScene,
    lane: LaneDescription,
    color: str,
    editor: ImageEditor,
    *,
    run_id: str = "",
    candidate_prefix: str = "r1-",
    template: PromptTemplate | None = None,
) -> CandidateDesign:
    """Cascade step one: mark the lane corridor in a uniform color."""
    if not lane.present:
        raise ValueError("cannot highlight a scene with no located lane")
    if not color:
        raise ValueError("color must be non-empty")
    tpl = template or load_template("highlight")
    rendered = tpl.render({"COLOR": color})
    prompt = f"{rendered.system}\n\n{rendered.user}"
    image = editor.edit_image(scene.image, prompt, 1)[0]
    return CandidateDesign(
        candidate_id=f"{candidate_prefix}h",
        run_id=run_id,
        stage=Stage.HIGHLIGHT,
        image=image,
    )


def generate_candidates(
    highlight: CandidateDesign,
    final_prompt: str,
    pool_size: int,
    editor: ImageEditor,
    *,
    run_id: str = "",
    candidate_prefix: str = "r1-",
    max_refills: int = 3,
) -> list[CandidateDesign]:
    """Cascade step two: synthesize the candidate pool from the highlight image.

    Partial batches are refilled up to `max_refills` times; anything still
    missing raises PartialPoolError carrying the completed candidates.
    """
    if not POOL_SIZE_MIN <= pool_size <= POOL_SIZE_MAX:
        raise ValueError(
            f"pool_size must be in [{POOL_SIZE_MIN}, {POOL_SIZE_MAX}], got {pool_size}"
        )
    if highlight.stage is not Stage.HIGHLIGHT:
        raise ValueError("generate_candidates requires a highlight-stage candidate")

    images: list = []
    refills = 0
    last_error: ProviderError | None = None
    while len(images) < pool_size:
        missing = pool_size - len(images)
        try:
            images.extend(editor.edit_image(highlight.image, final_prompt, missing))
        except PartialBatchError as err:
            images.extend(err.images)
            last_error = err
            refills += 1
            if refills > max_refills:
                break
        except ProviderError as err:
            last_error = err
            break

    candidates = [
        CandidateDesign(
            candidate_id=f"{candidate_prefix}f{i:02d}",
            run_id=run_id,
            stage=Stage.FINAL,
            image=img,
            parent_id=highlight.candidate_id,
        )
        for i, img in enumerate(images[:pool_size], start=1)
    ]
    if len(candidates) < pool_size:
        raise PartialPoolError(
            f"pool incomplete: {len(candidates)}/{pool_size} generated ({last_error})",
            completed=candidates,
        )
    return candidates
