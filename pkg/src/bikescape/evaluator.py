"""Two-stage candidate evaluation.

Stage one isolates the lane region of every candidate (segment → mask → fill),
embeds the masked images, and re-ranks the pool by cosine similarity to the
masked reference design. Stage two asks a binary judge about only the advanced
top-k candidates, then selects the highest-ranked candidate with a yes verdict.
"""

from __future__ import annotations

import logging
import string
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .domain import BoundaryKind, BoundarySpec, CandidateDesign, DesignScenario, Side, Verdict
from .imaging import image_digest, to_image, to_mask
from .providers.base import (
    ComplianceJudge,
    EmbeddingVector,
    ImageEmbedder,
    LaneSegmenter,
    ProviderError,
)
from .templating import PromptTemplate, load_template

logger = logging.getLogger(__name__)

DEFAULT_TOP_K = 3
DEFAULT_MASK_FILL = (128, 128, 128)
DEFAULT_MAX_ROUNDS = 3


class MaskShapeError(ValueError):
    pass


class DimensionMismatchError(ValueError):
    pass


class DegenerateEmbeddingError(ValueError):
    pass


class UnparseableVerdictError(RuntimeError):
    pass


class Disposition(str, Enum):
    SELECTED = "selected"
    REGENERATE = "regenerate"
    EXHAUSTED = "exhausted"


def apply_mask(
    image: np.ndarray, mask: np.ndarray, fill: tuple[int, int, int] = DEFAULT_MASK_FILL
) -> np.ndarray:
    """Keep pixels where mask==1, replace the rest with the uniform fill color."""
    img = to_image(image)
    m = to_mask(mask)
    if m.shape != img.shape[:2]:
        raise MaskShapeError(f"mask shape {m.shape} != image shape {img.shape[:2]}")
    fill_arr = np.asarray(fill, dtype=np.uint8)
    if fill_arr.shape != (3,):
        raise ValueError("fill must be an RGB triple")
    return np.where(m[:, :, None].astype(bool), img, fill_arr[None, None, :]).astype(np.uint8)


def cosine_similarity(a: EmbeddingVector, b: EmbeddingVector) -> float:
    if a.dimension != b.dimension:
        raise DimensionMismatchError(f"dimensions differ: {a.dimension} vs {b.dimension}")
    va, vb = a.as_array(), b.as_array()
    norm_a = float(np.linalg.norm(va))
    norm_b = float(np.linalg.norm(vb))
    if norm_a == 0.0 or norm_b == 0.0:
        raise DegenerateEmbeddingError("cosine similarity undefined for a zero vector")
    return float(np.dot(va, vb) / (norm_a * norm_b))


@dataclass(frozen=True)
class PoolEntry:
    candidate_id: str
    similarity: float | None
    empty_mask: bool = False
    error: str | None = None

    def to_dict(self) -> dict:
        return {
            "candidate_id": self.candidate_id,
            "similarity": self.similarity,
            "empty_mask": self.empty_mask,
            "error": self.error,
        }


def _entry_order(entry: PoolEntry) -> tuple:
    # Scored entries first, similarity descending, ties by id ascending;
    # unscored entries always rank last.
    scored = entry.similarity is not None
    return (0 if scored else 1, -(entry.similarity or 0.0), entry.candidate_id)


@dataclass(frozen=True)
class RankedPool:
    entries: tuple[PoolEntry, ...]
    reference_image_id: str
    masked: bool = True

    def __post_init__(self) -> None:
        ordered = tuple(sorted(self.entries, key=_entry_order))
        if ordered != self.entries:
            raise ValueError("pool entries must be sorted by similarity desc, ties by id")

    def __len__(self) -> int:
        return len(self.entries)

    def to_dict(self) -> dict:
        return {
            "entries": [e.to_dict() for e in self.entries],
            "reference_image_id": self.reference_image_id,
            "masked": self.masked,
        }


@dataclass(frozen=True)
class SelectionOutcome:
    selected: str | None
    verdicts: dict[str, Verdict]
    disposition: Disposition

    def __post_init__(self) -> None:
        is_selected = self.disposition is Disposition.SELECTED
        has_yes_pick = self.selected is not None and self.verdicts.get(self.selected) is Verdict.YES
        if is_selected != has_yes_pick:
            raise ValueError("disposition 'selected' requires a present pick with a yes verdict")


def mask_candidate(
    image: np.ndarray,
    segmenter: LaneSegmenter,
    fill: tuple[int, int, int] = DEFAULT_MASK_FILL,
) -> tuple[np.ndarray, np.ndarray, bool]:
    """Segment and fill one image; returns (masked image, mask, empty flag)."""
    mask = segmenter.segment(image)
    empty = not bool(mask.any())
    return apply_mask(image, mask, fill), mask, empty


def _score_candidates(
    candidates: list[CandidateDesign],
    reference_masked: np.ndarray,
    *,
    segmenter: LaneSegmenter,
    embedder: ImageEmbedder,
    fill: tuple[int, int, int],
) -> tuple[list[PoolEntry], dict[str, np.ndarray]]:
    reference_vector = embedder.embed(reference_masked)
    entries: list[PoolEntry] = []
    masks: dict[str, np.ndarray] = {}
    for cand in candidates:
        try:
            masked, mask, empty = mask_candidate(cand.image, segmenter, fill)
            masks[cand.candidate_id] = mask
            similarity = cosine_similarity(embedder.embed(masked), reference_vector)
            entries.append(
                PoolEntry(candidate_id=cand.candidate_id, similarity=similarity, empty_mask=empty)
            )
        except ProviderError as err:
            logger.warning("scoring failed for %s: %s", cand.candidate_id, err)
            entries.append(
                PoolEntry(candidate_id=cand.candidate_id, similarity=None, error=str(err))
            )
    entries.sort(key=_entry_order)
    return entries, masks


def rank_pool(
    candidates: list[CandidateDesign],
    reference_masked: np.ndarray,
    *,
    segmenter: LaneSegmenter,
    embedder: ImageEmbedder,
    fill: tuple[int, int, int] = DEFAULT_MASK_FILL,
    reference_image_id: str = "",
) -> RankedPool:
    """Segment, mask, embed, and score every final-stage candidate."""
    if any(c.stage.value != "final" for c in candidates):
        raise ValueError("rank_pool accepts final-stage candidates only")
    run_ids = {c.run_id for c in candidates}
    if len(run_ids) > 1:
        raise ValueError(f"candidates span multiple runs: {sorted(run_ids)}")
    entries, _ = _score_candidates(
        candidates, reference_masked, segmenter=segmenter, embedder=embedder, fill=fill
    )
    return RankedPool(entries=tuple(entries), reference_image_id=reference_image_id, masked=True)


def top_k(pool: RankedPool, k: int = DEFAULT_TOP_K) -> list[str]:
    """Ids of the first min(k, |pool|) entries."""
    if k < 1:
        raise ValueError("k must be >= 1")
    return [entry.candidate_id for entry in pool.entries[:k]]


_BUFFER_BULLETS = (
    "Narrow buffer zone adjacent to the bike lane, approximately {width} ft wide.",
    "Buffer zone bounded by solid white lines on both sides.",
)


def _boundary_bullets(spec: BoundarySpec, side: Side) -> list[str]:
    if spec.kind is BoundaryKind.DIRECT_MOVING_LANE:
        return ["Prominent continuous solid white line separating the bike lane from the adjacent motor-vehicle lane."]
    if spec.kind is BoundaryKind.DIRECT_PARKED_CARS:
        return ["Prominent continuous solid white line separating the bike lane from parked cars."]
    if spec.kind is BoundaryKind.DIRECT_EDGE:
        return [f"Prominent continuous solid white line marking the {side.value}-hand edge of the bike lane."]
    width = str(int(spec.buffer_width_ft)) if spec.buffer_width_ft == int(spec.buffer_width_ft) else str(spec.buffer_width_ft)
    bullets = [b.format(width=width) for b in _BUFFER_BULLETS]
    if spec.kind is BoundaryKind.PAINTED_BUFFER:
        bullets.append("Prominent diagonal white stripes filling the buffer zone.")
    elif spec.kind is BoundaryKind.BOLLARD_BUFFER:
        bullets.append("Prominent diagonal white stripes filling the buffer zone.")
        bullets.append("Vertical bollards placed at regular intervals within the buffer zone.")
    else:
        bullets.append("Prominent diagonal white stripes filling the buffer zone.")
        bullets.append(
            'Rounded, semi-flexible rubber lane dividers ("armadillos") placed centrally and '
            "evenly spaced within the buffer zone. Dividers should be dome-shaped, black with "
            "white reflective stripes."
        )
    return bullets


def render_compliance_checklist(scenario: DesignScenario) -> str:
    """Checklist text for the judge, derived from the scenario's boundary specs."""
    lines = ["1. Left Boundary:"]
    lines.extend(f"- {b}" for b in _boundary_bullets(scenario.left, Side.LEFT))
    lines.append("")
    lines.append("2. Right Boundary:")
    lines.extend(f"- {b}" for b in _boundary_bullets(scenario.right, Side.RIGHT))
    return "\n".join(lines)


def parse_verdict(raw: str, *, strict: bool = False) -> tuple[Verdict | None, bool]:
    """Parse a raw judge response; returns (verdict or None, lenient-parse flag).

    Trim + lowercase is always applied; lenient parsing additionally strips one
    trailing punctuation mark and flags the response.
    """
    token = raw.strip().lower()
    if token in ("yes", "no"):
        return Verdict(token), False
    if strict:
        return None, False
    if token and token[-1] in string.punctuation and token[:-1] in ("yes", "no"):
        return Verdict(token[:-1]), True
    return None, False


@dataclass(frozen=True)
class ComplianceResult:
    verdict: Verdict
    parse_flag: bool
    raw_responses: tuple[str, ...]


def check_compliance(
    candidate: CandidateDesign,
    final_prompt: str,
    reference: np.ndarray,
    judge: ComplianceJudge,
    *,
    scenario: DesignScenario,
    template: PromptTemplate | None = None,
    strict: bool = False,
) -> ComplianceResult:
    """Binary suitability judgment for one advanced candidate.

    Unparseable responses are retried once, then treated as "no" with a parse
    flag; in strict mode they raise instead.
    """
    to_image(reference)
    tpl = template or load_template("compliance")
    rendered = tpl.render(
        {"CHECKLIST": render_compliance_checklist(scenario), "FINAL_PROMPT": final_prompt}
    )
    prompt = f"{rendered.system}\n\n{rendered.user}"
    responses: list[str] = []
    for _ in range(2):
        raw = judge.judge(candidate.image, prompt)
        responses.append(raw)
        verdict, flag = parse_verdict(raw, strict=strict)
        if verdict is not None:
            return ComplianceResult(verdict=verdict, parse_flag=flag, raw_responses=tuple(responses))
        if strict:
            raise UnparseableVerdictError(f"unparseable verdict {raw!r}")
    logger.warning("verdict unparseable after retry (%r); treating as no", responses[-1])
    return ComplianceResult(verdict=Verdict.NO, parse_flag=True, raw_responses=tuple(responses))


def select_final(
    pool: RankedPool,
    verdicts: dict[str, Verdict],
    *,
    rounds_remaining: bool = True,
) -> SelectionOutcome:
    """Pick the highest-similarity advanced candidate with a yes verdict."""
    pool_ids = {entry.candidate_id for entry in pool.entries}
    foreign = set(verdicts) - pool_ids
    if foreign:
        raise ValueError(f"verdicts reference candidates outside the pool: {sorted(foreign)}")
    for entry in pool.entries:
        if entry.similarity is None:
            continue
        if verdicts.get(entry.candidate_id) is Verdict.YES:
            return SelectionOutcome(
                selected=entry.candidate_id,
                verdicts=dict(verdicts),
                disposition=Disposition.SELECTED,
            )
    disposition = Disposition.REGENERATE if rounds_remaining else Disposition.EXHAUSTED
    return SelectionOutcome(selected=None, verdicts=dict(verdicts), disposition=disposition)


@dataclass(frozen=True)
class EvaluationReport:
    """Everything the eval stage produced, ready for `eval.json`."""

    pool: RankedPool
    advanced: tuple[str, ...]
    outcome: SelectionOutcome
    verdict_flags: dict[str, bool]
    masks: dict[str, np.ndarray]
    reference_mask: np.ndarray
    final_prompt: str
    fill: tuple[int, int, int]

    def to_dict(self) -> dict:
        mask_hashes = {cid: image_digest(mask) for cid, mask in self.masks.items()}
        return {
            "reference_image_id": self.pool.reference_image_id,
            "masked": self.pool.masked,
            "fill": list(self.fill),
            "entries": [e.to_dict() for e in self.pool.entries],
            "advanced": list(self.advanced),
            "verdicts": {cid: v.value for cid, v in self.outcome.verdicts.items()},
            "verdict_flags": dict(sorted(self.verdict_flags.items())),
            "selected": self.outcome.selected,
            "disposition": self.outcome.disposition.value,
            "mask_sha256": dict(sorted(mask_hashes.items())),
            "reference_mask_sha256": image_digest(self.reference_mask),
            "final_prompt": self.final_prompt,
        }


def evaluate_pool(
    candidates: list[CandidateDesign],
    scenario: DesignScenario,
    final_prompt: str,
    reference_image: np.ndarray,
    *,
    segmenter: LaneSegmenter,
    embedder: ImageEmbedder,
    judge: ComplianceJudge,
    fill: tuple[int, int, int] = DEFAULT_MASK_FILL,
    k: int = DEFAULT_TOP_K,
    rounds_remaining: bool = True,
    template: PromptTemplate | None = None,
    strict_verdicts: bool = False,
) -> EvaluationReport:
    """Full two-stage evaluation of one candidate pool.

    The reference goes through the same segment → mask → fill path as the
    candidates so similarities stay comparable.
    """
    reference_masked, reference_mask, ref_empty = mask_candidate(reference_image, segmenter, fill)
    if ref_empty:
        logger.warning("reference %s segmented to an empty mask", scenario.reference_image_id)
    entries, masks = _score_candidates(
        candidates, reference_masked, segmenter=segmenter, embedder=embedder, fill=fill
    )
    pool = RankedPool(
        entries=tuple(entries),
        reference_image_id=scenario.reference_image_id,
        masked=True,
    )
    advanced = top_k(pool, k)
    by_id = {c.candidate_id: c for c in candidates}
    verdicts: dict[str, Verdict] = {}
    flags: dict[str, bool] = {}
    for cid in advanced:
        result = check_compliance(
            by_id[cid],
            final_prompt,
            reference_masked,
            judge,
            scenario=scenario,
            template=template,
            strict=strict_verdicts,
        )
        verdicts[cid] = result.verdict
        flags[cid] = result.parse_flag
    outcome = select_final(pool, verdicts, rounds_remaining=rounds_remaining)
    return EvaluationReport(
        pool=pool,
        advanced=tuple(advanced),
        outcome=outcome,
        verdict_flags=flags,
        masks=masks,
        reference_mask=reference_mask,
        final_prompt=final_prompt,
        fill=fill,
    )
