"""Core vocabulary: street scenes, boundary specs, the design-scenario catalog,
lane descriptions, optimized prompts, and candidate designs.

All types are immutable values; operations here are pure and safe for
unrestricted concurrent use.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from .imaging import image_digest, to_image

REQUIRED_API_RESOLUTION = 1024
PROMPT_LENGTH_LIMIT = 130


class SceneSource(str, Enum):
    STREET_VIEW_API = "street_view_api"
    LOCAL_FILE = "local_file"


class BoundaryKind(str, Enum):
    DIRECT_MOVING_LANE = "direct_moving_lane"
    DIRECT_PARKED_CARS = "direct_parked_cars"
    DIRECT_EDGE = "direct_edge"
    PAINTED_BUFFER = "painted_buffer"
    BOLLARD_BUFFER = "bollard_buffer"
    ARMADILLO_BUFFER = "armadillo_buffer"


class Side(str, Enum):
    LEFT = "left"
    RIGHT = "right"


class Stage(str, Enum):
    HIGHLIGHT = "highlight"
    FINAL = "final"


class Verdict(str, Enum):
    PENDING = "pending"
    YES = "yes"
    NO = "no"


_DIRECT_KINDS = frozenset(
    {BoundaryKind.DIRECT_MOVING_LANE, BoundaryKind.DIRECT_PARKED_CARS, BoundaryKind.DIRECT_EDGE}
)

_BUFFER_WIDTHS = {
    BoundaryKind.PAINTED_BUFFER: 3.0,
    BoundaryKind.BOLLARD_BUFFER: 1.5,
    BoundaryKind.ARMADILLO_BUFFER: 1.5,
}


def normalize_heading(degrees: float) -> float:
    """Map any heading in degrees onto [0, 360)."""
    return float(degrees) % 360.0


@dataclass(frozen=True)
class BoundarySpec:
    """One side of a bike lane: either direct adjacency or a buffered separator."""

    kind: BoundaryKind
    buffer_width_ft: float = 0.0

    def __post_init__(self) -> None:
        if self.kind in _DIRECT_KINDS:
            if self.buffer_width_ft != 0.0:
                raise ValueError(f"{self.kind.value} must have buffer_width_ft == 0")
        else:
            expected = _BUFFER_WIDTHS[self.kind]
            if self.buffer_width_ft != expected:
                raise ValueError(
                    f"{self.kind.value} requires buffer_width_ft == {expected}, "
                    f"got {self.buffer_width_ft}"
                )

    @property
    def is_buffered(self) -> bool:
        return self.kind not in _DIRECT_KINDS

    def phrase(self) -> str:
        """The catalog wording for this boundary."""
        if self.kind is BoundaryKind.DIRECT_MOVING_LANE:
            return "No buffer; direct adjacency to moving lane"
        if self.kind is BoundaryKind.DIRECT_PARKED_CARS:
            return "No buffer; direct adjacency to parked cars"
        if self.kind is BoundaryKind.DIRECT_EDGE:
            return "No buffer; direct edge (no separator)"
        width = _format_feet(self.buffer_width_ft)
        if self.kind is BoundaryKind.PAINTED_BUFFER:
            return f"{width} ft white-painted buffer"
        if self.kind is BoundaryKind.BOLLARD_BUFFER:
            return f"{width} ft buffer with bollards"
        return f"{width} ft buffer with armadillo lane dividers"

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "buffer_width_ft": self.buffer_width_ft}

    @classmethod
    def from_dict(cls, data: dict) -> "BoundarySpec":
        return cls(kind=BoundaryKind(data["kind"]), buffer_width_ft=float(data["buffer_width_ft"]))


def _format_feet(width: float) -> str:
    return str(int(width)) if width == int(width) else str(width)


def render_boundary_clause(spec: BoundarySpec, side: Side | str) -> str:
    """Deterministic one-line clause, e.g. "Right boundary: 3 ft white-painted buffer"."""
    side = Side(side)
    phrase = spec.phrase()
    return f"{side.value.capitalize()} boundary: {phrase[0].lower()}{phrase[1:]}"


@dataclass(frozen=True)
class DesignScenario:
    """One of the eight catalogued left/right boundary configurations."""

    scenario_id: int
    left: BoundarySpec
    right: BoundarySpec
    reference_image_id: str
    prompt_fragment: str

    def to_dict(self) -> dict:
        return {
            "scenario_id": self.scenario_id,
            "left": self.left.to_dict(),
            "right": self.right.to_dict(),
            "reference_image_id": self.reference_image_id,
            "prompt_fragment": self.prompt_fragment,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DesignScenario":
        return cls(
            scenario_id=int(data["scenario_id"]),
            left=BoundarySpec.from_dict(data["left"]),
            right=BoundarySpec.from_dict(data["right"]),
            reference_image_id=data["reference_image_id"],
            prompt_fragment=data["prompt_fragment"],
        )


_CATALOG_ROWS: tuple[tuple[BoundaryKind, BoundaryKind], ...] = (
    (BoundaryKind.DIRECT_MOVING_LANE, BoundaryKind.DIRECT_PARKED_CARS),
    (BoundaryKind.DIRECT_MOVING_LANE, BoundaryKind.PAINTED_BUFFER),
    (BoundaryKind.DIRECT_MOVING_LANE, BoundaryKind.BOLLARD_BUFFER),
    (BoundaryKind.DIRECT_MOVING_LANE, BoundaryKind.ARMADILLO_BUFFER),
    (BoundaryKind.DIRECT_MOVING_LANE, BoundaryKind.DIRECT_EDGE),
    (BoundaryKind.PAINTED_BUFFER, BoundaryKind.DIRECT_EDGE),
    (BoundaryKind.BOLLARD_BUFFER, BoundaryKind.DIRECT_EDGE),
    (BoundaryKind.ARMADILLO_BUFFER, BoundaryKind.DIRECT_EDGE),
)


def _spec_for(kind: BoundaryKind) -> BoundarySpec:
    return BoundarySpec(kind=kind, buffer_width_ft=_BUFFER_WIDTHS.get(kind, 0.0))


def _build_catalog() -> tuple[DesignScenario, ...]:
    entries = []
    for i, (left_kind, right_kind) in enumerate(_CATALOG_ROWS, start=1):
        left = _spec_for(left_kind)
        right = _spec_for(right_kind)
        fragment = "\n".join(
            (render_boundary_clause(left, Side.LEFT), render_boundary_clause(right, Side.RIGHT))
        )
        entries.append(
            DesignScenario(
                scenario_id=i,
                left=left,
                right=right,
                reference_image_id=f"ref-ds{i}",
                prompt_fragment=fragment,
            )
        )
    return tuple(entries)


_CATALOG = _build_catalog()


def scenario_catalog() -> tuple[DesignScenario, ...]:
    """The fixed eight-entry catalog, ids 1..8 ascending."""
    return _CATALOG


def get_scenario(scenario_id: int) -> DesignScenario:
    if not 1 <= scenario_id <= len(_CATALOG):
        raise KeyError(f"unknown scenario id {scenario_id!r} (catalog has 1..{len(_CATALOG)})")
    return _CATALOG[scenario_id - 1]


def catalog_to_json() -> str:
    """Serialize the catalog for the UI/CLI (`scenarios.json`)."""
    return json.dumps([s.to_dict() for s in _CATALOG], indent=2, sort_keys=True) + "\n"


def catalog_from_json(text: str) -> tuple[DesignScenario, ...]:
    return tuple(DesignScenario.from_dict(row) for row in json.loads(text))


@dataclass(frozen=True, eq=False)
class StreetScene:
    """One curated street-view capture with geo/camera metadata and pixels."""

    scene_id: str
    latitude: float
    longitude: float
    heading: float
    pitch: float
    fov: float
    image: np.ndarray
    source: SceneSource = SceneSource.LOCAL_FILE

    def __post_init__(self) -> None:
        object.__setattr__(self, "image", to_image(self.image))

    @property
    def width(self) -> int:
        return int(self.image.shape[1])

    @property
    def height(self) -> int:
        return int(self.image.shape[0])

    def digest(self) -> str:
        return image_digest(self.image)

    def metadata(self) -> dict:
        return {
            "scene_id": self.scene_id,
            "latitude": self.latitude,
            "longitude": self.longitude,
            "heading": self.heading,
            "pitch": self.pitch,
            "fov": self.fov,
            "width": self.width,
            "height": self.height,
            "source": self.source.value,
            "image_sha256": self.digest(),
        }

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, StreetScene):
            return NotImplemented
        return self.metadata() == other.metadata() and np.array_equal(self.image, other.image)


@dataclass(frozen=True)
class ValidationResult:
    ok: bool
    violation: str | None = None

    def __bool__(self) -> bool:
        return self.ok


def validate_scene(scene: StreetScene) -> ValidationResult:
    """Accept iff the scene invariants hold; rejection names the first broken rule."""
    if scene.source is SceneSource.STREET_VIEW_API and (
        scene.width != REQUIRED_API_RESOLUTION or scene.height != REQUIRED_API_RESOLUTION
    ):
        return ValidationResult(False, "resolution")
    if not 0.0 <= scene.heading < 360.0:
        return ValidationResult(False, "heading-range")
    if scene.image.dtype != np.uint8:
        return ValidationResult(False, "pixel-depth")
    return ValidationResult(True)


@dataclass(frozen=True)
class LaneDescription:
    """Locator output: presence flag plus structured spatial description text."""

    present: bool
    raw_text: str = ""
    markings: str = ""
    pattern: str = ""
    width_estimate: str = ""
    relative_position: str = ""
    parse_warning: bool = False

    def __post_init__(self) -> None:
        if not self.present:
            structured = (self.markings, self.pattern, self.width_estimate, self.relative_position)
            if any(structured):
                raise ValueError("absent lane must carry empty structured fields")

    def to_dict(self) -> dict:
        return {
            "present": self.present,
            "raw_text": self.raw_text,
            "markings": self.markings,
            "pattern": self.pattern,
            "width_estimate": self.width_estimate,
            "relative_position": self.relative_position,
            "parse_warning": self.parse_warning,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "LaneDescription":
        return cls(**{k: data[k] for k in cls.__dataclass_fields__ if k in data})


@dataclass(frozen=True)
class OptimizedPrompt:
    """Optimizer output with its length bookkeeping."""

    text: str
    word_count: int
    scenario_id: int
    user_prompt: str
    exemplar_set_id: str
    length_warning: bool

    def __post_init__(self) -> None:
        expected = len(self.text.split())
        if self.word_count != expected:
            raise ValueError(f"word_count {self.word_count} != token count {expected}")
        if self.length_warning != (self.word_count > PROMPT_LENGTH_LIMIT):
            raise ValueError("length_warning inconsistent with word_count")

    @classmethod
    def from_text(
        cls, text: str, *, scenario_id: int, user_prompt: str, exemplar_set_id: str
    ) -> "OptimizedPrompt":
        count = len(text.split())
        return cls(
            text=text,
            word_count=count,
            scenario_id=scenario_id,
            user_prompt=user_prompt,
            exemplar_set_id=exemplar_set_id,
            length_warning=count > PROMPT_LENGTH_LIMIT,
        )

    def to_dict(self) -> dict:
        return {
            "text": self.text,
            "word_count": self.word_count,
            "scenario_id": self.scenario_id,
            "user_prompt": self.user_prompt,
            "exemplar_set_id": self.exemplar_set_id,
            "length_warning": self.length_warning,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "OptimizedPrompt":
        return cls(**{k: data[k] for k in cls.__dataclass_fields__ if k in data})


@dataclass(frozen=True, eq=False)
class CandidateDesign:
    """One synthesized image, either the highlight scaffold or a final candidate."""

    candidate_id: str
    run_id: str
    stage: Stage
    image: np.ndarray
    mask: np.ndarray | None = None
    similarity: float | None = None
    verdict: Verdict = Verdict.PENDING
    parent_id: str | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "image", to_image(self.image))
        if self.mask is not None:
            object.__setattr__(self, "mask", to_mask(self.mask))
        if self.stage is Stage.HIGHLIGHT and (
            self.similarity is not None or self.verdict is not Verdict.PENDING
        ):
            raise ValueError("highlight-stage candidates carry no similarity or verdict")
        if self.verdict is not Verdict.PENDING and self.similarity is None:
            raise ValueError("a decided verdict requires a similarity score")

    def digest(self) -> str:
        return image_digest(self.image)

    def with_score(self, similarity: float) -> "CandidateDesign":
        return replace(self, similarity=similarity)

    def with_verdict(self, verdict: Verdict) -> "CandidateDesign":
        return replace(self, verdict=verdict)
