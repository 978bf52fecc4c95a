"""Reference design images, one per catalog scenario.

References ship as repo assets (`assets/references/ds<N>.png`) addressed by
`reference_image_id` and can be overridden per run. The procedural renderer
below is what produced the shipped assets; it stays here so they can be
regenerated deterministically.
"""

from __future__ import annotations

from importlib import resources
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from .domain import BoundaryKind, BoundarySpec, DesignScenario, get_scenario, scenario_catalog
from .imaging import image_from_bytes

REFERENCE_SIZE = 512

_ROAD = (62, 62, 66)
_SKY = (150, 185, 215)
_SIDEWALK = (150, 148, 140)
_LANE_GREEN = (40, 140, 45)
_WHITE = (245, 245, 245)


def _lane_polygon(size: int) -> list[tuple[int, int]]:
    return [
        (int(0.55 * size), size - 1),
        (int(0.95 * size), size - 1),
        (int(0.74 * size), int(0.55 * size)),
        (int(0.62 * size), int(0.55 * size)),
    ]


def _edge_points(p_bottom, p_top, count: int) -> list[tuple[float, float]]:
    return [
        (
            p_bottom[0] + (p_top[0] - p_bottom[0]) * t / (count - 1),
            p_bottom[1] + (p_top[1] - p_bottom[1]) * t / (count - 1),
        )
        for t in range(count)
    ]


def _draw_buffer(draw: ImageDraw.ImageDraw, spec: BoundarySpec, inner, outer) -> None:
    """Render one buffered boundary along the strip between two edges."""
    stripes = _edge_points(inner[0], inner[1], 9)
    outers = _edge_points(outer[0], outer[1], 9)
    if spec.kind is BoundaryKind.PAINTED_BUFFER:
        for (x0, y0), (x1, y1) in zip(stripes, outers[1:] + outers[-1:]):
            draw.line([(x0, y0), (x1, y1)], fill=_WHITE, width=3)
    elif spec.kind is BoundaryKind.BOLLARD_BUFFER:
        for (xi, yi), (xo, yo) in list(zip(stripes, outers))[1:-1]:
            cx, cy = (xi + xo) / 2, (yi + yo) / 2
            r = 6
            draw.ellipse([cx - r, cy - 3 * r, cx + r, cy + r], fill=(200, 40, 40))
            draw.rectangle([cx - r, cy - 2 * r, cx + r, cy - r], fill=_WHITE)
    elif spec.kind is BoundaryKind.ARMADILLO_BUFFER:
        for (xi, yi), (xo, yo) in list(zip(stripes, outers))[1:-1]:
            cx, cy = (xi + xo) / 2, (yi + yo) / 2
            draw.ellipse([cx - 9, cy - 5, cx + 9, cy + 5], fill=(25, 25, 25))
            draw.line([(cx - 6, cy), (cx + 6, cy)], fill=_WHITE, width=2)


def render_reference_design(scenario: DesignScenario, size: int = REFERENCE_SIZE) -> np.ndarray:
    """Stylized, deterministic rendering of one design scenario."""
    img = Image.new("RGB", (size, size), _ROAD)
    draw = ImageDraw.Draw(img)
    draw.rectangle([0, 0, size, int(0.35 * size)], fill=_SKY)
    draw.polygon(
        [(int(0.93 * size), size - 1), (size - 1, size - 1), (size - 1, int(0.45 * size)), (int(0.78 * size), int(0.5 * size))],
        fill=_SIDEWALK,
    )

    lane = _lane_polygon(size)
    draw.polygon(lane, fill=_LANE_GREEN)
    # Boundary strips: a narrow band outside each lane edge hosts the buffer.
    left_inner = (lane[0], lane[3])
    left_outer = ((lane[0][0] - int(0.06 * size), lane[0][1]), (lane[3][0] - int(0.022 * size), lane[3][1]))
    right_inner = (lane[1], lane[2])
    right_outer = ((lane[1][0] + int(0.04 * size), lane[1][1]), (lane[2][0] + int(0.015 * size), lane[2][1]))

    draw.line([lane[0], lane[3]], fill=_WHITE, width=4)
    draw.line([lane[1], lane[2]], fill=_WHITE, width=4)

    spec_by_side = ((scenario.left, left_inner, left_outer), (scenario.right, right_inner, right_outer))
    for spec, inner, outer in spec_by_side:
        if spec.is_buffered:
            draw.line([outer[0], outer[1]], fill=_WHITE, width=3)
            _draw_buffer(draw, spec, inner, outer)
        elif spec.kind is BoundaryKind.DIRECT_PARKED_CARS:
            for y in (0.92, 0.78, 0.66):
                x = outer[0][0] + (outer[1][0] - outer[0][0]) * (1 - y)
                w = int(0.10 * size * y)
                h = int(0.05 * size * y)
                draw.rectangle([x, int(y * size) - h, x + w, int(y * size)], fill=(90, 100, 120))

    # Scenario tag row keeps every reference image distinct even when the
    # boundary drawing is visually similar at small sizes.
    tag_y = int(0.38 * size)
    for i in range(scenario.scenario_id):
        draw.rectangle([8 + i * 14, tag_y, 16 + i * 14, tag_y + 8], fill=_WHITE)

    return np.asarray(img, dtype=np.uint8)


def _asset_bytes(name: str) -> bytes:
    return resources.files("bikescape").joinpath("assets", "references", name).read_bytes()


def resolve_reference(
    reference_image_id: str, overrides: dict[str, str | Path] | None = None
) -> np.ndarray:
    """Load a reference image by id, honoring per-run file overrides."""
    if overrides and reference_image_id in overrides:
        return image_from_bytes(Path(overrides[reference_image_id]).read_bytes())
    for scenario in scenario_catalog():
        if scenario.reference_image_id == reference_image_id:
            return image_from_bytes(_asset_bytes(f"ds{scenario.scenario_id}.png"))
    raise KeyError(f"unknown reference image id {reference_image_id!r}")


def reference_for_scenario(
    scenario_id: int, overrides: dict[str, str | Path] | None = None
) -> np.ndarray:
    return resolve_reference(get_scenario(scenario_id).reference_image_id, overrides)
