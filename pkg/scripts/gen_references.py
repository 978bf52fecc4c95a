#!/usr/bin/env python3
"""Regenerate the shipped reference design assets from the procedural renderer."""

from pathlib import Path

from bikescape.domain import scenario_catalog
from bikescape.imaging import save_png
from bikescape.references import render_reference_design

OUT = Path(__file__).resolve().parent.parent / "src" / "bikescape" / "assets" / "references"


def main() -> None:
    OUT.mkdir(parents=True, exist_ok=True)
    for scenario in scenario_catalog():
        path = OUT / f"ds{scenario.scenario_id}.png"
        save_png(render_reference_design(scenario), path)
        print(f"wrote {path}")


if __name__ == "__main__":
    main()
