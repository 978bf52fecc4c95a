"""Street-view acquisition and the expert quality-control selection queue.

Captures one scene per heading at fixed pitch/FOV, then parks the batch in an
append-only QC store where a human picks the most suitable view per location.
"""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Protocol

import numpy as np
import requests
from PIL import Image, ImageDraw

from .domain import SceneSource, StreetScene, normalize_heading
from .imaging import image_from_bytes, load_image, save_png
from .providers.base import MalformedResponseError, ProviderConfig, RateLimitedError, TimeoutError_
from .providers.retry import call_with_retries

logger = logging.getLogger(__name__)

DEFAULT_HEADINGS = (0.0, 90.0, 180.0, 270.0)
DEFAULT_SIZE = 1024
# Pitch/FOV are held fixed per batch; these specific values are deployment
# defaults, not published ones — override in config as needed.
DEFAULT_PITCH = 0.0
DEFAULT_FOV = 90.0


class NoImageryError(RuntimeError):
    """The imagery provider has no coverage at the requested location."""


class MixedLocationError(ValueError):
    pass


class UnknownSceneError(KeyError):
    pass


class AlreadyDecidedError(RuntimeError):
    pass


@dataclass(frozen=True)
class AcquisitionRequest:
    latitude: float
    longitude: float
    headings: tuple[float, ...] = DEFAULT_HEADINGS
    pitch: float = DEFAULT_PITCH
    fov: float = DEFAULT_FOV
    size: int = DEFAULT_SIZE

    def __post_init__(self) -> None:
        if not self.headings:
            raise ValueError("headings must be non-empty")
        if any(not 0.0 <= h < 360.0 for h in self.headings):
            raise ValueError("headings must lie in [0, 360)")
        if self.size <= 0:
            raise ValueError("size must be positive")


@dataclass(frozen=True)
class LocationSpec:
    location_id: str
    latitude: float
    longitude: float
    context_tag: str = ""


def read_manifest(path: str | Path) -> list[LocationSpec]:
    """Locations manifest CSV: location_id, lat, lon, context_tag."""
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(
                LocationSpec(
                    location_id=row["location_id"],
                    latitude=float(row["lat"]),
                    longitude=float(row["lon"]),
                    context_tag=row.get("context_tag", "") or "",
                )
            )
    return out


class ImagerySource(Protocol):
    def has_imagery(self, latitude: float, longitude: float) -> bool: ...

    def capture(
        self, latitude: float, longitude: float, heading: float, pitch: float, fov: float, size: int
    ) -> np.ndarray: ...


class SyntheticImagerySource:
    """Deterministic street-scene renderer for offline runs and tests."""

    def __init__(self, uncovered: Callable[[float, float], bool] | None = None):
        self._uncovered = uncovered or (lambda lat, lon: False)

    def has_imagery(self, latitude: float, longitude: float) -> bool:
        return not self._uncovered(latitude, longitude)

    def capture(self, latitude, longitude, heading, pitch, fov, size) -> np.ndarray:
        if not self.has_imagery(latitude, longitude):
            raise NoImageryError(f"no coverage at ({latitude}, {longitude})")
        img = Image.new("RGB", (size, size), (58, 58, 62))
        draw = ImageDraw.Draw(img)
        draw.rectangle([0, 0, size, int(0.4 * size)], fill=(140, 175, 205))
        k = int(abs(latitude * 1000) + abs(longitude * 1000) + heading) % 97
        draw.polygon(
            [(int(0.2 * size), size), (int(0.8 * size), size), (int(0.55 * size), int(0.4 * size)), (int(0.45 * size), int(0.4 * size))],
            fill=(70 + k % 30, 70 + k % 30, 74 + k % 30),
        )
        draw.line(
            [(size // 2, size), (size // 2, int(0.4 * size))],
            fill=(220, 210, 90),
            width=max(2, size // 200),
        )
        for i in range(3):
            x = int(size * (0.1 + 0.02 * ((k + i * 13) % 9)))
            draw.rectangle([x, int(0.2 * size), x + size // 10, int(0.4 * size)], fill=(90 + i * 20, 85, 80))
        return np.asarray(img, dtype=np.uint8)


class StaticImageryClient:
    """HTTP client for a street-view static imagery API.

    Checks the metadata endpoint for coverage, then fetches one frame per
    request. The API key is read from the environment variable named in the
    provider config and sent as the `key` query parameter.
    """

    def __init__(
        self,
        config: ProviderConfig,
        *,
        metadata_path: str = "/metadata",
        sleep: Callable[[float], None] = time.sleep,
    ):
        import os

        self.config = config
        self.metadata_path = metadata_path
        self._sleep = sleep
        self._session = requests.Session()
        self._key = os.environ.get(config.credential_ref, "") if config.credential_ref else ""

    def _get(self, url: str, params: dict) -> requests.Response:
        def attempt() -> requests.Response:
            try:
                response = self._session.get(url, params=params, timeout=self.config.timeout)
            except requests.exceptions.Timeout as exc:
                raise TimeoutError_(f"request to {url} timed out") from exc
            except requests.exceptions.ConnectionError as exc:
                raise TimeoutError_(f"connection to {url} failed: {exc}") from exc
            if response.status_code == 429 or response.status_code >= 500:
                raise RateLimitedError(f"status {response.status_code} from {url}")
            if response.status_code != 200:
                raise MalformedResponseError(f"status {response.status_code} from {url}")
            return response

        return call_with_retries(
            attempt,
            max_retries=self.config.max_retries,
            backoff_base=self.config.retry_backoff,
            sleep=self._sleep,
            label=url,
        )

    def has_imagery(self, latitude: float, longitude: float) -> bool:
        url = self.config.endpoint.rstrip("/") + self.metadata_path
        data = self._get(url, {"location": f"{latitude},{longitude}", "key": self._key}).json()
        return data.get("status") == "OK"

    def capture(self, latitude, longitude, heading, pitch, fov, size) -> np.ndarray:
        if not self.has_imagery(latitude, longitude):
            raise NoImageryError(f"no coverage at ({latitude}, {longitude})")
        response = self._get(
            self.config.endpoint,
            {
                "location": f"{latitude},{longitude}",
                "heading": heading,
                "pitch": pitch,
                "fov": fov,
                "size": f"{size}x{size}",
                "key": self._key,
            },
        )
        return image_from_bytes(response.content)


def scene_id_for(latitude: float, longitude: float, heading: float) -> str:
    return f"sv_{latitude:.6f}_{longitude:.6f}_h{int(round(heading)) % 360:03d}"


def fetch_views(req: AcquisitionRequest, source: ImagerySource) -> list[StreetScene]:
    """One StreetScene per heading, all sharing the request's pitch/FOV/size."""
    if not source.has_imagery(req.latitude, req.longitude):
        raise NoImageryError(f"no coverage at ({req.latitude}, {req.longitude})")
    scenes = []
    for heading in req.headings:
        heading = normalize_heading(heading)
        image = source.capture(req.latitude, req.longitude, heading, req.pitch, req.fov, req.size)
        scenes.append(
            StreetScene(
                scene_id=scene_id_for(req.latitude, req.longitude, heading),
                latitude=req.latitude,
                longitude=req.longitude,
                heading=heading,
                pitch=req.pitch,
                fov=req.fov,
                image=image,
                source=SceneSource.STREET_VIEW_API,
            )
        )
    return scenes


@dataclass(frozen=True)
class QCItem:
    """One location's capture batch awaiting (or holding) an expert choice."""

    item_id: str
    location_id: str
    version: int
    candidates: tuple[StreetScene, ...]
    chosen: str | None = None
    reviewer: str = ""
    decided_at: float | None = None

    @property
    def decided(self) -> bool:
        return self.chosen is not None


class QCStore:
    """Append-only QC log (JSON lines) plus scene PNGs on disk.

    Decisions never mutate prior records; history is reconstructable from the
    log. Writes are serialized per store instance.
    """

    def __init__(self, root: str | Path, clock: Callable[[], float] = time.time):
        self.root = Path(root)
        self.scenes_dir = self.root / "scenes"
        self.log_path = self.root / "qc.jsonl"
        self.clock = clock
        self.scenes_dir.mkdir(parents=True, exist_ok=True)
        import threading

        self._lock = threading.Lock()

    def _records(self) -> list[dict]:
        if not self.log_path.exists():
            return []
        return [json.loads(line) for line in self.log_path.read_text().splitlines() if line]

    def _append(self, record: dict) -> None:
        with open(self.log_path, "a") as fh:
            fh.write(json.dumps(record, sort_keys=True) + "\n")

    def _scene_to_dict(self, scene: StreetScene) -> dict:
        return scene.metadata()

    def _scene_from_dict(self, meta: dict) -> StreetScene:
        image = load_image(self.scenes_dir / f"{meta['scene_id']}.png")
        return StreetScene(
            scene_id=meta["scene_id"],
            latitude=meta["latitude"],
            longitude=meta["longitude"],
            heading=meta["heading"],
            pitch=meta["pitch"],
            fov=meta["fov"],
            image=image,
            source=SceneSource(meta["source"]),
        )

    def _item_from_record(self, record: dict) -> QCItem:
        return QCItem(
            item_id=record["item_id"],
            location_id=record["location_id"],
            version=record["version"],
            candidates=tuple(self._scene_from_dict(m) for m in record["candidates"]),
            chosen=record["chosen"],
            reviewer=record["reviewer"],
            decided_at=record["decided_at"],
        )

    def enqueue_qc(self, scenes: list[StreetScene], location_id: str | None = None) -> QCItem:
        """Persist a new undecided QC item for one location's capture batch."""
        if not scenes:
            raise ValueError("scenes must be non-empty")
        coords = {(s.latitude, s.longitude) for s in scenes}
        if len(coords) > 1:
            raise MixedLocationError(f"scenes span multiple locations: {sorted(coords)}")
        if location_id is None:
            lat, lon = next(iter(coords))
            location_id = f"loc_{lat:.6f}_{lon:.6f}"
        with self._lock:
            prior = [r for r in self._records() if r["location_id"] == location_id]
            version = max((r["version"] for r in prior), default=0) + 1
            item = QCItem(
                item_id=f"{location_id}-v{version}",
                location_id=location_id,
                version=version,
                candidates=tuple(scenes),
            )
            for scene in scenes:
                save_png(scene.image, self.scenes_dir / f"{scene.scene_id}.png")
            self._append(
                {
                    "item_id": item.item_id,
                    "location_id": item.location_id,
                    "version": item.version,
                    "candidates": [self._scene_to_dict(s) for s in scenes],
                    "chosen": None,
                    "reviewer": "",
                    "decided_at": None,
                }
            )
        return item

    def record_choice(self, item: QCItem, scene_id: str, reviewer: str) -> QCItem:
        """Record the expert's pick; a decided item is immutable thereafter."""
        with self._lock:
            current = self.get_item(item.item_id)
            if current.decided:
                raise AlreadyDecidedError(f"item {item.item_id} already decided")
            if scene_id not in {s.scene_id for s in current.candidates}:
                raise UnknownSceneError(f"scene {scene_id!r} is not a candidate of {item.item_id}")
            decided = replace(current, chosen=scene_id, reviewer=reviewer, decided_at=self.clock())
            self._append(
                {
                    "item_id": decided.item_id,
                    "location_id": decided.location_id,
                    "version": decided.version,
                    "candidates": [self._scene_to_dict(s) for s in decided.candidates],
                    "chosen": decided.chosen,
                    "reviewer": decided.reviewer,
                    "decided_at": decided.decided_at,
                }
            )
        return decided

    def get_item(self, item_id: str) -> QCItem:
        records = [r for r in self._records() if r["item_id"] == item_id]
        if not records:
            raise KeyError(f"unknown QC item {item_id!r}")
        return self._item_from_record(records[-1])

    def list_items(self) -> list[QCItem]:
        """Latest version of every item, oldest first."""
        latest: dict[str, dict] = {}
        for record in self._records():
            latest[record["item_id"]] = record
        return [self._item_from_record(r) for r in latest.values()]

    def history(self, item_id: str) -> list[QCItem]:
        return [self._item_from_record(r) for r in self._records() if r["item_id"] == item_id]


def ingest_manifest(
    manifest: list[LocationSpec],
    source: ImagerySource,
    store: QCStore,
    *,
    headings: tuple[float, ...] = DEFAULT_HEADINGS,
    pitch: float = DEFAULT_PITCH,
    fov: float = DEFAULT_FOV,
    size: int = DEFAULT_SIZE,
) -> list[QCItem]:
    """Fetch and enqueue every manifest location; skips uncovered ones."""
    items = []
    for loc in manifest:
        req = AcquisitionRequest(
            latitude=loc.latitude,
            longitude=loc.longitude,
            headings=headings,
            pitch=pitch,
            fov=fov,
            size=size,
        )
        try:
            scenes = fetch_views(req, source)
        except NoImageryError:
            logger.warning("no imagery for %s (%s, %s); skipped", loc.location_id, loc.latitude, loc.longitude)
            continue
        items.append(store.enqueue_qc(scenes, location_id=loc.location_id))
    return items
