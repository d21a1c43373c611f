"""Procedural multi-sprite scenes with exact instance masks, stored as PNG."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image

from ._kernels import ELLIPSE, SQUARE, TRIANGLE, rasterize_sprites

DATASET_VERSION = "gblab-sprites-1"
IMAGE_SIZE = 64
SHAPE_IDS = {"square": SQUARE, "ellipse": ELLIPSE, "triangle": TRIANGLE}
MIN_COLOUR_DISTANCE = 0.1
MAX_RESAMPLES = 100


class DatasetError(Exception):
    pass


class DatasetLoadError(DatasetError):
    pass


class IncompatibleDatasetError(DatasetError):
    pass


class DatasetWriteError(DatasetError, OSError):
    pass


@dataclass
class SceneSpec:
    num_sprites_range: tuple = (2, 4)
    shapes: tuple = ("square", "ellipse", "triangle")
    size_range: tuple = (12.0, 28.0)
    palette: str = "uniform"
    background: str = "uniform"
    allow_occlusion: bool = True
    image_size: int = IMAGE_SIZE

    def __post_init__(self):
        self.num_sprites_range = tuple(int(v) for v in self.num_sprites_range)
        self.size_range = tuple(float(v) for v in self.size_range)
        self.shapes = tuple(self.shapes)
        lo, hi = self.num_sprites_range
        if lo < 1 or hi < lo:
            raise ValueError("num_sprites_range must satisfy 1 <= min <= max")
        smin, smax = self.size_range
        if smin <= 0 or smax < smin or smax > self.image_size:
            raise ValueError("size_range must lie within the image bounds")
        bad = set(self.shapes) - set(SHAPE_IDS)
        if bad or not self.shapes:
            raise ValueError(f"unknown shapes: {sorted(bad)}")
        if self.palette != "uniform" or self.background not in ("uniform", "grey"):
            raise ValueError("palette must be 'uniform'; background 'uniform' or 'grey'")
        if self.image_size != IMAGE_SIZE:
            raise ValueError("only 64x64 scenes are supported")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["num_sprites_range"] = list(self.num_sprites_range)
        d["size_range"] = list(self.size_range)
        d["shapes"] = list(self.shapes)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        return cls(**d)


@dataclass
class SpriteScene:
    image: np.ndarray          # 3 x H x W float in [0, 1]
    instance_masks: np.ndarray  # H x W int, 0 = background
    metadata: dict = field(default_factory=dict)


def _colour_far_from(rng, bg):
    while True:
        c = rng.uniform(0.0, 1.0, size=3)
        if np.max(np.abs(c - bg)) >= MIN_COLOUR_DISTANCE:
            return c


def _sample_sprite(rng, spec: SceneSpec, bg):
    shape = spec.shapes[rng.integers(len(spec.shapes))]
    size = rng.uniform(*spec.size_range)
    half = size / 2
    lo, hi = half, spec.image_size - half
    cy = rng.uniform(lo, hi) if hi > lo else spec.image_size / 2
    cx = rng.uniform(lo, hi) if hi > lo else spec.image_size / 2
    aspect = rng.uniform(0.5, 1.0) if shape == "ellipse" else 1.0
    angle = rng.uniform(0, 2 * np.pi) if shape != "square" else 0.0
    return {
        "shape": shape,
        "cy": float(cy), "cx": float(cx), "size": float(size),
        "aspect": float(aspect), "angle": float(angle),
        "colour": [float(v) for v in _colour_far_from(rng, bg)],
    }


def _params(sprites) -> np.ndarray:
    return np.array(
        [[SHAPE_IDS[s["shape"]], s["cy"], s["cx"], s["size"], s["aspect"], s["angle"]] for s in sprites],
        dtype=np.float64,
    ).reshape(-1, 6)


def _acceptable(sprites, spec: SceneSpec) -> bool:
    labels = rasterize_sprites(_params(sprites), spec.image_size)
    visible = np.bincount(labels.ravel(), minlength=len(sprites) + 1)[1:]
    if not spec.allow_occlusion:
        solo = [rasterize_sprites(_params([s]), spec.image_size) for s in sprites]
        areas = np.array([np.count_nonzero(m) for m in solo])
        return bool(np.all(visible == areas) and np.all(areas > 0))
    return bool(np.all(visible > 0))


def generate_scene(rng_seed: int, spec: SceneSpec) -> SpriteScene:
    """Render one scene; later sprites occlude earlier ones.

    A sprite whose addition leaves any sprite without visible pixels is
    resampled up to 100 times, then dropped.
    """
    rng = np.random.default_rng(rng_seed)
    if spec.background == "grey":
        bg = np.full(3, rng.uniform(0.0, 1.0))
    else:
        bg = rng.uniform(0.0, 1.0, size=3)
    n = int(rng.integers(spec.num_sprites_range[0], spec.num_sprites_range[1] + 1))
    sprites, dropped, resamples = [], [], 0
    for _ in range(n):
        for attempt in range(MAX_RESAMPLES + 1):
            cand = _sample_sprite(rng, spec, bg)
            if _acceptable(sprites + [cand], spec):
                sprites.append(cand)
                break
            resamples += 1
        else:
            dropped.append(cand)
    labels = rasterize_sprites(_params(sprites), spec.image_size)
    palette = np.vstack([bg] + [s["colour"] for s in sprites])
    image = palette[labels].transpose(2, 0, 1).astype(np.float32)
    meta = {
        "seed": int(rng_seed),
        "background": [float(v) for v in bg],
        "sprites": sprites,
        "requested_sprites": n,
        "dropped": dropped,
        "resamples": resamples,
    }
    return SpriteScene(image, labels.astype(np.int64), meta)


@dataclass
class DatasetManifest:
    version: str
    count: int
    image_size: int
    seed: int
    split: dict
    scene_spec: dict

    def __post_init__(self):
        if self.split["train_count"] + self.split["val_count"] != self.count:
            raise ValueError("train_count + val_count must equal count")

    def to_dict(self) -> dict:
        return asdict(self)


def split(manifest: DatasetManifest, val_count: int) -> DatasetManifest:
    """Hold out the last ``val_count`` scenes for validation."""
    if val_count < 0 or val_count >= manifest.count:
        raise ValueError(f"val_count must be in [0, {manifest.count}), got {val_count}")
    return replace(manifest, split={"train_count": manifest.count - val_count, "val_count": val_count})


def _to_png_bytes_image(image: np.ndarray) -> Image.Image:
    arr = np.clip(np.rint(image.transpose(1, 2, 0) * 255.0), 0, 255).astype(np.uint8)
    return Image.fromarray(arr, mode="RGB")


def write_dataset(out_dir, n: int, seed: int, spec: SceneSpec, val_count: int = 0) -> DatasetManifest:
    """Write ``n`` scenes; scene ``i`` is generated from seed ``seed ^ i``."""
    out = Path(out_dir)
    manifest = DatasetManifest(
        DATASET_VERSION, n, spec.image_size, seed,
        {"train_count": n, "val_count": 0}, spec.to_dict(),
    )
    if val_count:
        manifest = split(manifest, val_count)
    try:
        (out / "images").mkdir(parents=True, exist_ok=True)
        (out / "masks").mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise DatasetWriteError(f"cannot create dataset directories under {out}: {e}") from e
    for i in range(n):
        scene = generate_scene(seed ^ i, spec)
        for sub, img in (
            ("images", _to_png_bytes_image(scene.image)),
            ("masks", Image.fromarray(scene.instance_masks.astype(np.uint8), mode="L")),
        ):
            path = out / sub / f"{i:06d}.png"
            try:
                img.save(path, format="PNG")
            except OSError as e:
                raise DatasetWriteError(f"failed to write {path}: {e}") from e
    write_manifest(out, manifest)
    return manifest


def write_manifest(out_dir, manifest: DatasetManifest) -> None:
    path = Path(out_dir) / "manifest.json"
    try:
        path.write_text(json.dumps(manifest.to_dict(), indent=2, sort_keys=True) + "\n")
    except OSError as e:
        raise DatasetWriteError(f"failed to write {path}: {e}") from e


class SpriteDataset:
    """Lazy reader over a dataset directory. Items are ``(image, mask)`` arrays."""

    def __init__(self, root, manifest: DatasetManifest):
        self.root = Path(root)
        self.manifest = manifest
        self._cache: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    def __len__(self) -> int:
        return self.manifest.count

    @property
    def train_indices(self) -> range:
        return range(self.manifest.split["train_count"])

    @property
    def val_indices(self) -> range:
        return range(self.manifest.split["train_count"], self.manifest.count)

    def _read(self, rel: str, mode: str) -> np.ndarray:
        path = self.root / rel
        try:
            with Image.open(path) as im:
                if im.mode != mode:
                    raise DatasetLoadError(f"{rel}: expected PNG mode {mode}, got {im.mode}")
                return np.asarray(im)
        except DatasetLoadError:
            raise
        except (OSError, ValueError) as e:
            raise DatasetLoadError(f"cannot read {rel}: {e}") from e

    def __getitem__(self, i: int):
        i = int(i)
        if not 0 <= i < len(self):
            raise IndexError(i)
        if i not in self._cache:
            img = self._read(f"images/{i:06d}.png", "RGB")
            mask = self._read(f"masks/{i:06d}.png", "L")
            image = (img.astype(np.float32) / 255.0).transpose(2, 0, 1).copy()
            self._cache[i] = (image, mask.astype(np.int64))
        return self._cache[i]

    def images(self, indices) -> np.ndarray:
        return np.stack([self[i][0] for i in indices])

    def verify(self) -> None:
        """Touch every file so missing or corrupt entries surface now."""
        for i in range(len(self)):
            self[i]


def load_dataset(root) -> SpriteDataset:
    root = Path(root)
    mpath = root / "manifest.json"
    if not mpath.is_file():
        raise DatasetLoadError(f"missing manifest.json in {root}")
    try:
        raw = json.loads(mpath.read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise DatasetLoadError(f"corrupt manifest.json: {e}") from e
    if raw.get("version") != DATASET_VERSION:
        raise IncompatibleDatasetError(
            f"dataset version {raw.get('version')!r} is not {DATASET_VERSION!r}"
        )
    try:
        manifest = DatasetManifest(**raw)
    except (TypeError, KeyError, ValueError) as e:
        raise DatasetLoadError(f"invalid manifest.json: {e}") from e
    return SpriteDataset(root, manifest)

