"""Unpaired dataset loading, toy synthetic-fog data, and MRFID-style indexing."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np
import torch

from . import fogmodel, imio

log = logging.getLogger(__name__)

MRFID_LEVELS = ("slight", "moderate", "high", "extreme")


class ConfigurationError(ValueError):
    pass


def resize_bilinear(image: np.ndarray, size: int | tuple[int, int]) -> np.ndarray:
    """Resize ``H x W x C`` to ``size x size`` (or ``(h, w)``) with bilinear interpolation."""
    h, w = (size, size) if isinstance(size, int) else size
    if image.shape[:2] == (h, w):
        return image.copy()
    return cv2.resize(image, (w, h), interpolation=cv2.INTER_LINEAR)


@dataclass
class UnpairedDataset:
    """Two independent image domains held in memory as signed NCHW float32."""

    foggy_paths: list[Path]
    clear_paths: list[Path]
    image_size: int
    foggy: np.ndarray
    clear: np.ndarray
    skipped: list[Path] = field(default_factory=list)

    def __post_init__(self):
        if not self.foggy_paths or not self.clear_paths:
            raise ConfigurationError("both domains need at least one image")

    @property
    def sizes(self) -> tuple[int, int]:
        return len(self.foggy_paths), len(self.clear_paths)

    def batch(self, domain: str, indices) -> torch.Tensor:
        source = {"foggy": self.foggy, "clear": self.clear}[domain]
        return torch.from_numpy(source[np.asarray(indices)].copy())


def load_domain(directory: str | Path, image_size: int) -> tuple[list[Path], np.ndarray, list[Path]]:
    directory = Path(directory)
    if not directory.is_dir():
        raise ConfigurationError(f"image directory does not exist: {directory}")
    paths, arrays, skipped = [], [], []
    for path in imio.list_images(directory):
        try:
            img = imio.read_image(path)
        except imio.ImageDecodeError:
            skipped.append(path)
            continue
        paths.append(path)
        arrays.append(resize_bilinear(img, image_size).transpose(2, 0, 1) * 2.0 - 1.0)
    if skipped:
        log.warning("skipped %d undecodable image(s) in %s", len(skipped), directory)
    if not paths:
        raise ConfigurationError(f"no decodable images in {directory}")
    return paths, np.stack(arrays).astype(np.float32), skipped


def scan_unpaired(foggy_dir: str | Path, clear_dir: str | Path, image_size: int) -> UnpairedDataset:
    """Load every decodable image of both domains, resized to ``image_size``."""
    foggy_paths, foggy, skipped_f = load_domain(foggy_dir, image_size)
    clear_paths, clear, skipped_c = load_domain(clear_dir, image_size)
    return UnpairedDataset(foggy_paths, clear_paths, image_size, foggy, clear, skipped_f + skipped_c)


class UnpairedSampler:
    """Independent shuffled cursors over the two domains.

    Each domain is reshuffled when its cursor wraps, so the pairing of
    foggy and clear samples drifts whenever the domain sizes differ.
    """

    DOMAINS = ("foggy", "clear")

    def __init__(self, n_foggy: int, n_clear: int, seed: int):
        self.sizes = {"foggy": n_foggy, "clear": n_clear}
        self.rng = np.random.default_rng(seed)
        self.order = {d: self.rng.permutation(self.sizes[d]) for d in self.DOMAINS}
        self.cursor = {d: 0 for d in self.DOMAINS}

    def next(self, domain: str, count: int = 1) -> list[int]:
        out = []
        for _ in range(count):
            if self.cursor[domain] >= self.sizes[domain]:
                self.order[domain] = self.rng.permutation(self.sizes[domain])
                self.cursor[domain] = 0
            out.append(int(self.order[domain][self.cursor[domain]]))
            self.cursor[domain] += 1
        return out

    def state_dict(self) -> dict:
        return {
            "sizes": dict(self.sizes),
            "rng": self.rng.bit_generator.state,
            "order": {d: self.order[d].tolist() for d in self.DOMAINS},
            "cursor": dict(self.cursor),
        }

    def load_state_dict(self, state: dict) -> None:
        self.sizes = dict(state["sizes"])
        self.rng = np.random.default_rng()
        self.rng.bit_generator.state = state["rng"]
        self.order = {d: np.asarray(state["order"][d], dtype=np.int64) for d in self.DOMAINS}
        self.cursor = dict(state["cursor"])


# -- toy data ---------------------------------------------------------------


def toy_clear_image(rng: np.random.Generator, size: int) -> np.ndarray:
    """Smooth colourful scene: a coloured linear gradient plus low-frequency sinusoids."""
    yy, xx = np.mgrid[0:size, 0:size] / size
    angle = rng.uniform(0, 2 * np.pi)
    ramp = (np.cos(angle) * xx + np.sin(angle) * yy + 1.0) / 2.0
    c0, c1 = rng.uniform(0.05, 0.6, 3), rng.uniform(0.05, 0.6, 3)
    img = c0 + (c1 - c0) * ramp[..., None]
    for _ in range(4):
        fx, fy = rng.uniform(1.0, 6.0, 2) * rng.choice([-1, 1], 2)
        phase = rng.uniform(0, 2 * np.pi)
        amp = rng.uniform(0.05, 0.15)
        colour = rng.uniform(0.3, 1.0, 3)
        wave = np.sin(2 * np.pi * (fx * xx + fy * yy) + phase)
        img = img + amp * wave[..., None] * colour
    return np.clip(img, 0.0, 1.0)


def toy_depth(rng: np.random.Generator, size: int) -> np.ndarray:
    """Linear ramp, far at the top of the frame, with a random horizontal tilt."""
    yy, xx = np.mgrid[0:size, 0:size] / max(size - 1, 1)
    far, near = rng.uniform(1.0, 2.0), rng.uniform(0.0, 0.3)
    tilt = rng.uniform(-0.2, 0.2)
    return np.maximum(near + (far - near) * (1.0 - yy) + tilt * (xx - 0.5), 0.0)


@dataclass(frozen=True)
class ToyDataset:
    root: Path
    clear_dir: Path
    foggy_dir: Path
    truth_dir: Path


def make_toy_dataset(out_dir: str | Path, n_scenes: int, size: int, seed: int) -> ToyDataset:
    """Write ``n_scenes`` clear/foggy PNG pairs plus transmission and airlight sidecars.

    Fog is synthesised from the 8-bit clear image that is written to disk,
    so the sidecars reproduce the foggy PNG up to output quantisation.
    """
    if size % 8:
        raise ValueError("toy image size must be divisible by 8")
    root = Path(out_dir)
    ds = ToyDataset(root, root / "clear", root / "foggy", root / "truth")
    for d in (ds.clear_dir, ds.foggy_dir, ds.truth_dir):
        d.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    for i in range(n_scenes):
        stem = f"scene_{i:03d}"
        clear = imio.quantize(toy_clear_image(rng, size)).astype(np.float64) / 255.0
        beta = rng.uniform(0.5, 2.5)
        airlight = rng.uniform(0.7, 1.0, 3)
        t = fogmodel.transmission_from_depth(toy_depth(rng, size), beta).astype(np.float32).astype(np.float64)
        foggy = fogmodel.synthesize_fog(clear, t, airlight)
        imio.write_image(ds.clear_dir / f"{stem}.png", clear)
        imio.write_image(ds.foggy_dir / f"{stem}.png", foggy)
        imio.write_dpth(ds.truth_dir / f"{stem}_T.dpth", t)
        imio.write_airlight(ds.truth_dir / f"{stem}_A.txt", airlight)
    return ds


# -- MRFID layout -----------------------------------------------------------


@dataclass(frozen=True)
class MrfidScene:
    scene_id: str
    clear_path: Path
    fog_paths: dict[str, Path]


@dataclass(frozen=True)
class MrfidIndex:
    scenes: list[MrfidScene]
    rejected: list[str]


def index_mrfid(root: str | Path) -> MrfidIndex:
    """Index ``root/<scene_id>/{clear,slight,moderate,high,extreme}.png``.

    Scenes without ``clear.png`` are rejected; missing fog levels are tolerated.
    """
    root = Path(root)
    if not root.is_dir():
        raise ConfigurationError(f"MRFID root does not exist: {root}")
    scene_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if not scene_dirs:
        raise ConfigurationError(f"MRFID root has no scene directories: {root}")
    scenes, rejected = [], []
    for d in scene_dirs:
        clear = d / "clear.png"
        if not clear.is_file():
            rejected.append(d.name)
            log.warning("MRFID scene %s has no clear.png; excluded", d.name)
            continue
        fogs = {lvl: d / f"{lvl}.png" for lvl in MRFID_LEVELS if (d / f"{lvl}.png").is_file()}
        scenes.append(MrfidScene(d.name, clear, fogs))
    return MrfidIndex(scenes, rejected)
