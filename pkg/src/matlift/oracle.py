"""The neural-model boundary.

A similarity oracle maps (ordered frame sequence, click) to one similarity
raster per frame. Two implementations: a synthetic ground-truth oracle driven
by material-ID rasters with controllable multiview-inconsistency noise, and a
file-backed oracle that replays precomputed ".simf" maps so externally
produced similarity networks can be dropped in. Plus the click-sampling rules
and the clicked-frame duplication protocol.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy import ndimage

from . import formats
from .errors import OracleError, UnselectableMaterialError, ValidationError
from .postprocess import erode
from .render import ViewBundle

# Without duplication the clicked frame gets no cross-frame context, so its
# map is noisier; modeled as a pixel-noise boost on that frame.
CLICK_FRAME_NOISE_BOOST = 3.0

CLICK_BORDER_PX = 4
CLICK_MIN_AREA_PX = 150
CLICK_MIN_AREA_FRAC = 0.0002


@dataclass(frozen=True)
class Click:
    view_id: str
    pixel: tuple[int, int]  # (x, y)
    polarity: str = "positive"

    def __post_init__(self):
        if self.polarity not in ("positive", "negative"):
            raise ValidationError(f"polarity must be positive|negative, got {self.polarity!r}")
        object.__setattr__(self, "pixel", (int(self.pixel[0]), int(self.pixel[1])))


@dataclass(frozen=True)
class NoiseModel:
    """Similarity-space corruption simulating an imperfect 2D model."""

    pixel_sigma: float = 0.0       # additive per-pixel gaussian
    view_bias_sigma: float = 0.0   # per-view constant offset
    flip_rate: float = 0.0         # probability a view's map gets blurred
    blur_px: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.pixel_sigma < 0 or self.view_bias_sigma < 0:
            raise ValidationError("noise sigmas must be >= 0")
        if not (0.0 <= self.flip_rate <= 1.0):
            raise ValidationError(f"flip_rate must be in [0,1], got {self.flip_rate}")
        if self.blur_px < 0:
            raise ValidationError("blur_px must be >= 0")

    @property
    def silent(self) -> bool:
        return self.pixel_sigma == 0 and self.view_bias_sigma == 0 and self.flip_rate == 0


@dataclass(frozen=True)
class OracleRequest:
    """Ordered frame sequence plus the click that conditions it.

    With `duplicated` set, the clicked frame appears exactly twice and first;
    the first copy only conditions the model and produces no output raster.
    """

    frames: tuple[str, ...]
    click: Click
    duplicated: bool = False

    def __post_init__(self):
        object.__setattr__(self, "frames", tuple(self.frames))
        if self.click.view_id not in self.frames:
            raise ValidationError(f"click view {self.click.view_id!r} not in frame sequence")
        if self.duplicated:
            if len(self.frames) < 2 or self.frames[0] != self.click.view_id \
                    or self.frames[1] != self.click.view_id:
                raise ValidationError("duplicated request must start with two copies of the clicked frame")
            if self.frames.count(self.click.view_id) != 2:
                raise ValidationError("clicked frame must appear exactly twice when duplicated")

    @property
    def output_frames(self) -> tuple[str, ...]:
        return self.frames[1:] if self.duplicated else self.frames


def duplicate_click_frame(sequence: Sequence[str], clicked: str) -> list[str]:
    """[A,B,C] with click B -> [B, B, A, C]; the first B is conditioning-only."""
    sequence = list(sequence)
    if clicked not in sequence:
        raise ValidationError(f"clicked view {clicked!r} not in sequence")
    rest = [vid for vid in sequence if vid != clicked]
    return [clicked, clicked] + rest


def make_request(sequence: Sequence[str], click: Click, duplicate: bool = True) -> OracleRequest:
    if duplicate:
        return OracleRequest(tuple(duplicate_click_frame(sequence, click.view_id)),
                             click, duplicated=True)
    return OracleRequest(tuple(sequence), click, duplicated=False)


class SimilarityOracle:
    """Base oracle: query validation, counting, and the output contract.

    Subclasses implement `_similarity(view_id, bundle, request, frames)`
    returning a float raster; the base guarantees values in [0,1] and
    background pixels forced to 0.
    """

    def __init__(self):
        self.query_count = 0

    def query(self, request: OracleRequest,
              frames: Mapping[str, ViewBundle]) -> list[np.ndarray]:
        self.query_count += 1
        for vid in request.frames:
            if vid not in frames:
                raise OracleError(f"unknown view id {vid!r}")
        shapes = {frames[vid].shape for vid in request.frames}
        if len(shapes) > 1:
            raise OracleError(f"frames rendered at unequal resolutions: {sorted(shapes)}")
        click_bundle = frames[request.click.view_id]
        x, y = request.click.pixel
        h, w = click_bundle.shape
        if not (0 <= x < w and 0 <= y < h):
            raise OracleError(f"click pixel {(x, y)} outside {w}x{h} raster")
        if click_bundle.material_id[y, x] < 0:
            raise OracleError(f"click pixel {(x, y)} is background")

        out = []
        for vid in request.output_frames:
            bundle = frames[vid]
            sim = np.asarray(self._similarity(vid, bundle, request, frames),
                             dtype=np.float32)
            if sim.shape != bundle.shape:
                raise OracleError(f"oracle raster for {vid!r} has shape {sim.shape}, "
                                  f"expected {bundle.shape}")
            sim = np.clip(sim, 0.0, 1.0)
            sim[~bundle.foreground] = 0.0
            out.append(sim)
        return out

    def _similarity(self, view_id: str, bundle: ViewBundle, request: OracleRequest,
                    frames: Mapping[str, ViewBundle]) -> np.ndarray:
        raise NotImplementedError


class SyntheticOracle(SimilarityOracle):
    """Ground-truth similarity from material-ID rasters, optionally noisy.

    Zero noise yields exactly 1.0 on the clicked material and 0.0 elsewhere,
    independent of where inside the material the click lands. Noise draws are
    seeded per (noise seed, view id), so a view's corruption is reproducible
    and independent of frame order.
    """

    def __init__(self, noise: NoiseModel | None = None):
        super().__init__()
        self.noise = noise or NoiseModel()

    def _view_rng(self, view_id: str) -> np.random.Generator:
        return np.random.default_rng(
            np.random.SeedSequence([self.noise.seed, zlib.crc32(view_id.encode())])
        )

    def _similarity(self, view_id, bundle, request, frames):
        click = request.click
        cx, cy = click.pixel
        target = int(frames[click.view_id].material_id[cy, cx])
        sim = (bundle.material_id == target).astype(np.float32)
        if click.polarity == "negative":
            sim = np.where(bundle.foreground, 1.0 - sim, 0.0).astype(np.float32)
        if self.noise.silent:
            return sim

        rng = self._view_rng(view_id)
        blurred = rng.uniform() < self.noise.flip_rate
        bias = rng.normal(0.0, self.noise.view_bias_sigma) if self.noise.view_bias_sigma > 0 else 0.0
        if blurred and self.noise.blur_px > 0:
            sim = ndimage.uniform_filter(sim, size=2 * self.noise.blur_px + 1)
        sigma = self.noise.pixel_sigma
        if view_id == click.view_id and not request.duplicated:
            sigma *= CLICK_FRAME_NOISE_BOOST
        if sigma > 0:
            sim = sim + rng.normal(0.0, sigma, size=sim.shape).astype(np.float32)
        if bias:
            sim = sim + bias
        return sim


class FileOracle(SimilarityOracle):
    """Replays precomputed similarity maps: <view_id>.simf in a directory."""

    def __init__(self, directory: str | Path):
        super().__init__()
        self.directory = Path(directory)

    def _similarity(self, view_id, bundle, request, frames):
        path = self.directory / f"{view_id}.simf"
        if not path.exists():
            raise OracleError(f"no similarity map for view {view_id!r} ({path})")
        sim = formats.read_simf(path)
        if sim.ndim != 2:
            raise OracleError(f"similarity map for {view_id!r} must be single-channel")
        return sim


def sample_click(material_raster: np.ndarray, target: int,
                 rng: np.random.Generator, view_id: str,
                 polarity: str = "positive") -> Click:
    """Uniform click inside the target material, away from its border.

    The material mask is eroded by 4 px before sampling; materials whose
    visible area is below max(150 px, 0.02% of the frame) are rejected.
    """
    raster = np.asarray(material_raster)
    h, w = raster.shape
    mask = raster == target
    visible = int(mask.sum())
    min_area = max(CLICK_MIN_AREA_PX, CLICK_MIN_AREA_FRAC * h * w)
    if visible < min_area:
        raise UnselectableMaterialError(
            f"material {target} covers {visible} px, below minimum {min_area:.0f}")
    core = erode(mask, CLICK_BORDER_PX)
    ys, xs = np.nonzero(core)
    if ys.size == 0:
        raise UnselectableMaterialError(
            f"material {target} vanishes under a {CLICK_BORDER_PX} px border erosion")
    i = int(rng.integers(ys.size))
    return Click(view_id=view_id, pixel=(int(xs[i]), int(ys[i])), polarity=polarity)
