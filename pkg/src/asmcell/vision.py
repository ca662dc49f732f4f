"""Template-matching recognition and placement verification.

Search images are grayscale with luminance in [0, 1]. Matching maximizes
zero-mean normalized cross-correlation (NCC):

    score(u, v) = sum((S - mean(S)) * (T - mean(T)))
                  / sqrt(sum((S - mean(S))^2) * sum((T - mean(T))^2))

evaluated over every template-sized window of the search image. Large images
are handled by computing window sums with integral images and the correlation
numerator with an FFT, then re-scoring the small set of near-maximal windows
with the exact per-window formula, so the returned detection is identical to
an exhaustive evaluation while one match on an 8 MP frame stays well under 2 s.

Constant (zero-variance) windows correlate with nothing; their score is
defined as 0 so matching is total. Flat templates are rejected outright.

Wide-angle lenses are modeled with a single radial coefficient:
x_d = x_u * (1 + k1 * r_u^2), r measured from the principal point in units of
the focal length. undistort_point inverts that map by fixed-point iteration.

File interchange is 8-bit binary PGM (P5), mapped linearly to [0, 1]. A
template library is a directory of PGM files indexed by a line-oriented
manifest: one "template <id> <filename>" entry per line.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import fftconvolve


class VisionError(Exception):
    pass


class TemplateTooLarge(VisionError):
    pass


class FlatTemplate(VisionError):
    """Template with zero pixel variance; it would match everything at 0/0."""


class OutOfCanvas(VisionError):
    pass


class NoConvergence(VisionError):
    pass


class PgmError(VisionError):
    pass


# Candidate windows within this of the best exact score get re-scored with
# the definitional formula; sized to dominate the approximate map's error
# (single-precision FFT numerator + integral-image normalization).
_REFINE_MARGIN = 1e-3


class GrayImage:
    """Immutable grayscale image, luminance in [0, 1], row-major float64."""

    __slots__ = ("_pixels",)

    def __init__(self, pixels: np.ndarray):
        arr = np.asarray(pixels, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError("image must be a 2-D array with positive size")
        if not np.all(np.isfinite(arr)):
            raise ValueError("image contains non-finite pixels")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ValueError("pixel values must lie in [0, 1]")
        arr = np.ascontiguousarray(arr)
        arr.setflags(write=False)
        self._pixels = arr

    @property
    def pixels(self) -> np.ndarray:
        return self._pixels

    @property
    def width(self) -> int:
        return self._pixels.shape[1]

    @property
    def height(self) -> int:
        return self._pixels.shape[0]

    def __eq__(self, other) -> bool:
        return isinstance(other, GrayImage) and np.array_equal(
            self._pixels, other._pixels
        )

    def __repr__(self) -> str:
        return f"GrayImage({self.width}x{self.height})"


@dataclass(frozen=True)
class Region:
    """Pixel rectangle: top-left (x, y), size w x h."""

    x: int
    y: int
    w: int
    h: int

    def __post_init__(self):
        if self.w < 1 or self.h < 1:
            raise ValueError("region must have positive size")

    @property
    def center(self) -> tuple[float, float]:
        # Pixel-grid center of the covered window [x, x+w-1] x [y, y+h-1];
        # matches the center convention of template detections.
        return (self.x + (self.w - 1) / 2.0, self.y + (self.h - 1) / 2.0)


@dataclass(frozen=True)
class Template:
    template_id: str
    image: GrayImage

    def __post_init__(self):
        if self.image.width < 2 or self.image.height < 2:
            raise ValueError("template must be at least 2x2")
        if float(np.ptp(self.image.pixels)) == 0.0:
            raise FlatTemplate(
                f"template {self.template_id!r} has zero variance"
            )


@dataclass(frozen=True)
class Detection:
    template_id: str
    center: tuple[float, float]
    score: float


@dataclass(frozen=True)
class CameraModel:
    focal_px: float
    principal_point: tuple[float, float]
    k1: float = 0.0

    def __post_init__(self):
        if not self.focal_px > 0:
            raise ValueError("focal_px must be positive")


@dataclass(frozen=True)
class Correct:
    detection: Detection


@dataclass(frozen=True)
class Misplaced:
    detection: Detection
    offset_px: float


@dataclass(frozen=True)
class NotFound:
    best_score: float


PlacementVerdict = Correct | Misplaced | NotFound


# -- Template matching --------------------------------------------------------


def _window_sums(a: np.ndarray, th: int, tw: int) -> np.ndarray:
    """Sum of every th x tw window via a zero-padded integral image."""
    pad = np.zeros((a.shape[0] + 1, a.shape[1] + 1))
    np.cumsum(a, axis=0, out=pad[1:, 1:])
    np.cumsum(pad[1:, 1:], axis=1, out=pad[1:, 1:])
    return (pad[th:, tw:] - pad[:-th, tw:]
            - pad[th:, :-tw] + pad[:-th, :-tw])


def _window_score(search: np.ndarray, tzero: np.ndarray, t_norm: float,
                  v: int, u: int, th: int, tw: int) -> float:
    """Exact NCC of one window; the definitional per-window formula."""
    win = search[v:v + th, u:u + tw]
    wmean = win.mean()
    wz = win - wmean
    denom = math.sqrt((wz * wz).sum()) * t_norm
    if denom == 0.0:
        return 0.0
    return float((wz * tzero).sum() / denom)


def score_at(search: GrayImage, tpl: Template, top_left: tuple[int, int]) -> float:
    """Exact NCC score of the window whose top-left corner is ``top_left``."""
    t = tpl.image.pixels
    th, tw = t.shape
    u, v = top_left
    if u < 0 or v < 0 or u + tw > search.width or v + th > search.height:
        raise ValueError(f"window at {top_left} falls outside the image")
    tzero = t - t.mean()
    t_norm = math.sqrt((tzero * tzero).sum())
    return _window_score(search.pixels, tzero, t_norm, v, u, th, tw)


def match_template(search: GrayImage, tpl: Template) -> Detection:
    """Find the window of ``search`` that best matches ``tpl``.

    Returns the detection at the NCC argmax; ties go to the smallest row,
    then the smallest column. The detection center is the pixel-grid center
    of the winning window.
    """
    s = search.pixels
    t = tpl.image.pixels
    th, tw = t.shape
    if th >= search.height or tw >= search.width:
        raise TemplateTooLarge(
            f"template {tw}x{th} must be strictly smaller than "
            f"search image {search.width}x{search.height}"
        )

    tzero = t - t.mean()
    t_norm = math.sqrt((tzero * tzero).sum())
    n = th * tw

    # Approximate score map: single-precision FFT correlation for the
    # numerator, integral-image (running-sum) window statistics for the
    # normalization. The map only nominates candidates; the winner always
    # comes from exact re-scoring with the definitional formula, so the
    # result matches an exhaustive search.
    shifted = s - s.mean()  # keeps the running sums small and well-behaved
    num = fftconvolve(shifted.astype(np.float32),
                      tzero[::-1, ::-1].astype(np.float32), mode="valid")
    squares = shifted * shifted
    prefix_mag = float(squares.sum())
    var_sum = _window_sums(squares, th, tw)
    win_sum = _window_sums(shifted, th, tw)
    win_sum *= win_sum
    win_sum /= n
    var_sum -= win_sum

    # Windows whose variance cannot be distinguished from integral-image
    # rounding (with a 1e4 safety factor, keeping the map's score error well
    # under the refine margin) count as flat and score 0, exactly like truly
    # constant windows. The map itself can drop to single precision after
    # the float64 floor test; candidates are re-scored exactly anyway.
    span = th * s.shape[1] + tw + n
    var_floor = max(1e4 * span * np.finfo(np.float64).eps * max(prefix_mag, 1.0),
                    1e-30)
    usable = var_sum > var_floor
    denom = var_sum.astype(np.float32)
    np.sqrt(denom, out=denom, where=usable)
    denom *= np.float32(t_norm)
    with np.errstate(divide="ignore", invalid="ignore"):
        approx = np.divide(num, denom, out=np.zeros_like(num), where=usable)

    # Nominate-and-verify: rescore everything within the margin of the map
    # maximum; if the exact scores fall short of the map's promise (the map
    # overestimated somewhere), widen until the exact best provably covers
    # every window whose true score could exceed it.
    exact: dict[tuple[int, int], float] = {}
    threshold = float(approx.max()) - _REFINE_MARGIN
    while True:
        cand_v, cand_u = np.nonzero(approx >= threshold)
        for v, u in zip(cand_v.tolist(), cand_u.tolist()):
            if (v, u) not in exact:
                exact[(v, u)] = _window_score(s, tzero, t_norm, v, u, th, tw)
        best_exact = max(exact.values())
        if threshold <= best_exact - _REFINE_MARGIN:
            break
        threshold = best_exact - _REFINE_MARGIN

    best_score = -math.inf
    best_vu = (0, 0)
    final_v, final_u = np.nonzero(approx >= threshold)
    for v, u in zip(final_v.tolist(), final_u.tolist()):
        score = exact[(v, u)]
        if score > best_score:
            best_score = score
            best_vu = (v, u)

    v, u = best_vu
    center = (u + (tw - 1) / 2.0, v + (th - 1) / 2.0)
    return Detection(
        template_id=tpl.template_id,
        center=center,
        score=min(1.0, max(-1.0, best_score)),
    )


def verify_placement(det: Detection, expected_region: Region, tol_px: float,
                     min_score: float) -> PlacementVerdict:
    """Judge a detection against where the element is supposed to sit."""
    if tol_px < 0:
        raise ValueError("tol_px must be non-negative")
    if not -1.0 <= min_score <= 1.0:
        raise ValueError("min_score must lie in [-1, 1]")
    if det.score < min_score:
        return NotFound(best_score=det.score)
    cx, cy = expected_region.center
    offset = math.hypot(det.center[0] - cx, det.center[1] - cy)
    if offset <= tol_px:
        return Correct(detection=det)
    return Misplaced(detection=det, offset_px=offset)


# -- Radial undistortion -------------------------------------------------------


def distort_point(p: tuple[float, float], cam: CameraModel) -> tuple[float, float]:
    """Forward radial map: undistorted pixel -> distorted pixel."""
    cx, cy = cam.principal_point
    nx = (p[0] - cx) / cam.focal_px
    ny = (p[1] - cy) / cam.focal_px
    factor = 1.0 + cam.k1 * (nx * nx + ny * ny)
    return (cx + cam.focal_px * nx * factor, cy + cam.focal_px * ny * factor)


def undistort_point(p: tuple[float, float], cam: CameraModel,
                    max_iter: int = 100) -> tuple[float, float]:
    """Invert the radial model by fixed-point iteration (residual < 1e-9)."""
    if not (math.isfinite(p[0]) and math.isfinite(p[1])):
        raise ValueError("point coordinates must be finite")
    if cam.k1 == 0.0:
        return p
    cx, cy = cam.principal_point
    dx = (p[0] - cx) / cam.focal_px
    dy = (p[1] - cy) / cam.focal_px
    ux, uy = dx, dy
    for _ in range(max_iter):
        factor = 1.0 + cam.k1 * (ux * ux + uy * uy)
        rx = ux * factor - dx
        ry = uy * factor - dy
        # residual measured in pixels, so the guarantee holds on-sensor
        if math.hypot(rx, ry) * cam.focal_px < 1e-9:
            return (cx + cam.focal_px * ux, cy + cam.focal_px * uy)
        ux = dx / factor
        uy = dy / factor
    raise NoConvergence(
        f"radial inversion did not converge for point {p} with k1={cam.k1}"
    )


# -- Scene rendering -----------------------------------------------------------


def render_scene(items: list[tuple[Template, tuple[int, int]]], width: int,
                 height: int, noise_sigma: float = 0.0,
                 seed: int | None = 0) -> GrayImage:
    """Deterministic synthetic workbench frame.

    Uniform 0.5 background, templates composited at their top-left positions
    (no rotation or scaling), then seeded additive Gaussian noise clipped back
    to [0, 1].
    """
    canvas = np.full((height, width), 0.5, dtype=np.float64)
    for tpl, (x, y) in items:
        t = tpl.image.pixels
        th, tw = t.shape
        if x < 0 or y < 0 or x + tw > width or y + th > height:
            raise OutOfCanvas(
                f"template {tpl.template_id!r} at ({x}, {y}) exceeds "
                f"{width}x{height} canvas"
            )
        canvas[y:y + th, x:x + tw] = t
    if noise_sigma > 0.0:
        rng = np.random.default_rng(seed)
        canvas = canvas + rng.normal(0.0, noise_sigma, size=canvas.shape)
        canvas = np.clip(canvas, 0.0, 1.0)
    return GrayImage(canvas)


# -- PGM I/O -------------------------------------------------------------------


def write_pgm(image: GrayImage, path: str | Path) -> None:
    """Write 8-bit binary PGM (P5), luminance mapped linearly to 0..255."""
    data = np.rint(image.pixels * 255.0).astype(np.uint8)
    header = f"P5\n{image.width} {image.height}\n255\n".encode("ascii")
    Path(path).write_bytes(header + data.tobytes())


def read_pgm(path: str | Path) -> GrayImage:
    """Read 8-bit binary PGM (P5); values map linearly to [0, 1]."""
    raw = Path(path).read_bytes()
    return decode_pgm(raw)


def decode_pgm(raw: bytes) -> GrayImage:
    if raw[:2] != b"P5":
        raise PgmError("not a binary PGM (missing P5 magic)")
    # Header tokens are separated by whitespace; '#' starts a comment to EOL.
    pos = 2
    tokens: list[int] = []
    while len(tokens) < 3:
        if pos >= len(raw):
            raise PgmError("truncated PGM header")
        ch = raw[pos:pos + 1]
        if ch == b"#":
            eol = raw.find(b"\n", pos)
            if eol < 0:
                raise PgmError("unterminated PGM comment")
            pos = eol + 1
        elif ch.isspace():
            pos += 1
        else:
            m = re.match(rb"\d+", raw[pos:])
            if not m:
                raise PgmError(f"bad PGM header token at byte {pos}")
            tokens.append(int(m.group(0)))
            pos += m.end()
    width, height, maxval = tokens
    if maxval != 255:
        raise PgmError(f"only maxval 255 is supported, got {maxval}")
    pos += 1  # single whitespace byte after maxval
    expected = width * height
    body = raw[pos:pos + expected]
    if len(body) != expected:
        raise PgmError(
            f"PGM body has {len(body)} bytes, expected {expected}"
        )
    arr = np.frombuffer(body, dtype=np.uint8).reshape(height, width)
    return GrayImage(arr.astype(np.float64) / 255.0)


# -- Template library ----------------------------------------------------------


class TemplateLibrary:
    """Directory of PGM templates indexed by a manifest file."""

    MANIFEST_NAME = "manifest.txt"

    def __init__(self, templates: dict[str, Template]):
        self._templates = dict(templates)

    @classmethod
    def load(cls, directory: str | Path) -> "TemplateLibrary":
        directory = Path(directory)
        manifest = directory / cls.MANIFEST_NAME
        if not manifest.is_file():
            raise FileNotFoundError(f"no template manifest at {manifest}")
        templates: dict[str, Template] = {}
        for lineno, line in enumerate(
            manifest.read_text(encoding="utf-8").splitlines(), start=1
        ):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            parts = stripped.split()
            if len(parts) != 3 or parts[0] != "template":
                raise PgmError(
                    f"{manifest}:{lineno}: expected 'template <id> <file>'"
                )
            _, template_id, filename = parts
            if template_id in templates:
                raise PgmError(
                    f"{manifest}:{lineno}: duplicate template id {template_id!r}"
                )
            templates[template_id] = Template(
                template_id=template_id,
                image=read_pgm(directory / filename),
            )
        return cls(templates)

    def __contains__(self, template_id: str) -> bool:
        return template_id in self._templates

    def __getitem__(self, template_id: str) -> Template:
        return self._templates[template_id]

    def ids(self) -> list[str]:
        return sorted(self._templates)

    def __len__(self) -> int:
        return len(self._templates)
