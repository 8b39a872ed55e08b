"""Planar images, color conversion, derivatives, integral images and resampling.

Everything downstream (channels, pooling, detection) works on the types
defined here.  Images are plane-major float32 arrays; integral images
accumulate in float64 so that rectangle sums stay accurate on large planes.
"""

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInput, OutOfBounds

# Linear RGB (Rec.709 primaries, D65 white) -> XYZ.
_RGB_TO_XYZ = np.array(
    [
        [0.412453, 0.357580, 0.180423],
        [0.212671, 0.715160, 0.072169],
        [0.019334, 0.119193, 0.950227],
    ]
)
_WHITE = _RGB_TO_XYZ @ np.ones(3)
_UN = 4.0 * _WHITE[0] / (_WHITE[0] + 15.0 * _WHITE[1] + 3.0 * _WHITE[2])
_VN = 9.0 * _WHITE[1] / (_WHITE[0] + 15.0 * _WHITE[1] + 3.0 * _WHITE[2])

# Affine rescale of L*, u*, v* to [0, 1].  The u/v bounds are the analytic
# extremes over the RGB cube rounded outward; they are written into every
# model file so stored quantizer ranges stay interpretable.
LUV_SCALE = {
    "l_lo": 0.0,
    "l_hi": 100.0,
    "u_lo": -84.0,
    "u_hi": 176.0,
    "v_lo": -135.0,
    "v_hi": 108.0,
}


@dataclass(frozen=True)
class RasterImage:
    """Plane-major floating-point image: ``data[plane, row, col]``."""

    data: np.ndarray

    def __post_init__(self):
        if self.data.ndim != 3:
            raise InvalidInput(f"expected (planes, h, w) array, got shape {self.data.shape}")
        p, h, w = self.data.shape
        if p < 1 or h < 1 or w < 1:
            raise InvalidInput(f"degenerate image shape {self.data.shape}")
        arr = np.ascontiguousarray(self.data, dtype=np.float32)
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def planes(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    def plane(self, i: int) -> np.ndarray:
        return self.data[i]


@dataclass(frozen=True)
class Rect:
    """Pixel rectangle: top-left corner plus extent, both in pixels."""

    x: int
    y: int
    w: int
    h: int

    def __post_init__(self):
        if self.w < 1 or self.h < 1:
            raise InvalidInput(f"rect extent must be >= 1, got {self.w}x{self.h}")


@dataclass(frozen=True)
class IntegralImage:
    """Summed-area table with a zero origin row and column.

    ``table[r, c]`` is the sum of source pixels in rows [0, r) x cols [0, c),
    so ``table`` has shape (h+1, w+1) for an h x w plane.
    """

    table: np.ndarray

    @property
    def width(self) -> int:
        return self.table.shape[1] - 1

    @property
    def height(self) -> int:
        return self.table.shape[0] - 1


def integral(plane: np.ndarray) -> IntegralImage:
    plane = np.asarray(plane)
    if plane.ndim != 2:
        raise InvalidInput("integral expects a single 2-D plane")
    h, w = plane.shape
    table = np.zeros((h + 1, w + 1), dtype=np.float64)
    np.cumsum(plane, axis=0, dtype=np.float64, out=table[1:, 1:])
    np.cumsum(table[1:, 1:], axis=1, out=table[1:, 1:])
    table.setflags(write=False)
    return IntegralImage(table)


def rect_sum(ii: IntegralImage, r: Rect) -> float:
    if r.x < 0 or r.y < 0 or r.x + r.w > ii.width or r.y + r.h > ii.height:
        raise OutOfBounds(f"rect {r} outside {ii.width}x{ii.height} plane")
    t = ii.table
    return float(t[r.y + r.h, r.x + r.w] - t[r.y, r.x + r.w] - t[r.y + r.h, r.x] + t[r.y, r.x])


def rgb_to_luv(img: RasterImage) -> RasterImage:
    """Convert an RGB image with samples in [0, 255] to rescaled CIE LUV.

    The input is treated as linear RGB.  L* is divided by 100; u* and v* are
    affinely mapped to [0, 1] using the LUV_SCALE constants.
    """
    if img.planes != 3:
        raise InvalidInput(f"rgb_to_luv needs 3 planes, got {img.planes}")
    rgb = img.data.astype(np.float64) / 255.0
    x = _RGB_TO_XYZ[0, 0] * rgb[0] + _RGB_TO_XYZ[0, 1] * rgb[1] + _RGB_TO_XYZ[0, 2] * rgb[2]
    y = _RGB_TO_XYZ[1, 0] * rgb[0] + _RGB_TO_XYZ[1, 1] * rgb[1] + _RGB_TO_XYZ[1, 2] * rgb[2]
    z = _RGB_TO_XYZ[2, 0] * rgb[0] + _RGB_TO_XYZ[2, 1] * rgb[1] + _RGB_TO_XYZ[2, 2] * rgb[2]

    t = y / _WHITE[1]
    big = t > 0.008856
    l_star = np.where(big, 116.0 * np.cbrt(t) - 16.0, 903.2962962962963 * t)

    denom = x + 15.0 * y + 3.0 * z
    safe = denom > 0
    u_prime = np.where(safe, np.divide(4.0 * x, denom, where=safe), _UN)
    v_prime = np.where(safe, np.divide(9.0 * y, denom, where=safe), _VN)
    u_star = 13.0 * l_star * (u_prime - _UN)
    v_star = 13.0 * l_star * (v_prime - _VN)

    s = LUV_SCALE
    out = np.stack(
        [
            (l_star - s["l_lo"]) / (s["l_hi"] - s["l_lo"]),
            (u_star - s["u_lo"]) / (s["u_hi"] - s["u_lo"]),
            (v_star - s["v_lo"]) / (s["v_hi"] - s["v_lo"]),
        ]
    )
    return RasterImage(out.astype(np.float32))


def luminance(img: RasterImage) -> RasterImage:
    """Extract the L plane of a LUV image (identity on 1-plane images)."""
    if img.planes == 1:
        return img
    if img.planes != 3:
        raise InvalidInput(f"luminance needs 1 or 3 planes, got {img.planes}")
    return RasterImage(img.data[0:1])


def gradient(plane: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Central differences [-1, 0, 1]/2 with replicated edges."""
    p = np.asarray(plane, dtype=np.float32)
    ix = np.zeros_like(p)
    iy = np.zeros_like(p)
    if p.shape[1] > 1:
        ix[:, 1:-1] = (p[:, 2:] - p[:, :-2]) * 0.5
        ix[:, 0] = (p[:, 1] - p[:, 0]) * 0.5
        ix[:, -1] = (p[:, -1] - p[:, -2]) * 0.5
    if p.shape[0] > 1:
        iy[1:-1, :] = (p[2:, :] - p[:-2, :]) * 0.5
        iy[0, :] = (p[1, :] - p[0, :]) * 0.5
        iy[-1, :] = (p[-1, :] - p[-2, :]) * 0.5
    return ix, iy


def second_derivative(plane: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Discrete second differences [1, -2, 1] with replicated edges."""
    p = np.asarray(plane, dtype=np.float32)
    ixx = np.zeros_like(p)
    iyy = np.zeros_like(p)
    if p.shape[1] > 1:
        ixx[:, 1:-1] = p[:, 2:] - 2.0 * p[:, 1:-1] + p[:, :-2]
        ixx[:, 0] = p[:, 1] - p[:, 0]
        ixx[:, -1] = p[:, -2] - p[:, -1]
    if p.shape[0] > 1:
        iyy[1:-1, :] = p[2:, :] - 2.0 * p[1:-1, :] + p[:-2, :]
        iyy[0, :] = p[1, :] - p[0, :]
        iyy[-1, :] = p[-2, :] - p[-1, :]
    return ixx, iyy


def resample(img: RasterImage, new_w: int, new_h: int) -> RasterImage:
    """Bilinear resampling with pixel-center alignment."""
    if new_w < 1 or new_h < 1:
        raise InvalidInput(f"target dims must be >= 1, got {new_w}x{new_h}")
    if new_w == img.width and new_h == img.height:
        return img
    xs = (np.arange(new_w, dtype=np.float64) + 0.5) * (img.width / new_w) - 0.5
    ys = (np.arange(new_h, dtype=np.float64) + 0.5) * (img.height / new_h) - 0.5
    xs = np.clip(xs, 0.0, img.width - 1.0)
    ys = np.clip(ys, 0.0, img.height - 1.0)
    x0 = np.floor(xs).astype(np.intp)
    y0 = np.floor(ys).astype(np.intp)
    x1 = np.minimum(x0 + 1, img.width - 1)
    y1 = np.minimum(y0 + 1, img.height - 1)
    fx = (xs - x0).astype(np.float32)
    fy = (ys - y0).astype(np.float32)

    out = np.empty((img.planes, new_h, new_w), dtype=np.float32)
    for p in range(img.planes):
        src = img.data[p]
        # lerp form a + t*(b - a) keeps constants exact
        top = src[np.ix_(y0, x0)]
        top = top + fx[None, :] * (src[np.ix_(y0, x1)] - top)
        bot = src[np.ix_(y1, x0)]
        bot = bot + fx[None, :] * (src[np.ix_(y1, x1)] - bot)
        out[p] = top + fy[:, None] * (bot - top)
    return RasterImage(out)


def aggregate(plane: np.ndarray, cell: int, mode: str = "mean") -> np.ndarray:
    """Reduce a plane to a ``(h//cell, w//cell)`` grid of per-cell statistics.

    Trailing rows/columns that do not fill a cell are discarded.
    """
    if cell < 1:
        raise InvalidInput(f"cell must be >= 1, got {cell}")
    p = np.asarray(plane, dtype=np.float32)
    gh, gw = p.shape[0] // cell, p.shape[1] // cell
    if gh < 1 or gw < 1:
        raise InvalidInput(f"plane {p.shape} smaller than one {cell}x{cell} cell")
    blocks = p[: gh * cell, : gw * cell].reshape(gh, cell, gw, cell)
    if mode == "mean":
        return blocks.mean(axis=(1, 3), dtype=np.float64).astype(np.float32)
    if mode == "sum":
        return blocks.sum(axis=(1, 3), dtype=np.float64).astype(np.float32)
    if mode == "max":
        return blocks.max(axis=(1, 3))
    raise InvalidInput(f"unknown aggregation mode {mode!r}")


# ---------------------------------------------------------------------------
# Image file I/O.  Binary PPM (P6) and PGM (P5) are the native formats; other
# formats go through the optional-decoder boundary below.
# ---------------------------------------------------------------------------


def _read_pnm_header(blob: bytes) -> tuple[bytes, list[int], int]:
    magic = blob[:2]
    pos = 2
    fields: list[int] = []
    while len(fields) < 3:
        while pos < len(blob) and blob[pos : pos + 1].isspace():
            pos += 1
        if pos < len(blob) and blob[pos : pos + 1] == b"#":
            while pos < len(blob) and blob[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise InvalidInput("truncated PNM header")
        fields.append(int(blob[start:pos]))
    return magic, fields, pos + 1  # single whitespace byte after maxval


def read_pnm(path) -> RasterImage:
    """Read a binary PPM (P6, 3 planes) or PGM (P5, 1 plane) file."""
    with open(path, "rb") as fh:
        blob = fh.read()
    magic, (w, h, maxval), offset = _read_pnm_header(blob)
    if magic not in (b"P5", b"P6"):
        raise InvalidInput(f"unsupported PNM magic {magic!r} in {path}")
    if maxval > 255:
        raise InvalidInput(f"only 8-bit PNM supported, maxval={maxval}")
    nplanes = 3 if magic == b"P6" else 1
    raw = np.frombuffer(blob, dtype=np.uint8, count=w * h * nplanes, offset=offset)
    if raw.size != w * h * nplanes:
        raise InvalidInput(f"short pixel data in {path}")
    pixels = raw.reshape(h, w, nplanes).transpose(2, 0, 1)
    return RasterImage(pixels.astype(np.float32))


def write_pnm(img: RasterImage, path) -> None:
    if img.planes not in (1, 3):
        raise InvalidInput(f"PNM supports 1 or 3 planes, got {img.planes}")
    magic = b"P6" if img.planes == 3 else b"P5"
    data = np.clip(np.rint(img.data), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(magic + b"\n%d %d\n255\n" % (img.width, img.height))
        fh.write(data.transpose(1, 2, 0).tobytes())


def read_image(path) -> RasterImage:
    """Dispatch on extension: PPM/PGM natively, PNG via PIL if available."""
    name = str(path).lower()
    if name.endswith((".ppm", ".pgm", ".pnm")):
        return read_pnm(path)
    if name.endswith(".png"):
        try:
            from PIL import Image
        except ImportError as exc:
            raise InvalidInput("PNG input requires an optional decoder (Pillow)") from exc
        arr = np.asarray(Image.open(path).convert("RGB"), dtype=np.float32)
        return RasterImage(arr.transpose(2, 0, 1))
    raise InvalidInput(f"unsupported image format: {path}")
