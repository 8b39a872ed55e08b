"""Spatially pooled covariance and LBP channels.

Per-patch covariance statistics are computed from integral images of the 9
low-level features and their 45 pairwise products, then max-pooled over a
fixed grid of pooling regions.  Per-patch LBP histograms are pooled the same
way.  ``assemble`` builds the named channel configurations used by the
detector (68 / 136 / 143 / 259 planes).
"""

import warnings
from dataclasses import dataclass

import numpy as np

from .channels import (
    ChannelStack,
    LowLevelStack,
    LBP_SENTINEL,
    acf_channels,
    concat_stacks,
    lbp_codes,
    lowlevel9,
)
from .errors import InvalidInput, OutOfBounds
from .imgcore import RasterImage, Rect, aggregate, rgb_to_luv

N_FEATURES = 9
CELL = 4  # channel grid resolution in pixels

# (i, j) with i <= j: the 45 stored products; (i, j) with i < j: the 36
# correlation pairs.  The pooled 42-vector keeps the 7 variances of the
# non-positional features and the 35 correlations that are not the (x, y)
# pair.
PROD_PAIRS = tuple((i, j) for i in range(N_FEATURES) for j in range(i, N_FEATURES))
CORR_PAIRS = tuple((i, j) for i in range(N_FEATURES) for j in range(i + 1, N_FEATURES))
_PROD_INDEX = {p: k for k, p in enumerate(PROD_PAIRS)}
POOLED_VAR_FEATURES = tuple(range(2, 9))
POOLED_CORR_PAIRS = tuple(p for p in CORR_PAIRS if p != (0, 1))

# Relative cutoff below which a patch variance is treated as exactly zero
# (rect-sum cancellation noise on constant features).
_VAR_EPS_REL = 1e-9

CHANNEL_CONFIGS = (
    "M+O+LUV+LBP",
    "sp-Cov+LUV",
    "sp-Cov+M+O+LUV",
    "sp-Cov+sp-LBP+M+O+LUV",
)


@dataclass(frozen=True)
class PoolConfig:
    """Patch and pooling geometry for sp-Cov and sp-LBP."""

    cov_patch_sizes: tuple = (8, 16, 32)
    cov_patch_stride: int = 1
    cov_pool_region: int = 4
    cov_pool_stride: int = 4
    lbp_patch_size: int = 4
    lbp_patch_stride: int = 1
    lbp_pool_region: int = 8
    lbp_pool_stride: int = 4

    def __post_init__(self):
        for name in (
            "cov_patch_stride",
            "cov_pool_region",
            "cov_pool_stride",
            "lbp_patch_size",
            "lbp_patch_stride",
            "lbp_pool_region",
            "lbp_pool_stride",
        ):
            if getattr(self, name) < 1:
                raise InvalidInput(f"{name} must be >= 1")
        if any(s < 1 for s in self.cov_patch_sizes):
            raise InvalidInput("patch sizes must be >= 1")


@dataclass(frozen=True)
class CovIntegrals:
    """Integral images of the 9 feature planes and their 45 products."""

    feat: np.ndarray  # (9, h+1, w+1) float64
    prod: np.ndarray  # (45, h+1, w+1) float64

    @property
    def height(self) -> int:
        return self.feat.shape[1] - 1

    @property
    def width(self) -> int:
        return self.feat.shape[2] - 1


@dataclass(frozen=True)
class PatchStats:
    """Per-patch variances (9) and correlation coefficients (36, pairs i < j)."""

    var: np.ndarray
    corr: np.ndarray


def _batched_integral(planes: np.ndarray) -> np.ndarray:
    k, h, w = planes.shape
    table = np.zeros((k, h + 1, w + 1), dtype=np.float64)
    np.cumsum(planes, axis=1, dtype=np.float64, out=table[:, 1:, 1:])
    np.cumsum(table[:, 1:, 1:], axis=2, out=table[:, 1:, 1:])
    return table


def cov_integrals(stack: LowLevelStack) -> CovIntegrals:
    f64 = stack.data.astype(np.float64)
    prods = np.empty((len(PROD_PAIRS), stack.height, stack.width), dtype=np.float64)
    for k, (i, j) in enumerate(PROD_PAIRS):
        np.multiply(f64[i], f64[j], out=prods[k])
    return CovIntegrals(_batched_integral(f64), _batched_integral(prods))


def _rect_sums(tables: np.ndarray, ys: np.ndarray, xs: np.ndarray, h: int, w: int) -> np.ndarray:
    """Rect sums for every (y, x) top-left on a grid; output (k, len(ys), len(xs))."""
    y0, y1 = ys, ys + h
    x0, x1 = xs, xs + w
    return (
        tables[:, y1[:, None], x1[None, :]]
        - tables[:, y0[:, None], x1[None, :]]
        - tables[:, y1[:, None], x0[None, :]]
        + tables[:, y0[:, None], x0[None, :]]
    )


def _grid_moments(ci: CovIntegrals, ys, xs, h: int, w: int):
    """Variances and correlations of every patch on a top-left grid.

    Returns (var, corr) with shapes (9, ny, nx) and (36, ny, nx).  Variances
    within rounding noise of zero (relative to the mean square) are snapped to
    exactly zero, and any correlation touching a zero-variance feature is 0.
    """
    ys = np.asarray(ys, dtype=np.intp)
    xs = np.asarray(xs, dtype=np.intp)
    n = float(h * w)
    mean = _rect_sums(ci.feat, ys, xs, h, w) / n
    exy = _rect_sums(ci.prod, ys, xs, h, w) / n

    diag = np.array([_PROD_INDEX[(i, i)] for i in range(N_FEATURES)])
    ex2 = np.maximum(exy[diag], 0.0)  # mean squares only round below zero
    raw_var = ex2 - mean * mean
    zero = raw_var <= ex2 * _VAR_EPS_REL
    var = np.where(zero, 0.0, raw_var)

    corr = np.empty((len(CORR_PAIRS),) + mean.shape[1:], dtype=np.float64)
    for k, (i, j) in enumerate(CORR_PAIRS):
        cov = exy[_PROD_INDEX[(i, j)]] - mean[i] * mean[j]
        denom = var[i] * var[j]
        with np.errstate(divide="ignore", invalid="ignore"):
            c = np.where(denom > 0.0, cov / np.sqrt(denom), 0.0)
        corr[k] = np.clip(c, -1.0, 1.0)
    return var, corr


def patch_stats(ci: CovIntegrals, patch: Rect) -> PatchStats:
    """Population variance/correlation statistics of one patch."""
    if patch.x < 0 or patch.y < 0 or patch.x + patch.w > ci.width or patch.y + patch.h > ci.height:
        raise OutOfBounds(f"patch {patch} outside {ci.width}x{ci.height} image")
    var, corr = _grid_moments(ci, [patch.y], [patch.x], patch.h, patch.w)
    return PatchStats(var[:, 0, 0].copy(), corr[:, 0, 0].copy())


def _axis_windows(n_pos: int, patch_stride: int, region: int, pool_stride: int, n_cells: int):
    """Index range [start, end) of patch positions falling in each pooling cell."""
    anchors = np.arange(n_cells) * pool_stride
    starts = -(-anchors // patch_stride)  # ceil division
    ends = (anchors + region - 1) // patch_stride + 1
    return np.clip(starts, 0, n_pos), np.clip(ends, 0, n_pos)


def _window_max(values: np.ndarray, starts: np.ndarray, ends: np.ndarray, axis: int) -> np.ndarray:
    """Max over per-cell index windows along one axis; empty windows give -inf."""
    values = np.moveaxis(values, axis, -1)
    out_shape = values.shape[:-1] + (len(starts),)
    out = np.full(out_shape, -np.inf, dtype=values.dtype)
    span = int(np.max(ends - starts, initial=0))
    for off in range(span):
        idx = starts + off
        valid = idx < ends
        if not valid.any():
            continue
        out[..., valid] = np.maximum(out[..., valid], values[..., idx[valid]])
    return np.moveaxis(out, -1, axis)


def pool_max(
    values: np.ndarray,
    patch_stride: int,
    region: int,
    pool_stride: int,
    grid_h: int,
    grid_w: int,
) -> np.ndarray:
    """Max-pool per-position values (k, ny, nx) onto the (grid_h, grid_w) cell grid.

    Position (iy, ix) corresponds to a patch whose top-left pixel is
    (iy*patch_stride, ix*patch_stride); a cell pools every patch whose
    top-left falls inside its pooling region.  Cells with no patch hold 0.
    """
    k, ny, nx = values.shape
    ys0, ys1 = _axis_windows(ny, patch_stride, region, pool_stride, grid_h)
    xs0, xs1 = _axis_windows(nx, patch_stride, region, pool_stride, grid_w)
    out = _window_max(values.astype(np.float64), xs0, xs1, axis=2)
    out = _window_max(out, ys0, ys1, axis=1)
    return np.where(np.isneginf(out), 0.0, out).astype(np.float32)


_POOLED_CORR_SEL = tuple(k for k, p in enumerate(CORR_PAIRS) if p != (0, 1))


def _sp_cov_planes(lum: np.ndarray, grid_h: int, grid_w: int, pool: PoolConfig):
    """Pooled covariance planes (3 x 42) plus the 7 aggregated raw statistics."""
    from .channels import LOWLEVEL_NAMES

    stack = lowlevel9(lum)
    ci = cov_integrals(stack)
    h, w = stack.height, stack.width

    raw_planes = [aggregate(stack.data[i], CELL, "mean") for i in range(2, 9)]
    raw_names = [f"raw:{LOWLEVEL_NAMES[i]}" for i in range(2, 9)]

    pooled_planes = []
    pooled_names = []
    for s in pool.cov_patch_sizes:
        names = [f"cov{s}:var:{LOWLEVEL_NAMES[i]}" for i in POOLED_VAR_FEATURES]
        names += [
            f"cov{s}:corr:{LOWLEVEL_NAMES[i]}:{LOWLEVEL_NAMES[j]}" for i, j in POOLED_CORR_PAIRS
        ]
        if h < s or w < s:
            warnings.warn(
                f"image {w}x{h} smaller than {s}x{s} patches; emitting zero planes",
                stacklevel=3,
            )
            block = np.zeros((len(names), grid_h, grid_w), dtype=np.float32)
        else:
            ys = np.arange(0, h - s + 1, pool.cov_patch_stride)
            xs = np.arange(0, w - s + 1, pool.cov_patch_stride)
            var, corr = _grid_moments(ci, ys, xs, s, s)
            vec = np.concatenate([var[list(POOLED_VAR_FEATURES)], corr[list(_POOLED_CORR_SEL)]])
            block = pool_max(
                vec, pool.cov_patch_stride, pool.cov_pool_region, pool.cov_pool_stride,
                grid_h, grid_w,
            )
        pooled_planes.append(block)
        pooled_names.extend(names)

    return raw_planes, raw_names, pooled_planes, pooled_names


def _sp_cov_stack_from_luv(luv: RasterImage, pool: PoolConfig) -> ChannelStack:
    grid_h, grid_w = luv.height // CELL, luv.width // CELL
    if grid_h < 1 or grid_w < 1:
        raise InvalidInput(f"image {luv.width}x{luv.height} smaller than one channel cell")
    luv_planes = [aggregate(luv.plane(i), CELL, "mean") for i in range(3)]
    raw_planes, raw_names, pooled, pooled_names = _sp_cov_planes(
        luv.plane(0), grid_h, grid_w, pool
    )
    data = np.concatenate(
        [np.stack(luv_planes), np.stack(raw_planes)] + pooled, axis=0
    )
    names = ("L", "U", "V", *raw_names, *pooled_names)
    return ChannelStack(data, names)


def sp_cov_stack(img: RasterImage, pool: PoolConfig | None = None) -> ChannelStack:
    """Spatially pooled covariance channels of an RGB image (136 planes)."""
    if img.planes != 3:
        raise InvalidInput(f"sp_cov_stack needs an RGB image, got {img.planes} planes")
    return _sp_cov_stack_from_luv(rgb_to_luv(img), pool or PoolConfig())


def _lbp_patch_histograms(codes: np.ndarray, patch: int, stride: int):
    """58-bin histogram of every patch (stride positions); sentinel codes ignored."""
    h, w = codes.shape
    onehot = np.zeros((LBP_SENTINEL, h, w), dtype=np.float64)
    for c in range(LBP_SENTINEL):
        onehot[c] = codes == c
    tables = _batched_integral(onehot)
    ys = np.arange(0, h - patch + 1, stride)
    xs = np.arange(0, w - patch + 1, stride)
    return _rect_sums(tables, ys, xs, patch, patch), tables


def sp_lbp_stack(l_plane: np.ndarray, pool: PoolConfig | None = None) -> ChannelStack:
    """sp-LBP (58 max-pooled histogram planes) + LBP cell histograms (58 planes)."""
    pool = pool or PoolConfig()
    lum = np.asarray(l_plane, dtype=np.float32)
    if lum.ndim == 3:  # accept a 1-plane RasterImage's data
        lum = lum[0]
    h, w = lum.shape
    grid_h, grid_w = h // CELL, w // CELL
    if grid_h < 1 or grid_w < 1:
        raise InvalidInput(f"plane {w}x{h} smaller than one channel cell")
    codes = lbp_codes(lum).codes
    hists, tables = _lbp_patch_histograms(codes, pool.lbp_patch_size, pool.lbp_patch_stride)
    pooled = pool_max(
        hists.astype(np.float64),
        pool.lbp_patch_stride,
        pool.lbp_pool_region,
        pool.lbp_pool_stride,
        grid_h,
        grid_w,
    )
    cell_anchors_y = np.arange(grid_h) * CELL
    cell_anchors_x = np.arange(grid_w) * CELL
    cell_hist = _rect_sums(tables, cell_anchors_y, cell_anchors_x, CELL, CELL).astype(np.float32)
    names = tuple(f"splbp:{c:02d}" for c in range(LBP_SENTINEL)) + tuple(
        f"lbp:{c:02d}" for c in range(LBP_SENTINEL)
    )
    return ChannelStack(np.concatenate([pooled, cell_hist], axis=0), names)


def _lbp_cell_stack(lum: np.ndarray) -> ChannelStack:
    """Just the 58 per-cell LBP histogram planes (the plain LBP channels)."""
    codes = lbp_codes(lum).codes
    h, w = codes.shape
    grid_h, grid_w = h // CELL, w // CELL
    onehot = np.zeros((LBP_SENTINEL, h, w), dtype=np.float64)
    for c in range(LBP_SENTINEL):
        onehot[c] = codes == c
    tables = _batched_integral(onehot)
    cell_hist = _rect_sums(
        tables, np.arange(grid_h) * CELL, np.arange(grid_w) * CELL, CELL, CELL
    ).astype(np.float32)
    return ChannelStack(cell_hist, tuple(f"lbp:{c:02d}" for c in range(LBP_SENTINEL)))


def assemble(img: RasterImage, config: str, pool: PoolConfig | None = None) -> ChannelStack:
    """Build one of the named channel configurations for an RGB image.

    Plane counts: M+O+LUV+LBP = 68, sp-Cov+LUV = 136, sp-Cov+M+O+LUV = 143,
    sp-Cov+sp-LBP+M+O+LUV = 259.
    """
    if config not in CHANNEL_CONFIGS:
        raise InvalidInput(f"unknown channel config {config!r}; pick one of {CHANNEL_CONFIGS}")
    if img.planes != 3:
        raise InvalidInput(f"assemble needs an RGB image, got {img.planes} planes")
    pool = pool or PoolConfig()
    luv = rgb_to_luv(img)
    lum = luv.plane(0)

    if config == "M+O+LUV+LBP":
        return concat_stacks(acf_channels(luv), _lbp_cell_stack(lum))

    cov = _sp_cov_stack_from_luv(luv, pool)
    if config == "sp-Cov+LUV":
        return cov

    acf = acf_channels(luv)
    mo = ChannelStack(acf.data[3:], acf.names[3:])  # M + 6 orientation planes
    if config == "sp-Cov+M+O+LUV":
        return concat_stacks(cov, mo)
    return concat_stacks(cov, mo, sp_lbp_stack(lum, pool))


# ---------------------------------------------------------------------------
# Debug dump format: text header + plane-major raw float32.
# ---------------------------------------------------------------------------

_DUMP_MAGIC = "CHANSTACK 1"


def dump_stack(stack: ChannelStack, path) -> None:
    header = (
        f"{_DUMP_MAGIC}\n"
        f"dims {stack.grid_w} {stack.grid_h} {stack.count}\n"
        f"names {','.join(stack.names)}\n"
        "end\n"
    )
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(np.ascontiguousarray(stack.data, dtype=np.float32).tobytes())


def load_stack(path) -> ChannelStack:
    with open(path, "rb") as fh:
        blob = fh.read()
    head, _, rest = blob.partition(b"end\n")
    lines = head.decode("ascii").strip().splitlines()
    if lines[0] != _DUMP_MAGIC:
        raise InvalidInput(f"bad stack dump magic in {path}")
    dims = lines[1].split()
    gw, gh, n = int(dims[1]), int(dims[2]), int(dims[3])
    names = tuple(lines[2][len("names ") :].split(","))
    data = np.frombuffer(rest, dtype=np.float32, count=n * gh * gw).reshape(n, gh, gw)
    return ChannelStack(data.copy(), names)
