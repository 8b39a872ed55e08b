"""Per-pixel feature planes: the 9-statistic stack, ACF-style channels and LBP codes."""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import InvalidInput
from .imgcore import RasterImage, aggregate, gradient, second_derivative

LOWLEVEL_NAMES = ("x", "y", "absIx", "absIy", "absIxx", "absIyy", "mag", "ori1", "ori2")
N_ORIENT_BINS = 6
LBP_SENTINEL = 58


@dataclass(frozen=True)
class LowLevelStack:
    """The 9 per-pixel statistics [x, y, |Ix|, |Iy|, |Ixx|, |Iyy|, M, O1, O2]."""

    data: np.ndarray  # (9, h, w) float32

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class LbpCodeMap:
    """Uniform-LBP code per pixel: 0..57, or 58 for non-uniform and border pixels."""

    codes: np.ndarray  # (h, w) uint8


@dataclass(frozen=True)
class ChannelStack:
    """Named feature planes on the quarter-resolution channel grid."""

    data: np.ndarray  # (planes, grid_h, grid_w) float32
    names: tuple

    def __post_init__(self):
        if self.data.ndim != 3:
            raise InvalidInput(f"expected (planes, gh, gw), got {self.data.shape}")
        if len(self.names) != self.data.shape[0]:
            raise InvalidInput(
                f"{len(self.names)} names for {self.data.shape[0]} planes"
            )
        arr = np.ascontiguousarray(self.data, dtype=np.float32)
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "names", tuple(self.names))

    @property
    def count(self) -> int:
        return self.data.shape[0]

    @property
    def grid_h(self) -> int:
        return self.data.shape[1]

    @property
    def grid_w(self) -> int:
        return self.data.shape[2]


def concat_stacks(*stacks: ChannelStack) -> ChannelStack:
    dims = {(s.grid_h, s.grid_w) for s in stacks}
    if len(dims) != 1:
        raise InvalidInput(f"cannot concatenate stacks with grids {sorted(dims)}")
    return ChannelStack(
        np.concatenate([s.data for s in stacks], axis=0),
        tuple(n for s in stacks for n in s.names),
    )


def lowlevel9(gray_plane: np.ndarray) -> LowLevelStack:
    """Build the 9-feature stack from a single gray/luminance plane.

    O1 = arctan(|Ix|/|Iy|) in [0, pi/2] (pi/2 when Iy = 0 and Ix != 0, 0 when
    both vanish).  O2 is atan2(Iy, Ix) folded into (0, pi].
    """
    p = np.asarray(gray_plane, dtype=np.float32)
    if p.ndim != 2:
        raise InvalidInput("lowlevel9 expects a single 2-D plane")
    h, w = p.shape
    ix, iy = gradient(p)
    ixx, iyy = second_derivative(p)
    mag = np.hypot(ix, iy)
    o1 = np.arctan2(np.abs(ix), np.abs(iy)).astype(np.float32)
    o2 = np.arctan2(iy, ix)
    o2 = np.where(o2 > 0.0, o2, o2 + np.float32(np.pi)).astype(np.float32)
    xs = np.broadcast_to(np.arange(w, dtype=np.float32), (h, w))
    ys = np.broadcast_to(np.arange(h, dtype=np.float32)[:, None], (h, w))
    stack = np.stack([xs, ys, np.abs(ix), np.abs(iy), np.abs(ixx), np.abs(iyy), mag, o1, o2])
    return LowLevelStack(stack.astype(np.float32))


def orientation_votes(mag: np.ndarray, o2: np.ndarray) -> np.ndarray:
    """Soft-bin gradient magnitude into N_ORIENT_BINS planes over [0, pi].

    Each pixel splits its magnitude linearly between the two nearest bin
    centers (wrapping, since orientations are periodic mod pi), so the planes
    sum to the magnitude at every pixel.
    """
    binwidth = np.pi / N_ORIENT_BINS
    c = o2.astype(np.float64) / binwidth - 0.5
    lo = np.floor(c)
    frac = (c - lo).astype(np.float32)
    lo = lo.astype(np.int64) % N_ORIENT_BINS
    hi = (lo + 1) % N_ORIENT_BINS
    w_lo = mag * (1.0 - frac)
    w_hi = mag * frac
    votes = np.zeros((N_ORIENT_BINS,) + mag.shape, dtype=np.float32)
    for b in range(N_ORIENT_BINS):
        votes[b] = np.where(lo == b, w_lo, 0.0) + np.where(hi == b, w_hi, 0.0)
    return votes


def acf_channels(luv_img: RasterImage) -> ChannelStack:
    """LUV + gradient magnitude + soft orientation histogram, at 1/4 resolution."""
    if luv_img.planes != 3:
        raise InvalidInput(f"acf_channels needs a 3-plane LUV image, got {luv_img.planes}")
    lum = luv_img.plane(0)
    ix, iy = gradient(lum)
    mag = np.hypot(ix, iy)
    o2 = np.arctan2(iy, ix)
    o2 = np.where(o2 > 0.0, o2, o2 + np.float32(np.pi))
    votes = orientation_votes(mag, o2)
    planes = [aggregate(luv_img.plane(i), 4, "mean") for i in range(3)]
    planes.append(aggregate(mag, 4, "mean"))
    planes.extend(aggregate(votes[b], 4, "mean") for b in range(N_ORIENT_BINS))
    names = ("L", "U", "V", "M") + tuple(f"O{b}" for b in range(N_ORIENT_BINS))
    return ChannelStack(np.stack(planes), names)


@lru_cache(maxsize=1)
def uniform_mapping() -> np.ndarray:
    """Map each byte to its uniform-pattern index (0..57) or the sentinel 58.

    A byte is uniform when its circular bit string has at most two 0/1
    transitions; indices are assigned in ascending byte order.
    """
    table = np.full(256, LBP_SENTINEL, dtype=np.uint8)
    nxt = 0
    for byte in range(256):
        rotated = ((byte >> 1) | (byte << 7)) & 0xFF
        transitions = bin(byte ^ rotated).count("1")
        if transitions <= 2:
            table[byte] = nxt
            nxt += 1
    table.setflags(write=False)
    return table


# Neighbors clockwise from the top-left; the first neighbor is the high bit.
_LBP_OFFSETS = ((-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1))


def lbp_codes(l_plane: np.ndarray) -> LbpCodeMap:
    """Uniform-LBP codes: neighbor >= center sets the bit; borders get the sentinel."""
    p = np.asarray(l_plane, dtype=np.float32)
    if p.ndim != 2 or p.shape[0] < 3 or p.shape[1] < 3:
        raise InvalidInput(f"lbp_codes needs at least a 3x3 plane, got {p.shape}")
    h, w = p.shape
    center = p[1 : h - 1, 1 : w - 1]
    byte = np.zeros(center.shape, dtype=np.uint8)
    for k, (dy, dx) in enumerate(_LBP_OFFSETS):
        nb = p[1 + dy : h - 1 + dy, 1 + dx : w - 1 + dx]
        byte |= (nb >= center).astype(np.uint8) << (7 - k)
    codes = np.full((h, w), LBP_SENTINEL, dtype=np.uint8)
    codes[1 : h - 1, 1 : w - 1] = uniform_mapping()[byte]
    return LbpCodeMap(codes)
