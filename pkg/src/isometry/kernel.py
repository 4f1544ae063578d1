"""Effective kernel size of a zero-padded 2D convolution.

Padding puts part of the kernel on zeros for border output positions, so the
expanded (Toeplitz) transform has fewer kernel entries per row than
``k_h * k_w``. :func:`effective_kernel_size` counts them with the border
accounting (total minus cut strips plus doubly-cut corners);
:func:`brute_force_kernel_oracle` builds the expanded matrix and counts.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BudgetError, SpecError

ORACLE_MAX_PIXELS = 10_000


@dataclass(frozen=True)
class ConvGeometry:
    k_h: int
    k_w: int
    s_h: int = 1
    s_w: int = 1
    p_h: int = 0
    p_w: int = 0
    h_in: int = 1
    w_in: int = 1

    def __post_init__(self):
        for name in ("k_h", "k_w", "s_h", "s_w", "h_in", "w_in"):
            if int(getattr(self, name)) < 1:
                raise SpecError(f"{name} must be >= 1, got {getattr(self, name)}", name)
        for name, k in (("p_h", self.k_h), ("p_w", self.k_w)):
            p = getattr(self, name)
            if p < 0:
                raise SpecError(f"{name} must be >= 0, got {p}", name)
            if p >= k:
                raise SpecError(f"{name}={p} must be smaller than the kernel extent {k}", name)
        if self.h_out < 1 or self.w_out < 1:
            raise SpecError(
                f"output size {self.h_out}x{self.w_out} < 1 for input "
                f"{self.h_in}x{self.w_in}, kernel {self.k_h}x{self.k_w}, padding {self.p_h}x{self.p_w}"
            )

    @property
    def h_out(self) -> int:
        return (self.h_in + 2 * self.p_h - self.k_h) // self.s_h + 1

    @property
    def w_out(self) -> int:
        return (self.w_in + 2 * self.p_w - self.k_w) // self.s_w + 1


def _side_cuts(k: int, s: int, p: int, n_in: int, n_out: int):
    """Per-output-index counts of kernel rows falling in the leading and trailing padding.

    Returns two lists of (count) for the leading and trailing border strips;
    entries are clamped to [0, k] and iteration counts to [0, n_out].
    """
    # outputs whose window does not overrun the trailing edge
    n_clear = (n_in + p - k) // s + 1
    n_clear = min(max(n_clear, 0), n_out)
    it_lead = min(p // s + 1, n_out)
    it_trail = n_out - n_clear

    lead = [min(k, max(0, p - i * s)) for i in range(it_lead)]
    trail = [min(k, max(0, s * (i + n_clear) + k - n_in - p)) for i in range(it_trail)]
    return lead, trail


def effective_kernel_size(geom: ConvGeometry) -> float:
    """Average number of kernel entries per expanded-matrix row that hit real input."""
    g = geom
    h_out, w_out = g.h_out, g.w_out
    upper, lower = _side_cuts(g.k_h, g.s_h, g.p_h, g.h_in, h_out)
    left, right = _side_cuts(g.k_w, g.s_w, g.p_w, g.w_in, w_out)

    total = g.k_h * g.k_w * h_out * w_out
    cut = 0
    corners = 0
    cols = left + right
    for rows_cut in upper + lower:
        cut += rows_cut * w_out * g.k_w
        corners += rows_cut * sum(cols)
    for cols_cut in cols:
        cut += cols_cut * h_out * g.k_h
    return (total - cut + corners) / total * g.k_h * g.k_w


def conv_toeplitz(kernel: np.ndarray, geom: ConvGeometry) -> np.ndarray:
    """Expand a (c_out, c_in, k_h, k_w) kernel into its dense transform matrix.

    Rows are indexed by (c_out, y_out, x_out) and columns by (c_in, y_in, x_in),
    both in C order, so ``T @ x.ravel()`` equals the zero-padded cross-correlation.
    """
    kernel = np.asarray(kernel)
    if kernel.ndim != 4 or kernel.shape[2:] != (geom.k_h, geom.k_w):
        raise SpecError(f"kernel shape {kernel.shape} does not match geometry {geom.k_h}x{geom.k_w}")
    c_out, c_in = kernel.shape[:2]
    g = geom
    h_out, w_out = g.h_out, g.w_out
    n_rows = h_out * w_out
    n_cols = g.h_in * g.w_in

    oy, ox, ky, kx = np.meshgrid(
        np.arange(h_out), np.arange(w_out), np.arange(g.k_h), np.arange(g.k_w), indexing="ij"
    )
    iy = oy * g.s_h - g.p_h + ky
    ix = ox * g.s_w - g.p_w + kx
    valid = (iy >= 0) & (iy < g.h_in) & (ix >= 0) & (ix < g.w_in)
    rows = (oy * w_out + ox)[valid]
    cols = (iy * g.w_in + ix)[valid]
    taps = (ky * g.k_w + kx)[valid]

    dtype = kernel.dtype if np.issubdtype(kernel.dtype, np.number) else np.float64
    out = np.zeros((c_out, n_rows, c_in, n_cols), dtype=dtype)
    flat = kernel.reshape(c_out, c_in, -1)
    # each (row, col) pair is hit by exactly one tap, so fancy assignment is safe
    out[:, rows, :, cols] = flat[:, :, taps].transpose(2, 0, 1)
    return out.reshape(c_out * n_rows, c_in * n_cols)


def brute_force_kernel_oracle(geom: ConvGeometry) -> float:
    if geom.h_in * geom.w_in > ORACLE_MAX_PIXELS:
        raise BudgetError(
            f"oracle limited to {ORACLE_MAX_PIXELS} input pixels, got {geom.h_in * geom.w_in}"
        )
    # distinct non-zero taps, so every surviving entry shows up as a non-zero
    n_taps = geom.k_h * geom.k_w
    dtype = np.int16 if n_taps < 2**15 else np.int32
    taps = np.arange(1, n_taps + 1, dtype=dtype).reshape(1, 1, geom.k_h, geom.k_w)
    t = conv_toeplitz(taps, geom)
    return float(np.count_nonzero(t, axis=1).mean())
