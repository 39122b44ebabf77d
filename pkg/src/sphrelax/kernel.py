"""Wendland C2 smoothing kernel with compact support 2h."""

from __future__ import annotations

import math

import numpy as np

_NORMALIZATION = {
    1: lambda h: 3.0 / (4.0 * h),
    2: lambda h: 7.0 / (4.0 * math.pi * h**2),
    3: lambda h: 21.0 / (16.0 * math.pi * h**3),
}


class WendlandC2:
    """Wendland C2 kernel ``W(q) = sigma (1 - q/2)^4 (1 + 2q)`` with ``q = r/h``.

    Parameters
    ----------
    h : float
        Smoothing length.
    dim : int
        Spatial dimension (1, 2 or 3).
    """

    def __init__(self, h: float, dim: int):
        if not h > 0.0:
            raise ValueError(f"smoothing length must be positive, got {h}")
        if dim not in _NORMALIZATION:
            raise ValueError(f"dimension must be 1, 2 or 3, got {dim}")
        self.h = float(h)
        self.dim = int(dim)
        self.normalization = _NORMALIZATION[dim](self.h)

    @property
    def support_radius(self) -> float:
        return 2.0 * self.h

    def __repr__(self):
        return f"WendlandC2(h={self.h!r}, dim={self.dim})"

    def _q(self, r):
        r = np.asarray(r, dtype=float)
        if np.any(r < 0.0):
            raise ValueError("distance must be non-negative")
        return np.minimum(r / self.h, 2.0)

    def value(self, r):
        """Kernel weight at distance ``r``; zero for ``r >= 2h``."""
        q = self._q(r)
        w = self.normalization * (1.0 - 0.5 * q) ** 4 * (1.0 + 2.0 * q)
        return w if w.ndim else float(w)

    def grad_mag(self, r):
        """Radial derivative dW/dr (non-positive)."""
        q = self._q(r)
        dw = -5.0 * self.normalization / self.h * q * (1.0 - 0.5 * q) ** 3
        return dw if dw.ndim else float(dw)


def smoothing_length(dp: float, ratio: float = 1.3) -> float:
    return ratio * dp
