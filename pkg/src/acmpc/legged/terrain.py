"""Piecewise-constant height fields with a smooth surface for constraints."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import ContractError


def _sigmoid(t):
    return 0.5 * (1.0 + np.tanh(0.5 * t))


@dataclass(frozen=True)
class Terrain:
    """Height field made of strips along x: ``heights[k]`` holds on ``edges[k-1] <= x < edges[k]``.

    ``height`` blends neighbouring strips with logistic ramps of total width
    ``width`` so the non-penetration row has gradients at edges. Each ramp is
    shifted by ``width/4`` toward the lower strip, so a foot above the raw top
    corner still sees most of the rise.
    """

    edges: tuple = ()
    heights: tuple = (0.0,)
    width: float = 0.02

    def __post_init__(self):
        if len(self.heights) != len(self.edges) + 1:
            raise ContractError("terrain needs len(heights) == len(edges) + 1")
        if any(b <= a for a, b in zip(self.edges, self.edges[1:])):
            raise ContractError("terrain edges must be increasing")
        if self.width <= 0:
            raise ContractError("terrain smoothing width must be positive")

    @classmethod
    def flat(cls, height: float = 0.0) -> "Terrain":
        return cls((), (float(height),))

    def raw_height(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        k = np.searchsorted(np.asarray(self.edges, dtype=float), x, side="right")
        return np.asarray(self.heights, dtype=float)[k]

    def height(self, xy, grad: bool = False):
        """Smoothed height at points ``xy`` (..., 2); with grad also (dh/dx, dh/dy)."""
        xy = np.asarray(xy, dtype=float)
        x = xy[..., 0]
        h = np.full(x.shape, float(self.heights[0]))
        dh = np.zeros(x.shape)
        s = self.width / 10.0
        for e, lo, hi in zip(self.edges, self.heights[:-1], self.heights[1:]):
            jump = hi - lo
            center = e - np.sign(jump) * self.width / 4.0
            t = (x - center) / s
            sig = _sigmoid(t)
            h = h + jump * sig
            if grad:
                dh = dh + jump * sig * (1.0 - sig) / s
        if not grad:
            return h
        return h, np.stack([dh, np.zeros_like(dh)], -1)

    def edge_distance(self, x) -> np.ndarray:
        """Distance along x to the nearest height discontinuity (inf if none)."""
        x = np.asarray(x, dtype=float)
        if not self.edges:
            return np.full(x.shape, np.inf)
        e = np.asarray(self.edges, dtype=float)
        return np.min(np.abs(x[..., None] - e), axis=-1)

    def supported(self, x, floor: float = -0.5) -> np.ndarray:
        """True where the raw surface is walkable (above ``floor``)."""
        return self.raw_height(x) > floor

    def to_dict(self) -> dict:
        return {"edges": list(self.edges), "heights": list(self.heights), "width": self.width}
