"""Truncated orthonormal DCT-II over the time axis of a motion."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError

ENCODER_DCT_COMPONENTS = 10
DIFFUSION_DCT_COMPONENTS = 20


@dataclass(frozen=True)
class DctBasis:
    """First ``m_components`` rows of the orthonormal DCT-II matrix over ``frame_count`` points."""

    matrix: np.ndarray

    @property
    def m_components(self) -> int:
        return self.matrix.shape[0]

    @property
    def frame_count(self) -> int:
        return self.matrix.shape[1]


def build_dct_basis(m: int, h: int) -> DctBasis:
    if not (1 <= m <= h):
        raise ContractError(f"need 1 <= m <= h, got m={m}, h={h}")
    k = np.arange(m)[:, None]
    n = np.arange(h)[None, :]
    t = np.sqrt(2.0 / h) * np.cos(np.pi * (n + 0.5) * k / h)
    t[0] = 1.0 / np.sqrt(h)
    t.setflags(write=False)
    return DctBasis(t)


def dct_encode(basis: DctBasis, motion) -> np.ndarray:
    """``C = T X``; works on a single (H, D) motion or a (B, H, D) stack."""
    x = np.asarray(motion, dtype=np.float64)
    if x.ndim not in (2, 3) or x.shape[-2] != basis.frame_count:
        raise ContractError(f"motion with {basis.frame_count} frames expected, got shape {x.shape}")
    return basis.matrix @ x


def idct_decode(basis: DctBasis, coeffs) -> np.ndarray:
    """``X = T^T C``; the least-squares low-pass reconstruction when M < H."""
    c = np.asarray(coeffs, dtype=np.float64)
    if c.ndim not in (2, 3) or c.shape[-2] != basis.m_components:
        raise ContractError(f"coefficients with {basis.m_components} rows expected, got shape {c.shape}")
    return basis.matrix.T @ c


def lowpass(basis: DctBasis, motion) -> np.ndarray:
    return idct_decode(basis, dct_encode(basis, motion))
