"""Counter-based random numbers and per-pixel stratified sample streams.

Every uniform variate is a pure hash of (seed, pixel, sample, dimension), so
results never depend on evaluation order, chunking or worker count, and two
renders with the same seed reuse exactly the same random numbers.
"""

from __future__ import annotations

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_C_SAMPLE = np.uint64(0xD1B54A32D192ED03)
_C_DIM = np.uint64(0xAEF17502108EF2D9)
_PERM_DIM = 1 << 20

# dimension layout of a camera path
DIM_PIXEL_X = 0
DIM_PIXEL_Y = 1
DIMS_PER_BOUNCE = 3


def bounce_dims(k: int) -> tuple[int, int, int]:
    """(light choice, direction u1, direction u2) dimensions of bounce k."""
    base = 2 + DIMS_PER_BOUNCE * k
    return base, base + 1, base + 2


def mix64(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.uint64)
    with np.errstate(over="ignore"):
        return _mix(z)


def _mix(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def hash_u64(seed: int, pixel, sample, dim) -> np.ndarray:
    pixel = np.asarray(pixel, dtype=np.uint64)
    sample = np.asarray(sample, dtype=np.uint64)
    with np.errstate(over="ignore"):  # wrap-around is intended
        h = mix64(np.uint64(seed) + _GOLDEN * (pixel + np.uint64(1)))
        h = mix64(h + _C_SAMPLE * (sample + np.uint64(1)))
        return mix64(h + _C_DIM * np.uint64(dim + 1))


def uniform(seed: int, pixel, sample, dim) -> np.ndarray:
    """Uniform variates in [0, 1) with 53 random bits."""
    return (hash_u64(seed, pixel, sample, dim) >> np.uint64(11)).astype(np.float64) * (2.0 ** -53)


class PixelSampler:
    """Stratified uniforms for ``spp`` samples in each of ``pixels``.

    For every dimension the spp samples of a pixel fall in distinct strata
    of [0, 1); a per-pixel, per-dimension hashed permutation decides which
    sample gets which stratum, so each variate is still marginally uniform
    (a Latin-hypercube design per pixel). Arrays are flattened pixel-major:
    entry ``i * spp + s`` is sample s of pixel ``pixels[i]``.
    """

    def __init__(self, seed: int, pixels, spp: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.pixels = np.asarray(pixels, dtype=np.int64).reshape(-1)
        self.spp = int(spp)
        self._s = np.arange(self.spp, dtype=np.int64)

    def __len__(self) -> int:
        return self.pixels.size * self.spp

    def get(self, dim: int) -> np.ndarray:
        p = self.pixels[:, None]
        s = self._s[None, :]
        jitter = uniform(self.seed, p, s, dim)
        if self.spp == 1:
            return jitter.reshape(-1)
        keys = hash_u64(self.seed, p, s, dim + _PERM_DIM)
        stratum = np.argsort(keys, axis=1, kind="stable")
        return ((stratum + jitter) / self.spp).reshape(-1)

    def subset(self, index: np.ndarray) -> "SampleView":
        return SampleView(self, index)


class SampleView:
    """A sampler restricted to a subset of its flattened sample slots."""

    def __init__(self, sampler: PixelSampler, index: np.ndarray):
        self.sampler = sampler
        self.index = np.asarray(index, dtype=np.int64)

    def get(self, dim: int) -> np.ndarray:
        return self.sampler.get(dim)[self.index]
