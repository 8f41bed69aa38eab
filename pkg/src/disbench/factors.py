"""Ground-truth generative models over discrete factor grids.

The default model, *micro-sprites*, draws a single white shape on a black
16x16 canvas.  Five factors: shape (square, ellipse, triangle), scale (4),
orientation (8), x position (8), y position (8) -- 6144 distinct images.
Edges are anti-aliased by rendering at 4x resolution and box-averaging.

Three stochastic variants change the nuisance content, never the shape:

``color``  per-channel brightness drawn from U(0.5, 1) for every sample
``noise``  background pixels replaced by U(0, 1) noise
``patch``  background replaced by a random crop of a fixed procedural
           texture, colour-shifted and halved; the shape is drawn by
           inverting the texture underneath it
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import ConfigurationError, InputError, ParseError

VARIANTS = ("none", "color", "noise", "patch")
SUPERSAMPLE = 4

MICRO_SPRITES_FACTORS = ("shape", "scale", "orientation", "pos_x", "pos_y")
MICRO_SPRITES_CARDINALITIES = (3, 4, 8, 8, 8)


@dataclass(frozen=True)
class FactorSpace:
    cardinalities: tuple
    names: tuple = ()

    def __post_init__(self):
        cards = tuple(int(c) for c in self.cardinalities)
        if len(cards) < 2:
            raise ConfigurationError("a factor space needs at least two factors")
        if any(c < 2 for c in cards):
            raise ConfigurationError(f"every factor needs >= 2 values, got {cards}")
        names = tuple(self.names) or tuple(f"factor_{k}" for k in range(len(cards)))
        if len(names) != len(cards):
            raise ConfigurationError("one name per factor is required")
        object.__setattr__(self, "cardinalities", cards)
        object.__setattr__(self, "names", names)

    @property
    def num_factors(self):
        return len(self.cardinalities)

    @property
    def size(self):
        return math.prod(self.cardinalities)

    def check(self, factors):
        factors = np.asarray(factors)
        if factors.ndim == 1:
            factors = factors[None, :]
        if factors.shape[1] != self.num_factors:
            raise InputError(f"expected {self.num_factors} factors, got {factors.shape[1]}")
        if not np.issubdtype(factors.dtype, np.integer):
            if not np.all(factors == np.round(factors)):
                raise InputError("factor values must be integers")
            factors = factors.astype(np.int64)
        high = np.asarray(self.cardinalities)
        bad = (factors < 0) | (factors >= high)
        if bad.any():
            row, col = np.argwhere(bad)[0]
            raise InputError(f"factor {col} value {factors[row, col]} outside [0, {high[col]})")
        return factors

    def flat_index(self, factors):
        return np.ravel_multi_index(tuple(np.asarray(factors).T), self.cardinalities)

    def all_factors(self):
        grids = np.meshgrid(*[np.arange(c) for c in self.cardinalities], indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=1)

    def entropies(self):
        """Exact entropy (nats) of each uniformly distributed factor."""
        return np.log(np.asarray(self.cardinalities, dtype=np.float64))


class GroundTruth:
    """Base class: a factor space plus a (possibly stochastic) observation map.

    Subclasses implement :meth:`observe`.  All randomness comes from the
    ``rng`` passed in, a :class:`numpy.random.Generator`.
    """

    factor_space: FactorSpace

    @property
    def num_factors(self):
        return self.factor_space.num_factors

    def observe(self, factors, rng):
        raise NotImplementedError

    def sample_factors(self, n, rng):
        if n < 1:
            raise InputError("n must be >= 1")
        cards = self.factor_space.cardinalities
        return np.stack([rng.integers(0, c, size=n) for c in cards], axis=1).astype(np.int64)

    def sample(self, n, rng):
        factors = self.sample_factors(n, rng)
        return factors, self.observe(factors, rng)

    def sample_fixed_factor(self, n, factor_index, value, rng):
        if not 0 <= factor_index < self.num_factors:
            raise InputError(f"factor index {factor_index} out of range")
        if not 0 <= value < self.factor_space.cardinalities[factor_index]:
            raise InputError(f"value {value} out of range for factor {factor_index}")
        factors = self.sample_factors(n, rng)
        factors[:, factor_index] = value
        return factors, self.observe(factors, rng)


class FactorObservations(GroundTruth):
    """Observations are the factor values themselves (as floats).

    Paired with an identity encoder this gives the "perfectly disentangled"
    oracle representation used to sanity-check the metrics.
    """

    def __init__(self, factor_space: FactorSpace):
        self.factor_space = factor_space

    @property
    def observation_shape(self):
        return (self.factor_space.num_factors,)

    def observe(self, factors, rng=None):
        return self.factor_space.check(factors).astype(np.float64)


# -- micro-sprites rasterisation ------------------------------------------------

def _sprite_geometry(resolution):
    scales = np.linspace(0.14, 0.23, 4) * resolution
    orientations = np.arange(8) * (math.pi / 2) / 8
    positions = np.linspace(0.27, 0.73, 8) * resolution
    return scales, orientations, positions


def _coverage(shape, radius, angle, cx, cy, resolution):
    n = resolution * SUPERSAMPLE
    coords = (np.arange(n) + 0.5) / SUPERSAMPLE
    px, py = np.meshgrid(coords, coords, indexing="xy")
    dx, dy = px - cx, py - cy
    c, s = math.cos(angle), math.sin(angle)
    u = c * dx + s * dy
    w = -s * dx + c * dy
    if shape == 0:
        half = 0.85 * radius
        inside = (np.abs(u) <= half) & (np.abs(w) <= half)
    elif shape == 1:
        inside = (u / radius) ** 2 + (w / (0.5 * radius)) ** 2 <= 1.0
    else:
        inside = np.ones_like(u, dtype=bool)
        for phi in (-math.pi / 2, math.pi / 6, 5 * math.pi / 6):
            inside &= u * math.cos(phi) + w * math.sin(phi) <= 0.5 * radius
    fine = inside.astype(np.float64)
    return fine.reshape(resolution, SUPERSAMPLE, resolution, SUPERSAMPLE).mean(axis=(1, 3))


def render_sprite(z, resolution=16):
    """Deterministic grayscale image for one micro-sprites factor vector."""
    shape, scale, orient, x, y = (int(v) for v in z)
    scales, orientations, positions = _sprite_geometry(resolution)
    return _coverage(shape, scales[scale], orientations[orient], positions[x], positions[y], resolution)


def procedural_texture(size=64):
    """Fixed RGB texture in [0, 1]: three oblique sinusoidal colour bands."""
    i, j = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    bands = ((3.0, 0.3), (5.0, 1.9), (7.0, 3.6))
    phases = np.array([[0.0, 2.1, 4.2], [1.3, 3.4, 5.5], [2.6, 4.7, 0.4]])
    out = np.zeros((size, size, 3))
    for b, (freq, direction) in enumerate(bands):
        ramp = 2 * math.pi * freq * (i * math.cos(direction) + j * math.sin(direction)) / size
        for c in range(3):
            out[..., c] += np.sin(ramp + phases[b, c])
    return 0.5 + out / 6.0


def foreground_mask(base):
    return base > 0.0


def apply_variant(base, variant, rng, texture=None):
    """Apply a stochastic observation variant to single-channel base renders.

    ``base`` has shape (n, H, W) or (n, H, W, 1); returns (n, H, W, C).
    """
    if variant not in VARIANTS:
        raise ConfigurationError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    base = np.asarray(base, dtype=np.float64)
    if base.ndim == 4:
        if base.shape[-1] != 1:
            raise InputError("variants apply to single-channel renders")
        base = base[..., 0]
    if base.ndim != 3:
        raise InputError("base must have shape (n, H, W)")
    n, h, w = base.shape
    if variant == "none":
        return base[..., None].copy()
    if variant == "color":
        scale = rng.uniform(0.5, 1.0, size=(n, 1, 1, 3))
        return base[..., None] * scale
    mask = foreground_mask(base)
    if variant == "noise":
        noise = rng.uniform(0.0, 1.0, size=base.shape)
        return np.where(mask, base, noise)[..., None]
    texture = procedural_texture() if texture is None else texture
    th, tw = texture.shape[:2]
    rows = rng.integers(0, th - h + 1, size=n)
    cols = rng.integers(0, tw - w + 1, size=n)
    shift = rng.uniform(0.0, 1.0, size=(n, 1, 1, 3))
    patches = np.stack([texture[r:r + h, c:c + w] for r, c in zip(rows, cols)])
    patches = (patches + shift) / 2.0
    return np.where(mask[..., None], 1.0 - patches, patches)


class MicroSprites(GroundTruth):
    """The default desk-scale ground-truth model."""

    def __init__(self, variant="none", resolution=16):
        if variant not in VARIANTS:
            raise ConfigurationError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
        self.variant = variant
        self.resolution = int(resolution)
        self.factor_space = FactorSpace(MICRO_SPRITES_CARDINALITIES, MICRO_SPRITES_FACTORS)

    @property
    def channels(self):
        return 3 if self.variant in ("color", "patch") else 1

    @property
    def observation_shape(self):
        return (self.resolution, self.resolution, self.channels)

    @property
    def observation_width(self):
        return self.resolution * self.resolution * self.channels

    @cached_property
    def base_images(self):
        """All grid renders, indexed by flat factor index."""
        grid = self.factor_space.all_factors()
        return np.stack([render_sprite(z, self.resolution) for z in grid])

    @cached_property
    def _texture(self):
        return procedural_texture()

    def render_base(self, factors):
        factors = self.factor_space.check(factors)
        return self.base_images[self.factor_space.flat_index(factors)]

    def observe(self, factors, rng=None):
        base = self.render_base(factors)
        if self.variant == "none":
            return base[..., None].copy()
        if rng is None:
            raise InputError(f"variant {self.variant!r} is stochastic and needs an rng")
        return apply_variant(base, self.variant, rng, texture=self._texture)

    def render(self, z, rng=None):
        """Render a single factor vector to an (H, W, C) observation."""
        return self.observe(np.asarray(z)[None, :], rng)[0]


def make_ground_truth(name="micro_sprites", variant="none"):
    if name == "micro_sprites":
        return MicroSprites(variant=variant)
    if name == "factor_oracle":
        return FactorObservations(FactorSpace(MICRO_SPRITES_CARDINALITIES, MICRO_SPRITES_FACTORS))
    raise ConfigurationError(f"unknown ground-truth model {name!r}")


# -- external tables ----------------------------------------------------------

def export_external_table(path, factors, representations):
    factors = np.asarray(factors)
    representations = np.asarray(representations, dtype=np.float64)
    if factors.shape[0] != representations.shape[0]:
        raise InputError("factor and representation row counts differ")
    header = [f"factor_{k}" for k in range(factors.shape[1])]
    header += [f"rep_{j}" for j in range(representations.shape[1])]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for f_row, r_row in zip(factors, representations):
            writer.writerow([str(int(v)) for v in f_row] + [repr(float(v)) for v in r_row])


def _parse_header(header):
    k = 0
    while k < len(header) and header[k] == f"factor_{k}":
        k += 1
    reps = header[k:]
    if k == 0 or not reps or any(name != f"rep_{j}" for j, name in enumerate(reps)):
        raise ParseError(
            "header must be factor_0..factor_{K-1} followed by rep_0..rep_{D-1}", line=1)
    return k, len(reps)


def load_external_table(path):
    """Read a factor/representation CSV. Returns (factors int64, reps float64)."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ParseError("empty file", line=1)
    k, d = _parse_header([c.strip() for c in rows[0]])
    factors, reps = [], []
    for line, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != k + d:
            raise ParseError(f"row has {len(row)} columns, expected {k + d}", line=line)
        try:
            f_vals = [int(v) for v in row[:k]]
        except ValueError:
            raise ParseError(f"non-integer factor value in {row[:k]}", line=line) from None
        try:
            r_vals = [float(v) for v in row[k:]]
        except ValueError:
            raise ParseError(f"non-numeric representation value in {row[k:]}", line=line) from None
        factors.append(f_vals)
        reps.append(r_vals)
    if not factors:
        raise ParseError("no data rows", line=2)
    return np.asarray(factors, dtype=np.int64), np.asarray(reps, dtype=np.float64)


class TableGroundTruth:
    """Factor/representation pairs read from a table (no generative access)."""

    def __init__(self, factors, representations):
        self.factors = np.asarray(factors, dtype=np.int64)
        self.representations = np.asarray(representations, dtype=np.float64)
        cards = tuple(int(c) for c in self.factors.max(axis=0) + 1)
        self.factor_space = FactorSpace(tuple(max(c, 2) for c in cards))

    @classmethod
    def from_csv(cls, path):
        return cls(*load_external_table(path))
