"""Multinomial behavior models over the triangular (start_frac, stay_frac) bin space.

A view is summarized by two fractions of its broadcast's duration: where it
started and how long it stayed.  Because start + stay <= 1, discretizing each
axis into H bins yields a triangular sample space of H*(H+1)/2 feasible cells.
Broadcasts and duration brackets are both modeled as multinomial distributions
over those cells; deviance between them is KL divergence in bits.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field

import numpy as np


class InvalidFeatureError(ValueError):
    """Raised when a (start_frac, stay_frac) pair lies outside the feasible triangle."""


class EmptyDistributionError(ValueError):
    """Raised when normalizing a histogram with no mass and no pseudocount."""


class DivergenceUndefinedError(ValueError):
    """Raised when q has zero mass on a cell where p has positive mass."""


def n_cells(H: int) -> int:
    return H * (H + 1) // 2


@functools.lru_cache(maxsize=None)
def feasible_cells(H: int) -> tuple[tuple[int, int], ...]:
    """All (X, Y) cells with X, Y in {1..H} and X + Y <= H + 1, row-major in X."""
    return tuple((x, y) for x in range(1, H + 1) for y in range(1, H + 2 - x))


@functools.lru_cache(maxsize=None)
def cell_index(H: int) -> dict[tuple[int, int], int]:
    return {cell: i for i, cell in enumerate(feasible_cells(H))}


def bin_feature(start_frac: float, stay_frac: float, H: int) -> tuple[int, int]:
    """Discretize a fractional (start, stay) pair into its 1-based (X, Y) cell.

    X = floor(start*H) + 1 and Y = floor(stay*H) + 1, with Y clamped so that
    stay_frac = 1 stays in bin H and boundary features (e.g. start = stay = 0.5
    exactly) stay inside the feasible triangle X + Y <= H + 1.
    """
    if H < 1:
        raise InvalidFeatureError(f"H must be positive, got {H}")
    if not (0.0 <= start_frac < 1.0):
        raise InvalidFeatureError(f"start_frac out of [0,1): {start_frac}")
    if not (0.0 < stay_frac <= 1.0):
        raise InvalidFeatureError(f"stay_frac out of (0,1]: {stay_frac}")
    if start_frac + stay_frac > 1.0 + 1e-12:
        raise InvalidFeatureError(
            f"start_frac + stay_frac > 1: {start_frac} + {stay_frac}"
        )
    x = int(start_frac * H) + 1
    y = min(int(stay_frac * H), H - 1, H - x) + 1
    return x, y


@dataclass
class TriHistogram:
    """Integer counts over the feasible triangle, dense in feasible-cell order."""

    H: int
    counts: np.ndarray = None  # shape (n_cells(H),), int64

    def __post_init__(self):
        if self.counts is None:
            self.counts = np.zeros(n_cells(self.H), dtype=np.int64)
        else:
            self.counts = np.asarray(self.counts, dtype=np.int64)
            if self.counts.shape != (n_cells(self.H),):
                raise ValueError("counts shape does not match H")
            if (self.counts < 0).any():
                raise ValueError("negative counts")

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def count(self, X: int, Y: int) -> int:
        return int(self.counts[cell_index(self.H)[(X, Y)]])

    def add(self, X: int, Y: int, n: int = 1) -> None:
        self.counts[cell_index(self.H)[(X, Y)]] += n

    def merged(self, other: "TriHistogram") -> "TriHistogram":
        """Cell-wise sum; normalizing the result gives the view-weighted mixture."""
        if other.H != self.H:
            raise ValueError("histogram H mismatch")
        return TriHistogram(self.H, self.counts + other.counts)

    def copy(self) -> "TriHistogram":
        return TriHistogram(self.H, self.counts.copy())


@dataclass(frozen=True)
class TriDistribution:
    """Immutable multinomial over the feasible triangle."""

    H: int
    mass: np.ndarray  # shape (n_cells(H),), sums to 1
    smoothed: bool = False

    def __post_init__(self):
        m = np.asarray(self.mass, dtype=np.float64)
        object.__setattr__(self, "mass", m)
        if m.shape != (n_cells(self.H),):
            raise ValueError("mass shape does not match H")
        if (m < 0).any():
            raise ValueError("negative probability mass")
        if abs(m.sum() - 1.0) > 1e-9:
            raise ValueError(f"mass sums to {m.sum()}, not 1")
        if self.smoothed and not (m > 0).all():
            raise ValueError("smoothed distribution must have full support")

    def prob(self, X: int, Y: int) -> float:
        return float(self.mass[cell_index(self.H)[(X, Y)]])


def fit_histogram(features, H: int) -> TriHistogram:
    """Count views per cell.  Features must have been binned with the same H."""
    idx = cell_index(H)
    counts = np.zeros(n_cells(H), dtype=np.int64)
    for f in features:
        counts[idx[f.bin]] += 1
    return TriHistogram(H, counts)


def counts_to_distribution(
    counts: np.ndarray, H: int, pseudocount: float = 0.0
) -> TriDistribution:
    """Normalize a dense count vector, optionally with additive smoothing."""
    counts = np.asarray(counts, dtype=np.float64)
    total = counts.sum()
    if total <= 0 and pseudocount <= 0:
        raise EmptyDistributionError("no observations and no pseudocount")
    denom = total + pseudocount * n_cells(H)
    return TriDistribution(H, (counts + pseudocount) / denom, smoothed=pseudocount > 0)


def to_distribution(h: TriHistogram, pseudocount: float = 0.0) -> TriDistribution:
    """Multinomial MLE of a histogram; pseudocount > 0 gives full support."""
    return counts_to_distribution(h.counts, h.H, pseudocount)


def kl_divergence(p: TriDistribution, q: TriDistribution) -> float:
    """KL divergence of q from p in bits, summed over the feasible cells.

    Cells where p is zero contribute nothing.  A cell where q is zero but p is
    not makes the divergence undefined; that means the caller forgot to smooth
    the model side.
    """
    if p.H != q.H:
        raise ValueError("distribution H mismatch")
    return kl_bits(p.mass, q.mass)


def kl_bits(p_mass: np.ndarray, q_mass: np.ndarray) -> float:
    sup = p_mass > 0
    if (q_mass[sup] <= 0).any():
        raise DivergenceUndefinedError("q has zero mass where p has support")
    ps = p_mass[sup]
    return float(np.sum(ps * np.log2(ps / q_mass[sup])))


# ---------------------------------------------------------------------------
# Bracket-model persistence: one human-readable text file per run, mapping each
# bracket id to (H, T, total view count, dense cell-mass array in row-major
# feasible-triangle order), so daily runs can reload and reuse prior models.

MODEL_FILE_VERSION = 1


@dataclass
class BracketModelFile:
    H: int
    T: float
    totals: dict = field(default_factory=dict)  # bracket id -> view count
    models: dict = field(default_factory=dict)  # bracket id -> TriDistribution


def save_bracket_models(path, mf: BracketModelFile) -> None:
    with open(path, "w") as fh:
        fh.write("# viewsift bracket models\n")
        fh.write(f"version={MODEL_FILE_VERSION}\n")
        fh.write(f"H={mf.H}\n")
        fh.write(f"T={mf.T!r}\n")
        for bracket in sorted(mf.models):
            mass = " ".join(repr(float(v)) for v in mf.models[bracket].mass)
            fh.write(f"bracket={bracket} total={mf.totals.get(bracket, 0)} mass={mass}\n")


def load_bracket_models(path) -> BracketModelFile:
    H = T = None
    totals, models = {}, {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            if key == "version":
                if int(value) != MODEL_FILE_VERSION:
                    raise ValueError(f"unsupported model file version {value}")
            elif key == "H":
                H = int(value)
            elif key == "T":
                T = float(value)
            elif key == "bracket":
                head, _, massstr = line.partition(" mass=")
                fields = dict(kv.split("=") for kv in head.split())
                bracket = int(fields["bracket"])
                totals[bracket] = int(fields["total"])
                mass = np.array([float(v) for v in massstr.split()])
                models[bracket] = TriDistribution(H, mass, smoothed=bool((mass > 0).all()))
    if H is None or T is None:
        raise ValueError(f"malformed model file: {path}")
    return BracketModelFile(H=H, T=T, totals=totals, models=models)
