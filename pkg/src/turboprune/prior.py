"""Three-layer sparsity prior over a weight matrix.

Top layer: a binary support grid whose rows and columns behave like two-state
Markov chains, so active entries clump into rectangular clusters. Middle
layer: each weight's precision draws from one of two Gamma densities selected
by its support bit. Bottom layer: the weight itself is zero-mean Gaussian
with that precision. The joint factors as p(s) * p(rho | s) * p(w | rho).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from ._accel import kernels
from .errors import ConfigError, FormatError


@dataclass(frozen=True)
class GammaHyper:
    """Gamma hyperparameters for the precision of active (a, b) and inactive
    (a_bar, b_bar) weights.

    The intended regime is a/b = O(1) while a_bar/b_bar >> 1, which pins
    inactive weights near zero; only positivity is enforced here.
    """

    a: float = 1.0
    b: float = 1.0
    a_bar: float = 1.0
    b_bar: float = 1e-3

    def __post_init__(self):
        for name in ("a", "b", "a_bar", "b_bar"):
            value = getattr(self, name)
            if not value > 0:
                raise ConfigError(f"GammaHyper.{name} must be > 0, got {value}")


@dataclass(frozen=True)
class MrfParams:
    """Transition probabilities of the row and column support chains.

    p01 is the 0->1 transition and p10 the 1->0 transition. Smaller p01
    widens the average gap between clusters; smaller p10 widens the clusters.
    """

    p01_row: float = 0.05
    p10_row: float = 0.05
    p01_col: float = 0.05
    p10_col: float = 0.05

    def __post_init__(self):
        for name in ("p01_row", "p10_row", "p01_col", "p10_col"):
            value = getattr(self, name)
            if not 0.0 < value < 1.0:
                raise ConfigError(f"MrfParams.{name} must lie in (0, 1), got {value}")

    def row_potential(self) -> np.ndarray:
        """2x2 table F[s, t] = p(next=t | current=s) along a row."""
        return np.array(
            [[1.0 - self.p01_row, self.p01_row], [self.p10_row, 1.0 - self.p10_row]]
        )

    def col_potential(self) -> np.ndarray:
        """2x2 table F[s, t] = p(next=t | current=s) down a column."""
        return np.array(
            [[1.0 - self.p01_col, self.p01_col], [self.p10_col, 1.0 - self.p10_col]]
        )


@dataclass(frozen=True)
class HierarchicalPrior:
    """Per-layer (GammaHyper, MrfParams) pairs plus the layer grid shapes."""

    layers: tuple[tuple[GammaHyper, MrfParams], ...]
    dims: tuple[tuple[int, int], ...]

    def __post_init__(self):
        if len(self.layers) != len(self.dims):
            raise ConfigError(
                f"{len(self.layers)} layer priors for {len(self.dims)} layer shapes"
            )
        for k, m in self.dims:
            if k < 1 or m < 1:
                raise ConfigError(f"layer dims must be positive, got {(k, m)}")


def gamma_density(rho, s: int, h: GammaHyper):
    """Density of the precision given the support bit.

    Gamma(a, b) when s=1, Gamma(a_bar, b_bar) when s=0, in the shape/rate
    parameterization. Accepts scalar or array ``rho``.
    """
    rho = np.asarray(rho, dtype=float)
    if np.any(rho <= 0):
        raise ValueError("precision must be strictly positive")
    if s:
        shape, rate = h.a, h.b
    else:
        shape, rate = h.a_bar, h.b_bar
    log_pdf = shape * np.log(rate) - gammaln(shape) + (shape - 1.0) * np.log(rho) - rate * rho
    out = np.exp(log_pdf)
    return float(out) if out.ndim == 0 else out


def weight_density(w, rho):
    """Gaussian density of a weight with mean zero and variance 1/rho."""
    w = np.asarray(w, dtype=float)
    rho = np.asarray(rho, dtype=float)
    if np.any(rho <= 0):
        raise ValueError("precision must be strictly positive")
    out = np.sqrt(rho / (2.0 * np.pi)) * np.exp(-0.5 * rho * w * w)
    return float(out) if out.ndim == 0 else out


def _check_grid(dims, sweeps):
    k, m = dims
    if k < 1 or m < 1:
        raise ValueError(f"support grid must have positive area, got {dims}")
    if sweeps < 1:
        raise ValueError(f"sweeps must be >= 1, got {sweeps}")
    return k, m


def sample_support(params: MrfParams, dims, seed: int, sweeps: int = 100) -> np.ndarray:
    """Gibbs-sample a binary support grid from the chain-structured prior.

    Raster-scan site updates; all randomness is pre-drawn from a PCG64 stream
    so the result is a deterministic function of (params, dims, seed, sweeps).
    Returns the state after the final sweep as a uint8 array.
    """
    k, m = _check_grid(dims, sweeps)
    rng = np.random.default_rng(seed)
    state = (rng.random((k, m)) < 0.5).astype(np.uint8)
    u = rng.random((sweeps, k, m))
    kernels.gibbs_sweeps(state, params.row_potential(), params.col_potential(), u)
    return state


def gibbs_trace(params: MrfParams, dims, seed: int, sweeps: int) -> np.ndarray:
    """Like sample_support but records the grid after every sweep past a
    burn-in of sweeps//2. Used for statistics collection."""
    k, m = _check_grid(dims, sweeps)
    rng = np.random.default_rng(seed)
    state = (rng.random((k, m)) < 0.5).astype(np.uint8)
    u = rng.random((sweeps, k, m))
    return kernels.gibbs_record(
        state, params.row_potential(), params.col_potential(), u, sweeps // 2
    )


def write_pgm(path, grid: np.ndarray, maxval: int = 1) -> None:
    """Write a 2-D integer grid as ASCII PGM (magic P2)."""
    grid = np.asarray(grid)
    if grid.ndim != 2:
        raise ValueError("PGM output needs a 2-D grid")
    k, m = grid.shape
    lines = [f"P2", f"{m} {k}", f"{maxval}"]
    for row in grid:
        lines.append(" ".join(str(int(v)) for v in row))
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def read_pgm(path) -> np.ndarray:
    """Read an ASCII PGM written by write_pgm. Returns an int array."""
    with open(path, "r", encoding="ascii") as fh:
        tokens = fh.read().split()
    if not tokens or tokens[0] != "P2":
        raise FormatError(f"{path}: not an ASCII PGM (magic P2)")
    try:
        m, k, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
        values = np.array([int(t) for t in tokens[4 : 4 + k * m]], dtype=np.int64)
    except (IndexError, ValueError) as exc:
        raise FormatError(f"{path}: malformed PGM header or payload") from exc
    if values.size != k * m:
        raise FormatError(f"{path}: expected {k * m} pixels, found {values.size}")
    if np.any(values < 0) or np.any(values > maxval):
        raise FormatError(f"{path}: pixel out of range 0..{maxval}")
    return values.reshape(k, m)
