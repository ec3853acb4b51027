"""Sum-product message passing over the support grid.

Each support variable has an on/off unary factor plus pairwise chain factors
toward its row and column neighbors. A synchronous flooding schedule updates
all factor-to-variable messages from the previous iteration's snapshot; the
pairwise update marginalizes the neighbor, v(s) = sum_t f(s, t) v_in(t).
Messages stay normalized in the linear domain with a small clamping floor.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._accel import kernels
from .errors import ConfigError
from .prior import MrfParams

EPS_MSG = 1e-12


@dataclass(frozen=True)
class BernoulliMessage:
    """Normalized two-state message (off weight, on weight)."""

    m0: float
    m1: float


@dataclass
class SupportGraph:
    """Grid factor graph with per-site unaries and chain pair potentials.

    ``msgs`` holds factor-to-variable messages, shape (4, K, M, 2), indexed by
    the direction the message arrives from: 0 left, 1 right, 2 up, 3 down.
    Slots without a corresponding edge hold the neutral value 1 and are never
    updated.
    """

    dims: tuple[int, int]
    frow: np.ndarray
    fcol: np.ndarray
    unary: np.ndarray
    msgs: np.ndarray

    @property
    def n_row_edges(self) -> int:
        k, m = self.dims
        return k * (m - 1)

    @property
    def n_col_edges(self) -> int:
        k, m = self.dims
        return (k - 1) * m


@dataclass(frozen=True)
class SpmpResult:
    extrinsic: np.ndarray  # (K, M, 2): per-site product of pairwise messages
    marginals: np.ndarray  # (K, M, 2): extrinsic * unary, normalized
    iterations: int
    final_delta: float
    converged: bool


def _norm_clamp(arr: np.ndarray) -> np.ndarray:
    total = arr[..., 0] + arr[..., 1]
    p0 = np.clip(arr[..., 0] / total, EPS_MSG, 1.0 - EPS_MSG)
    out = np.empty_like(arr)
    out[..., 0] = p0
    out[..., 1] = 1.0 - p0
    return out


def build_graph(dims, params: MrfParams, unary: np.ndarray) -> SupportGraph:
    """Assemble the graph and initialize every edge message to (0.5, 0.5).

    ``unary`` must be a (K, M, 2) grid of normalized two-state factors.
    """
    k, m = dims
    if k < 1 or m < 1:
        raise ConfigError(f"graph dims must be positive, got {dims}")
    unary = np.ascontiguousarray(unary, dtype=float)
    if unary.shape != (k, m, 2):
        raise ConfigError(f"unary grid shape {unary.shape} does not match dims {(k, m, 2)}")
    if np.any(np.abs(unary.sum(axis=-1) - 1.0) > 1e-6):
        raise ConfigError("unary factors must be normalized")
    msgs = np.ones((4, k, m, 2))
    if m > 1:
        msgs[0, :, 1:] = 0.5
        msgs[1, :, : m - 1] = 0.5
    if k > 1:
        msgs[2, 1:, :] = 0.5
        msgs[3, : k - 1, :] = 0.5
    return SupportGraph(
        dims=(k, m),
        frow=params.row_potential(),
        fcol=params.col_potential(),
        unary=unary,
        msgs=msgs,
    )


def spmp_run(
    graph: SupportGraph,
    max_iters: int = 50,
    damping: float = 0.3,
    tol: float = 1e-6,
) -> SpmpResult:
    """Run flooding sweeps until the largest message change drops below tol.

    Updates the graph's message store in place and returns per-site extrinsic
    messages (the product of incoming pairwise messages, excluding the unary)
    together with the marginals (extrinsic times unary). The grid has loops,
    so convergence is not guaranteed; the result carries the final delta.
    """
    if max_iters < 1:
        raise ConfigError(f"max_iters must be >= 1, got {max_iters}")
    if not 0.0 <= damping < 1.0:
        raise ConfigError(f"damping must lie in [0, 1), got {damping}")
    iters, delta = kernels.spmp_iterate(
        graph.unary,
        graph.frow,
        graph.fcol,
        graph.msgs,
        float(damping),
        int(max_iters),
        float(tol),
        EPS_MSG,
    )
    extrinsic = _norm_clamp(graph.msgs[0] * graph.msgs[1] * graph.msgs[2] * graph.msgs[3])
    marginals = _norm_clamp(extrinsic * graph.unary)
    return SpmpResult(
        extrinsic=extrinsic,
        marginals=marginals,
        iterations=int(iters),
        final_delta=float(delta),
        converged=bool(delta < tol),
    )
