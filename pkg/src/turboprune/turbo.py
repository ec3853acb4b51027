"""Alternating loop between the mean-field estimator and the support-grid
message passer, followed by MAP extraction, pruning, and fine-tuning.

Each iteration runs the estimator under the current per-weight activation
probabilities, converts its Bernoulli posterior into extrinsic evidence,
smooths that evidence over the support grid, and reads back new activation
probabilities. The loop stops when the support-side messages stop moving.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import mrf, nn, vbi
from .errors import ConfigError
from .prior import HierarchicalPrior


@dataclass
class TurboConfig:
    max_iterations: int = 15
    tol: float = 1e-3  # on the largest change of the support-side messages
    threshold: float = 0.5
    spmp_max_iters: int = 50
    spmp_damping: float = 0.3
    spmp_tol: float = 1e-6
    module_a: vbi.ModuleAConfig = field(default_factory=vbi.ModuleAConfig)

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ConfigError("max_iterations must be >= 1")
        if self.tol <= 0 or self.spmp_tol <= 0:
            raise ConfigError("tolerances must be positive")
        if not 0.0 <= self.threshold <= 1.0:
            raise ConfigError("threshold must lie in [0, 1]")


@dataclass
class TurboState:
    iteration: int
    pi: list[np.ndarray]  # per-layer activation probabilities
    v_hs: list[np.ndarray]  # per-layer support-side messages, on-probability plane
    posterior: vbi.VariationalPosterior | None
    weights: nn.MlpWeights | None  # current posterior mean + biases
    trace: list[dict] = field(default_factory=list)
    converged: bool = False
    spmp_converged: bool = True  # False if any layer's smoothing pass hit its cap


@dataclass
class FlopsReport:
    dense: int
    pruned: int
    structure: list[int]  # surviving neurons per network position

    @property
    def reduction_pct(self) -> float:
        return 100.0 * (1.0 - self.pruned / self.dense) if self.dense else 0.0


@dataclass
class PruneResult:
    masks: list[np.ndarray]  # uint8 per layer
    weights: nn.MlpWeights  # masked posterior means + biases
    rho: list[np.ndarray]  # precision modes
    neuron_counts: list[int]
    sparsity: float  # surviving fraction of matrix weights
    flops: FlopsReport


def map_extract(posterior: vbi.VariationalPosterior, threshold: float = 0.5):
    """Posterior modes: w* = mu, rho* = (shape-1)/rate, s* = [pi >= threshold];
    weights are zeroed wherever the support is off."""
    masks = [(b.pi >= threshold).astype(np.uint8) for b in posterior.bern]
    w_star = [g.mu * m for g, m in zip(posterior.gauss, masks)]
    rho_star = [gm.mode() for gm in posterior.gamma]
    return w_star, rho_star, masks


def flops_count(net: nn.NetworkDef, masks: list[np.ndarray]) -> FlopsReport:
    """Multiply-add count at 2 per weight, on dense dims and on each layer's
    surviving rows x surviving columns. A neuron survives if any weight
    incident to it (incoming or outgoing) is nonzero."""
    if len(masks) != net.n_layers:
        raise ConfigError(f"{len(masks)} masks for {net.n_layers} layers")
    dense = 0
    pruned = 0
    for (k, m), mask in zip(net.weight_dims, masks):
        if mask.shape != (k, m):
            raise ConfigError(f"mask shape {mask.shape} does not match layer {(k, m)}")
        dense += 2 * k * m
        rows = int(np.count_nonzero(mask.any(axis=1)))
        cols = int(np.count_nonzero(mask.any(axis=0)))
        pruned += 2 * rows * cols
    structure = []
    for pos in range(len(net.sizes)):
        alive = np.zeros(net.sizes[pos], dtype=bool)
        if pos > 0:
            alive |= masks[pos - 1].any(axis=0)
        if pos < net.n_layers:
            alive |= masks[pos].any(axis=1)
        structure.append(int(np.count_nonzero(alive)))
    return FlopsReport(dense=dense, pruned=pruned, structure=structure)


def fine_tune(
    net: nn.NetworkDef,
    weights: nn.MlpWeights,
    masks: list[np.ndarray],
    data: nn.Dataset,
    model: nn.LikelihoodModel,
    epochs: int,
    lr: float,
    batch_size: int,
    rng: np.random.Generator,
) -> nn.MlpWeights:
    """Masked SGD on the data loss; pruned entries keep their exact zeros."""
    if epochs == 0:
        return weights.copy()
    float_masks = [m.astype(float) for m in masks]
    return nn.sgd_train(net, weights, data, model, epochs, lr, batch_size, rng, masks=float_masks)


def _prune_from_posterior(net, posterior, biases, threshold):
    w_star, rho_star, masks = map_extract(posterior, threshold)
    total = sum(m.size for m in masks)
    nnz = sum(int(m.sum()) for m in masks)
    flops = flops_count(net, masks)
    weights = nn.MlpWeights([w.copy() for w in w_star], [b.copy() for b in biases])
    return PruneResult(
        masks=masks,
        weights=weights,
        rho=rho_star,
        neuron_counts=flops.structure,
        sparsity=nnz / total,
        flops=flops,
    )


def turbo_run(
    net: nn.NetworkDef,
    weights: nn.MlpWeights,
    data: nn.Dataset,
    prior: HierarchicalPrior,
    config: TurboConfig,
    model: nn.LikelihoodModel,
    seed: int = 0,
    eval_data: nn.Dataset | None = None,
    on_iteration=None,
):
    """Run the alternating loop and extract the pruned network.

    Activation probabilities start at 0.5 everywhere. Per iteration: estimator
    pass, extrinsic hand-off, one smoothing pass per layer grid, message delta
    check. A smoothing pass that hits its iteration cap is tolerated and
    flagged. ``on_iteration`` (if given) receives the TurboState after each
    iteration. Deterministic given (seed, config, data).
    """
    dims = net.weight_dims
    if tuple(dims) != tuple(prior.dims):
        raise ConfigError(f"prior dims {prior.dims} do not match network layers {dims}")
    hypers = [h for h, _ in prior.layers]
    mrf_params = [p for _, p in prior.layers]

    rng = np.random.default_rng(seed)
    state = TurboState(
        iteration=0,
        pi=[np.full(d, 0.5) for d in dims],
        v_hs=[np.full(d, 0.5) for d in dims],
        posterior=None,
        weights=weights.copy(),
    )
    sigma = None
    eval_ds = eval_data if eval_data is not None else data

    for it in range(1, config.max_iterations + 1):
        posterior, extrinsic, info = vbi.run_module_a(
            state.pi, hypers, net, state.weights, sigma, data, model, config.module_a, rng
        )
        sigma = [g.sigma for g in posterior.gauss]
        state.posterior = posterior
        state.weights = info["weights"]

        delta = 0.0
        new_v = []
        for layer, params in enumerate(mrf_params):
            graph = mrf.build_graph(dims[layer], params, extrinsic[layer])
            result = mrf.spmp_run(
                graph,
                max_iters=config.spmp_max_iters,
                damping=config.spmp_damping,
                tol=config.spmp_tol,
            )
            if not result.converged:
                state.spmp_converged = False
            v1 = result.extrinsic[..., 1]
            delta = max(delta, float(np.max(np.abs(v1 - state.v_hs[layer]))))
            new_v.append(v1)
        state.v_hs = new_v
        state.pi = [v.copy() for v in new_v]
        state.iteration = it

        interim = _prune_from_posterior(net, posterior, state.weights.biases, config.threshold)
        row = {
            "iter": it,
            "max_msg_delta": delta,
            "neg_elbo_surrogate": info["objective"],
            "sparsity": interim.sparsity,
            "accuracy": nn.accuracy(net, interim.weights, eval_ds)
            if net.task == "classification"
            else float("nan"),
        }
        state.trace.append(row)
        if on_iteration is not None:
            on_iteration(state)
        if delta < config.tol:
            state.converged = True
            break

    result = _prune_from_posterior(net, state.posterior, state.weights.biases, config.threshold)
    return state, result
