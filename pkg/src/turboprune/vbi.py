"""Mean-field estimator for the weight/precision/support posterior.

The posterior factorizes per weight into Gaussian(mu, sigma^2) x
Gamma(shape, rate) x Bernoulli(pi). The Gamma and Bernoulli blocks have
closed-form coordinate updates; the Gaussian block is trained by SGD on a
deterministic surrogate that evaluates the data term at the posterior mean.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.special import digamma, expit, gammaln

from . import nn
from .errors import ConfigError, DivergenceError, FormatError
from .prior import GammaHyper

EPS_PI = 1e-12


@dataclass
class GaussianPosterior:
    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=float)
        self.sigma = np.asarray(self.sigma, dtype=float)
        if self.mu.shape != self.sigma.shape:
            raise ConfigError("mu and sigma shapes differ")
        if np.any(self.sigma <= 0):
            raise ConfigError("sigma must be strictly positive")


@dataclass
class GammaPosterior:
    shape: np.ndarray
    rate: np.ndarray

    def __post_init__(self):
        self.shape = np.asarray(self.shape, dtype=float)
        self.rate = np.asarray(self.rate, dtype=float)
        if np.any(self.shape <= 1.0):
            raise ConfigError("Gamma posterior shape must exceed 1")
        if np.any(self.rate <= 0.0):
            raise ConfigError("Gamma posterior rate must be positive")

    def mean(self) -> np.ndarray:
        return self.shape / self.rate

    def mean_log(self) -> np.ndarray:
        return digamma(self.shape) - np.log(self.rate)

    def mode(self) -> np.ndarray:
        return (self.shape - 1.0) / self.rate


@dataclass
class BernoulliPosterior:
    pi: np.ndarray

    def __post_init__(self):
        self.pi = np.asarray(self.pi, dtype=float)
        if np.any(self.pi < 0.0) or np.any(self.pi > 1.0):
            raise ConfigError("Bernoulli posterior must lie in [0, 1]")


@dataclass(frozen=True)
class PriorInput:
    """Per-weight activation probability handed over by the support module,
    clamped away from 0/1 so ratio messages stay finite."""

    pi: np.ndarray

    def __post_init__(self):
        clamped = np.clip(np.asarray(self.pi, dtype=float), EPS_PI, 1.0 - EPS_PI)
        object.__setattr__(self, "pi", clamped)


@dataclass
class VariationalPosterior:
    """Per-layer posterior blocks, kept in the layer grid shapes."""

    gauss: list[GaussianPosterior]
    gamma: list[GammaPosterior]
    bern: list[BernoulliPosterior]


def update_q_rho(gauss: GaussianPosterior, bern: BernoulliPosterior, h: GammaHyper) -> GammaPosterior:
    """Closed-form Gamma block update.

    shape = pi*a + (1-pi)*a_bar + 1
    rate  = mu^2 + sigma^2 + pi*b + (1-pi)*b_bar
    """
    pi = bern.pi
    shape = pi * h.a + (1.0 - pi) * h.a_bar + 1.0
    rate = gauss.mu**2 + gauss.sigma**2 + pi * h.b + (1.0 - pi) * h.b_bar
    return GammaPosterior(shape, rate)


def update_q_s(gamma: GammaPosterior, prior: PriorInput, h: GammaHyper) -> BernoulliPosterior:
    """Closed-form Bernoulli block update, evaluated in the log domain.

    The active/inactive odds weigh the prior pi against how well each Gamma
    hyper pair explains the posterior's current E[rho] and E[ln rho].
    """
    mean_rho = gamma.mean()
    mean_log_rho = gamma.mean_log()
    log_c1 = (
        np.log(prior.pi)
        + h.a * np.log(h.b)
        - gammaln(h.a)
        + (h.a - 1.0) * mean_log_rho
        - h.b * mean_rho
    )
    log_c2 = (
        np.log(1.0 - prior.pi)
        + h.a_bar * np.log(h.b_bar)
        - gammaln(h.a_bar)
        + (h.a_bar - 1.0) * mean_log_rho
        - h.b_bar * mean_rho
    )
    return BernoulliPosterior(expit(log_c1 - log_c2))


def prior_sigma(gamma: GammaPosterior) -> np.ndarray:
    """Std dev of the effective Gaussian weight prior, 1/sqrt(E[rho])."""
    return np.sqrt(gamma.rate / gamma.shape)


def gaussian_kl(gauss: GaussianPosterior, gamma: GammaPosterior) -> float:
    """KL between the Gaussian posterior and the zero-mean Gaussian prior
    whose variance is 1/E[rho]; closed form, summed over weights."""
    var_p = gamma.rate / gamma.shape
    terms = (
        0.5 * np.log(var_p / gauss.sigma**2)
        + (gauss.sigma**2 + gauss.mu**2) / (2.0 * var_p)
        - 0.5
    )
    return float(np.sum(terms))


def gaussian_kl_grads(gauss: GaussianPosterior, gamma: GammaPosterior):
    """d KL / d mu and d KL / d sigma of gaussian_kl."""
    var_p = gamma.rate / gamma.shape
    return gauss.mu / var_p, -1.0 / gauss.sigma + gauss.sigma / var_p


def taylor_expectation(g, gauss: GaussianPosterior):
    """Deterministic surrogate for E_{w~q}[g(w)]: evaluate g at the mean.

    Exact for linear g; for curved g the quadratic correction is dropped
    (e.g. g(w)=w^2 at mu=1 returns 1, not the true moment)."""
    return g(gauss.mu)


@dataclass
class ModuleAConfig:
    lr: float = 0.01
    batch_size: int = 64
    epochs_per_round: int = 3
    max_rounds: int = 10
    tol: float = 1e-4
    sigma_init: float = 0.1

    def __post_init__(self):
        if self.lr <= 0 or self.tol <= 0 or self.sigma_init <= 0:
            raise ConfigError("lr, tol and sigma_init must be positive")
        if self.batch_size < 1 or self.epochs_per_round < 0 or self.max_rounds < 1:
            raise ConfigError("batch_size/max_rounds must be >= 1, epochs >= 0")


def loss_and_grad(
    gauss: list[GaussianPosterior],
    gamma: list[GammaPosterior],
    net: nn.NetworkDef,
    biases: list[np.ndarray],
    batch: nn.Dataset,
    model: nn.LikelihoodModel,
    dataset_size: int | None = None,
):
    """Surrogate objective and its exact gradients.

    loss = sum-layer Gaussian KL + batch-mean data loss at the posterior mean,
    weighted by dataset_size/|batch| so minibatches estimate the full data
    term. Under the evaluate-at-the-mean surrogate the data term does not
    touch sigma, so grad_sigma is the KL part alone. Returns
    (loss, grad_mu, grad_sigma, grad_bias) with the per-layer list structure
    of the inputs.
    """
    d = len(batch) if dataset_size is None else int(dataset_size)
    scale = d / len(batch)
    weights = nn.MlpWeights([g.mu for g in gauss], biases)
    nll, data_grads = nn.forward_backward(net, weights, batch, model)
    loss = scale * nll
    grad_mu, grad_sigma = [], []
    for g, gm, dmat in zip(gauss, gamma, data_grads.mats):
        kl_mu, kl_sigma = gaussian_kl_grads(g, gm)
        loss += gaussian_kl(g, gm)
        grad_mu.append(kl_mu + scale * dmat)
        grad_sigma.append(kl_sigma)
    grad_bias = [scale * db for db in data_grads.biases]
    return loss, grad_mu, grad_sigma, grad_bias


def message_to_b(bern: BernoulliPosterior, prior: PriorInput) -> np.ndarray:
    """Extrinsic message back to the support module: elementwise posterior /
    prior ratio, renormalized. Shape (..., 2)."""
    r1 = bern.pi / prior.pi
    r0 = (1.0 - bern.pi) / (1.0 - prior.pi)
    total = r0 + r1
    m0 = np.clip(r0 / total, EPS_PI, 1.0 - EPS_PI)
    out = np.empty(bern.pi.shape + (2,))
    out[..., 0] = m0
    out[..., 1] = 1.0 - m0
    return out


def _surrogate_objective(gauss, gamma, net, biases, data, model):
    weights = nn.MlpWeights([g.mu for g in gauss], biases)
    nll = nn.neg_log_likelihood(net, weights, data, model)
    return sum(gaussian_kl(g, gm) for g, gm in zip(gauss, gamma)) + len(data) * nll


def run_module_a(
    prior_pi: list[np.ndarray],
    hypers: list[GammaHyper],
    net: nn.NetworkDef,
    weights: nn.MlpWeights,
    sigma: list[np.ndarray] | None,
    data: nn.Dataset,
    model: nn.LikelihoodModel,
    cfg: ModuleAConfig,
    rng: np.random.Generator,
):
    """Block-coordinate descent over the three posterior blocks.

    Each round updates the Gamma block, then the Bernoulli block, then sets
    sigma to its closed-form stationary point and runs SGD epochs on mu (and
    the un-prioried biases). Stops when the relative change of the tracked
    objective falls below cfg.tol or after cfg.max_rounds rounds.

    The support belief starts all-inactive, so the first Gamma update draws
    on the inactive hyper pair and the first Bernoulli update reclaims
    exactly the weights whose mu^2 + sigma^2 carries enough evidence; an
    active-leaning start would mix the active rate into every b-tilde and
    leave the off state unreachable.

    Returns (VariationalPosterior, extrinsic (K, M, 2) grids, info dict).
    The mu/biases state warm-starts from ``weights``.
    """
    priors = [PriorInput(pi) for pi in prior_pi]
    mu = [w.copy() for w in weights.mats]
    biases = [b.copy() for b in weights.biases]
    if sigma is None:
        sigma = [np.full(w.shape, cfg.sigma_init) for w in weights.mats]
    else:
        sigma = [s.copy() for s in sigma]
    gauss = [GaussianPosterior(m, s) for m, s in zip(mu, sigma)]
    bern = [BernoulliPosterior(np.zeros_like(p.pi)) for p in priors]
    gamma = [update_q_rho(g, b, h) for g, b, h in zip(gauss, bern, hypers)]

    n = len(data)
    batch_size = min(cfg.batch_size, n)
    # Equal-size batches (remainder dropped) keep the minibatch estimator's
    # data weight D/|batch| constant across steps.
    n_batches = n // batch_size
    scale = n / batch_size
    objective = _surrogate_objective(gauss, gamma, net, biases, data, model)
    rounds = 0
    for _ in range(cfg.max_rounds):
        rounds += 1
        gamma = [update_q_rho(g, b, h) for g, b, h in zip(gauss, bern, hypers)]
        bern = [update_q_s(gm, p, h) for gm, p, h in zip(gamma, priors, hypers)]
        for g, gm in zip(gauss, gamma):
            g.sigma = prior_sigma(gm)
        var_p = [gm.rate / gm.shape for gm in gamma]
        for _ in range(cfg.epochs_per_round):
            order = rng.permutation(n)
            for b_idx in range(n_batches):
                batch = data.subset(order[b_idx * batch_size : (b_idx + 1) * batch_size])
                w_now = nn.MlpWeights([g.mu for g in gauss], biases)
                _, grads = nn.forward_backward(net, w_now, batch, model)
                for l, g in enumerate(gauss):
                    # Explicit step on the data term, implicit (proximal) step
                    # on the quadratic KL term: the prior variances reach
                    # ~b_bar/2, where an explicit step at this lr would blow up.
                    g.mu -= cfg.lr * scale * grads.mats[l]
                    g.mu /= 1.0 + cfg.lr / var_p[l]
                    biases[l] -= cfg.lr * scale * grads.biases[l]
        new_objective = _surrogate_objective(gauss, gamma, net, biases, data, model)
        if not np.isfinite(new_objective):
            raise DivergenceError(
                f"surrogate objective became non-finite after round {rounds}: {new_objective}"
            )
        rel = abs(new_objective - objective) / max(1.0, abs(objective))
        objective = new_objective
        if rel < cfg.tol:
            break

    posterior = VariationalPosterior(gauss=gauss, gamma=gamma, bern=bern)
    extrinsic = [message_to_b(b, p) for b, p in zip(bern, priors)]
    info = {
        "rounds": rounds,
        "objective": objective,
        "weights": nn.MlpWeights([g.mu for g in gauss], biases),
    }
    return posterior, extrinsic, info


def save_posterior(path, posterior: VariationalPosterior) -> None:
    """Same container layout as the weight file, with five parallel K*M
    float64 arrays per layer: mu, sigma, gamma shape, gamma rate, pi."""
    with open(path, "wb") as fh:
        fh.write(nn.WEIGHTS_MAGIC)
        fh.write(struct.pack("<II", nn.WEIGHTS_VERSION, len(posterior.gauss)))
        for g in posterior.gauss:
            fh.write(struct.pack("<II", g.mu.shape[0], g.mu.shape[1]))
        for g, gm, b in zip(posterior.gauss, posterior.gamma, posterior.bern):
            for arr in (g.mu, g.sigma, gm.shape, gm.rate, b.pi):
                fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_posterior(path) -> VariationalPosterior:
    with open(path, "rb") as fh:
        if nn._read_exact(fh, 4, path) != nn.WEIGHTS_MAGIC:
            raise FormatError(f"{path}: bad magic, expected TVBI")
        version, n_layers = struct.unpack("<II", nn._read_exact(fh, 8, path))
        if version != nn.WEIGHTS_VERSION:
            raise FormatError(f"{path}: unsupported version {version}")
        dims = [struct.unpack("<II", nn._read_exact(fh, 8, path)) for _ in range(n_layers)]
        gauss, gamma, bern = [], [], []
        for k, m in dims:
            arrs = [
                np.frombuffer(nn._read_exact(fh, 8 * k * m, path), dtype="<f8")
                .reshape(k, m)
                .copy()
                for _ in range(5)
            ]
            gauss.append(GaussianPosterior(arrs[0], arrs[1]))
            gamma.append(GammaPosterior(arrs[2], arrs[3]))
            bern.append(BernoulliPosterior(arrs[4]))
        if fh.read(1):
            raise FormatError(f"{path}: trailing bytes after payload")
    return VariationalPosterior(gauss=gauss, gamma=gamma, bern=bern)
