"""Mean-field Gaussian variational network core.

Weights are kept as one flat vector per parameter kind. ``VariationalParams``
holds the means and the unconstrained scale parameters ``rhos`` with
``stds = softplus(rhos)``; deterministic networks are the special case
``rhos = -inf`` (zero standard deviation).

Likelihood terms are summed over the examples of a batch and averaged over
Monte-Carlo weight samples, so that summing the per-minibatch loss over one
epoch gives exactly the negative beta-ELBO of the whole task.
"""

from __future__ import annotations

import base64
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, NamedTuple

import numpy as np
import torch
import torch.nn.functional as F

FORMAT_VERSION = 1

SIGMA_INIT_LOC = 0.005
SIGMA_INIT_SCALE = 0.1
SIGMA_INIT_LOW = 0.005
SIGMA_INIT_HIGH = 0.205

ACTIVATIONS = ("relu", "identity")


class ShapeError(ValueError):
    """Raised when network shapes or parameter vectors do not compose."""


# ---------------------------------------------------------------------------
# network description
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Conv:
    in_channels: int
    out_channels: int
    kernel: int = 3
    stride: int = 2
    activation: str = "relu"


@dataclass(frozen=True)
class Dense:
    in_features: int
    out_features: int
    activation: str = "relu"


@dataclass(frozen=True)
class NetworkSpec:
    """Convolutional trunk, global average pool, state concat, dense head.

    ``raster_shape`` is (height, width, channels). With no dense layers the
    pooled channels of the last convolution are the logits.
    """

    raster_shape: tuple[int, int, int]
    state_dim: int
    convs: tuple[Conv, ...] = ()
    denses: tuple[Dense, ...] = ()

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        h, w, c = self.raster_shape
        if min(h, w, c) <= 0 or self.state_dim < 0:
            raise ShapeError(f"invalid input shape {self.raster_shape}, state_dim={self.state_dim}")
        for i, layer in enumerate(self.convs):
            if layer.in_channels != c:
                raise ShapeError(f"conv {i}: expects {layer.in_channels} input channels, gets {c}")
            if layer.kernel <= 0 or layer.stride <= 0 or layer.out_channels <= 0:
                raise ShapeError(f"conv {i}: non-positive kernel/stride/width")
            if layer.activation not in ACTIVATIONS:
                raise ShapeError(f"conv {i}: unknown activation {layer.activation!r}")
            c = layer.out_channels
        width = c + self.state_dim
        for i, layer in enumerate(self.denses):
            if layer.in_features != width:
                raise ShapeError(f"dense {i}: expects {layer.in_features} inputs, gets {width}")
            if layer.out_features <= 0:
                raise ShapeError(f"dense {i}: non-positive width")
            if layer.activation not in ACTIVATIONS:
                raise ShapeError(f"dense {i}: unknown activation {layer.activation!r}")
            width = layer.out_features
        if not self.denses and self.state_dim:
            raise ShapeError("agent state needs at least one dense layer")

    @property
    def output_width(self) -> int:
        if self.denses:
            return self.denses[-1].out_features
        return self.convs[-1].out_channels if self.convs else self.raster_shape[2]

    def layout(self) -> list[tuple[str, tuple[int, ...], int]]:
        """(name, shape, fan_in) per tensor, in flat-vector order."""
        out = []
        for i, layer in enumerate(self.convs):
            k = layer.kernel
            fan_in = layer.in_channels * k * k
            out.append((f"conv{i}.w", (layer.out_channels, layer.in_channels, k, k), fan_in))
            out.append((f"conv{i}.b", (layer.out_channels,), fan_in))
        for i, layer in enumerate(self.denses):
            out.append((f"dense{i}.w", (layer.in_features, layer.out_features), layer.in_features))
            out.append((f"dense{i}.b", (layer.out_features,), layer.in_features))
        return out

    @property
    def n_params(self) -> int:
        return sum(math.prod(shape) for _, shape, _ in self.layout())

    def to_dict(self) -> dict:
        return {
            "raster_shape": list(self.raster_shape),
            "state_dim": self.state_dim,
            "convs": [vars(c) for c in self.convs],
            "denses": [vars(d) for d in self.denses],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        return cls(
            raster_shape=tuple(d["raster_shape"]),
            state_dim=d["state_dim"],
            convs=tuple(Conv(**c) for c in d["convs"]),
            denses=tuple(Dense(**x) for x in d["denses"]),
        )


def desk_spec(n_modes: int, raster_shape=(64, 64, 3), state_dim: int = 3, hidden: int = 64) -> NetworkSpec:
    """Three stride-2 convolutions (8, 16, 32 channels), pool, one hidden layer."""
    c = raster_shape[2]
    convs = (Conv(c, 8), Conv(8, 16), Conv(16, 32))
    denses = (Dense(32 + state_dim, hidden), Dense(hidden, n_modes, activation="identity"))
    return NetworkSpec(tuple(raster_shape), state_dim, convs, denses)


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------


def softplus_inverse(stds: torch.Tensor) -> torch.Tensor:
    # log(expm1(s)) loses precision for large s; s + log(-expm1(-s)) does not
    return stds + torch.log(-torch.expm1(-stds))


@dataclass(frozen=True)
class VariationalParams:
    means: torch.Tensor
    rhos: torch.Tensor
    layout: tuple = field(default=(), compare=False)

    def __post_init__(self):
        if self.means.shape != self.rhos.shape or self.means.ndim != 1:
            raise ShapeError(f"means {tuple(self.means.shape)} and rhos {tuple(self.rhos.shape)} differ")
        n = sum(math.prod(shape) for _, shape, _ in self.layout) if self.layout else len(self.means)
        if n != len(self.means):
            raise ShapeError(f"layout describes {n} parameters, vectors hold {len(self.means)}")

    @property
    def stds(self) -> torch.Tensor:
        return F.softplus(self.rhos)

    @property
    def dtype(self):
        return self.means.dtype

    def __len__(self) -> int:
        return len(self.means)

    @classmethod
    def from_stds(cls, means, stds, layout=()) -> "VariationalParams":
        means = torch.as_tensor(means)
        stds = torch.as_tensor(stds, dtype=means.dtype)
        return cls(means, softplus_inverse(stds), tuple(layout))

    @classmethod
    def deterministic(cls, weights, layout=()) -> "VariationalParams":
        weights = torch.as_tensor(weights)
        return cls(weights, torch.full_like(weights, -math.inf), tuple(layout))

    @classmethod
    def standard_normal(cls, n: int, layout=(), dtype=torch.float32) -> "VariationalParams":
        return cls.from_stds(torch.zeros(n, dtype=dtype), torch.ones(n, dtype=dtype), layout)

    def sharpened(self, factor: float) -> "VariationalParams":
        """Prior with precision multiplied by ``factor`` (stds divided by its root)."""
        if factor < 1:
            raise ValueError(f"sharpening must be >= 1, got {factor}")
        if factor == 1:
            return self
        return VariationalParams.from_stds(self.means, self.stds / math.sqrt(factor), self.layout)

    def unflatten(self, vector: torch.Tensor) -> dict[str, torch.Tensor]:
        return unflatten(self.layout, vector)


def unflatten(layout, vector: torch.Tensor) -> dict[str, torch.Tensor]:
    out, i = {}, 0
    for name, shape, _ in layout:
        n = math.prod(shape)
        out[name] = vector[i:i + n].view(shape)
        i += n
    return out


def truncated_normal(rng: np.random.Generator, n: int, loc=SIGMA_INIT_LOC, scale=SIGMA_INIT_SCALE,
                     low=SIGMA_INIT_LOW, high=SIGMA_INIT_HIGH) -> np.ndarray:
    """Rejection sampler on the half-open window (low, high]."""
    out = np.empty(n)
    filled = 0
    while filled < n:
        draw = rng.normal(loc, scale, size=2 * (n - filled) + 16)
        draw = draw[(draw > low) & (draw <= high)]
        take = min(len(draw), n - filled)
        out[filled:filled + take] = draw[:take]
        filled += take
    return out


def init_params(spec: NetworkSpec, seed: int, dtype=torch.float32) -> VariationalParams:
    """He-scaled means, zero bias means, truncated-normal standard deviations."""
    spec.validate()
    rng = np.random.default_rng(seed)
    layout = tuple(spec.layout())
    means = []
    for name, shape, fan_in in layout:
        n = math.prod(shape)
        if name.endswith(".b"):
            means.append(np.zeros(n))
        else:
            means.append(rng.normal(0.0, math.sqrt(2.0 / fan_in), size=n))
    means = np.concatenate(means) if means else np.zeros(0)
    stds = truncated_normal(rng, len(means))
    return VariationalParams.from_stds(
        torch.as_tensor(means, dtype=dtype), torch.as_tensor(stds, dtype=dtype), layout
    )


def _generator(seed: int) -> torch.Generator:
    g = torch.Generator()
    g.manual_seed(int(seed) & 0xFFFF_FFFF_FFFF_FFFF)
    return g


def sample_weights(params: VariationalParams, seed: int) -> torch.Tensor:
    """theta = mu + sigma * eps with eps ~ N(0, I) drawn from ``seed``."""
    eps = torch.randn(len(params), generator=_generator(seed), dtype=params.dtype)
    return _reparam(params.means, params.rhos, eps)


def _reparam(means, rhos, eps):
    # rhos = -inf gives sigma = 0 and theta == mu exactly
    return means + F.softplus(rhos) * eps


# ---------------------------------------------------------------------------
# forward pass
# ---------------------------------------------------------------------------


def _act(x, name):
    return F.relu(x) if name == "relu" else x


def forward(spec: NetworkSpec, weights: torch.Tensor, raster, agent_state=None) -> torch.Tensor:
    """Logits for one raster (H, W, C) or a batch (N, H, W, C)."""
    weights = torch.as_tensor(weights)
    if weights.ndim != 1 or len(weights) != spec.n_params:
        raise ShapeError(f"expected {spec.n_params} weights, got {tuple(weights.shape)}")
    x = torch.as_tensor(raster).to(weights.dtype)
    single = x.ndim == 3
    if single:
        x = x.unsqueeze(0)
    if tuple(x.shape[1:]) != tuple(spec.raster_shape):
        raise ShapeError(f"raster shape {tuple(x.shape[1:])} != {spec.raster_shape}")
    if spec.state_dim:
        if agent_state is None:
            raise ShapeError("network expects an agent-state vector")
        s = torch.as_tensor(agent_state).to(weights.dtype)
        if single:
            s = s.unsqueeze(0)
        if s.shape != (x.shape[0], spec.state_dim):
            raise ShapeError(f"agent state shape {tuple(s.shape)} != ({x.shape[0]}, {spec.state_dim})")

    w = unflatten(spec.layout(), weights)
    h = x.permute(0, 3, 1, 2)
    for i, layer in enumerate(spec.convs):
        h = F.conv2d(h, w[f"conv{i}.w"], w[f"conv{i}.b"], stride=layer.stride, padding=layer.kernel // 2)
        h = _act(h, layer.activation)
    h = h.mean(dim=(2, 3))
    if spec.state_dim:
        h = torch.cat([h, s], dim=1)
    for i, layer in enumerate(spec.denses):
        h = _act(h @ w[f"dense{i}.w"] + w[f"dense{i}.b"], layer.activation)
    return h[0] if single else h


# ---------------------------------------------------------------------------
# KL and the beta-ELBO
# ---------------------------------------------------------------------------


def kl_terms(mu_q, sd_q, mu_p, sd_p) -> torch.Tensor:
    return torch.log(sd_p / sd_q) + (sd_q ** 2 + (mu_q - mu_p) ** 2) / (2 * sd_p ** 2) - 0.5


def kl_diag_gaussian(q: VariationalParams, p: VariationalParams) -> torch.Tensor:
    """KL(q || p) between two diagonal Gaussians, summed over coordinates."""
    if len(q) != len(p):
        raise ShapeError(f"KL between vectors of length {len(q)} and {len(p)}")
    return kl_terms(q.means, q.stds, p.means.to(q.dtype), p.stds.to(q.dtype)).sum()


OBJECTIVE_KINDS = ("multi-label-bce", "multi-class-ce")


@dataclass(frozen=True)
class Objective:
    """Negative beta-ELBO configuration.

    ``prior=None`` means the standard normal. ``kl_minibatch_scale`` is
    batch_size / task_size so that one epoch accumulates one full KL.
    """

    kind: str
    beta: float
    kl_minibatch_scale: float
    prior: VariationalParams | None = None
    use_prior: bool = True

    def __post_init__(self):
        if self.kind not in OBJECTIVE_KINDS:
            raise ValueError(f"unknown objective kind {self.kind!r}")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError(f"beta must lie in [0, 1], got {self.beta}")
        if self.kl_minibatch_scale <= 0:
            raise ValueError("kl_minibatch_scale must be positive")


@dataclass(frozen=True)
class Batch:
    rasters: torch.Tensor
    states: torch.Tensor | None
    labels: torch.Tensor
    weights: torch.Tensor | None = None  # per-example likelihood weights

    def __len__(self):
        return len(self.rasters)


class Gradient(NamedTuple):
    means: torch.Tensor
    rhos: torch.Tensor


def log_likelihood(kind: str, logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Per-example log-likelihood of ``labels`` under ``logits``."""
    if kind == "multi-class-ce":
        if labels.dtype not in (torch.int64, torch.int32) or labels.ndim != 1:
            raise ShapeError("multi-class likelihood needs a vector of class indices")
        return -F.cross_entropy(logits, labels.long(), reduction="none")
    if kind == "multi-label-bce":
        if labels.shape != logits.shape:
            raise ShapeError(f"multi-label targets {tuple(labels.shape)} vs logits {tuple(logits.shape)}")
        bce = F.binary_cross_entropy_with_logits(logits, labels.to(logits.dtype), reduction="none")
        return -bce.sum(dim=1)
    raise ValueError(f"unknown objective kind {kind!r}")


def elbo_loss_and_grad(
    params: VariationalParams,
    loglik: Callable[[torch.Tensor], torch.Tensor],
    prior: VariationalParams | None,
    kl_coef: float,
    n_mc: int,
    seed: int,
) -> tuple[float, Gradient]:
    """Generic reparameterized objective.

    ``loglik(theta)`` returns the batch-mean log-likelihood. The loss is
    ``-mean_mc loglik + kl_coef * KL(q || prior)``; ``prior=None`` or a zero
    coefficient skips the KL term entirely.
    """
    if n_mc < 1:
        raise ValueError("n_mc must be >= 1")
    mu = params.means.detach().clone().requires_grad_(True)
    rho = params.rhos.detach().clone().requires_grad_(True)
    g = _generator(seed)
    ll = 0.0
    for _ in range(n_mc):
        eps = torch.randn(len(mu), generator=g, dtype=mu.dtype)
        ll = ll + loglik(_reparam(mu, rho, eps))
    loss = -ll / n_mc
    if prior is not None and kl_coef != 0:
        sd = F.softplus(rho)
        loss = loss + kl_coef * kl_terms(mu, sd, prior.means.to(mu.dtype), prior.stds.to(mu.dtype)).sum()
    gm, gr = torch.autograd.grad(loss, (mu, rho), allow_unused=True)
    if gr is None:
        gr = torch.zeros_like(rho)
    return float(loss.detach()), Gradient(gm, gr)


def beta_elbo_loss(objective: Objective, spec: NetworkSpec, params: VariationalParams, batch: Batch,
                   n_mc: int = 1, seed: int = 0) -> tuple[float, Gradient]:
    """Minibatch negative beta-ELBO and its reparameterized gradient."""

    def loglik(theta):
        logits = forward(spec, theta, batch.rasters, batch.states)
        ll = log_likelihood(objective.kind, logits, batch.labels)
        if batch.weights is not None:
            ll = ll * batch.weights.to(ll.dtype)
        return ll.mean()

    prior = None
    if objective.use_prior:
        prior = objective.prior
        if prior is None:
            prior = VariationalParams.standard_normal(len(params), params.layout, params.dtype)
        elif len(prior) != len(params):
            raise ShapeError(f"prior has {len(prior)} parameters, network has {len(params)}")
    coef = objective.beta * objective.kl_minibatch_scale
    return elbo_loss_and_grad(params, loglik, prior, coef, n_mc, seed)


# ---------------------------------------------------------------------------
# optimisation
# ---------------------------------------------------------------------------


class NonFiniteGradient(FloatingPointError):
    pass


def sgd_step(params: VariationalParams, gradient: Gradient, lr: float) -> VariationalParams:
    """Plain SGD on (means, rhos); rhos keep the stds positive."""
    if lr <= 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    gm, gr = gradient
    if not (torch.isfinite(gm).all() and torch.isfinite(gr).all()):
        raise NonFiniteGradient("non-finite gradient in SGD step")
    return VariationalParams(params.means - lr * gm, params.rhos - lr * gr, params.layout)


def lr_schedule(epoch: int, total_epochs: int, base_lr: float) -> float:
    return base_lr * (1.0 - epoch / total_epochs)


# ---------------------------------------------------------------------------
# prediction
# ---------------------------------------------------------------------------


@torch.no_grad()
def predict_mean(spec: NetworkSpec, params: VariationalParams, raster, agent_state=None) -> torch.Tensor:
    """Softmax of the forward pass at the variational means."""
    return torch.softmax(forward(spec, params.means, raster, agent_state), dim=-1)


@torch.no_grad()
def mc_predict(spec: NetworkSpec, params: VariationalParams, raster, agent_state=None,
               n_samples: int = 7, seed: int = 0) -> torch.Tensor:
    """Average of softmax probabilities over ``n_samples`` weight draws."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    g = _generator(seed)
    total = None
    for _ in range(n_samples):
        eps = torch.randn(len(params), generator=g, dtype=params.dtype)
        p = torch.softmax(forward(spec, _reparam(params.means, params.rhos, eps), raster, agent_state), dim=-1)
        total = p if total is None else total + p
    return total / n_samples


# ---------------------------------------------------------------------------
# checkpoint files
# ---------------------------------------------------------------------------


def _encode(t: torch.Tensor) -> dict:
    a = t.detach().cpu().numpy()
    return {"dtype": a.dtype.str, "b64": base64.b64encode(a.tobytes()).decode("ascii")}


def _decode(d: dict) -> torch.Tensor:
    a = np.frombuffer(base64.b64decode(d["b64"]), dtype=np.dtype(d["dtype"])).copy()
    return torch.from_numpy(a)


def params_to_dict(params: VariationalParams) -> dict:
    return {
        "layout": [[name, list(shape), fan_in] for name, shape, fan_in in params.layout],
        "means": _encode(params.means),
        "stds": _encode(params.stds),
        "rhos": _encode(params.rhos),
    }


def params_from_dict(d: dict) -> VariationalParams:
    layout = tuple((name, tuple(shape), fan_in) for name, shape, fan_in in d["layout"])
    return VariationalParams(_decode(d["means"]), _decode(d["rhos"]), layout)


def save_json(path, payload: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(payload, indent=1, sort_keys=True))
    tmp.replace(path)
