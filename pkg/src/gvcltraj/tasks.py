"""Prior-knowledge task, observation task and the six model variants.

The prior-knowledge task is a multi-label problem: for every scene, which
trajectory-set elements stay inside the drivable area. The observation task
is multi-class: the element closest to the ground-truth future. GVCL trains
the first task against a standard-normal prior and the second against the
first task's posterior.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable

import numpy as np
import torch

from . import metrics as M
from .scenegen import Dataset, Scene, load_dataset, stack, subsample
from .seeding import child_seed
from .trajset import TrajectorySet, build_cover, closest_modes, drivable_labels
from .varcore import (
    FORMAT_VERSION,
    Batch,
    Gradient,
    NetworkSpec,
    Objective,
    VariationalParams,
    beta_elbo_loss,
    desk_spec,
    elbo_loss_and_grad,
    forward,
    init_params,
    log_likelihood,
    lr_schedule,
    mc_predict,
    params_from_dict,
    params_to_dict,
    save_json,
    sgd_step,
)

log = logging.getLogger(__name__)

VARIANTS = ("base", "vi", "loss", "transfer", "gvcl", "gvcl-det")
VARIATIONAL = {"vi", "gvcl"}
DIVERGENCE_PATIENCE = 3


class DivergenceError(FloatingPointError):
    def __init__(self, stage: str, epoch: int):
        super().__init__(f"{stage}: loss non-finite for {DIVERGENCE_PATIENCE} consecutive steps in epoch {epoch}")
        self.stage, self.epoch = stage, epoch


@dataclass(frozen=True)
class Hyper:
    det_epochs: int = 20
    var_epochs: int = 200
    det_batch: int = 16
    det_lr: float = 8e-4
    var_batch: int = 12
    var_lr: float = 3e-3
    beta: float | None = None  # None means 1 / var_batch
    lambda_multi: float = 0.01
    sharpening: float = 1.0
    n_test_samples: int = 7
    n_mc_train: int = 1
    dtype: str = "float32"

    @property
    def effective_beta(self) -> float:
        return 1.0 / self.var_batch if self.beta is None else self.beta

    @property
    def torch_dtype(self):
        return getattr(torch, self.dtype)

    @classmethod
    def from_mapping(cls, d: dict) -> "Hyper":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown hyperparameters: {sorted(unknown)}")
        return cls(**d)


# ---------------------------------------------------------------------------
# task data and checkpoints
# ---------------------------------------------------------------------------


@dataclass
class TaskData:
    rasters: torch.Tensor
    states: torch.Tensor
    labels: torch.Tensor

    def __len__(self):
        return len(self.rasters)

    def batch(self, idx) -> Batch:
        return Batch(self.rasters[idx], self.states[idx], self.labels[idx])


@dataclass(frozen=True)
class TaskSpec:
    kind: str  # "prior-knowledge" | "observation"
    data: TaskData
    loss: str
    epochs: int
    batch_size: int
    base_lr: float
    beta: float = 1.0

    def __post_init__(self):
        expected = {"prior-knowledge": "multi-label-bce", "observation": "multi-class-ce"}
        if self.kind not in expected:
            raise ValueError(f"unknown task kind {self.kind!r}")
        if self.loss != expected[self.kind]:
            raise ValueError(f"{self.kind} task needs {expected[self.kind]} loss, got {self.loss}")
        if self.epochs <= 0 or self.batch_size <= 0 or self.base_lr <= 0:
            raise ValueError("epochs, batch_size and base_lr must be positive")


@dataclass(frozen=True)
class PosteriorCheckpoint:
    params: VariationalParams
    task_id: int
    sharpening: float = 1.0
    variant: str | None = None
    spec: NetworkSpec | None = None
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.task_id < 1:
            raise ValueError("task_id must be >= 1")
        if self.sharpening < 1:
            raise ValueError("sharpening must be >= 1")

    def as_prior(self) -> VariationalParams:
        return self.params.sharpened(self.sharpening)

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "task_id": self.task_id,
            "sharpening": self.sharpening,
            "variant": self.variant,
            "spec": self.spec.to_dict() if self.spec else None,
            "params": params_to_dict(self.params),
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PosteriorCheckpoint":
        spec = NetworkSpec.from_dict(d["spec"]) if d.get("spec") else None
        return cls(params_from_dict(d["params"]), d["task_id"], d["sharpening"], d.get("variant"), spec,
                   d.get("meta", {}))

    def save(self, path) -> None:
        save_json(path, self.to_dict())

    @classmethod
    def load(cls, path) -> "PosteriorCheckpoint":
        return cls.from_dict(json.loads(Path(path).read_text()))


def params_bytes(params: VariationalParams) -> bytes:
    return params.means.numpy().tobytes() + params.rhos.numpy().tobytes()


# ---------------------------------------------------------------------------
# training loops
# ---------------------------------------------------------------------------


@dataclass
class TrainState:
    """Resumable loop state: parameters after ``epoch`` completed epochs."""

    params: VariationalParams
    epoch: int = 0
    trace: list = field(default_factory=list)


EpochHook = Callable[[str, TrainState], None]


def _epoch_batches(n: int, batch_size: int, seed: int, epoch: int):
    perm = np.random.default_rng(child_seed(seed, 2, epoch)).permutation(n)
    return [torch.as_tensor(perm[i:i + batch_size]) for i in range(0, n, batch_size)]


def run_loop(stage: str, state: TrainState, step: Callable, n: int, epochs: int, batch_size: int,
             lr_at: Callable[[int], float], seed: int, on_epoch_end: EpochHook | None = None) -> TrainState:
    """Shared SGD loop with divergence guard.

    ``step(params, idx, step_seed)`` returns (loss, gradient). Each epoch's
    shuffle and noise derive from (seed, epoch) alone, so a loop resumed from
    a saved state replays exactly.
    """
    params, trace = state.params, list(state.trace)
    bad = 0  # consecutive non-finite steps, across epoch boundaries
    for epoch in range(state.epoch, epochs):
        lr = lr_at(epoch)
        losses = []
        for b, idx in enumerate(_epoch_batches(n, batch_size, seed, epoch)):
            loss, grad = step(params, idx, child_seed(seed, 1, epoch, b))
            finite = math.isfinite(loss) and bool(torch.isfinite(grad.means).all() and torch.isfinite(grad.rhos).all())
            if not finite:
                bad += 1
                if bad >= DIVERGENCE_PATIENCE:
                    raise DivergenceError(stage, epoch)
                continue
            bad = 0
            params = sgd_step(params, grad, lr)
            losses.append(loss)
        trace.append(float(np.mean(losses)) if losses else float("nan"))
        state = TrainState(params, epoch + 1, trace)
        if on_epoch_end is not None:
            on_epoch_end(stage, state)
    return TrainState(params, max(state.epoch, epochs), trace)


def fit_variational(params: VariationalParams, loglik: Callable, n_data: int, prior: VariationalParams | None,
                    beta: float, epochs: int, batch_size: int, base_lr: float, seed: int, n_mc: int = 1,
                    stage: str = "variational", resume: TrainState | None = None,
                    on_epoch_end: EpochHook | None = None) -> TrainState:
    """Minimise the minibatch negative beta-ELBO for any log-likelihood.

    ``loglik(theta, idx)`` returns the summed log-likelihood of examples
    ``idx``; the loss uses its batch mean. ``prior=None`` drops the KL term
    (prior-free MC training).
    """

    def step(p, idx, s):
        coef = beta * len(idx) / n_data
        return elbo_loss_and_grad(p, lambda th: loglik(th, idx) / len(idx), prior, coef, n_mc, s)

    state = resume or TrainState(params)
    return run_loop(stage, state, step, n_data, epochs, batch_size,
                    lambda e: lr_schedule(e, epochs, base_lr), seed, on_epoch_end)


def _train_variational_task(spec: TaskSpec, net: NetworkSpec, init: VariationalParams,
                            prior: VariationalParams | None, seed: int, n_mc: int, stage: str,
                            resume=None, on_epoch_end=None) -> TrainState:
    n = len(spec.data)

    def step(p, idx, s):
        obj = Objective(spec.loss, spec.beta, len(idx) / n, prior, use_prior=prior is not None)
        return beta_elbo_loss(obj, net, p, spec.data.batch(idx), n_mc, s)

    state = resume or TrainState(init)
    return run_loop(stage, state, step, n, spec.epochs, spec.batch_size,
                    lambda e: lr_schedule(e, spec.epochs, spec.base_lr), seed, on_epoch_end)


def train_prior_task(spec: TaskSpec, init: VariationalParams, net: NetworkSpec, seed: int = 0, n_mc: int = 1,
                     resume=None, on_epoch_end=None) -> PosteriorCheckpoint:
    """Task 1: drivable-area multi-label fit against the standard-normal prior."""
    if spec.kind != "prior-knowledge":
        raise ValueError("train_prior_task needs a prior-knowledge task")
    prior = VariationalParams.standard_normal(len(init), init.layout, init.dtype)
    state = _train_variational_task(spec, net, init, prior, seed, n_mc, "prior", resume, on_epoch_end)
    return PosteriorCheckpoint(state.params, 1, spec=net, meta={"trace": state.trace})


def train_observation_task(spec: TaskSpec, prior: PosteriorCheckpoint, init: VariationalParams, net: NetworkSpec,
                           seed: int = 0, n_mc: int = 1, use_prior: bool = True, resume=None,
                           on_epoch_end=None) -> PosteriorCheckpoint:
    """Task 2: observations, regularised towards the (sharpened) task-1 posterior."""
    if spec.kind != "observation":
        raise ValueError("train_observation_task needs an observation task")
    if len(prior.params) != net.n_params or len(init) != net.n_params:
        raise ValueError(f"prior/init size {len(prior.params)}/{len(init)} does not match network ({net.n_params})")
    kl_prior = prior.as_prior() if use_prior else None
    state = _train_variational_task(spec, net, init, kl_prior, seed, n_mc, "observation", resume, on_epoch_end)
    return PosteriorCheckpoint(state.params, prior.task_id + 1, spec=net, meta={"trace": state.trace})


def _det_step(net: NetworkSpec, data: TaskData, kind: str, aux: torch.Tensor | None = None, lam: float = 0.0):
    """Mean-over-batch deterministic loss; ``aux`` adds lam * multi-label BCE."""

    def step(p, idx, _seed):
        theta = p.means.detach().clone().requires_grad_(True)
        logits = forward(net, theta, data.rasters[idx], data.states[idx])
        loss = -log_likelihood(kind, logits, data.labels[idx]).mean()
        if aux is not None:
            loss = loss + lam * -log_likelihood("multi-label-bce", logits, aux[idx]).mean()
        (g,) = torch.autograd.grad(loss, theta)
        return float(loss.detach()), Gradient(g, torch.zeros_like(g))

    return step


def train_deterministic(net: NetworkSpec, data: TaskData, kind: str, init: VariationalParams, epochs: int,
                        batch_size: int, lr: float, seed: int, aux: torch.Tensor | None = None, lam: float = 0.0,
                        stage: str = "deterministic", resume=None, on_epoch_end=None) -> TrainState:
    params = VariationalParams.deterministic(init.means, init.layout)
    state = resume or TrainState(params)
    return run_loop(stage, state, _det_step(net, data, kind, aux, lam), len(data), epochs, batch_size,
                    lambda e: lr, seed, on_epoch_end)


# ---------------------------------------------------------------------------
# variants
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ModelVariant:
    name: str
    lambda_multi: float | None = None
    beta: float | None = None

    def __post_init__(self):
        if self.name not in VARIANTS:
            raise ValueError(f"unknown variant {self.name!r}; choose from {VARIANTS}")
        if (self.lambda_multi is not None) != (self.name == "loss"):
            raise ValueError("lambda_multi is set exactly for the loss variant")
        if self.lambda_multi is not None and self.lambda_multi < 0:
            raise ValueError("lambda_multi must be non-negative")


def make_variant(name: str, hyper: Hyper) -> ModelVariant:
    lam = hyper.lambda_multi if name == "loss" else None
    beta = hyper.effective_beta if name in VARIATIONAL | {"gvcl-det"} else None
    return ModelVariant(name, lam, beta)


@dataclass
class ExperimentData:
    """Tensors for both tasks. Prior-task data covers the full training pool."""

    prior: TaskData  # labels: (N, K) drivable indicators
    observation: TaskData  # labels: class indices
    observation_drivable: torch.Tensor  # (n_obs, K), used by the loss variant
    spec: NetworkSpec


def task_tensors(scenes: list[Scene], trajset: TrajectorySet, dtype=torch.float32):
    rasters, states, futures = stack(scenes)
    drivable = np.stack([drivable_labels(trajset, s.mask, s.pose) for s in scenes])
    classes = closest_modes(futures, trajset)
    return (torch.as_tensor(rasters, dtype=dtype), torch.as_tensor(states, dtype=dtype),
            torch.as_tensor(drivable, dtype=dtype), torch.as_tensor(classes, dtype=torch.int64))


def build_experiment_data(pool: list[Scene], observed: list[Scene], trajset: TrajectorySet,
                          dtype=torch.float32, spec: NetworkSpec | None = None) -> ExperimentData:
    r, s, d, _ = task_tensors(pool, trajset, dtype)
    ro, so, do, co = task_tensors(observed, trajset, dtype)
    spec = spec or desk_spec(len(trajset), raster_shape=tuple(r.shape[1:]), state_dim=s.shape[1])
    return ExperimentData(TaskData(r, s, d), TaskData(ro, so, co), do, spec)


class Stages:
    """Optional per-stage resume states and epoch hooks, keyed by stage name."""

    def __init__(self, resume: dict | None = None, hook: EpochHook | None = None):
        self.resume = resume or {}
        self.hook = hook

    def get(self, stage):
        return self.resume.get(stage)


def _prior_spec(data: ExperimentData, hyper: Hyper) -> TaskSpec:
    return TaskSpec("prior-knowledge", data.prior, "multi-label-bce", hyper.var_epochs, hyper.var_batch,
                    hyper.var_lr, hyper.effective_beta)


def _obs_spec(data: ExperimentData, hyper: Hyper, variational: bool) -> TaskSpec:
    if variational:
        return TaskSpec("observation", data.observation, "multi-class-ce", hyper.var_epochs, hyper.var_batch,
                        hyper.var_lr, hyper.effective_beta)
    return TaskSpec("observation", data.observation, "multi-class-ce", hyper.det_epochs, hyper.det_batch,
                    hyper.det_lr)


def train_gvcl_prior(data: ExperimentData, hyper: Hyper, seed: int, stages: Stages | None = None):
    stages = stages or Stages()
    init = init_params(data.spec, child_seed(seed, 10), hyper.torch_dtype)
    return train_prior_task(_prior_spec(data, hyper), init, data.spec, child_seed(seed, 11), hyper.n_mc_train,
                            stages.get("prior"), stages.hook)


def train_variant(variant: ModelVariant | str, data: ExperimentData, hyper: Hyper, seed: int,
                  stages: Stages | None = None, prior_checkpoint: PosteriorCheckpoint | None = None
                  ) -> PosteriorCheckpoint:
    """Train one variant; the returned checkpoint carries the variant tag.

    ``prior_checkpoint`` lets gvcl reuse an already trained task-1 posterior.
    """
    if isinstance(variant, str):
        variant = make_variant(variant, hyper)
    stages = stages or Stages()
    net = data.spec
    init = init_params(net, child_seed(seed, 10), hyper.torch_dtype)
    name = variant.name

    if name in ("base", "loss"):
        spec = _obs_spec(data, hyper, False)
        aux = data.observation_drivable if name == "loss" else None
        state = train_deterministic(net, spec.data, spec.loss, init, spec.epochs, spec.batch_size, spec.base_lr,
                                    child_seed(seed, 12), aux, variant.lambda_multi or 0.0, "observation",
                                    stages.get("observation"), stages.hook)
        return PosteriorCheckpoint(state.params, 1, variant=name, spec=net, meta={"trace": state.trace})

    if name == "transfer":
        pre = train_deterministic(net, data.prior, "multi-label-bce", init, hyper.det_epochs, hyper.det_batch,
                                  hyper.det_lr, child_seed(seed, 13), stage="prior", resume=stages.get("prior"),
                                  on_epoch_end=stages.hook).params
        spec = _obs_spec(data, hyper, False)
        state = train_deterministic(net, spec.data, spec.loss, pre, spec.epochs, spec.batch_size, spec.base_lr,
                                    child_seed(seed, 12), stage="observation", resume=stages.get("observation"),
                                    on_epoch_end=stages.hook)
        return PosteriorCheckpoint(state.params, 2, variant=name, spec=net, meta={"trace": state.trace})

    if name == "vi":
        prior = PosteriorCheckpoint(VariationalParams.standard_normal(len(init), init.layout, init.dtype), 1)
        post = train_observation_task(_obs_spec(data, hyper, True), prior, init, net, child_seed(seed, 14),
                                      hyper.n_mc_train, resume=stages.get("observation"),
                                      on_epoch_end=stages.hook)
        return replace(post, task_id=1, variant=name)

    # gvcl and gvcl-det share training
    if prior_checkpoint is None:
        prior_checkpoint = train_gvcl_prior(data, hyper, seed, stages)
    prior_checkpoint = replace(prior_checkpoint, sharpening=hyper.sharpening)
    post = train_observation_task(_obs_spec(data, hyper, True), prior_checkpoint, prior_checkpoint.params, net,
                                  child_seed(seed, 14), hyper.n_mc_train, resume=stages.get("observation"),
                                  on_epoch_end=stages.hook)
    return replace(post, variant=name, sharpening=hyper.sharpening)


@torch.no_grad()
def predict(model: PosteriorCheckpoint, rasters, states, seed: int = 0, n_samples: int = 7,
            chunk: int = 256) -> np.ndarray:
    """(N, K) probabilities; MC average for vi/gvcl, mean weights otherwise."""
    net = model.spec
    rasters = torch.as_tensor(rasters).to(model.params.dtype)
    states = torch.as_tensor(states).to(model.params.dtype)
    single = rasters.ndim == 3
    if single:
        rasters, states = rasters[None], states[None]
    out = []
    for i in range(0, len(rasters), chunk):
        r, s = rasters[i:i + chunk], states[i:i + chunk]
        if model.variant in VARIATIONAL:
            p = mc_predict(net, model.params, r, s, n_samples, seed)
        else:
            p = torch.softmax(forward(net, model.params.means, r, s), dim=-1)
        out.append(p.double().numpy())
    probs = np.concatenate(out)
    if probs.shape[1] != net.output_width:
        raise ValueError("prediction width does not match the trajectory set")
    return probs[0] if single else probs


def evaluate_model(model: PosteriorCheckpoint, scenes: list[Scene], trajset: TrajectorySet, seed: int = 0,
                   n_samples: int = 7) -> tuple[dict, int]:
    if model.spec.output_width != len(trajset):
        raise ValueError(f"model head has {model.spec.output_width} outputs, trajectory set {len(trajset)} modes")
    rasters, states, futures = stack(scenes)
    probs = predict(model, rasters, states, seed, n_samples)
    probs = probs / probs.sum(axis=1, keepdims=True)
    best = closest_modes(futures, trajset)
    records = [M.PredictionRecord(p, f, s.mask, s.pose, int(b)) for p, f, s, b in zip(probs, futures, scenes, best)]
    return M.evaluate(records, trajset), M.n_clamped(records)


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------


@dataclass
class ExperimentConfig:
    variant: str
    epsilon: float
    fraction: float = 1.0
    seeds: list = field(default_factory=lambda: [0])
    dataset_path: str | None = None
    output_dir: str | None = None
    trajset_path: str | None = None
    epochs: int | None = None
    batch_size: int | None = None
    lr: float | None = None
    beta: float | None = None
    lambda_multi: float | None = None
    sharpening: float | None = None
    hyper: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; choose from {VARIANTS}")
        if not 0 < self.fraction <= 1:
            raise ValueError("fraction must lie in (0, 1]")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if not self.seeds:
            raise ValueError("at least one seed is required")

    def resolved_hyper(self) -> Hyper:
        h = dict(self.hyper)
        variational = self.variant in VARIATIONAL | {"gvcl-det"}
        prefix = "var" if variational else "det"
        if self.epochs is not None:
            h[f"{prefix}_epochs"] = self.epochs
        if self.batch_size is not None:
            h[f"{prefix}_batch"] = self.batch_size
        if self.lr is not None:
            h[f"{prefix}_lr"] = self.lr
        for name in ("beta", "lambda_multi", "sharpening"):
            if getattr(self, name) is not None:
                h[name] = getattr(self, name)
        return Hyper.from_mapping(h)

    @classmethod
    def from_mapping(cls, d: dict) -> "ExperimentConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        d = dict(d)
        if "seeds" in d and isinstance(d["seeds"], int):
            d["seeds"] = [d["seeds"]]
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


def hyper_digest(*parts) -> str:
    return hashlib.sha256(json.dumps(parts, sort_keys=True, default=str).encode()).hexdigest()[:16]


class CheckpointCache:
    """On-disk cache for shared training stages (task-1 posteriors, gvcl runs)."""

    def __init__(self, root):
        self.root = Path(root) if root else None
        self._mem: dict[str, PosteriorCheckpoint] = {}

    def get(self, key: str) -> PosteriorCheckpoint | None:
        if key in self._mem:
            return self._mem[key]
        if self.root and (self.root / f"{key}.json").exists():
            ck = PosteriorCheckpoint.load(self.root / f"{key}.json")
            self._mem[key] = ck
            return ck
        return None

    def put(self, key: str, ck: PosteriorCheckpoint) -> None:
        self._mem[key] = ck
        if self.root:
            ck.save(self.root / f"{key}.json")


def prepare_trajset(dataset: Dataset, epsilon: float, path: str | None = None) -> TrajectorySet:
    corpus = np.stack([s.future for s in dataset.train])
    if path and Path(path).exists():
        ts = TrajectorySet.load(path)
        if ts.source_hash == dataset.manifest.get("train_corpus_digest") and ts.epsilon == epsilon:
            return ts
        log.warning("trajectory set %s does not match dataset/epsilon; rebuilding", path)
    return build_cover(corpus, epsilon)


def run_cell(variant: str, dataset: Dataset, trajset: TrajectorySet, fraction: float, seed: int, hyper: Hyper,
             cache: CheckpointCache | None = None, stages: Stages | None = None
             ) -> tuple[PosteriorCheckpoint, dict, int]:
    """Train and evaluate one (variant, fraction, seed) cell on the test split."""
    cache = cache or CheckpointCache(None)
    observed = subsample(dataset, fraction, child_seed(seed, 20)).train
    data = build_experiment_data(dataset.train, observed, trajset, hyper.torch_dtype)
    base = (trajset.source_hash, trajset.epsilon, seed)
    model = None
    if variant in ("gvcl", "gvcl-det"):
        run_key = "gvcl-" + hyper_digest(base, fraction, asdict(hyper))
        model = cache.get(run_key)
        if model is None:
            prior_key = "prior-" + hyper_digest(base, hyper.var_epochs, hyper.var_batch, hyper.var_lr,
                                                hyper.effective_beta, hyper.n_mc_train, hyper.dtype)
            prior = cache.get(prior_key)
            if prior is None:
                prior = train_gvcl_prior(data, hyper, seed, stages)
                cache.put(prior_key, prior)
            model = train_variant("gvcl", data, hyper, seed, stages, prior_checkpoint=prior)
            cache.put(run_key, model)
        model = replace(model, variant=variant)
    else:
        model = train_variant(variant, data, hyper, seed, stages)
    scores, clamped = evaluate_model(model, dataset.test, trajset, child_seed(seed, 30), hyper.n_test_samples)
    return model, scores, clamped


def run_experiment(config: ExperimentConfig, dataset: Dataset | None = None,
                   trajset: TrajectorySet | None = None, cache: CheckpointCache | None = None) -> dict:
    """Train/evaluate every seed of one configuration; mean and sample std over seeds."""
    dataset = dataset or load_dataset(config.dataset_path)
    trajset = trajset or prepare_trajset(dataset, config.epsilon, config.trajset_path)
    hyper = config.resolved_hyper()
    per_seed = []
    for seed in config.seeds:
        _, scores, clamped = run_cell(config.variant, dataset, trajset, config.fraction, seed, hyper, cache)
        per_seed.append({"seed": seed, "metrics": scores, "nll_clamped": clamped})
        log.info("%s eps=%s frac=%s seed=%s: %s", config.variant, config.epsilon, config.fraction, seed, scores)
    return make_report(config.to_dict(), hyper, trajset, per_seed)


def make_report(config: dict, hyper: Hyper, trajset: TrajectorySet, per_seed: list[dict]) -> dict:
    mean, std = M.aggregate([r["metrics"] for r in per_seed])
    return {
        "format_version": FORMAT_VERSION,
        "config": config,
        "hyper": asdict(hyper),
        "n_modes": len(trajset),
        "trajset_hash": trajset.source_hash,
        "per_seed": per_seed,
        "mean": mean,
        "std": std,
    }
