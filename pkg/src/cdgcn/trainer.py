"""Full-batch gradient descent with validation early stopping, and the
end-to-end recovery pipeline."""
from __future__ import annotations

import itertools
import logging
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import metrics
from .dataset import MaskedDataset, impute_initial, normalize, split_observed
from .graph import StationGraph, adjacency_tensor
from .model import ModelParams, backward, forward, init_params
from .objective import ObjectiveConfig, objective
from .tensor_core import build_banded_mean

log = logging.getLogger(__name__)

REPORT_SCHEMA_VERSION = 1
OPTIMIZERS = ("gd", "adam")


class DivergenceError(RuntimeError):
    """The objective became non-finite during training."""

    def __init__(self, epoch, learning_rate, value):
        super().__init__(f"objective became non-finite ({value}) at epoch {epoch} "
                         f"with learning rate {learning_rate}; try a smaller learning rate")
        self.epoch = epoch
        self.learning_rate = learning_rate


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.1
    weight_decay: float = 1e-3
    bandwidth: int = 168
    lam: float = 0.15
    delta: float = 1.0
    max_epochs: int = 2000
    patience: int = 50
    seed: int = 0
    omega: float = 0.1
    theta: float = 200.0
    adjacency: str = "gaussian"
    fill: str = "interp"
    hidden_width: int | None = None
    split: tuple = (0.6, 0.2, 0.2)
    optimizer: str = "adam"

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if int(self.bandwidth) != self.bandwidth or self.bandwidth < 1:
            raise ValueError(f"bandwidth must be a positive integer, got {self.bandwidth}")
        if self.max_epochs < 1:
            raise ValueError(f"max_epochs must be at least 1, got {self.max_epochs}")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"unknown optimizer {self.optimizer!r}; expected one of {OPTIMIZERS}")
        if self.patience < 0:
            raise ValueError(f"patience must be non-negative, got {self.patience}")
        self.objective_config()  # validates delta, lam, weight_decay

    def objective_config(self) -> ObjectiveConfig:
        return ObjectiveConfig(self.delta, self.lam, self.weight_decay)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["split"] = list(self.split)
        return d


@dataclass
class TrainHistory:
    objective: list = field(default_factory=list)
    val_rmse: list = field(default_factory=list)
    grad_norm: list = field(default_factory=list)
    best_epoch: int = -1

    @property
    def epochs(self) -> list:
        return list(range(len(self.objective)))

    @property
    def best_val_rmse(self) -> float:
        return self.val_rmse[self.best_epoch]


def make_optimizer(config: TrainConfig):
    """Return ``step(layers, grads)`` updating the parameter arrays in place.

    ``"gd"`` is plain gradient descent.  ``"adam"`` uses the usual moment
    estimates (beta1=0.9, beta2=0.999, eps=1e-8) with bias correction.
    """
    lr = config.learning_rate
    if config.optimizer == "gd":
        def step(layers, grads):
            for U, g in zip(layers, grads):
                U -= lr * g
        return step

    beta1, beta2, eps = 0.9, 0.999, 1e-8
    state = {"t": 0, "m": None, "v": None}

    def step(layers, grads):
        if state["m"] is None:
            state["m"] = [np.zeros_like(g) for g in grads]
            state["v"] = [np.zeros_like(g) for g in grads]
        state["t"] += 1
        t = state["t"]
        for U, g, m, v in zip(layers, grads, state["m"], state["v"]):
            m *= beta1
            m += (1 - beta1) * g
            v *= beta2
            v += (1 - beta2) * g * g
            m_hat = m / (1 - beta1 ** t)
            v_hat = v / (1 - beta2 ** t)
            U -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return step


def _adjacency_for(graph: StationGraph, kind: str) -> np.ndarray:
    return graph.A if graph.adjacency == kind else graph.with_adjacency(kind).A


def _check_ready(ds: MaskedDataset, graph: StationGraph):
    if not ds.is_split or ds.scaler is None:
        raise ValueError("dataset must be split and normalized before training")
    if graph.n_nodes != ds.shape[0]:
        raise ValueError(f"graph has {graph.n_nodes} nodes but dataset has {ds.shape[0]} stations")


def train(dataset: MaskedDataset, graph: StationGraph, config: TrainConfig):
    """Fit the parameters by full-batch gradient descent.

    The model input is :func:`impute_initial` of the dataset and the loss is
    taken over train entries.  Validation RMSE is evaluated every epoch
    before the update; training stops after ``patience`` consecutive epochs
    without strict improvement (or at ``max_epochs``) and the parameters of
    the best epoch are returned.  When the validation split is empty the
    train objective is monitored instead.

    Returns
    -------
    params : ModelParams
    history : TrainHistory
    """
    _check_ready(dataset, graph)
    N, F, T = dataset.shape
    M = build_banded_mean(T, config.bandwidth)
    A_t = adjacency_tensor(_adjacency_for(graph, config.adjacency), T)
    A_hat = M.apply(A_t)
    W = impute_initial(dataset, config.fill)
    target = dataset.signal
    obj_cfg = config.objective_config()
    use_val = bool(dataset.val.any())

    params = init_params(F, F, T, seed=config.seed, hidden_width=config.hidden_width)
    params.config = config.to_dict()
    history = TrainHistory()
    best, best_score, stale = params.copy(), np.inf, 0
    step = make_optimizer(config)

    for epoch in range(config.max_epochs):
        with np.errstate(over="ignore", invalid="ignore"):  # divergence is checked below
            H, cache = forward(A_t, W, params, M, A_hat=A_hat)
            value, dL_dH, decay = objective(H, target, dataset.train, obj_cfg, params)
        if not np.isfinite(value):
            raise DivergenceError(epoch, config.learning_rate, value)
        val = metrics.rmse(H, target, dataset.val) if use_val else np.nan
        grads = backward(cache, dL_dH, A_t, W, params, M)
        grads = [g + d for g, d in zip(grads, decay)]
        history.objective.append(value)
        history.val_rmse.append(val)
        history.grad_norm.append(float(np.sqrt(sum(np.sum(g * g) for g in grads))))

        score = val if use_val else value
        if score < best_score:
            best, best_score, stale = params.copy(), score, 0
            history.best_epoch = epoch
        else:
            stale += 1
            if stale > config.patience:
                break
        step(params.layers, grads)
        if not all(np.all(np.isfinite(U)) for U in params.layers):
            raise DivergenceError(epoch, config.learning_rate, "non-finite parameters")

    log.debug("stopped after %d epochs, best epoch %d", len(history.objective), history.best_epoch)
    return best, history


def predict(dataset: MaskedDataset, graph: StationGraph, params: ModelParams,
            config: TrainConfig) -> np.ndarray:
    """Raw model output in normalized units."""
    _check_ready(dataset, graph)
    T = dataset.shape[2]
    M = build_banded_mean(T, config.bandwidth)
    A_t = adjacency_tensor(_adjacency_for(graph, config.adjacency), T)
    H, _ = forward(A_t, impute_initial(dataset, config.fill), params, M)
    return H


@dataclass
class RecoveryReport:
    scopes: dict
    missing_ratio: float
    config: dict
    seeds: dict
    units: str = "normalized"
    baselines: dict = field(default_factory=dict)
    training: dict = field(default_factory=dict)
    wall_seconds: float = 0.0

    def to_dict(self) -> dict:
        return {
            "schema_version": REPORT_SCHEMA_VERSION,
            "scopes": self.scopes,
            "missing_ratio": self.missing_ratio,
            "units": self.units,
            "baselines": self.baselines,
            "training": self.training,
            "config": self.config,
            "seeds": self.seeds,
            "wall_seconds": self.wall_seconds,
        }


def scoped_metrics(prediction, recovered, dataset: MaskedDataset, physical_units=False) -> dict:
    """RSE/RMSE on the hidden, test and whole scopes.

    ``prediction`` is the raw model output (used on the test scope, whose
    entries the model never saw); ``recovered`` has observed entries passed
    through.  Both are in normalized units.  A scope is ``None`` when it
    is empty or needs ground truth that is not available.
    """
    truth = dataset.ground_truth
    signal = dataset.signal
    if physical_units:
        sc = dataset.scaler
        prediction, recovered, signal = (sc.denormalize(x) for x in (prediction, recovered, signal))
        truth = None if truth is None else sc.denormalize(truth)

    def pair(a, b, mask):
        if b is None or mask is None or not mask.any():
            return None
        out = {"rmse": metrics.rmse(a, b, mask)}
        try:
            out["rse"] = metrics.rse(a, b, mask)
        except ValueError:
            out["rse"] = None
        return out

    whole = None if truth is None else np.ones(dataset.shape, dtype=bool)
    return {
        "hidden": pair(recovered, truth, dataset.hidden),
        "test": pair(prediction, signal, dataset.test),
        "whole": pair(recovered, truth, whole),
    }


def recover(dataset: MaskedDataset, graph: StationGraph, params: ModelParams,
            config: TrainConfig, physical_units: bool = False, history: TrainHistory = None):
    """Fill every unobserved entry with the model output.

    Observed entries keep their measured values.  Returns the recovered
    tensor in physical units and a :class:`RecoveryReport`.
    """
    start = time.perf_counter()
    H = predict(dataset, graph, params, config)
    recovered = np.where(dataset.observed, dataset.signal, H)
    scopes = scoped_metrics(H, recovered, dataset, physical_units)
    base = metrics.baseline_mean(dataset)
    base_raw = np.where(dataset.train, dataset.signal, base)
    baselines = {"mean": scoped_metrics(base_raw, base, dataset, physical_units)}
    training = {}
    if history is not None:
        training = {"epochs_run": len(history.objective), "best_epoch": history.best_epoch,
                    "best_val_rmse": None if np.isnan(history.best_val_rmse)
                    else history.best_val_rmse}
    report = RecoveryReport(
        scopes=scopes,
        missing_ratio=float(dataset.hidden.mean()),
        config=config.to_dict(),
        seeds={"split": config.seed, "init": config.seed},
        units="physical" if physical_units else "normalized",
        baselines=baselines,
        training=training,
        wall_seconds=time.perf_counter() - start,
    )
    return dataset.scaler.denormalize(recovered), report


def prepare(dataset: MaskedDataset, config: TrainConfig) -> MaskedDataset:
    """Split observed entries (seeded by ``config.seed``) and normalize."""
    return normalize(split_observed(dataset, config.split, seed=config.seed))


def run(dataset: MaskedDataset, graph: StationGraph, config: TrainConfig,
        physical_units: bool = False):
    """Split, normalize, train and recover in one call.

    ``dataset`` is the raw (unsplit, unnormalized) masked dataset.

    Returns
    -------
    recovered : ndarray
    report : RecoveryReport
    params : ModelParams
    history : TrainHistory
    """
    start = time.perf_counter()
    ds = prepare(dataset, config)
    params, history = train(ds, graph, config)
    recovered, report = recover(ds, graph, params, config, physical_units, history)
    report.wall_seconds = time.perf_counter() - start
    return recovered, report, params, history


ABLATION_SWITCHES = ("no_regularization", "symmetric_normalized_adjacency")


def ablation_config(config: TrainConfig, switches) -> TrainConfig:
    unknown = set(switches) - set(ABLATION_SWITCHES)
    if unknown:
        raise ValueError(f"unknown ablation switches {sorted(unknown)}")
    if "no_regularization" in switches:
        config = replace(config, lam=0.0)
    if "symmetric_normalized_adjacency" in switches:
        config = replace(config, adjacency="sym-norm")
    return config


def ablate(dataset: MaskedDataset, graph: StationGraph, config: TrainConfig,
           switches=ABLATION_SWITCHES, physical_units: bool = False) -> dict:
    """Run the pipeline for every subset of ``switches`` with shared seeds.

    Returns a dict keyed by arm name (``"full"`` for no switch, otherwise
    the active switches joined by ``+``) mapping to RecoveryReport.
    """
    switches = tuple(switches)
    reports = {}
    for r in range(len(switches) + 1):
        for combo in itertools.combinations(switches, r):
            name = "+".join(combo) if combo else "full"
            _, report, _, _ = run(dataset, graph, ablation_config(config, combo), physical_units)
            reports[name] = report
    return reports


def ablation_table(reports: dict, scope: str = "hidden") -> str:
    lines = [f"{'arm':<48} {'rmse':>10} {'rse':>10}"]
    for name, rep in reports.items():
        s = rep.scopes.get(scope)
        if s is None:
            lines.append(f"{name:<48} {'-':>10} {'-':>10}")
        else:
            rse = "-" if s["rse"] is None else f"{s['rse']:.4f}"
            lines.append(f"{name:<48} {s['rmse']:>10.4f} {rse:>10}")
    return "\n".join(lines)
