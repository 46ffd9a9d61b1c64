"""MSE loss, Adam with L2 weight decay, early-stopped training and grid search."""
from __future__ import annotations

import csv
import itertools
import logging
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .autodiff import DivergenceError, ShapeError, as_tensor, backward
from .model import ParkingModel, init_model_params, model_forward
from .numerics import make_rng

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    weight_decay: float = 1e-4
    max_epochs: int = 200
    patience: int = 5
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        for name in ("learning_rate", "beta1", "beta2", "epsilon", "max_epochs", "batch_size"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0

    @classmethod
    def for_params(cls, params):
        return cls({p.name: np.zeros_like(p.data) for p in params},
                   {p.name: np.zeros_like(p.data) for p in params}, 0)


def mse_loss(pred, target):
    pred = as_tensor(pred)
    target = np.asarray(target.data if hasattr(target, "data") else target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError("mse_loss", pred.shape, target.shape)
    diff = pred - target
    return (diff * diff).mean()


def adam_step(params, state, cfg):
    """One Adam update using each param's ``grad``; L2 decay is folded into the gradient."""
    state.t += 1
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for p in params:
        g = p.grad
        if not np.isfinite(g).all():
            raise DivergenceError(f"non-finite gradient for {p.name}")
        if cfg.weight_decay:
            g = g + cfg.weight_decay * p.data
        m = state.m[p.name]
        v = state.v[p.name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= cfg.learning_rate * (m / c1) / (np.sqrt(v / c2) + cfg.epsilon)


@dataclass
class EpochRecord:
    epoch: int
    train_mse: float
    test_mse: float
    batch_mse: float


@dataclass
class TrainResult:
    params: object
    history: list
    best_epoch: int
    adam: AdamState
    visits: np.ndarray | None = None

    @property
    def best_test_mse(self):
        return min(r.test_mse for r in self.history)


def evaluate_mse(model, inputs, targets, batch_size=256):
    """Eval-mode MSE accumulated exactly as sum of squares over all entries."""
    n = len(targets)
    if n == 0:
        return float("nan")
    total = 0.0
    for lo in range(0, n, batch_size):
        batch = {k: v[lo:lo + batch_size] for k, v in inputs.items()}
        pred = model.forward(batch, "eval").data
        total += float(((pred - targets[lo:lo + batch_size]) ** 2).sum())
    return total / targets.size


def train(spec, laplacian, train_set, test_set, cfg, params=None, adam=None,
          history=None, start_epoch=1, on_epoch=None, best_params=None):
    """Minibatch Adam with early stopping on the held-out loss.

    ``train_set`` / ``test_set`` are (inputs dict, targets array) pairs.  Returns
    the parameters of the best held-out epoch together with the full history.
    To resume, pass the last epoch's ``params`` and ``adam`` state, the history
    so far, ``start_epoch`` and the best epoch's parameters as ``best_params``.
    """
    tr_inputs, tr_y = train_set
    te_inputs, te_y = test_set
    n = len(tr_y)
    if n == 0:
        raise ValueError("empty training set")
    model = ParkingModel(spec, laplacian, params if params is not None else init_model_params(spec, cfg.seed))
    plist = list(model.params)
    adam = adam or AdamState.for_params(plist)
    history = list(history or [])
    has_test = len(te_y) > 0
    monitor = (te_inputs, te_y) if has_test else (tr_inputs, tr_y)

    best = min(history, key=lambda r: r.test_mse) if history else None
    best_state = None
    if best is not None:
        best_state = (best_params if best_params is not None else model.params).state()
    best_epoch = best.epoch if best else None
    best_loss = best.test_mse if best else np.inf
    stale = history[-1].epoch - best_epoch if history else 0
    visits = np.zeros(n, dtype=np.int64)
    base_rng = make_rng(cfg.seed)
    # one independent stream per epoch keeps resumed runs reproducible
    epoch_seeds = base_rng.integers(0, 2**63 - 1, size=cfg.max_epochs + 1)

    for epoch in range(start_epoch, cfg.max_epochs + 1):
        rng = make_rng(int(epoch_seeds[epoch]))
        order = rng.permutation(n)
        batch_losses = []
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            visits[idx] += 1
            batch = {k: v[idx] for k, v in tr_inputs.items()}
            model.params.zero_grad()
            try:
                loss = mse_loss(model_forward(batch, spec, model.params, laplacian, "train", rng), tr_y[idx])
                backward(loss)
                adam_step(plist, adam, cfg)
            except DivergenceError as exc:
                raise DivergenceError(f"epoch {epoch}: {exc}") from exc
            batch_losses.append(float(loss.data) * len(idx))
        rec = EpochRecord(
            epoch=epoch,
            train_mse=evaluate_mse(model, tr_inputs, tr_y),
            test_mse=evaluate_mse(model, *monitor),
            batch_mse=sum(batch_losses) / n,
        )
        if not np.isfinite(rec.test_mse) or not np.isfinite(rec.train_mse):
            raise DivergenceError(f"epoch {epoch}: non-finite loss")
        history.append(rec)
        log.info("epoch %d train %.6f test %.6f", epoch, rec.train_mse, rec.test_mse)
        if on_epoch is not None:
            on_epoch(rec, model.params, adam)
        if rec.test_mse < best_loss:
            best_loss, best_epoch, stale = rec.test_mse, epoch, 0
            best_state = model.params.state()
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    model.params.load_state(best_state)
    return TrainResult(model.params, history, best_epoch, adam, visits)


def write_history_csv(path, history):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_mse", "test_mse"])
        for r in history:
            w.writerow([r.epoch, repr(r.train_mse), repr(r.test_mse)])


def read_history_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [EpochRecord(int(r["epoch"]), float(r["train_mse"]), float(r["test_mse"]), float("nan"))
            for r in rows]


@dataclass
class GridResult:
    rank: int
    settings: dict
    best_test_mse: float
    best_epoch: int
    epochs_run: int


def grid_search(axes, build, cfg, max_epochs=20):
    """Train every combination of ``axes`` and rank by best held-out loss.

    ``build(settings, cfg)`` must return ``(spec, laplacian, train_set, test_set,
    cfg)`` for one combination, so preprocessing choices, layer sizes,
    activations and optimizer settings can all be grid axes.
    """
    if not axes:
        raise ValueError("grid search needs at least one axis")
    for name, values in axes.items():
        if len(values) == 0:
            raise ValueError(f"grid axis {name!r} is empty")
    names = list(axes)
    rows = []
    for combo in itertools.product(*(axes[k] for k in names)):
        settings = dict(zip(names, combo))
        spec, lap, tr, te, run_cfg = build(settings, replace(cfg, max_epochs=max_epochs))
        res = train(spec, lap, tr, te, run_cfg)
        rows.append(GridResult(0, settings, res.best_test_mse, res.best_epoch, len(res.history)))
    rows.sort(key=lambda r: r.best_test_mse)
    for i, r in enumerate(rows, start=1):
        r.rank = i
    return rows


def config_dict(cfg):
    return asdict(cfg)
