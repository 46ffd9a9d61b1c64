"""Parameter storage, initialization, dropout and gradient checking."""
from __future__ import annotations

import io
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from .autodiff import DivergenceError, Param, Tensor, backward

__all__ = [
    "make_rng", "ParamSpec", "ParamStore", "init_params", "dropout_mask",
    "check_gradient", "NondeterministicLossError", "CHECKPOINT_VERSION",
]

CHECKPOINT_VERSION = 1


def make_rng(seed):
    """Seeded generator.  PCG64 is used so draws are identical across platforms."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.PCG64(np.uint64(seed)))


@dataclass(frozen=True)
class ParamSpec:
    name: str
    shape: tuple
    kind: str = "weight"    # weight | bias | forget_bias
    fan_in: int | None = None
    fan_out: int | None = None

    def fans(self):
        if self.fan_in is not None and self.fan_out is not None:
            return self.fan_in, self.fan_out
        if len(self.shape) < 2:
            return self.shape[0], self.shape[0]
        receptive = int(np.prod(self.shape[:-2])) if len(self.shape) > 2 else 1
        return self.shape[-2] * receptive, self.shape[-1]


class ParamStore:
    """Ordered name -> Param mapping."""

    def __init__(self, params=()):
        self._params = OrderedDict()
        for p in params:
            self.add(p)

    def add(self, p):
        if p.name in self._params:
            raise KeyError(f"duplicate parameter {p.name!r}")
        self._params[p.name] = p
        return p

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __iter__(self):
        return iter(self._params.values())

    def __len__(self):
        return len(self._params)

    def names(self):
        return list(self._params)

    def with_prefix(self, prefix):
        return [p for n, p in self._params.items() if n.startswith(prefix)]

    def count(self, prefix=""):
        return sum(p.size for p in self.with_prefix(prefix))

    def zero_grad(self):
        for p in self:
            p.zero_grad()

    def state(self):
        return OrderedDict((n, p.data.copy()) for n, p in self._params.items())

    def load_state(self, state):
        missing = set(self._params) - set(state)
        if missing:
            raise KeyError(f"checkpoint lacks parameters {sorted(missing)}")
        for n, p in self._params.items():
            arr = np.asarray(state[n], dtype=np.float64)
            if arr.shape != p.shape:
                raise ValueError(f"{n}: checkpoint shape {arr.shape} != {p.shape}")
            p.data = arr.copy()

    def copy(self):
        return ParamStore(Param(p.data.copy(), p.name) for p in self)

    # -- checkpoint I/O: npz holding name -> array, plus a version stamp ------
    def to_bytes(self, extra=None):
        buf = io.BytesIO()
        arrays = {f"param/{n}": p.data for n, p in self._params.items()}
        arrays["__version__"] = np.array(CHECKPOINT_VERSION)
        arrays["__order__"] = np.array(list(self._params), dtype=str)
        for k, v in (extra or {}).items():
            arrays[f"extra/{k}"] = np.asarray(v)
        np.savez(buf, **arrays)
        return buf.getvalue()

    def save(self, path, extra=None):
        with open(path, "wb") as fh:
            fh.write(self.to_bytes(extra))

    @classmethod
    def from_bytes(cls, blob):
        with np.load(io.BytesIO(blob), allow_pickle=False) as z:
            version = int(z["__version__"])
            if version != CHECKPOINT_VERSION:
                raise ValueError(f"unsupported checkpoint version {version}")
            store = cls(Param(z[f"param/{n}"], str(n)) for n in z["__order__"])
            extra = {k[len("extra/"):]: z[k] for k in z.files if k.startswith("extra/")}
        return store, extra

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def init_params(specs, rng):
    """Glorot-uniform weights, zero biases, forget-gate biases at 1.0."""
    rng = make_rng(rng)
    store = ParamStore()
    for spec in specs:
        shape = tuple(int(s) for s in spec.shape)
        if not shape or any(s <= 0 for s in shape):
            raise ValueError(f"{spec.name}: invalid shape {spec.shape}")
        if spec.kind == "weight":
            fan_in, fan_out = spec.fans()
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            value = rng.uniform(-limit, limit, size=shape)
        elif spec.kind == "bias":
            value = np.zeros(shape)
        elif spec.kind == "forget_bias":
            value = np.ones(shape)
        else:
            raise ValueError(f"{spec.name}: unknown parameter kind {spec.kind!r}")
        store.add(Param(value, spec.name))
    return store


def dropout_mask(shape, rate, rng):
    """Inverted dropout mask: 0 with probability ``rate``, else 1/(1-rate)."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    if rate == 0.0:
        return np.ones(shape)
    keep = make_rng(rng).random(shape) >= rate
    return keep / (1.0 - rate)


class NondeterministicLossError(RuntimeError):
    pass


def check_gradient(loss_fn, params, step=1e-6, max_entries=None, rng=0):
    """Largest relative gap between analytic and central-difference gradients.

    ``loss_fn()`` must build a fresh scalar Tensor from the current parameter
    values.  The gap per entry is |a - cd| / max(|a|, |cd|, 1e-12).  With
    ``max_entries`` set, each parameter is probed at that many random
    coordinates instead of all of them.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    params = list(params)
    if not params:
        return 0.0
    for p in params:
        p.zero_grad()
    loss = loss_fn()
    base = float(loss.data)
    if not np.isfinite(base):
        raise DivergenceError(f"non-finite loss {base}")
    again = float(loss_fn().data)
    if again != base:
        raise NondeterministicLossError(f"loss_fn not deterministic: {base!r} vs {again!r}")
    backward(loss)
    analytic = [p.grad.copy() for p in params]

    pick = make_rng(rng)
    worst = 0.0
    for p, g in zip(params, analytic):
        flat = p.data.reshape(-1)
        if max_entries is not None and flat.size > max_entries:
            idx = pick.choice(flat.size, size=max_entries, replace=False)
        else:
            idx = np.arange(flat.size)
        gflat = g.reshape(-1)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + step
            up = float(loss_fn().data)
            flat[i] = orig - step
            down = float(loss_fn().data)
            flat[i] = orig
            cd = (up - down) / (2.0 * step)
            a = gflat[i]
            err = abs(a - cd) / max(abs(a), abs(cd), 1e-12)
            worst = max(worst, err)
    return worst


def as_param_list(params):
    if isinstance(params, ParamStore):
        return list(params)
    if isinstance(params, Tensor):
        return [params]
    return list(params)
