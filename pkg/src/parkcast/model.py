"""Multi-source embedding network: one branch per data source, a concatenating
combiner and a feed-forward decoder that emits one value per block.

Input layouts by schema (N = samples, V = vertices, T = time steps, D = features):

    ND    (N, D)          FC -> act -> FC
    NTD   (N, T, D)       stacked sequence-to-one LSTM
    NVD   (N, V, D)       GCNN layer(s) -> per-vertex FC(s), flattened to V*O
    NVTD  (N, V, T, D)    shared GCNN + per-vertex FC(s) at every stamp -> LSTM
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .autodiff import DivergenceError, ShapeError, Tensor, activation, as_tensor, concat, matmul
from .graph import gcnn_layer, gcnn_param_specs
from .numerics import ParamSpec, ParamStore, dropout_mask, init_params, make_rng
from .recurrent import LstmParams, lstm_param_specs, stacked_lstm

SCHEMAS = ("ND", "NTD", "NVD", "NVTD")
GRAPH_SCHEMAS = ("NVD", "NVTD")
_ALIASES = {"NTVD": "NVTD"}


@dataclass
class EmbeddingConfig:
    gcnn_channels: tuple = (8,)
    cheb_order: int = 3
    fc_dims: tuple = (16, 16)
    lstm_dims: tuple = (256,)
    dropout: float = 0.0
    activation: str = "relu"

    def __post_init__(self):
        self.gcnn_channels = tuple(int(c) for c in self.gcnn_channels)
        self.fc_dims = tuple(int(c) for c in self.fc_dims)
        self.lstm_dims = tuple(int(c) for c in self.lstm_dims)
        activation(self.activation)
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.cheb_order < 1:
            raise ValueError("cheb_order must be >= 1")


@dataclass
class DataSourceSpec:
    name: str
    schema: str
    feature_dim: int
    embedding: EmbeddingConfig = field(default_factory=EmbeddingConfig)
    uses_graph: bool | None = None

    def __post_init__(self):
        self.schema = _ALIASES.get(self.schema, self.schema)
        if self.schema not in SCHEMAS:
            raise ValueError(f"{self.name}: unknown schema {self.schema!r}")
        if isinstance(self.embedding, dict):
            self.embedding = EmbeddingConfig(**self.embedding)
        derived = self.schema in GRAPH_SCHEMAS
        if self.uses_graph is None:
            self.uses_graph = derived
        elif self.uses_graph != derived:
            raise ValueError(f"{self.name}: uses_graph={self.uses_graph} contradicts schema {self.schema}")
        if "." in self.name:
            raise ValueError(f"source name {self.name!r} may not contain '.'")
        cfg = self.embedding
        if self.schema == "ND" and len(cfg.fc_dims) != 2:
            raise ValueError(f"{self.name}: ND embedding needs exactly two FC dims")
        if self.schema in ("NTD", "NVTD") and not cfg.lstm_dims:
            raise ValueError(f"{self.name}: {self.schema} embedding needs LSTM dims")
        if self.uses_graph and not cfg.gcnn_channels:
            raise ValueError(f"{self.name}: graph embedding needs GCNN channels")

    def embedding_dim(self, n_vertices):
        cfg = self.embedding
        if self.schema == "ND":
            return cfg.fc_dims[-1]
        if self.schema == "NTD" or self.schema == "NVTD":
            return cfg.lstm_dims[-1]
        per_vertex = cfg.fc_dims[-1] if cfg.fc_dims else cfg.gcnn_channels[-1]
        return n_vertices * per_vertex


@dataclass
class ModelSpec:
    sources: list
    n_vertices: int
    decoder_dims: tuple = (1024,)
    horizon: int = 3
    window: int = 24
    decoder_activation: str = "relu"

    def __post_init__(self):
        self.sources = [s if isinstance(s, DataSourceSpec) else DataSourceSpec(**s) for s in self.sources]
        self.decoder_dims = tuple(int(d) for d in self.decoder_dims)
        if not self.sources:
            raise ValueError("a model needs at least one data source")
        if self.horizon < 1 or self.window < 1:
            raise ValueError("horizon and window must be >= 1")
        names = [s.name for s in self.sources]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate source names {names}")

    def source(self, name):
        for s in self.sources:
            if s.name == name:
                return s
        raise KeyError(name)

    @property
    def source_names(self):
        return [s.name for s in self.sources]

    def without(self, *names):
        keep = [s for s in self.sources if s.name not in names]
        return ModelSpec(keep, self.n_vertices, self.decoder_dims, self.horizon,
                         self.window, self.decoder_activation)

    def only(self, names):
        keep = [s for s in self.sources if s.name in set(names)]
        return ModelSpec(keep, self.n_vertices, self.decoder_dims, self.horizon,
                         self.window, self.decoder_activation)

    def to_dict(self):
        d = asdict(self)
        for s in d["sources"]:
            s.pop("uses_graph")
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def final_model_spec(n_vertices=39, window=24, horizon=3, weather_dim=14, weather_hidden=64):
    """The tuned architecture: occupancy and speed as NVTD, weather as NTD."""
    return ModelSpec(
        sources=[
            DataSourceSpec("occupancy", "NVTD", 1, EmbeddingConfig(
                gcnn_channels=(8,), fc_dims=(16, 16), lstm_dims=(256,), dropout=0.25)),
            DataSourceSpec("speed", "NVTD", 1, EmbeddingConfig(
                gcnn_channels=(4,), fc_dims=(8, 8), lstm_dims=(256,), dropout=0.0)),
            DataSourceSpec("weather", "NTD", weather_dim, EmbeddingConfig(
                gcnn_channels=(), fc_dims=(), lstm_dims=(weather_hidden,), dropout=0.0)),
        ],
        n_vertices=n_vertices, decoder_dims=(1024,), horizon=horizon, window=window,
    )


# -- parameter layout ---------------------------------------------------------

def _fc_specs(prefix, d_in, d_out):
    return [ParamSpec(f"{prefix}.W", (d_in, d_out)), ParamSpec(f"{prefix}.b", (d_out,), kind="bias")]


def source_param_specs(src, n_vertices):
    cfg, p = src.embedding, src.name
    specs = []
    d = src.feature_dim
    if src.schema == "ND":
        specs += _fc_specs(f"{p}.fc0", d, cfg.fc_dims[0])
        specs += _fc_specs(f"{p}.fc1", cfg.fc_dims[0], cfg.fc_dims[1])
        return specs
    if src.uses_graph:
        for l, c in enumerate(cfg.gcnn_channels):
            specs += gcnn_param_specs(f"{p}.gcnn{l}", cfg.cheb_order, d, c)
            d = c
        for l, c in enumerate(cfg.fc_dims):
            specs += _fc_specs(f"{p}.fc{l}", d, c)
            d = c
        if src.schema == "NVD":
            return specs
        d = n_vertices * d
    for l, h in enumerate(cfg.lstm_dims):
        specs += lstm_param_specs(f"{p}.lstm{l}", d, h)
        d = h
    return specs


def model_param_specs(spec):
    specs = []
    for src in spec.sources:
        specs += source_param_specs(src, spec.n_vertices)
    width = spec.decoder_dims[0] if spec.decoder_dims else spec.n_vertices
    # the combiner's slice of the first decoder layer belongs to each branch,
    # so detaching a source removes exactly its own parameters
    for src in spec.sources:
        specs.append(ParamSpec(f"{src.name}.combine.W", (src.embedding_dim(spec.n_vertices), width),
                               fan_in=sum(s.embedding_dim(spec.n_vertices) for s in spec.sources),
                               fan_out=width))
    specs.append(ParamSpec("decoder.fc0.b", (width,), kind="bias"))
    dims = list(spec.decoder_dims[1:]) + [spec.n_vertices] if spec.decoder_dims else []
    d = width
    for l, c in enumerate(dims, start=1):
        specs += _fc_specs(f"decoder.fc{l}", d, c)
        d = c
    return specs


def init_model_params(spec, seed):
    return init_params(model_param_specs(spec), make_rng(seed))


# -- embedding branches -------------------------------------------------------

def _dropout(x, rate, mode, rng):
    if mode == "train" and rate > 0:
        return x * dropout_mask(x.shape, rate, rng)
    return x


def _fc(x, params, prefix):
    return matmul(x, params[f"{prefix}.W"]) + params[f"{prefix}.b"]


def embed_nd(x, params, prefix, cfg, mode="eval", rng=None):
    """FC -> activation -> FC on (N, D) features."""
    x = as_tensor(x)
    if x.ndim != 2:
        raise ShapeError("embed_nd", x.shape, params[f"{prefix}.fc0.W"].shape, "expected (N, D)")
    act = activation(cfg.activation)
    h = _dropout(act(_fc(x, params, f"{prefix}.fc0")), cfg.dropout, mode, rng)
    return _fc(h, params, f"{prefix}.fc1")


def _lstm_layers(params, prefix, cfg):
    return [LstmParams.from_store(params, f"{prefix}.lstm{l}") for l in range(len(cfg.lstm_dims))]


def embed_ntd(x, params, prefix, cfg, mode="eval", rng=None):
    """Stacked sequence-to-one LSTM over (N, T, D)."""
    x = as_tensor(x)
    if x.ndim != 3:
        raise ShapeError("embed_ntd", x.shape, (), "expected (N, T, D)")
    return stacked_lstm(x, _lstm_layers(params, prefix, cfg), cfg.dropout, mode, rng)


def _vertex_features(x, params, prefix, cfg, sl, mode, rng):
    """GCNN layer(s) then per-vertex FC(s) on (..., V, D) -> (..., V, O)."""
    act = cfg.activation
    h = x
    for l in range(len(cfg.gcnn_channels)):
        h = gcnn_layer(h, sl, params[f"{prefix}.gcnn{l}.theta"], params[f"{prefix}.gcnn{l}.bias"], act)
    fn = activation(act)
    for l in range(len(cfg.fc_dims)):
        h = _dropout(fn(_fc(h, params, f"{prefix}.fc{l}")), cfg.dropout, mode, rng)
    return h


def embed_nvd(x, params, prefix, cfg, sl, mode="eval", rng=None):
    x = as_tensor(x)
    if x.ndim != 3 or x.shape[1] != sl.n:
        raise ShapeError("embed_nvd", x.shape, sl.L.shape, "expected (N, V, D) with V matching the graph")
    h = _vertex_features(x, params, prefix, cfg, sl, mode, rng)
    return h.reshape(x.shape[0], -1)


def embed_nvtd(x, params, prefix, cfg, sl, mode="eval", rng=None):
    """Same GCNN weights at each of the T stamps, then the LSTM over time."""
    x = as_tensor(x)
    if x.ndim != 4 or x.shape[1] != sl.n:
        raise ShapeError("embed_nvtd", x.shape, sl.L.shape, "expected (N, V, T, D) with V matching the graph")
    n, v, t, _ = x.shape
    h = _vertex_features(x.transpose(0, 2, 1, 3), params, prefix, cfg, sl, mode, rng)
    seq = h.reshape(n, t, -1)
    return stacked_lstm(seq, _lstm_layers(params, prefix, cfg), cfg.dropout, mode, rng)


def embed_source(src, x, params, sl, mode="eval", rng=None):
    if src.schema == "ND":
        return embed_nd(x, params, src.name, src.embedding, mode, rng)
    if src.schema == "NTD":
        return embed_ntd(x, params, src.name, src.embedding, mode, rng)
    if src.schema == "NVD":
        return embed_nvd(x, params, src.name, src.embedding, sl, mode, rng)
    return embed_nvtd(x, params, src.name, src.embedding, sl, mode, rng)


def model_forward(inputs, spec, params, sl=None, mode="eval", rng=None):
    """Predictions of shape (N, V) in the preprocessed scale."""
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    missing = [s.name for s in spec.sources if s.name not in inputs]
    if missing:
        raise KeyError(f"missing input for data source(s): {', '.join(missing)}")
    if any(s.uses_graph for s in spec.sources) and sl is None:
        raise ValueError("graph-based sources need a ScaledLaplacian")
    rng = make_rng(rng if rng is not None else 0)
    embs = [embed_source(s, inputs[s.name], params, sl, mode, rng) for s in spec.sources]
    combined = concat(embs, axis=-1) if len(embs) > 1 else embs[0]
    W = concat([params[f"{s.name}.combine.W"] for s in spec.sources], axis=0) \
        if len(embs) > 1 else params[f"{spec.sources[0].name}.combine.W"]
    h = matmul(combined, W) + params["decoder.fc0.b"]
    n_layers = len(spec.decoder_dims)
    if n_layers:
        act = activation(spec.decoder_activation)
        for l in range(1, n_layers + 1):
            h = _fc(act(h), params, f"decoder.fc{l}")
    if not np.isfinite(h.data).all():
        raise DivergenceError("non-finite predictions")
    return h


class ParkingModel:
    """A ModelSpec bound to a graph and a parameter store."""

    def __init__(self, spec, laplacian=None, params=None, seed=0):
        self.spec = spec
        self.laplacian = laplacian
        self.params = params if params is not None else init_model_params(spec, seed)

    def forward(self, inputs, mode="eval", rng=None):
        return model_forward(inputs, self.spec, self.params, self.laplacian, mode, rng)

    def predict(self, inputs, batch_size=256):
        """Eval-mode predictions as a numpy array, evaluated in batches."""
        n = len(next(iter(inputs.values())))
        out = []
        for lo in range(0, n, batch_size):
            batch = {k: v[lo:lo + batch_size] for k, v in inputs.items()}
            out.append(self.forward(batch, "eval").data)
        return np.concatenate(out, axis=0) if out else np.zeros((0, self.spec.n_vertices))

    def n_params(self, prefix=""):
        return self.params.count(prefix)
