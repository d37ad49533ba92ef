"""Model assembly, forward passes, parameter accounting, and persistence.

A model is a parameter registry (adjacency, per-layer MLP branches,
pooling weights, linear head) plus the architecture config that determines
how a padded sample flows through it. Two architectures share the same
container: the full learnable-graph inception network, and the plain GCN
baseline (two renormalized propagation layers over the binary chain with a
max|mean readout).
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import adjacency as adjmod
from . import autodiff as ad
from . import layers as L
from .autodiff import Tensor
from .data import SequenceSample
from .errors import ConfigError, ContractError, ShapeError

ADJACENCY_MODES = ("learnable", "binary", "weighted")
BASELINE_GCN_WIDTH = 64
CHECKPOINT_FORMAT = "lgrin-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    m: int
    p: int
    c: int
    inception_layers: int = 2
    etas: tuple[tuple[int, int], ...] | None = None
    adjacency_mode: str = "learnable"
    pooling_mode: str = "learnable_full"
    mask_threshold: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.m < 2 or self.p < 1 or self.c < 2:
            raise ConfigError(f"need m >= 2, p >= 1, c >= 2; "
                              f"got ({self.m}, {self.p}, {self.c})")
        if self.inception_layers < 1:
            raise ConfigError("inception_layers must be >= 1")
        if self.adjacency_mode not in ADJACENCY_MODES:
            raise ConfigError(f"unknown adjacency_mode {self.adjacency_mode!r}")
        if self.pooling_mode not in L.POOLING_MODES:
            raise ConfigError(f"unknown pooling_mode {self.pooling_mode!r}")
        if self.mask_threshold < 0:
            raise ConfigError("mask_threshold must be non-negative")
        etas = self.etas
        if etas is None:
            etas = tuple((128, 64) for _ in range(self.inception_layers))
        else:
            etas = tuple((int(a), int(b)) for a, b in etas)
        if len(etas) != self.inception_layers:
            raise ConfigError(f"{len(etas)} eta pairs for "
                              f"{self.inception_layers} layers")
        if any(a < 1 or b < 1 for a, b in etas):
            raise ConfigError("eta values must be >= 1")
        object.__setattr__(self, "etas", etas)

    def layer_widths(self) -> list[int]:
        """Input width of each inception layer plus the final width Q."""
        widths = [self.p]
        for e1, e2 in self.etas:
            widths.append(e1 + e2 + widths[-1])
        return widths

    def head_input_width(self) -> int:
        q = self.layer_widths()[-1]
        return 3 * q if self.pooling_mode == "learnable_full" else q

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["etas"] = [list(e) for e in self.etas]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        if d.get("etas") is not None:
            d["etas"] = tuple(tuple(e) for e in d["etas"])
        return cls(**d)


@dataclass
class LGrinModel:
    config: ModelConfig
    arch: str  # "lgrin" | "baseline_gcn"
    adjacency: adjmod.LearnableAdjacency | Tensor | None
    layers: list[L.InceptionParams] = field(default_factory=list)
    gcn_weights: list[Tensor] = field(default_factory=list)
    pooling: L.PoolingParams | None = None
    head_w: Tensor | None = None
    head_b: Tensor | None = None
    registry: dict[str, Tensor] = field(default_factory=dict)


def build_registry(model: LGrinModel) -> dict[str, Tensor]:
    """Named map of every learnable tensor, in a fixed insertion order."""
    reg: dict[str, Tensor] = {}
    if isinstance(model.adjacency, adjmod.LearnableAdjacency):
        reg["adjacency.raw"] = model.adjacency.raw
    for k, layer in enumerate(model.layers):
        for branch_name, branch in (("branch1", layer.branch1),
                                    ("branch2", layer.branch2)):
            for tname, t in branch.tensors():
                reg[f"layer{k}.{branch_name}.{tname}"] = t
    for k, w in enumerate(model.gcn_weights):
        reg[f"gcn.w{k}"] = w
    if model.pooling is not None:
        reg["pooling.p"] = model.pooling.p
    reg["head.w"] = model.head_w
    reg["head.b"] = model.head_b
    return reg


def build_lgrin(config: ModelConfig) -> LGrinModel:
    """Assemble the full model with seeded Xavier weights.

    Weight matrices are uniform on +/- sqrt(6 / (fan_in + fan_out)),
    biases start at zero, the pooling vector starts as the uniform average
    1/M, and a learnable adjacency starts from Normal(0, 1) raw entries.
    """
    rng = np.random.default_rng(config.seed)
    if config.adjacency_mode == "learnable":
        adjacency = adjmod.LearnableAdjacency(
            ad.parameter(rng.standard_normal((config.m, config.m)),
                         name="adjacency.raw"))
    elif config.adjacency_mode == "binary":
        adjacency = adjmod.fixed_adjacency("binary", config.m)
    else:
        adjacency = None  # weighted: built per sample from its features

    widths = config.layer_widths()
    inception = [L.InceptionParams.init(widths[k], config.etas[k], rng,
                                        prefix=f"layer{k}")
                 for k in range(config.inception_layers)]
    pooling = (L.PoolingParams.init(config.m)
               if config.pooling_mode == "learnable_full" else None)
    d_h = config.head_input_width()
    model = LGrinModel(
        config=config, arch="lgrin", adjacency=adjacency, layers=inception,
        pooling=pooling,
        head_w=ad.parameter(L.xavier_uniform(rng, d_h, config.c), name="head.w"),
        head_b=ad.parameter(np.zeros(config.c), name="head.b"),
    )
    model.registry = build_registry(model)
    return model


def build_baseline_gcn(config: ModelConfig) -> LGrinModel:
    """Two renormalized propagation layers over the binary chain graph.

    Both hidden widths are 64; the graph vector is [max | mean] readout,
    so the head input is 128. Neither the adjacency nor any pooling vector
    is learnable here.
    """
    rng = np.random.default_rng(config.seed)
    a_hat = adjmod.renormalized_adjacency(adjmod.fixed_adjacency("binary", config.m))
    w0 = ad.parameter(L.xavier_uniform(rng, config.p, BASELINE_GCN_WIDTH), name="gcn.w0")
    w1 = ad.parameter(L.xavier_uniform(rng, BASELINE_GCN_WIDTH, BASELINE_GCN_WIDTH),
                      name="gcn.w1")
    d_h = 2 * BASELINE_GCN_WIDTH
    model = LGrinModel(
        config=config, arch="baseline_gcn", adjacency=a_hat,
        gcn_weights=[w0, w1],
        head_w=ad.parameter(L.xavier_uniform(rng, d_h, config.c), name="head.w"),
        head_b=ad.parameter(np.zeros(config.c), name="head.b"),
    )
    model.registry = build_registry(model)
    return model


def shared_effective_adjacency(model: LGrinModel) -> Tensor | None:
    """The model-level effective adjacency, or None for per-sample modes.

    For the learnable mode this records the symmetrize+ReLU transform on
    the active tape so gradients reach the raw parameter; fixed modes
    return the stored constant.
    """
    if isinstance(model.adjacency, adjmod.LearnableAdjacency):
        return adjmod.effective_adjacency(model.adjacency)
    if isinstance(model.adjacency, Tensor):
        return model.adjacency
    return None


def _check_sample(model: LGrinModel, sample: SequenceSample) -> None:
    m, p = model.config.m, model.config.p
    if sample.features.shape != (m, p):
        raise ShapeError(f"sample {sample.id!r} has shape "
                         f"{sample.features.shape}, model expects ({m}, {p})")


def _lgrin_node_embeddings(model: LGrinModel, features: Tensor, a_eff: Tensor,
                           mask: np.ndarray) -> Tensor:
    h = features
    for layer in model.layers:
        h = L.inception_layer(h, a_eff, layer, mask)
    return h


def _head(model: LGrinModel, pooled: Tensor) -> Tensor:
    return ad.add(ad.vecmat(pooled, model.head_w), model.head_b)


def _forward_one(model: LGrinModel, features: Tensor, a_eff: Tensor | None,
                 mask: np.ndarray | None) -> tuple[Tensor, Tensor]:
    """Logits and final node embeddings for one prepared sample."""
    if model.arch == "baseline_gcn":
        h = features
        for w in model.gcn_weights:
            h = L.gcn_layer(h, model.adjacency, w)
        pooled = ad.concat_vectors([ad.readout(h, "max"), ad.readout(h, "mean")])
        return _head(model, pooled), h
    if a_eff is None:  # weighted adjacency is a function of this sample
        a_eff = adjmod.fixed_adjacency("weighted", model.config.m, features)
        mask = adjmod.neighbor_mask(a_eff, model.config.mask_threshold)
    h = _lgrin_node_embeddings(model, features, a_eff, mask)
    pooled = L.pooling_layer(h, model.pooling, model.config.pooling_mode)
    return _head(model, pooled), h


def forward_shared(model: LGrinModel,
                   samples: list[SequenceSample]) -> tuple[Tensor | None,
                                                           list[Tensor]]:
    """Per-sample logits plus the shared effective adjacency they used.

    The adjacency transform is recorded once per call, so batched training
    steps accumulate all their gradients into the single raw parameter.
    The first element is None when the adjacency is per-sample (weighted).
    """
    for s in samples:
        _check_sample(model, s)
    a_eff = shared_effective_adjacency(model)
    mask = None
    if model.arch == "lgrin" and a_eff is not None:
        mask = adjmod.neighbor_mask(a_eff, model.config.mask_threshold)
    logits = [_forward_one(model, ad.constant(s.features), a_eff, mask)[0]
              for s in samples]
    return a_eff, logits


def forward_batch(model: LGrinModel, samples: list[SequenceSample]) -> list[Tensor]:
    """Logits for every sample, sharing one effective adjacency per call."""
    return forward_shared(model, samples)[1]


def forward(model: LGrinModel, sample: SequenceSample) -> Tensor:
    """Logits (length C) for one padded sample."""
    return forward_batch(model, [sample])[0]


def node_embeddings(model: LGrinModel, sample: SequenceSample) -> np.ndarray:
    """Final-layer node embedding matrix H, detached from any tape."""
    _check_sample(model, sample)
    a_eff = shared_effective_adjacency(model)
    mask = None
    if model.arch == "lgrin" and a_eff is not None:
        mask = adjmod.neighbor_mask(a_eff, model.config.mask_threshold)
    _, h = _forward_one(model, ad.constant(sample.features), a_eff, mask)
    return h.values


def argmax_plurality(h: np.ndarray) -> int:
    """Row winning the most columnwise argmax votes, lowest index on ties."""
    winners = h.argmax(axis=0)
    counts = np.bincount(winners, minlength=h.shape[0])
    return int(counts.argmax())


def salient_node(model: LGrinModel, sample: SequenceSample) -> int:
    """Node contributing the most features to the final max readout.

    Counts, per feature column, which node's row of the final embedding
    matrix attains the columnwise maximum (first index on ties) and
    returns the plurality winner, lowest index on ties.
    """
    if model.arch == "lgrin" and model.config.pooling_mode == "mean":
        raise ConfigError("salient_node needs a pooling mode with a max readout")
    return argmax_plurality(node_embeddings(model, sample))


def parameter_count(model: LGrinModel) -> int:
    return sum(t.values.size for t in model.registry.values())


def closed_form_parameter_count(config: ModelConfig, arch: str = "lgrin") -> int:
    """Parameter count derived from the width laws, without building.

    Each convolution branch of width eta on input width F contributes
    F*eta + eta + eta^2 + eta; a learnable adjacency adds M^2, learnable
    pooling adds M, and the head adds D_h*C + C.
    """
    if arch == "baseline_gcn":
        return (config.p * BASELINE_GCN_WIDTH
                + BASELINE_GCN_WIDTH * BASELINE_GCN_WIDTH
                + 2 * BASELINE_GCN_WIDTH * config.c + config.c)
    total = 0
    widths = config.layer_widths()
    for k, (e1, e2) in enumerate(config.etas):
        f_in = widths[k]
        for eta in (e1, e2):
            total += f_in * eta + eta + eta * eta + eta
    if config.adjacency_mode == "learnable":
        total += config.m * config.m
    if config.pooling_mode == "learnable_full":
        total += config.m
    total += config.head_input_width() * config.c + config.c
    return total


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(model: LGrinModel, path: str | Path) -> Path:
    """Write config + named parameters to a single .npz container.

    Layout: key "meta" holds a JSON string with format name, version,
    architecture, and the model config; every parameter is stored as
    float64 under "param/<registry name>". Loading reproduces forward
    passes bit-exactly.
    """
    path = Path(path)
    meta = {"format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION,
            "arch": model.arch, "config": model.config.to_dict()}
    arrays = {f"param/{name}": t.values for name, t in model.registry.items()}
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez(path, meta=np.array(json.dumps(meta)), **arrays)
    return path


def load_checkpoint(path: str | Path) -> LGrinModel:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"checkpoint not found: {path}")
    with np.load(path, allow_pickle=False) as zf:
        if "meta" not in zf:
            raise ConfigError(f"{path}: not a model checkpoint")
        meta = json.loads(str(zf["meta"]))
        if meta.get("format") != CHECKPOINT_FORMAT:
            raise ConfigError(f"{path}: unknown checkpoint format")
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ConfigError(f"{path}: unsupported checkpoint version "
                              f"{meta.get('version')}")
        config = ModelConfig.from_dict(meta["config"])
        arch = meta["arch"]
        model = build_lgrin(config) if arch == "lgrin" else build_baseline_gcn(config)
        for name, tensor in model.registry.items():
            key = f"param/{name}"
            if key not in zf:
                raise ConfigError(f"{path}: missing parameter {name!r}")
            stored = zf[key]
            if stored.shape != tensor.values.shape:
                raise ContractError(f"{path}: parameter {name!r} shape "
                                    f"{stored.shape} != {tensor.values.shape}")
            tensor.values[...] = stored
    return model
