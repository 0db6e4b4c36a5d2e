"""
Models
======
MLP generator and discriminator for 2D data.

The discriminator returns its scalar score and the post-activation output of
one hidden layer (the feature vector f consumed by the diversity penalty).
Scores are linear; the vanilla loss applies the sigmoid itself, so one model
serves both objectives.

Weights are stored (fan_in, fan_out) and applied as x @ W + b.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .autodiff import Tensor, TensorLike, as_tensor, leaky_relu, relu, sigmoid, tanh
from .errors import ContractError, ShapeError
from .seeding import standard_normal

HIDDEN_ACTIVATIONS = ("relu", "leaky_relu", "tanh")
OUTPUT_ACTIVATIONS = ("none", "tanh", "sigmoid")
RELU_FAMILY = ("relu", "leaky_relu")

CHECKPOINT_FORMAT = "pdpm-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class LayerSpec:
    width: int
    activation: str = "relu"


@dataclass(frozen=True)
class MlpSpec:
    """Layer widths and activations. feature_layer_index may be negative (from the end)."""
    input_dim: int
    hidden: tuple[LayerSpec, ...]
    output_dim: int
    output_activation: str = "none"
    feature_layer_index: int = -1

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(
            h if isinstance(h, LayerSpec) else LayerSpec(*h) for h in self.hidden))
        problems = []
        if self.input_dim < 1 or self.output_dim < 1:
            problems.append(f"input/output dims must be >= 1, got {self.input_dim}/{self.output_dim}")
        if not self.hidden:
            problems.append("hidden layer list is empty")
        for i, layer in enumerate(self.hidden):
            if layer.width < 1:
                problems.append(f"hidden[{i}] width must be >= 1, got {layer.width}")
            if layer.activation not in HIDDEN_ACTIVATIONS:
                problems.append(f"hidden[{i}] activation {layer.activation!r} not in {HIDDEN_ACTIVATIONS}")
        if self.output_activation not in OUTPUT_ACTIVATIONS:
            problems.append(f"output activation {self.output_activation!r} not in {OUTPUT_ACTIVATIONS}")
        if self.hidden and not -len(self.hidden) <= self.feature_layer_index < len(self.hidden):
            problems.append(f"feature_layer_index {self.feature_layer_index} out of range "
                            f"for {len(self.hidden)} hidden layers")
        if problems:
            raise ContractError("invalid MlpSpec: " + "; ".join(problems))

    @property
    def dims(self) -> list[int]:
        return [self.input_dim] + [h.width for h in self.hidden] + [self.output_dim]

    @property
    def activations(self) -> list[str]:
        return [h.activation for h in self.hidden] + [self.output_activation]

    @property
    def feature_layer(self) -> int:
        return self.feature_layer_index % len(self.hidden)

    @property
    def feature_dim(self) -> int:
        return self.hidden[self.feature_layer].width

    def param_count(self) -> int:
        dims = self.dims
        return sum(a * b + b for a, b in zip(dims[:-1], dims[1:]))

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "hidden": [[h.width, h.activation] for h in self.hidden],
            "output_dim": self.output_dim,
            "output_activation": self.output_activation,
            "feature_layer_index": self.feature_layer_index,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MlpSpec":
        return cls(
            input_dim=int(data["input_dim"]),
            hidden=tuple(LayerSpec(int(w), str(a)) for w, a in data["hidden"]),
            output_dim=int(data["output_dim"]),
            output_activation=data.get("output_activation", "none"),
            feature_layer_index=int(data.get("feature_layer_index", -1)),
        )


def generator_spec(latent_dim: int = 32, width: int = 128, depth: int = 3) -> MlpSpec:
    return MlpSpec(input_dim=latent_dim, hidden=tuple(LayerSpec(width, "relu") for _ in range(depth)),
                   output_dim=2, output_activation="none")


def discriminator_spec(width: int = 128, depth: int = 3, feature_layer_index: int = -1) -> MlpSpec:
    return MlpSpec(input_dim=2, hidden=tuple(LayerSpec(width, "leaky_relu") for _ in range(depth)),
                   output_dim=1, output_activation="none", feature_layer_index=feature_layer_index)


@dataclass
class MlpParams:
    """Per-layer weights (fan_in, fan_out) and biases (1, fan_out) as float64 arrays."""
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def arrays(self) -> list[np.ndarray]:
        """Flat [W0, b0, W1, b1, ...] view (the order Adam state follows)."""
        flat = []
        for w, b in zip(self.weights, self.biases):
            flat.extend((w, b))
        return flat

    @classmethod
    def from_arrays(cls, arrays: Sequence[np.ndarray]) -> "MlpParams":
        return cls(weights=[np.array(a) for a in arrays[0::2]],
                   biases=[np.array(a) for a in arrays[1::2]])

    def bind(self, requires_grad: bool = True) -> list[Tensor]:
        """Fresh leaf tensors for one define-by-run step."""
        return [Tensor(a, requires_grad=requires_grad) for a in self.arrays()]

    def copy(self) -> "MlpParams":
        return MlpParams.from_arrays(self.arrays())

    def count(self) -> int:
        return sum(a.size for a in self.arrays())

    def check(self, spec: MlpSpec) -> None:
        dims = spec.dims
        if len(self.weights) != len(dims) - 1 or len(self.biases) != len(dims) - 1:
            raise ShapeError("MlpParams", (len(self.weights),), (len(dims) - 1,), "layer count")
        for i, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
            if self.weights[i].shape != (fan_in, fan_out):
                raise ShapeError(f"weight[{i}]", self.weights[i].shape, (fan_in, fan_out))
            if self.biases[i].shape != (1, fan_out):
                raise ShapeError(f"bias[{i}]", self.biases[i].shape, (1, fan_out))


def init_params(spec: MlpSpec, rng: np.random.Generator) -> MlpParams:
    """Weights N(0, 2/fan_in) after relu-family layers, N(0, 1/fan_in) otherwise; zero biases."""
    weights, biases = [], []
    dims = spec.dims
    for fan_in, fan_out, activation in zip(dims[:-1], dims[1:], spec.activations):
        gain = 2.0 if activation in RELU_FAMILY else 1.0
        weights.append(standard_normal(rng, (fan_in, fan_out)) * np.sqrt(gain / fan_in))
        biases.append(np.zeros((1, fan_out)))
    return MlpParams(weights=weights, biases=biases)


# ============================================================
# FORWARD PASSES
# ============================================================

ParamsLike = Union[MlpParams, Sequence[Tensor]]


def _as_layers(params: ParamsLike) -> list[tuple[Tensor, Tensor]]:
    flat = params.bind(requires_grad=False) if isinstance(params, MlpParams) else list(params)
    return list(zip(flat[0::2], flat[1::2]))


def _activate(x: Tensor, name: str) -> Tensor:
    if name == "relu":
        return relu(x)
    if name == "leaky_relu":
        return leaky_relu(x)
    if name == "tanh":
        return tanh(x)
    if name == "sigmoid":
        return sigmoid(x)
    return x


def mlp_forward(params: ParamsLike, spec: MlpSpec, x: TensorLike) -> tuple[Tensor, list[Tensor]]:
    """Output and the post-activation output of every hidden layer."""
    x = as_tensor(x)
    if x.ndim != 2 or x.shape[1] != spec.input_dim:
        raise ShapeError("mlp_forward", x.shape, (None, spec.input_dim))
    layers = _as_layers(params)
    if len(layers) != len(spec.hidden) + 1:
        raise ShapeError("mlp_forward", (len(layers),), (len(spec.hidden) + 1,), "layer count")

    hidden_outputs = []
    h = x
    for (w, b), activation in zip(layers[:-1], spec.activations[:-1]):
        h = _activate(h @ w + b, activation)
        hidden_outputs.append(h)
    w, b = layers[-1]
    return _activate(h @ w + b, spec.output_activation), hidden_outputs


def generator_forward(params: ParamsLike, spec: MlpSpec, z: TensorLike) -> Tensor:
    """G(z): m x output_dim fake samples."""
    out, _ = mlp_forward(params, spec, z)
    return out


def discriminator_forward(params: ParamsLike, spec: MlpSpec, x: TensorLike) -> tuple[Tensor, Tensor]:
    """(scores m x 1, features m x p). Features come from hidden layer feature_layer_index."""
    scores, hidden_outputs = mlp_forward(params, spec, x)
    return scores, hidden_outputs[spec.feature_layer]


# ============================================================
# CHECKPOINTS
# ============================================================

def encode_array(arr: np.ndarray) -> dict:
    """Row-major array with hex floats (bit-exact JSON round trip)."""
    arr = np.asarray(arr, dtype=np.float64)
    return {"shape": list(arr.shape), "data": [float(v).hex() for v in arr.reshape(-1)]}


def decode_array(data: dict) -> np.ndarray:
    values = np.array([float.fromhex(v) for v in data["data"]], dtype=np.float64)
    return values.reshape(data["shape"])


def encode_params(spec: MlpSpec, params: MlpParams) -> dict:
    return {
        "spec": spec.to_dict(),
        "layers": [{"weight": encode_array(w), "bias": encode_array(b)}
                   for w, b in zip(params.weights, params.biases)],
    }


def decode_params(data: dict) -> tuple[MlpSpec, MlpParams]:
    spec = MlpSpec.from_dict(data["spec"])
    params = MlpParams(weights=[decode_array(layer["weight"]) for layer in data["layers"]],
                       biases=[decode_array(layer["bias"]) for layer in data["layers"]])
    params.check(spec)
    return spec, params


@dataclass
class Checkpoint:
    """Everything needed to evaluate or resume a run at a generator step."""
    step: int
    seed: int
    gen_spec: MlpSpec
    gen_params: MlpParams
    disc_spec: MlpSpec
    disc_params: MlpParams
    extra: dict = field(default_factory=dict)  # optimizer / RNG / history state


def save_checkpoint(path: Union[str, Path], ckpt: Checkpoint) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "step": ckpt.step,
        "seed": ckpt.seed,
        "generator": encode_params(ckpt.gen_spec, ckpt.gen_params),
        "discriminator": encode_params(ckpt.disc_spec, ckpt.disc_params),
        "extra": ckpt.extra,
    }
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(doc, sort_keys=True))
    tmp.replace(path)
    return path


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Checkpoint not found: {path}")
    doc = json.loads(path.read_text())
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"Not a checkpoint file: {path}")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"Unsupported checkpoint version {doc.get('version')} in {path}")
    gen_spec, gen_params = decode_params(doc["generator"])
    disc_spec, disc_params = decode_params(doc["discriminator"])
    return Checkpoint(step=int(doc["step"]), seed=int(doc["seed"]),
                      gen_spec=gen_spec, gen_params=gen_params,
                      disc_spec=disc_spec, disc_params=disc_params,
                      extra=doc.get("extra", {}))


def latest_checkpoint(directory: Union[str, Path]) -> Optional[Path]:
    """Highest-step `step_XXXXXXXX.json` in a checkpoints directory, if any."""
    directory = Path(directory)
    if not directory.is_dir():
        return None
    found = sorted(directory.glob("step_*.json"))
    return found[-1] if found else None
