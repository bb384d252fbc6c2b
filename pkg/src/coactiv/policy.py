"""Feed-forward Q-network policies.

A policy maps a state vector to one Q-value per named action.  Inputs are
optionally normalized per feature, ``(s - offset) / scale``, before the
first layer.  Hidden layers use rectifiers and the output layer is linear.

Weight file layout (UTF-8 JSON)::

    {"input_dim": d,
     "action_names": [...],
     "normalization": {"offsets": [...], "scales": [...]} | null,
     "layers": [{"weights": [[...]], "bias": [...], "activation": "relu" | "linear"}]}

``weights`` is row-major with shape ``(out, in)``.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    ActionSelectionError,
    ActivationKindError,
    DimensionError,
    NonFiniteWeightError,
    PolicyFormatError,
    PolicyShapeError,
)

ACTIVATIONS = ("relu", "linear")


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Layer:
    weights: np.ndarray  # (out, in)
    bias: np.ndarray
    activation: str

    @property
    def width(self) -> int:
        return self.weights.shape[0]


@dataclass(frozen=True, eq=False)
class MlpPolicy:
    layers: tuple
    input_dim: int
    action_names: tuple
    normalization: tuple | None = None  # (offsets, scales)

    def __post_init__(self):
        _validate(self)

    @property
    def widths(self) -> tuple:
        """Neurons per layer, input layer first."""
        return (self.input_dim,) + tuple(layer.width for layer in self.layers)

    @property
    def n_actions(self) -> int:
        return len(self.action_names)

    def action_index(self, name: str) -> int:
        try:
            return self.action_names.index(name)
        except ValueError:
            raise ActionSelectionError(f"policy has no output for action {name!r}") from None


@dataclass(frozen=True, eq=False)
class ActivationRecord:
    """Post-activation values of every layer for one input (layer 0 = normalized input)."""

    layers: tuple

    @property
    def q_values(self) -> np.ndarray:
        return self.layers[-1]

    def flat(self) -> np.ndarray:
        return np.concatenate(self.layers)


def _validate(p: MlpPolicy):
    if p.input_dim < 1:
        raise PolicyShapeError("input_dim must be positive")
    if not p.layers:
        raise PolicyShapeError("policy has no layers")
    expected = p.input_dim
    for k, layer in enumerate(p.layers):
        w, b = layer.weights, layer.bias
        if w.ndim != 2:
            raise PolicyShapeError(f"layer {k} weights must be a matrix, got {w.ndim} dimensions")
        if w.shape[1] != expected:
            source = "input" if k == 0 else f"layer {k - 1}"
            raise PolicyShapeError(
                f"layer {k} expects {w.shape[1]} inputs but {source} provides {expected}"
            )
        if b.shape != (w.shape[0],):
            raise PolicyShapeError(f"layer {k} bias has shape {b.shape}, expected ({w.shape[0]},)")
        if layer.activation not in ACTIVATIONS:
            raise ActivationKindError(f"layer {k}: unknown activation {layer.activation!r}")
        for name, arr in (("weights", w), ("bias", b)):
            bad = np.argwhere(~np.isfinite(arr))
            if bad.size:
                where = "".join(f"[{i}]" for i in bad[0])
                raise NonFiniteWeightError(f"layer {k} {name}{where} is {arr[tuple(bad[0])]}")
        expected = w.shape[0]
    if p.layers[-1].activation != "linear":
        raise ActivationKindError("the output layer must be linear (raw Q-values)")
    if expected != len(p.action_names):
        raise PolicyShapeError(f"output width {expected} does not match {len(p.action_names)} action names")
    if len(set(p.action_names)) != len(p.action_names):
        raise PolicyShapeError("action names must be unique")
    if p.normalization is not None:
        offsets, scales = p.normalization
        if offsets.shape != (p.input_dim,) or scales.shape != (p.input_dim,):
            raise PolicyShapeError("normalization vectors must have input_dim entries")
        if not (np.all(np.isfinite(offsets)) and np.all(np.isfinite(scales))):
            raise NonFiniteWeightError("normalization contains non-finite values")
        if np.any(scales == 0):
            raise PolicyShapeError("normalization scales must be nonzero")


def make_policy(layers: Sequence[tuple], action_names: Sequence[str], normalization=None) -> MlpPolicy:
    """Build a policy from ``(weights, bias, activation)`` triples."""
    built = tuple(Layer(_frozen(w), _frozen(b), act) for w, b, act in layers)
    input_dim = built[0].weights.shape[1] if built and built[0].weights.ndim == 2 else 0
    norm = None
    if normalization is not None:
        norm = (_frozen(normalization[0]), _frozen(normalization[1]))
    return MlpPolicy(built, input_dim, tuple(action_names), norm)


def bounds_normalization(bounds: Sequence[tuple]) -> tuple:
    """Min-max scaling of bounded integer features onto [0, 1]."""
    offsets = [lo for lo, _ in bounds]
    scales = [(hi - lo) if hi > lo else 1 for lo, hi in bounds]
    return (_frozen(offsets), _frozen(scales))


def init_policy(input_dim: int, hidden: Sequence[int], action_names: Sequence[str],
                rng: np.random.Generator, normalization=None) -> MlpPolicy:
    """He-uniform initialized network with rectifier hidden layers."""
    widths = [input_dim, *hidden, len(action_names)]
    layers = []
    for k in range(len(widths) - 1):
        fan_in = widths[k]
        limit = math.sqrt(6.0 / fan_in)
        w = rng.uniform(-limit, limit, size=(widths[k + 1], fan_in))
        b = np.zeros(widths[k + 1])
        act = "linear" if k == len(widths) - 2 else "relu"
        layers.append((w, b, act))
    return make_policy(layers, action_names, normalization)


# --------------------------------------------------------------------------- serialization

def policy_to_dict(p: MlpPolicy) -> dict:
    norm = None
    if p.normalization is not None:
        norm = {"offsets": p.normalization[0].tolist(), "scales": p.normalization[1].tolist()}
    return {
        "input_dim": p.input_dim,
        "action_names": list(p.action_names),
        "normalization": norm,
        "layers": [
            {"weights": layer.weights.tolist(), "bias": layer.bias.tolist(), "activation": layer.activation}
            for layer in p.layers
        ],
    }


def policy_from_dict(data: dict) -> MlpPolicy:
    try:
        input_dim = int(data["input_dim"])
        names = [str(a) for a in data["action_names"]]
        raw_layers = data["layers"]
        norm = data.get("normalization")
    except (KeyError, TypeError, ValueError) as exc:
        raise PolicyFormatError(f"malformed policy file: {exc}") from None
    layers = []
    for k, raw in enumerate(raw_layers):
        try:
            w = np.array(raw["weights"], dtype=np.float64)
            b = np.array(raw["bias"], dtype=np.float64)
            act = raw["activation"]
        except (KeyError, TypeError, ValueError) as exc:
            raise PolicyFormatError(f"layer {k} is malformed: {exc}") from None
        if w.ndim != 2:
            raise PolicyShapeError(f"layer {k} weights must be a matrix, got {w.ndim} dimensions")
        layers.append(Layer(_frozen(w), _frozen(b), act))
    normalization = None
    if norm is not None:
        normalization = (_frozen(norm["offsets"]), _frozen(norm["scales"]))
    return MlpPolicy(tuple(layers), input_dim, tuple(names), normalization)


def load_policy(data: bytes | str) -> MlpPolicy:
    """Parse and validate a policy weight file's contents."""
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    try:
        # NaN/Infinity literals are accepted by the decoder so validation can name them
        raw = json.loads(data)
    except json.JSONDecodeError as exc:
        raise PolicyFormatError(f"policy file is not valid JSON: {exc}") from None
    return policy_from_dict(raw)


def dumps_policy(p: MlpPolicy) -> str:
    return json.dumps(policy_to_dict(p), sort_keys=True)


def read_policy(path) -> MlpPolicy:
    return load_policy(Path(path).read_bytes())


def save_policy(p: MlpPolicy, path) -> None:
    Path(path).write_text(dumps_policy(p) + "\n", encoding="utf-8")


def policy_digest(p: MlpPolicy) -> str:
    canonical = json.dumps(policy_to_dict(p), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


# --------------------------------------------------------------------------- evaluation

def normalize_inputs(p: MlpPolicy, states) -> np.ndarray:
    x = np.asarray(states, dtype=np.float64)
    if x.shape[-1] != p.input_dim:
        raise DimensionError(f"state has {x.shape[-1]} features, policy expects {p.input_dim}")
    if p.normalization is not None:
        offsets, scales = p.normalization
        x = (x - offsets) / scales
    return x


def forward_batch(p: MlpPolicy, states) -> list:
    """Activations of every layer for a batch of states, each ``(n, width)``."""
    x = normalize_inputs(p, np.atleast_2d(np.asarray(states, dtype=np.float64)))
    acts = [x]
    for layer in p.layers:
        x = x @ layer.weights.T + layer.bias
        if layer.activation == "relu":
            x = np.maximum(x, 0.0)
        acts.append(x)
    return acts


def forward(p: MlpPolicy, state) -> tuple:
    """Return ``(q_values, ActivationRecord)`` for a single state."""
    state = np.asarray(state, dtype=np.float64)
    if state.ndim != 1:
        raise DimensionError("forward expects a single state vector")
    acts = forward_batch(p, state[None, :])
    record = ActivationRecord(tuple(a[0] for a in acts))
    return record.q_values, record


def q_values(p: MlpPolicy, states) -> np.ndarray:
    return forward_batch(p, states)[-1]


def choose_action(p: MlpPolicy, state, allowed: Iterable[str]) -> tuple:
    """Best allowed action and whether the global argmax had to be skipped."""
    allowed = list(allowed)
    if not allowed:
        raise ActionSelectionError("no allowed actions to choose from")
    q, _ = forward(p, state)
    idx = [p.action_index(a) for a in allowed]
    best = min(idx, key=lambda i: (-q[i], i))
    global_best = int(np.argmax(q))  # argmax returns the lowest index among ties
    return p.action_names[best], best != global_best


def select_action(p: MlpPolicy, state, allowed: Iterable[str], strict: bool = False) -> str:
    """Allowed action with the largest Q-value, ties going to the lowest output index.

    With ``strict=True`` the global argmax must itself be allowed.
    """
    action, fell_back = choose_action(p, state, allowed)
    if strict and fell_back:
        q, _ = forward(p, state)
        raise ActionSelectionError(
            f"preferred action {p.action_names[int(np.argmax(q))]!r} is not allowed in state {tuple(state)}"
        )
    return action


def prune_input_features(p: MlpPolicy, features: Iterable[int]) -> MlpPolicy:
    """Copy of ``p`` with every outgoing first-layer weight of ``features`` set to zero."""
    features = sorted(set(int(f) for f in features))
    for f in features:
        if not 0 <= f < p.input_dim:
            raise DimensionError(f"feature index {f} out of range for input_dim {p.input_dim}")
    if not features:
        return p
    first = p.layers[0]
    w = np.array(first.weights)
    w[:, features] = 0.0
    layers = (Layer(_frozen(w), first.bias, first.activation),) + p.layers[1:]
    return MlpPolicy(layers, p.input_dim, p.action_names, p.normalization)
