"""
Small dense networks with hand-written backprop.

Mlp is a stack of Dense layers (ReLU on hidden layers, identity on the
output). forward() returns the output together with a Tape of the
activations needed by backward(), so a caller can push any loss gradient
with respect to the outputs back to the weights and inputs.

EmbeddingTable maps station indices to learned vectors.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Dict, List, Sequence, Tuple

import numpy as np

from tailcal.services.errors import ShapeMismatchError, unknown_station


ACTIVATIONS = ("relu", "identity")


@dataclass
class Dense:
    """
    Attributes:
        W: Weights, shape (fan_in, fan_out)
        b: Bias, shape (fan_out,)
        activation: relu | identity
    """

    W: np.ndarray
    b: np.ndarray
    activation: str = "relu"

    @staticmethod
    def init(rng: np.random.Generator, fan_in: int, fan_out: int, activation: str = "relu") -> "Dense":
        """He-uniform weights, zero bias."""
        limit = np.sqrt(6.0 / fan_in)
        return Dense(
            W=rng.uniform(-limit, limit, size=(fan_in, fan_out)),
            b=np.zeros(fan_out),
            activation=activation,
        )

    def forward(self, X: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Returns (activation, pre-activation)."""
        Z = X @ self.W + self.b
        if self.activation == "relu":
            return np.maximum(Z, 0.0), Z
        return Z, Z

    def backward(self, X: np.ndarray, Z: np.ndarray, dA: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Returns (dW, db, dX) for upstream gradient dA."""
        dZ = dA * (Z > 0.0) if self.activation == "relu" else dA
        return X.T @ dZ, dZ.sum(axis=0), dZ @ self.W.T


@dataclass
class Tape:
    """Layer inputs and pre-activations recorded by Mlp.forward."""

    inputs: List[np.ndarray] = field(default_factory=list)
    pre: List[np.ndarray] = field(default_factory=list)


@dataclass
class MlpGrad:
    """Per-layer (dW, db) in layer order."""

    layers: List[Tuple[np.ndarray, np.ndarray]]

    def flat(self) -> np.ndarray:
        return np.concatenate([np.concatenate([dW.ravel(), db]) for dW, db in self.layers])


class Mlp:
    """Fully connected network."""

    def __init__(self, layers: Sequence[Dense]):
        self.layers = list(layers)

    @staticmethod
    def init(rng: np.random.Generator, sizes: Sequence[int]) -> "Mlp":
        """
        Args:
            sizes: Layer widths including input and output, e.g. (6, 16, 16, 2)
        """
        last = len(sizes) - 2
        return Mlp([
            Dense.init(rng, sizes[i], sizes[i + 1], "identity" if i == last else "relu")
            for i in range(len(sizes) - 1)
        ])

    @property
    def n_inputs(self) -> int:
        return int(self.layers[0].W.shape[0])

    @property
    def n_outputs(self) -> int:
        return int(self.layers[-1].W.shape[1])

    def forward(self, X: np.ndarray) -> Tuple[np.ndarray, Tape]:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.n_inputs:
            raise ShapeMismatchError("Network input has the wrong shape",
                                     context={"shape": X.shape, "n_inputs": self.n_inputs})
        tape = Tape()
        A = X
        for layer in self.layers:
            tape.inputs.append(A)
            A, Z = layer.forward(A)
            tape.pre.append(Z)
        return A, tape

    def __call__(self, X: np.ndarray) -> np.ndarray:
        return self.forward(X)[0]

    def backward(self, tape: Tape, d_out: np.ndarray) -> Tuple[MlpGrad, np.ndarray]:
        """Returns (parameter gradients, input gradient)."""
        grads: List[Tuple[np.ndarray, np.ndarray]] = []
        dA = np.asarray(d_out, dtype=float)
        for layer, X, Z in zip(reversed(self.layers), reversed(tape.inputs), reversed(tape.pre)):
            dW, db, dA = layer.backward(X, Z, dA)
            grads.append((dW, db))
        return MlpGrad(grads[::-1]), dA

    # ------------------------------------------------------------------
    # Flat parameter vector
    # ------------------------------------------------------------------

    def flatten(self) -> np.ndarray:
        return np.concatenate([np.concatenate([layer.W.ravel(), layer.b]) for layer in self.layers])

    def unflatten(self, flat: np.ndarray) -> "Mlp":
        """New network of the same shape holding the given parameters."""
        flat = np.asarray(flat, dtype=float)
        layers, pos = [], 0
        for layer in self.layers:
            n_w, n_b = layer.W.size, layer.b.size
            if pos + n_w + n_b > flat.size:
                raise ShapeMismatchError("Parameter vector too short", context={"size": flat.size})
            W = flat[pos:pos + n_w].reshape(layer.W.shape)
            b = flat[pos + n_w:pos + n_w + n_b]
            layers.append(Dense(W.copy(), b.copy(), layer.activation))
            pos += n_w + n_b
        if pos != flat.size:
            raise ShapeMismatchError("Parameter vector too long", context={"size": flat.size, "expected": pos})
        return Mlp(layers)

    @property
    def size(self) -> int:
        return sum(layer.W.size + layer.b.size for layer in self.layers)

    def to_dict(self) -> Dict[str, Any]:
        return {"layers": [
            {"W": layer.W.tolist(), "b": layer.b.tolist(), "activation": layer.activation}
            for layer in self.layers
        ]}

    @staticmethod
    def from_dict(data: Dict[str, Any]) -> "Mlp":
        return Mlp([
            Dense(np.asarray(d["W"], dtype=float), np.asarray(d["b"], dtype=float), d.get("activation", "relu"))
            for d in data["layers"]
        ])


class EmbeddingTable:
    """Learned vector per station index."""

    def __init__(self, weights: np.ndarray):
        self.weights = np.asarray(weights, dtype=float)

    @staticmethod
    def init(rng: np.random.Generator, n_stations: int, dim: int = 2, scale: float = 0.1) -> "EmbeddingTable":
        return EmbeddingTable(rng.normal(0.0, scale, size=(n_stations, dim)))

    @property
    def n_stations(self) -> int:
        return int(self.weights.shape[0])

    def _check(self, index: np.ndarray) -> np.ndarray:
        index = np.asarray(index, dtype=int)
        bad = (index < 0) | (index >= self.n_stations)
        if np.any(bad):
            raise unknown_station(int(index[bad][0]), self.n_stations)
        return index

    def lookup(self, index: np.ndarray) -> np.ndarray:
        return self.weights[self._check(index)]

    def backward(self, index: np.ndarray, d_rows: np.ndarray) -> np.ndarray:
        """Gradient of the table given per-row upstream gradients."""
        grad = np.zeros_like(self.weights)
        np.add.at(grad, self._check(index), d_rows)
        return grad
