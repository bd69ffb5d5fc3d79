"""Single-hidden-layer feedforward networks with random input weights.

The input weights and hidden biases are drawn once from a uniform interval
and never trained; only the linear output layer is solved for. A network is
an immutable value: training returns a new instance carrying the output
weight matrix. The hidden bias sits in the last row of ``c``, acting on an
implicit constant-1 input, so ``c`` has shape (P+1) x M.
"""

from __future__ import annotations

import dataclasses
import json
import math

import numpy as np
from scipy.special import expit

from .numerics import as_matrix, pseudoinverse_solve, tikhonov_solve

#: Activation functions for the hidden layer. ``expit`` is the numerically
#: stable sigmoid (no overflow for large negative pre-activations).
ACTIVATIONS = {
    "sigmoid": expit,
    "tanh": np.tanh,
}


class NotTrainedError(RuntimeError):
    """Forward pass requested on a network with no output weights."""


@dataclasses.dataclass(frozen=True)
class InitRegime:
    """How input weights and hidden biases are sampled.

    ``fixed`` draws from (-half_width, half_width) regardless of the hidden
    layer size; ``scaled`` draws from (-1/sqrt(M), 1/sqrt(M)) so the
    pre-activations stay near the linear region of the activation as M
    grows. Biases use the same interval as the weights in both regimes.
    """

    kind: str
    half_width: float = 1.0

    def __post_init__(self):
        if self.kind not in ("fixed", "scaled"):
            raise ValueError(f"unknown init regime kind {self.kind!r}")
        if self.kind == "fixed" and not (self.half_width > 0):
            raise ValueError(
                f"fixed-interval half-width must be positive, got {self.half_width}"
            )

    @classmethod
    def fixed(cls, half_width: float = 1.0) -> "InitRegime":
        return cls(kind="fixed", half_width=half_width)

    @classmethod
    def scaled(cls) -> "InitRegime":
        return cls(kind="scaled")

    def interval(self, m: int) -> float:
        """Half-width of the sampling interval for hidden layer size ``m``."""
        if self.kind == "fixed":
            return self.half_width
        return 1.0 / math.sqrt(m)


def init_weights(p: int, m: int, regime: InitRegime, seed) -> np.ndarray:
    """Sample the (p+1) x m input weight matrix, biases in the last row.

    Entries are strictly inside the regime's open interval and are a
    deterministic function of the seed.
    """
    if p < 1:
        raise ValueError(f"input dimension must be >= 1, got {p}")
    if m < 1:
        raise ValueError(f"hidden layer size must be >= 1, got {m}")
    a = regime.interval(m)
    rng = np.random.default_rng(seed)
    c = rng.uniform(-a, a, size=(p + 1, m))
    # the interval is open on both ends; redraw boundary hits
    bad = ~((c > -a) & (c < a))
    while bad.any():
        c[bad] = rng.uniform(-a, a, size=int(bad.sum()))
        bad = ~((c > -a) & (c < a))
    return c


@dataclasses.dataclass(frozen=True)
class Slfn:
    """A network: input weights ``c``, activation name, output weights ``w``.

    ``w`` is None until the network is trained.
    """

    c: np.ndarray
    activation: str
    w: np.ndarray | None = None

    def __post_init__(self):
        c = as_matrix(self.c, "input weight matrix")
        object.__setattr__(self, "c", c)
        if c.shape[0] < 2:
            raise ValueError(
                "input weight matrix needs at least two rows (one input plus bias)"
            )
        if self.activation not in ACTIVATIONS:
            raise ValueError(
                f"unknown activation {self.activation!r}; "
                f"expected one of {sorted(ACTIVATIONS)}"
            )
        if self.w is not None:
            w = as_matrix(self.w, "output weight matrix")
            object.__setattr__(self, "w", w)
            if w.shape[0] != c.shape[1]:
                raise ValueError(
                    f"output weight rows ({w.shape[0]}) must equal the hidden "
                    f"layer size ({c.shape[1]})"
                )

    @property
    def input_dim(self) -> int:
        return self.c.shape[0] - 1

    @property
    def hidden_dim(self) -> int:
        return self.c.shape[1]

    @property
    def output_dim(self):
        """Number of output units, or None before training."""
        if self.w is None:
            return None
        return self.w.shape[1]

    @property
    def trained(self) -> bool:
        return self.w is not None


def random_network(
    p: int, m: int, activation: str, regime: InitRegime, seed
) -> Slfn:
    """Build an untrained network with freshly sampled input weights."""
    return Slfn(c=init_weights(p, m, regime, seed), activation=activation)


def hidden_matrix(x, net: Slfn) -> np.ndarray:
    """Hidden output matrix H: activation applied to x @ weights + biases."""
    x = as_matrix(x, "input matrix")
    if x.shape[1] != net.input_dim:
        raise ValueError(
            f"input matrix has {x.shape[1]} columns but the network expects "
            f"{net.input_dim}"
        )
    pre = x @ net.c[:-1] + net.c[-1]
    return ACTIVATIONS[net.activation](pre)


def forward(x, net: Slfn) -> np.ndarray:
    """Network output H @ W for input rows ``x``."""
    if net.w is None:
        raise NotTrainedError("network has no output weights; train it first")
    return hidden_matrix(x, net) @ net.w


def train(net: Slfn, x, t, lam: float | None = None) -> Slfn:
    """Solve for output weights against targets ``t``; returns a new network.

    ``lam=None`` uses the truncated pseudoinverse; a float switches to the
    Tikhonov-regularized solve with that ridge parameter.
    """
    h = hidden_matrix(x, net)
    t = as_matrix(t, "target matrix")
    if lam is None:
        w = pseudoinverse_solve(h, t)
    else:
        w = tikhonov_solve(h, t, lam)
    return dataclasses.replace(net, w=w)


_FORMAT_NAME = "pinvnet-model"
_FORMAT_VERSION = 1


def save_network(net: Slfn, path, extra: dict | None = None) -> None:
    """Write a network to ``path`` as a self-describing JSON document.

    The document records the format name and version, the shapes, the
    activation name, and the weight entries in full float64 precision
    (shortest round-trip decimal form). ``extra`` entries are stored under
    an "extra" key; they must be JSON-serializable. Output is byte-stable:
    saving the same network twice produces identical files.
    """
    doc = {
        "format": _FORMAT_NAME,
        "version": _FORMAT_VERSION,
        "activation": net.activation,
        "input_dim": net.input_dim,
        "hidden_dim": net.hidden_dim,
        "output_dim": net.output_dim,
        "c": net.c.tolist(),
        "w": None if net.w is None else net.w.tolist(),
        "extra": {} if extra is None else extra,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)
        fh.write("\n")


def load_network(path):
    """Read a network written by :func:`save_network`.

    Returns ``(net, extra)`` where ``extra`` is the dict stored alongside
    the weights.
    """
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict) or doc.get("format") != _FORMAT_NAME:
        raise ValueError(f"{path} is not a {_FORMAT_NAME} file")
    if doc.get("version") != _FORMAT_VERSION:
        raise ValueError(
            f"{path} has format version {doc.get('version')}, "
            f"expected {_FORMAT_VERSION}"
        )
    c = np.array(doc["c"], dtype=np.float64)
    w = doc.get("w")
    if w is not None:
        w = np.array(w, dtype=np.float64)
    net = Slfn(c=c, activation=doc["activation"], w=w)
    if doc.get("input_dim") != net.input_dim or doc.get("hidden_dim") != net.hidden_dim:
        raise ValueError(f"{path}: stored dimensions disagree with the weight shapes")
    return net, doc.get("extra", {})
