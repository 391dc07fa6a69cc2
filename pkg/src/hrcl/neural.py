"""Small dense networks with hand-written backpropagation and an Adam optimizer.

Layout is ``input -> W -> W -> output`` with tanh hidden activations. The head
is either ``identity`` (critic) or ``softmax`` (actor). All passes are batched:
inputs are ``(N, n_in)`` arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

CHECKPOINT_VERSION = "hrcl-checkpoint/1"


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


@dataclass
class Cache:
    x: np.ndarray
    h1: np.ndarray
    h2: np.ndarray
    logits: np.ndarray
    out: np.ndarray


class DenseNetwork:
    def __init__(self, sizes: tuple[int, ...] | list[int], head: str = "identity",
                 rng: np.random.Generator | None = None, seed: int | None = None, init_scale: float = 0.1):
        if len(sizes) != 4:
            raise ValueError("sizes must be [input, hidden, hidden, output]")
        if head not in ("identity", "softmax"):
            raise ValueError(f"unknown head {head!r}")
        self.sizes = tuple(int(s) for s in sizes)
        self.head = head
        self.seed = seed
        rng = rng if rng is not None else np.random.default_rng(seed)
        self.params: dict[str, np.ndarray] = {}
        for l, (n_in, n_out) in enumerate(zip(self.sizes[:-1], self.sizes[1:]), start=1):
            self.params[f"W{l}"] = rng.uniform(-init_scale, init_scale, (n_in, n_out))
            self.params[f"b{l}"] = rng.uniform(-init_scale, init_scale, n_out)

    def copy(self) -> "DenseNetwork":
        other = DenseNetwork.__new__(DenseNetwork)
        other.sizes, other.head, other.seed = self.sizes, self.head, self.seed
        other.params = {k: v.copy() for k, v in self.params.items()}
        return other

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, Cache]:
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        if single:
            x = x[None, :]
        if x.shape[1] != self.sizes[0]:
            raise ValueError(f"input has {x.shape[1]} features, network expects {self.sizes[0]}")
        p = self.params
        h1 = np.tanh(x @ p["W1"] + p["b1"])
        h2 = np.tanh(h1 @ p["W2"] + p["b2"])
        logits = h2 @ p["W3"] + p["b3"]
        out = softmax(logits) if self.head == "softmax" else logits
        cache = Cache(x, h1, h2, logits, out)
        return (out[0] if single else out), cache

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]

    def backward(self, cache: Cache | None, grad_out: np.ndarray, wrt_logits: bool = False) -> dict[str, np.ndarray]:
        """Parameter gradients of a scalar loss given dLoss/dOutput.

        With ``wrt_logits=True`` the gradient is taken as dLoss/dLogits, which
        skips the softmax Jacobian (used by log-probability losses).
        """
        if cache is None:
            raise ValueError("backward needs the cache from a forward pass")
        g = np.asarray(grad_out, dtype=np.float64).reshape(cache.out.shape)
        if self.head == "softmax" and not wrt_logits:
            y = cache.out
            g = y * (g - (g * y).sum(axis=1, keepdims=True))
        p = self.params
        grads = {"W3": cache.h2.T @ g, "b3": g.sum(axis=0)}
        dz2 = (g @ p["W3"].T) * (1.0 - cache.h2 ** 2)
        grads["W2"] = cache.h1.T @ dz2
        grads["b2"] = dz2.sum(axis=0)
        dz1 = (dz2 @ p["W2"].T) * (1.0 - cache.h1 ** 2)
        grads["W1"] = cache.x.T @ dz1
        grads["b1"] = dz1.sum(axis=0)
        return grads

    # --- checkpoints ---------------------------------------------------------

    def dumps(self, step: int = 0) -> str:
        """Versioned text dump; floats are written in hex so round trips are exact."""
        lines = [CHECKPOINT_VERSION,
                 f"sizes={','.join(map(str, self.sizes))}",
                 f"head={self.head}",
                 f"seed={self.seed}",
                 f"step={step}"]
        for name in sorted(self.params):
            arr = self.params[name]
            lines.append(f"{name} {'x'.join(map(str, arr.shape))} " + " ".join(float(v).hex() for v in arr.ravel()))
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> tuple["DenseNetwork", int]:
        lines = text.splitlines()
        if not lines or lines[0] != CHECKPOINT_VERSION:
            raise ValueError(f"not a {CHECKPOINT_VERSION} checkpoint")
        header = dict(ln.split("=", 1) for ln in lines[1:5])
        net = cls.__new__(cls)
        net.sizes = tuple(int(s) for s in header["sizes"].split(","))
        net.head = header["head"]
        net.seed = None if header["seed"] == "None" else int(header["seed"])
        net.params = {}
        for ln in lines[5:]:
            name, shape, *vals = ln.split(" ")
            dims = tuple(int(s) for s in shape.split("x"))
            net.params[name] = np.array([float.fromhex(v) for v in vals]).reshape(dims)
        return net, int(header["step"])


def save_network(net: DenseNetwork, path: Path | str, step: int = 0) -> None:
    Path(path).write_text(net.dumps(step))


def load_network(path: Path | str) -> tuple[DenseNetwork, int]:
    return DenseNetwork.loads(Path(path).read_text())


@dataclass
class Adam:
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def step(self, net: DenseNetwork, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name, g in grads.items():
            m = self.m.setdefault(name, np.zeros_like(g))
            v = self.v.setdefault(name, np.zeros_like(g))
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            net.params[name] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def adam_step(net: DenseNetwork, grads: dict[str, np.ndarray], optimizer: Adam) -> DenseNetwork:
    optimizer.step(net, grads)
    return net


@dataclass
class GradientReport:
    max_relative_error: float
    worst_parameter: str
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_relative_error < self.tolerance


def gradient_check(net: DenseNetwork, loss: Callable[[DenseNetwork], tuple[float, dict]],
                   tolerance: float = 1e-4, step: float = 1e-5, floor: float = 1e-6) -> GradientReport:
    """Compare analytic gradients from ``loss`` with central differences on every parameter.

    ``loss(net)`` returns ``(value, grads)``. Relative error is
    ``|a - n| / max(|a| + |n|, floor)``.
    """
    _, analytic = loss(net)
    worst, worst_name = 0.0, ""
    for name, param in net.params.items():
        flat = param.reshape(-1)
        ga = analytic[name].reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + step
            up = loss(net)[0]
            flat[i] = old - step
            down = loss(net)[0]
            flat[i] = old
            num = (up - down) / (2 * step)
            err = abs(ga[i] - num) / max(abs(ga[i]) + abs(num), floor)
            if err > worst:
                worst, worst_name = err, f"{name}[{i}]"
    return GradientReport(worst, worst_name, tolerance)
