"""Dense networks in numpy: forward/backward, Adam, replay memory, soft updates.

Everything runs in float64. Weight matrices are stored ``(fan_in, fan_out)``
and inputs are row batches.
"""

from __future__ import annotations

import io
import json
import zipfile
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import CheckpointError, DomainError

ACTIVATIONS = ("relu", "tanh", "none")
FORMAT_VERSION = 1


def _act(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    return z


def _act_grad(name: str, out: np.ndarray, grad: np.ndarray) -> np.ndarray:
    if name == "relu":
        return grad * (out > 0)
    if name == "tanh":
        return grad * (1.0 - out * out)
    return grad


@dataclass
class ForwardCache:
    inputs: list  # input to each layer
    outputs: list  # post-activation output of each layer
    version: int
    squeeze: bool


class Mlp:
    def __init__(
        self,
        layer_sizes: Sequence[int],
        activations: Sequence[str],
        rng: Optional[np.random.Generator] = None,
        out_init: float = 1e-3,
    ):
        if len(layer_sizes) < 2:
            raise DomainError("an MLP needs at least input and output sizes")
        if len(activations) != len(layer_sizes) - 1:
            raise DomainError("one activation per layer required")
        for a in activations:
            if a not in ACTIVATIONS:
                raise DomainError(f"unknown activation {a!r}")
        self.layer_sizes = [int(n) for n in layer_sizes]
        self.activations = list(activations)
        self.version = 0
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params: list[np.ndarray] = []
        n_layers = len(self.activations)
        for i, (fan_in, fan_out) in enumerate(zip(self.layer_sizes, self.layer_sizes[1:])):
            if i == n_layers - 1:
                bound = out_init
            elif self.activations[i] == "relu":
                bound = np.sqrt(6.0 / fan_in)
            else:
                bound = np.sqrt(6.0 / (fan_in + fan_out))
            W = rng.uniform(-bound, bound, (fan_in, fan_out))
            b = rng.uniform(-bound, bound, fan_out) if i == n_layers - 1 else np.zeros(fan_out)
            self.params += [W, b]

    @property
    def weights(self) -> list[np.ndarray]:
        return self.params[0::2]

    @property
    def biases(self) -> list[np.ndarray]:
        return self.params[1::2]

    def same_architecture(self, other: "Mlp") -> bool:
        return self.layer_sizes == other.layer_sizes and self.activations == other.activations

    def touch(self) -> None:
        """Mark parameters as modified so outstanding caches become stale."""
        self.version += 1

    def copy(self) -> "Mlp":
        new = Mlp.__new__(Mlp)
        new.layer_sizes = list(self.layer_sizes)
        new.activations = list(self.activations)
        new.params = [p.copy() for p in self.params]
        new.version = 0
        return new

    def __call__(self, x):
        return self.forward(x)

    def forward(self, x, cache: bool = False):
        x = np.asarray(x, dtype=np.float64)
        squeeze = x.ndim == 1
        h = x[None, :] if squeeze else x
        if h.shape[-1] != self.layer_sizes[0]:
            raise DomainError(f"input width {h.shape[-1]} != {self.layer_sizes[0]}")
        inputs, outputs = [], []
        for W, b, act in zip(self.weights, self.biases, self.activations):
            inputs.append(h)
            h = _act(act, h @ W + b)
            outputs.append(h)
        out = h[0] if squeeze else h
        if cache:
            return out, ForwardCache(inputs, outputs, self.version, squeeze)
        return out

    def backward(self, cache: ForwardCache, grad_out, param_grads: bool = True):
        """Reverse-mode pass. Returns (list of grads matching ``params`` or None, input grad)."""
        if cache.version != self.version:
            raise DomainError("stale forward cache: parameters changed since the forward pass")
        g = np.asarray(grad_out, dtype=np.float64)
        if cache.squeeze:
            g = g[None, :]
        grads: list[Optional[np.ndarray]] = [None] * len(self.params)
        for i in reversed(range(len(self.activations))):
            g = _act_grad(self.activations[i], cache.outputs[i], g)
            if param_grads:
                grads[2 * i] = cache.inputs[i].T @ g
                grads[2 * i + 1] = g.sum(axis=0)
            g = g @ self.weights[i].T
        g_in = g[0] if cache.squeeze else g
        return (grads if param_grads else None), g_in

    # serialization helpers
    def state_arrays(self, prefix: str) -> dict[str, np.ndarray]:
        return {f"{prefix}.p{i}": p for i, p in enumerate(self.params)}

    def spec(self) -> dict:
        return {"layer_sizes": self.layer_sizes, "activations": self.activations}

    @classmethod
    def from_arrays(cls, spec: dict, arrays: dict[str, np.ndarray], prefix: str) -> "Mlp":
        net = cls(spec["layer_sizes"], spec["activations"])
        for i in range(len(net.params)):
            arr = arrays[f"{prefix}.p{i}"]
            if arr.shape != net.params[i].shape:
                raise CheckpointError(f"{prefix}: parameter {i} has shape {arr.shape}, expected {net.params[i].shape}")
            net.params[i] = np.array(arr, dtype=np.float64)
        return net


class Adam:
    def __init__(self, net: Mlp, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8, weight_decay: float = 0.0):
        self.net = net
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.m = [np.zeros_like(p) for p in net.params]
        self.v = [np.zeros_like(p) for p in net.params]
        self.t = 0

    def step(self, grads: Sequence[np.ndarray]) -> None:
        if len(grads) != len(self.net.params):
            raise DomainError("gradient list does not match parameters")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for p, g, m, v in zip(self.net.params, grads, self.m, self.v):
            if g.shape != p.shape:
                raise DomainError(f"gradient shape {g.shape} != parameter shape {p.shape}")
            if self.weight_decay:
                g = g + self.weight_decay * p
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        self.net.touch()

    def state_arrays(self, prefix: str) -> dict[str, np.ndarray]:
        out = {f"{prefix}.m{i}": m for i, m in enumerate(self.m)}
        out.update({f"{prefix}.v{i}": v for i, v in enumerate(self.v)})
        return out

    def hyper(self) -> dict:
        return {"lr": self.lr, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps, "weight_decay": self.weight_decay, "t": self.t}

    def load(self, hyper: dict, arrays: dict[str, np.ndarray], prefix: str) -> None:
        self.lr = hyper["lr"]
        self.beta1, self.beta2, self.eps = hyper["beta1"], hyper["beta2"], hyper["eps"]
        self.weight_decay = hyper["weight_decay"]
        self.t = hyper["t"]
        self.m = [np.array(arrays[f"{prefix}.m{i}"]) for i in range(len(self.m))]
        self.v = [np.array(arrays[f"{prefix}.v{i}"]) for i in range(len(self.v))]


def soft_update(target: Mlp, online: Mlp, tau: float) -> None:
    """In place: target <- (1 - tau) * target + tau * online."""
    if not target.same_architecture(online):
        raise DomainError("soft update between different architectures")
    if not 0.0 <= tau <= 1.0:
        raise DomainError("tau must lie in [0, 1]")
    for t, o in zip(target.params, online.params):
        t *= 1.0 - tau
        t += tau * o
    target.touch()


class ReplayBuffer:
    """Fixed-capacity FIFO ring of (s, a, r, s', done) transitions."""

    def __init__(self, capacity: int, state_dim: int = 8):
        if capacity < 1:
            raise DomainError("capacity must be positive")
        self.capacity = capacity
        self.s = np.zeros((capacity, state_dim))
        self.a = np.zeros(capacity)
        self.r = np.zeros(capacity)
        self.s2 = np.zeros((capacity, state_dim))
        self.done = np.zeros(capacity, dtype=bool)
        self.size = 0
        self.head = 0

    def __len__(self) -> int:
        return self.size

    def push(self, s, a: float, r: float, s2, done: bool) -> None:
        i = self.head
        self.s[i] = s
        self.a[i] = a
        self.r[i] = r
        self.s2[i] = s2
        self.done[i] = done
        self.head = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def oldest_index(self) -> int:
        return self.head if self.size == self.capacity else 0

    def sample(self, batch_size: int, rng: np.random.Generator):
        if self.size < batch_size:
            raise DomainError(f"buffer holds {self.size} transitions, batch of {batch_size} requested")
        idx = rng.choice(self.size, batch_size, replace=False)
        return self.s[idx], self.a[idx], self.r[idx], self.s2[idx], self.done[idx]


# --------------------------------------------------------------------------
# container format


def save_container(path, arrays: dict[str, np.ndarray], meta: dict) -> None:
    meta = dict(meta, format_version=FORMAT_VERSION)
    members = {"__meta__": np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8), **arrays}
    buf = io.BytesIO()
    # npz layout with a fixed member timestamp so identical weights give identical bytes
    with zipfile.ZipFile(buf, "w", zipfile.ZIP_STORED) as zf:
        for name, arr in members.items():
            info = zipfile.ZipInfo(f"{name}.npy", date_time=(1980, 1, 1, 0, 0, 0))
            with zf.open(info, "w", force_zip64=True) as fh:
                np.lib.format.write_array(fh, np.asarray(arr), allow_pickle=False)
    Path(path).write_bytes(buf.getvalue())


def load_container(path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        with np.load(path, allow_pickle=False) as data:
            arrays = {k: data[k] for k in data.files}
    except (zipfile.BadZipFile, ValueError, OSError, EOFError) as exc:
        raise CheckpointError(f"corrupt checkpoint {path}: {exc}") from exc
    if "__meta__" not in arrays:
        raise CheckpointError(f"{path} carries no metadata")
    try:
        meta = json.loads(arrays.pop("__meta__").tobytes().decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt metadata in {path}") from exc
    if meta.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {meta.get('format_version')}")
    return arrays, meta


def save_mlp(path, net: Mlp, meta: Optional[dict] = None) -> None:
    save_container(path, net.state_arrays("net"), dict(meta or {}, kind="mlp", net=net.spec()))


def load_mlp(path) -> tuple[Mlp, dict]:
    arrays, meta = load_container(path)
    if meta.get("kind") != "mlp":
        raise CheckpointError(f"{path} is not an MLP checkpoint")
    return Mlp.from_arrays(meta["net"], arrays, "net"), meta
