"""Small dense-network engine: forward pass, reverse-mode gradients, Adam and
finite-difference checking. Everything is float64 and batch-major (rows are
examples)."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

TANH = "tanh"
IDENTITY = "identity"


class StaleCacheError(RuntimeError):
    pass


class NonFiniteError(FloatingPointError):
    pass


@dataclass
class DenseLayer:
    weights: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str = TANH

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise ValueError(f"inconsistent layer shapes {self.weights.shape} / {self.bias.shape}")
        if self.activation not in (TANH, IDENTITY):
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def n_in(self) -> int:
        return self.weights.shape[1]

    @property
    def n_out(self) -> int:
        return self.weights.shape[0]

    @classmethod
    def glorot(cls, rng: np.random.Generator, n_in: int, n_out: int, activation: str = TANH) -> "DenseLayer":
        limit = math.sqrt(6.0 / (n_in + n_out))
        return cls(rng.uniform(-limit, limit, size=(n_out, n_in)), np.zeros(n_out), activation)

    def forward(self, x):
        y = x @ self.weights.T + self.bias
        if self.activation == TANH:
            y = np.tanh(y)
        return y

    def backward(self, x, y, dy):
        dz = dy * (1.0 - y * y) if self.activation == TANH else dy
        return dz.T @ x, dz.sum(axis=0), dz @ self.weights


@dataclass
class Node:
    name: str
    sources: Tuple[str, ...]
    layer: DenseLayer


@dataclass
class Cache:
    graph_id: int
    version: int
    values: Dict[str, np.ndarray]
    node_inputs: Dict[str, np.ndarray]


class Graph:
    """Dense layers wired in topological order.

    Each node applies its layer to the concatenation of its named sources
    (graph inputs or earlier nodes), which is how skip connections into
    heads are expressed.
    """

    def __init__(self, inputs: Mapping[str, int], nodes: Sequence[Node], outputs: Sequence[str]):
        self.inputs = dict(inputs)
        self.nodes: List[Node] = list(nodes)
        self.outputs = tuple(outputs)
        self.version = 0
        dims = dict(self.inputs)
        for node in self.nodes:
            if node.name in dims:
                raise ValueError(f"duplicate name {node.name!r}")
            missing = [s for s in node.sources if s not in dims]
            if missing:
                raise ValueError(f"node {node.name!r} reads undefined {missing} (graph must be acyclic and ordered)")
            n_in = sum(dims[s] for s in node.sources)
            if n_in != node.layer.n_in:
                raise ValueError(f"node {node.name!r}: sources give {n_in} inputs, layer expects {node.layer.n_in}")
            dims[node.name] = node.layer.n_out
        for o in self.outputs:
            if o not in dims:
                raise ValueError(f"unknown output {o!r}")
        self.dims = dims
        self._by_name = {n.name: n for n in self.nodes}

    def params(self) -> Dict[str, np.ndarray]:
        out = {}
        for n in self.nodes:
            out[f"{n.name}.weight"] = n.layer.weights
            out[f"{n.name}.bias"] = n.layer.bias
        return out

    def n_params(self) -> int:
        return sum(p.size for p in self.params().values())

    def mark_updated(self):
        """Invalidate outstanding caches after in-place parameter changes."""
        self.version += 1

    def forward(self, inputs: Mapping[str, np.ndarray]):
        values: Dict[str, np.ndarray] = {}
        batch = None
        for name, dim in self.inputs.items():
            if name not in inputs:
                raise ValueError(f"missing input {name!r}")
            x = np.asarray(inputs[name], dtype=np.float64)
            if x.ndim != 2 or x.shape[1] != dim:
                raise ValueError(f"input {name!r}: expected (batch, {dim}), got {x.shape}")
            if batch is not None and x.shape[0] != batch:
                raise ValueError("inputs disagree on batch size")
            batch = x.shape[0]
            values[name] = x
        node_inputs = {}
        for n in self.nodes:
            srcs = n.sources
            x = values[srcs[0]] if len(srcs) == 1 else np.concatenate([values[s] for s in srcs], axis=1)
            node_inputs[n.name] = x
            values[n.name] = n.layer.forward(x)
        outs = {o: values[o] for o in self.outputs}
        return outs, Cache(id(self), self.version, values, node_inputs)

    def backward(self, cache: Cache, output_grads: Mapping[str, np.ndarray]):
        """Gradients of sum(output_grads[o] * output[o]) w.r.t. parameters and inputs."""
        if cache.graph_id != id(self) or cache.version != self.version:
            raise StaleCacheError("cache does not belong to the current parameters of this graph")
        grads: Dict[str, np.ndarray] = {}
        for o, g in output_grads.items():
            if o not in cache.values:
                raise ValueError(f"unknown output {o!r}")
            g = np.asarray(g, dtype=np.float64)
            if g.shape != cache.values[o].shape:
                raise ValueError(f"gradient for {o!r} has shape {g.shape}, expected {cache.values[o].shape}")
            grads[o] = grads[o] + g if o in grads else g
        pgrads: Dict[str, np.ndarray] = {}
        for n in reversed(self.nodes):
            dy = grads.pop(n.name, None)
            if dy is None:
                pgrads[f"{n.name}.weight"] = np.zeros_like(n.layer.weights)
                pgrads[f"{n.name}.bias"] = np.zeros_like(n.layer.bias)
                continue
            dW, db, dx = n.layer.backward(cache.node_inputs[n.name], cache.values[n.name], dy)
            pgrads[f"{n.name}.weight"] = dW
            pgrads[f"{n.name}.bias"] = db
            start = 0
            for s in n.sources:
                d = self.dims[s]
                part = dx[:, start:start + d]
                start += d
                grads[s] = grads[s] + part if s in grads else part
        batch = next(iter(cache.values.values())).shape[0]
        igrads = {name: grads.get(name, np.zeros((batch, dim))) for name, dim in self.inputs.items()}
        return pgrads, igrads


@dataclass
class AdamState:
    lr: float = 0.003
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(state: AdamState, params: Dict[str, np.ndarray], grads: Mapping[str, np.ndarray]):
    """One bias-corrected Adam update, applied in place; returns ``params``."""
    for k, g in grads.items():
        if not np.all(np.isfinite(g)):
            bad = int(np.size(g) - np.count_nonzero(np.isfinite(g)))
            raise NonFiniteError(f"non-finite gradient for {k!r} ({bad} entries) at Adam step {state.step + 1}")
        if g.shape != params[k].shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {params[k].shape} for {k!r}")
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    for k, g in grads.items():
        if k not in state.m:
            state.m[k] = np.zeros_like(params[k])
            state.v[k] = np.zeros_like(params[k])
        m, v = state.m[k], state.v[k]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        params[k] -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)
    return params


# ---------------------------------------------------------------------------
# finite-difference checking


@dataclass
class GradCheckReport:
    n_probes: int
    max_rel_error: float
    errors: List[Tuple[str, tuple, float, float, float]]  # (param, index, analytic, numeric, rel)


def relative_error(a: float, b: float, floor: float = 1e-7) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)


def grad_check(graph: Graph, rng: np.random.Generator, n_probes: int, batch: int = 4, h: float = 1e-5,
               grad_fn: Optional[Callable] = None) -> GradCheckReport:
    """Compare reverse-mode gradients with central differences.

    The scalar checked is a random linear functional of the graph outputs on
    random inputs. ``grad_fn(graph, inputs, output_grads) -> param grads``
    substitutes the analytic gradient (used to test the checker itself).
    """
    if n_probes <= 0:
        return GradCheckReport(0, 0.0, [])
    inputs = {k: rng.normal(size=(batch, d)) for k, d in graph.inputs.items()}
    outs, _ = graph.forward(inputs)
    ogr = {o: rng.normal(size=v.shape) for o, v in outs.items()}

    def loss():
        o, _ = graph.forward(inputs)
        return sum(float(np.sum(ogr[k] * o[k])) for k in ogr)

    if grad_fn is None:
        _, cache = graph.forward(inputs)
        analytic, _ = graph.backward(cache, ogr)
    else:
        analytic = grad_fn(graph, inputs, ogr)
    params = graph.params()
    names = sorted(params)
    sizes = np.array([params[n].size for n in names], dtype=float)
    errors = []
    for _ in range(n_probes):
        name = names[rng.choice(len(names), p=sizes / sizes.sum())]
        arr = params[name]
        idx = tuple(int(rng.integers(s)) for s in arr.shape)
        old = arr[idx]
        arr[idx] = old + h
        fp = loss()
        arr[idx] = old - h
        fm = loss()
        arr[idx] = old
        num = (fp - fm) / (2 * h)
        a = float(analytic[name][idx])
        errors.append((name, idx, a, num, relative_error(a, num)))
    return GradCheckReport(n_probes, max(e[4] for e in errors), errors)


def random_graph(rng: np.random.Generator, max_width: int = 10) -> Graph:
    """Random acyclic architecture with concatenated skip inputs, for gradient checks."""
    n_inputs = int(rng.integers(1, 4))
    inputs = {f"in{i}": int(rng.integers(1, max_width + 1)) for i in range(n_inputs)}
    dims = dict(inputs)
    nodes = []
    for j in range(int(rng.integers(1, 7))):
        avail = list(dims)
        k = int(rng.integers(1, min(3, len(avail)) + 1))
        sources = tuple(avail[i] for i in sorted(rng.choice(len(avail), size=k, replace=False)))
        width = int(rng.integers(1, max_width + 1))
        act = TANH if rng.random() < 0.7 else IDENTITY
        layer = DenseLayer.glorot(rng, sum(dims[s] for s in sources), width, act)
        layer.bias[:] = rng.normal(scale=0.5, size=width)
        nodes.append(Node(f"n{j}", sources, layer))
        dims[f"n{j}"] = width
    consumed = {s for n in nodes for s in n.sources}
    outputs = [n.name for n in nodes if n.name not in consumed] or [nodes[-1].name]
    return Graph(inputs, nodes, outputs)
