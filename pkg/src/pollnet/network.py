"""The five network topologies and their forward/backward passes.

Every topology shares a feed-forward *core*: sigmoid hidden layers followed
by an output layer (linear unless configured otherwise). What differs is
what feeds the core and how the layers connect:

* MLP   raw inputs, each layer sees only the previous one
* GFFN  raw inputs, each layer sees every earlier layer (input included)
* RBF   Gaussian responses to fitted centers
* TLRN  gamma-memory taps of the inputs (focused memory)
* RN    raw inputs, with recurrence on the hidden layers (or on the output
        layer when there are no hidden layers)

Parameters live in a flat dict keyed ``W{src}_{dst}``, ``b{layer}``,
``R{layer}``, ``g``, ``centers`` and ``widths``. Layer 0 is the core input.
"""

from __future__ import annotations

import io
import json
import zipfile
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

FORMAT_VERSION = 1
INIT_RANGE = 0.5
GAMMA_INIT = 0.5


class Topology(str, Enum):
    MLP = "MLP"
    GFFN = "GFFN"
    RBF = "RBF"
    TLRN = "TLRN"
    RN = "RN"

    @property
    def temporal(self) -> bool:
        return self in (Topology.TLRN, Topology.RN)


class Transfer(str, Enum):
    SIGMOID = "SIGMOID"
    LINEAR = "LINEAR"


class Recurrence(str, Enum):
    PARTIAL = "PARTIAL"
    FULL = "FULL"


class ShapeError(ValueError):
    pass


class ModelFormatError(ValueError):
    pass


def sigmoid(x):
    # split form avoids overflow warnings for large |x|
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _activate(kind: Transfer, net):
    return sigmoid(net) if kind is Transfer.SIGMOID else net


def _derivative(kind: Transfer, act):
    return act * (1.0 - act) if kind is Transfer.SIGMOID else np.ones_like(act)


@dataclass(frozen=True)
class NetworkSpec:
    topology: Topology
    n_inputs: int
    n_outputs: int
    nodes_per_hidden: tuple[int, ...] = ()
    memory_depth: int = 10
    trajectory_length: int = 10
    n_centers: int = 80
    recurrence: Recurrence = Recurrence.PARTIAL
    output_transfer: Transfer = Transfer.LINEAR

    def __post_init__(self):
        object.__setattr__(self, "topology", Topology(self.topology))
        object.__setattr__(self, "recurrence", Recurrence(self.recurrence))
        object.__setattr__(self, "output_transfer", Transfer(self.output_transfer))
        object.__setattr__(self, "nodes_per_hidden", tuple(int(n) for n in self.nodes_per_hidden))
        if self.n_inputs < 1 or self.n_outputs < 1:
            raise ValueError("n_inputs and n_outputs must be >= 1")
        if not 0 <= len(self.nodes_per_hidden) <= 4:
            raise ValueError("hidden_layers must be in [0, 4]")
        if any(n < 1 for n in self.nodes_per_hidden):
            raise ValueError("every hidden layer needs >= 1 node")
        if self.topology is Topology.TLRN and self.memory_depth < 1:
            raise ValueError("memory_depth must be >= 1 for TLRN")
        if self.topology is Topology.RBF and self.n_centers < 1:
            raise ValueError("n_centers must be >= 1 for RBF")
        if self.trajectory_length < 1:
            raise ValueError("trajectory_length must be >= 1")

    @classmethod
    def make(cls, topology, n_inputs: int, n_outputs: int, hidden_layers: int = 0,
             nodes: int = 14, **kw) -> "NetworkSpec":
        return cls(Topology(topology), n_inputs, n_outputs, (nodes,) * hidden_layers, **kw)

    @property
    def hidden_layers(self) -> int:
        return len(self.nodes_per_hidden)

    @property
    def n_layers(self) -> int:
        """Layers after the core input: hidden layers plus the output layer."""
        return self.hidden_layers + 1

    @property
    def core_input_size(self) -> int:
        if self.topology is Topology.RBF:
            return self.n_centers
        if self.topology is Topology.TLRN:
            return self.n_inputs * (self.memory_depth + 1)
        return self.n_inputs

    @property
    def sizes(self) -> list[int]:
        return [self.core_input_size, *self.nodes_per_hidden, self.n_outputs]

    def sources(self, layer: int) -> list[int]:
        if self.topology is Topology.GFFN:
            return list(range(layer))
        return [layer - 1]

    @property
    def recurrent_layers(self) -> list[int]:
        if self.topology is not Topology.RN:
            return []
        return list(range(1, self.hidden_layers + 1)) or [1]

    def transfer(self, layer: int) -> Transfer:
        return self.output_transfer if layer == self.n_layers else Transfer.SIGMOID

    def layer_of(self, name: str) -> int | None:
        """Destination layer of a weight/bias/recurrence parameter."""
        if name.startswith("W"):
            return int(name.split("_")[1])
        if name[0] in "bR" and name[1:].isdigit():
            return int(name[1:])
        return None

    def to_dict(self) -> dict:
        return {
            "topology": self.topology.value,
            "n_inputs": self.n_inputs,
            "n_outputs": self.n_outputs,
            "nodes_per_hidden": list(self.nodes_per_hidden),
            "memory_depth": self.memory_depth,
            "trajectory_length": self.trajectory_length,
            "n_centers": self.n_centers,
            "recurrence": self.recurrence.value,
            "output_transfer": self.output_transfer.value,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        d = dict(d)
        d["nodes_per_hidden"] = tuple(d["nodes_per_hidden"])
        return cls(**d)


@dataclass
class NetworkState:
    spec: NetworkSpec
    params: dict[str, np.ndarray]
    seed: int
    frozen: frozenset[str] = frozenset()

    def copy(self) -> "NetworkState":
        return replace(self, params={k: v.copy() for k, v in self.params.items()})

    @property
    def trainable(self) -> list[str]:
        return [k for k in self.params if k not in self.frozen]

    def group(self, name: str) -> str:
        """'output' for parameters of the output layer, else 'hidden'."""
        return "output" if self.spec.layer_of(name) == self.spec.n_layers else "hidden"

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.params.values())


@dataclass
class RecurrentContext:
    """Memory carried between time steps of a temporal network."""

    taps: np.ndarray | None = None
    hidden: dict[int, np.ndarray] = field(default_factory=dict)

    def reset(self) -> None:
        if self.taps is not None:
            self.taps[:] = 0.0
        for v in self.hidden.values():
            v[:] = 0.0

    def copy(self) -> "RecurrentContext":
        return RecurrentContext(
            None if self.taps is None else self.taps.copy(),
            {k: v.copy() for k, v in self.hidden.items()},
        )


def new_context(spec: NetworkSpec) -> RecurrentContext:
    taps = None
    if spec.topology is Topology.TLRN:
        taps = np.zeros((spec.memory_depth + 1, spec.n_inputs))
    hidden = {l: np.zeros(spec.sizes[l]) for l in spec.recurrent_layers}
    return RecurrentContext(taps, hidden)


# --- construction ------------------------------------------------------------

def build(spec: NetworkSpec, seed: int, *, freeze_gamma: bool = False) -> NetworkState:
    """Randomly initialised parameters, reproducible from ``seed``."""
    rng = np.random.default_rng(seed)

    def draw(*shape):
        return rng.uniform(-INIT_RANGE, INIT_RANGE, size=shape)

    sizes = spec.sizes
    params: dict[str, np.ndarray] = {}
    for layer in range(1, spec.n_layers + 1):
        for src in spec.sources(layer):
            params[f"W{src}_{layer}"] = draw(sizes[src], sizes[layer])
        params[f"b{layer}"] = draw(sizes[layer])
    for layer in spec.recurrent_layers:
        n = sizes[layer]
        params[f"R{layer}"] = draw(n) if spec.recurrence is Recurrence.PARTIAL else draw(n, n)
    frozen = set()
    if spec.topology is Topology.TLRN:
        params["g"] = np.full(spec.n_inputs, GAMMA_INIT)
        if freeze_gamma:
            frozen.add("g")
    if spec.topology is Topology.RBF:
        params["centers"] = rng.uniform(0.0, 1.0, size=(spec.n_centers, spec.n_inputs))
        params["widths"] = np.ones(spec.n_centers)
        frozen |= {"centers", "widths"}
    return NetworkState(spec, params, int(seed), frozenset(frozen))


def kolmogorov_hidden(n_inputs: int) -> int:
    if n_inputs < 1:
        raise ValueError("n_inputs must be >= 1")
    return 2 * n_inputs + 1


def lallahem_feasible(a: int, b: int, c: int, d: int) -> bool:
    """Whether a hidden size ``b`` respects ``(a+1)b + (b+1)c <= d/10``.

    ``a``, ``c``: input and output node counts; ``d``: training patterns.
    Compared in integers so the boundary case is exact.
    """
    return 10 * ((a + 1) * b + (b + 1) * c) <= d


# --- building blocks ---------------------------------------------------------

def gamma_step(taps, new_input, g):
    """One step of a gamma memory bank.

    ``taps[0]`` takes the new input; every deeper tap leaks towards its
    predecessor's previous value with rate ``g``. With ``g = 1`` the bank is
    a plain tap-delay line. ``g`` may be a scalar or one value per channel.
    """
    g = _check_gamma(g)
    return _gamma_update(np.asarray(taps, dtype=float), new_input, g)


def _check_gamma(g):
    g = np.asarray(g, dtype=float)
    if np.any(~(g > 0.0)) or np.any(g > 1.0):
        raise ValueError(f"gamma parameter must lie in (0, 1], got {g}")
    return g


def _gamma_update(taps, new_input, g):
    out = np.empty_like(taps)
    out[0] = new_input
    out[1:] = (1.0 - g) * taps[1:] + g * taps[:-1]
    return out


def rbf_activations(centers, widths, inputs):
    """Gaussian responses ``exp(-|x - c|^2 / (2 w^2))``.

    ``inputs`` may be one vector or a batch (rows); returns the matching
    vector or batch x centers matrix.
    """
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    widths = np.asarray(widths, dtype=float)
    if np.any(widths <= 0):
        raise ValueError("RBF widths must be > 0")
    x = np.asarray(inputs, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    d2 = np.sum((x[:, None, :] - centers[None, :, :]) ** 2, axis=2)
    out = np.exp(-d2 / (2.0 * widths**2))
    return out[0] if single else out


# --- core feed-forward pass ---------------------------------------------------

def _core_forward(spec, params, a0, extra=None):
    acts = [a0]
    for layer in range(1, spec.n_layers + 1):
        net = params[f"b{layer}"] + sum(acts[s] @ params[f"W{s}_{layer}"] for s in spec.sources(layer))
        if extra and layer in extra:
            net = net + extra[layer]
        acts.append(_activate(spec.transfer(layer), net))
    return acts


def _core_backward(spec, params, acts, d_out, grads, inject=None, want_input=False):
    """Accumulate weight/bias gradients into ``grads``.

    ``d_out`` is dE/d(output activation). ``inject`` adds extra dE/d(activation)
    terms per layer (recurrent carries). Returns the per-layer deltas
    (dE/d net) and, if asked, dE/d(core input).
    """
    n = spec.n_layers
    d_act = {n: d_out}
    deltas = {}
    d_in = np.zeros_like(acts[0]) if want_input else None
    for layer in range(n, 0, -1):
        da = d_act.get(layer)
        if inject and layer in inject:
            da = inject[layer] if da is None else da + inject[layer]
        if da is None:
            da = np.zeros_like(acts[layer])
        delta = da * _derivative(spec.transfer(layer), acts[layer])
        deltas[layer] = delta
        grads[f"b{layer}"] += delta.sum(axis=0)
        for src in spec.sources(layer):
            w = params[f"W{src}_{layer}"]
            grads[f"W{src}_{layer}"] += acts[src].T @ delta
            back = delta @ w.T
            if src > 0:
                d_act[src] = back if src not in d_act else d_act[src] + back
            elif want_input:
                d_in += back
    return deltas, d_in


# --- chunked sequence evaluation ----------------------------------------------

@dataclass
class _Chunk:
    outputs: np.ndarray
    cache: object
    ctx: RecurrentContext


def _check_inputs(spec, x):
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[1] != spec.n_inputs:
        raise ShapeError(f"expected inputs of width {spec.n_inputs}, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("inputs must be finite")
    return x


def forward_chunk(state: NetworkState, x, ctx: RecurrentContext | None = None) -> _Chunk:
    """Run rows of ``x`` as consecutive time steps starting from ``ctx``.

    Static topologies treat the rows as an independent batch.
    """
    spec, p = state.spec, state.params
    x = _check_inputs(spec, x)
    if ctx is None:
        ctx = new_context(spec)
    topo = spec.topology
    if topo in (Topology.MLP, Topology.GFFN):
        acts = _core_forward(spec, p, x)
        return _Chunk(acts[-1], acts, ctx)
    if topo is Topology.RBF:
        a0 = rbf_activations(p["centers"], p["widths"], x)
        acts = _core_forward(spec, p, a0)
        return _Chunk(acts[-1], acts, ctx)
    if topo is Topology.TLRN:
        g = _check_gamma(p["g"])
        history = [ctx.taps]
        taps = ctx.taps
        for t in range(x.shape[0]):
            taps = _gamma_update(taps, x[t], g)
            history.append(taps)
        a0 = np.stack(history[1:]).reshape(x.shape[0], -1)
        acts = _core_forward(spec, p, a0)
        return _Chunk(acts[-1], (history, acts), RecurrentContext(taps.copy(), {}))
    # RN
    prev = {l: ctx.hidden[l].reshape(1, -1) for l in spec.recurrent_layers}
    steps = []
    outputs = np.empty((x.shape[0], spec.n_outputs))
    for t in range(x.shape[0]):
        extra = {}
        for l, h in prev.items():
            r = p[f"R{l}"]
            extra[l] = h * r if r.ndim == 1 else h @ r
        acts = _core_forward(spec, p, x[t:t + 1], extra)
        steps.append((prev, acts))
        prev = {l: acts[l] for l in spec.recurrent_layers}
        outputs[t] = acts[-1][0]
    new_ctx = RecurrentContext(None, {l: h[0].copy() for l, h in prev.items()})
    return _Chunk(outputs, steps, new_ctx)


def backward_chunk(state: NetworkState, chunk: _Chunk, d_out) -> dict[str, np.ndarray]:
    """Gradients of the loss restricted to this chunk.

    History before the chunk (its starting context) is treated as constant,
    which is what truncates backpropagation through time.
    """
    spec, p = state.spec, state.params
    grads = {k: np.zeros_like(v) for k, v in p.items()}
    d_out = np.asarray(d_out, dtype=float)
    topo = spec.topology
    if topo in (Topology.MLP, Topology.GFFN, Topology.RBF):
        _core_backward(spec, p, chunk.cache, d_out, grads)
        return grads
    if topo is Topology.TLRN:
        history, acts = chunk.cache
        _, d_in = _core_backward(spec, p, acts, d_out, grads, want_input=True)
        g = p["g"]
        depth = spec.memory_depth + 1
        d_taps = d_in.reshape(-1, depth, spec.n_inputs)
        carry = np.zeros((depth, spec.n_inputs))
        dg = np.zeros_like(g)
        for t in range(d_taps.shape[0] - 1, -1, -1):
            total = d_taps[t] + carry
            prev = history[t]
            dg += np.sum(total[1:] * (prev[:-1] - prev[1:]), axis=0)
            carry = np.zeros_like(carry)
            carry[1:] += (1.0 - g) * total[1:]
            carry[:-1] += g * total[1:]
        grads["g"] += dg
        return grads
    # RN
    carry = {}
    for t in range(len(chunk.cache) - 1, -1, -1):
        prev, acts = chunk.cache[t]
        deltas, _ = _core_backward(spec, p, acts, d_out[t:t + 1], grads, inject=carry)
        carry = {}
        for l in spec.recurrent_layers:
            r = p[f"R{l}"]
            if r.ndim == 1:
                grads[f"R{l}"] += (deltas[l] * prev[l])[0]
                carry[l] = deltas[l] * r
            else:
                grads[f"R{l}"] += prev[l].T @ deltas[l]
                carry[l] = deltas[l] @ r.T
    return grads


def forward(state: NetworkState, x, ctx: RecurrentContext | None = None):
    """Single time step. Returns ``(output, new_context)``; inputs are not mutated."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ShapeError("forward takes one input vector; use run_sequence for batches")
    if ctx is None:
        ctx = new_context(state.spec)
    chunk = forward_chunk(state, x[None, :], ctx)
    return chunk.outputs[0].copy(), chunk.ctx


def run_sequence(state: NetworkState, x, ctx: RecurrentContext | None = None):
    """Outputs for consecutive rows of ``x``; returns ``(outputs, final_context)``."""
    chunk = forward_chunk(state, x, ctx)
    return chunk.outputs, chunk.ctx


# --- persistence ---------------------------------------------------------------

def save_model(path, state: NetworkState, meta: dict | None = None) -> None:
    """Write spec, seed and every parameter array into one zip container.

    ``meta`` holds caller data (e.g. the fitted normalizer) and must be JSON.
    """
    header = {
        "format": "pollnet-model",
        "version": FORMAT_VERSION,
        "spec": state.spec.to_dict(),
        "seed": state.seed,
        "frozen": sorted(state.frozen),
        "params": {k: list(v.shape) for k, v in state.params.items()},
        "meta": meta or {},
    }
    buf = io.BytesIO()
    np.savez(buf, **state.params)
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        _write_fixed(zf, "header.json", json.dumps(header, sort_keys=True, indent=1).encode())
        _write_fixed(zf, "params.npz", buf.getvalue())


def _write_fixed(zf, name, data):
    # fixed timestamp keeps the file byte-identical across runs
    info = zipfile.ZipInfo(name, date_time=(1980, 1, 1, 0, 0, 0))
    zf.writestr(info, data)


def load_model(path) -> tuple[NetworkState, dict]:
    try:
        with zipfile.ZipFile(path) as zf:
            header = json.loads(zf.read("header.json"))
            blob = zf.read("params.npz")
    except (zipfile.BadZipFile, KeyError, json.JSONDecodeError, OSError) as exc:
        raise ModelFormatError(f"{path}: not a readable model file ({exc})") from None
    if header.get("format") != "pollnet-model":
        raise ModelFormatError(f"{path}: unknown format tag {header.get('format')!r}")
    if header.get("version") != FORMAT_VERSION:
        raise ModelFormatError(f"{path}: unsupported format version {header.get('version')!r}")
    try:
        spec = NetworkSpec.from_dict(header["spec"])
        with np.load(io.BytesIO(blob), allow_pickle=False) as npz:
            params = {k: npz[k] for k in header["params"]}
    except Exception as exc:  # any decoding failure is a format problem here
        raise ModelFormatError(f"{path}: corrupt model payload ({exc})") from None
    for name, shape in header["params"].items():
        if list(params[name].shape) != shape:
            raise ModelFormatError(f"{path}: parameter {name} has shape {params[name].shape}, header says {shape}")
    reference = build(spec, 0)
    for name, arr in reference.params.items():
        if name not in params or params[name].shape != arr.shape:
            raise ModelFormatError(f"{path}: parameter {name} missing or misshapen for {spec.topology.value}")
    state = NetworkState(spec, params, int(header["seed"]), frozenset(header["frozen"]))
    return state, header.get("meta", {})


def param_count(state: NetworkState) -> int:
    return sum(v.size for v in state.params.values())


def connection_count(spec: NetworkSpec) -> int:
    sizes = spec.sizes
    return sum(sizes[s] * sizes[l] for l in range(1, spec.n_layers + 1) for s in spec.sources(l))


__all__ = [
    "Topology", "Transfer", "Recurrence", "NetworkSpec", "NetworkState", "RecurrentContext",
    "ShapeError", "ModelFormatError", "build", "forward", "run_sequence", "gamma_step",
    "rbf_activations", "kolmogorov_hidden", "lallahem_feasible", "new_context", "save_model",
    "load_model", "sigmoid", "forward_chunk", "backward_chunk", "connection_count",
]
