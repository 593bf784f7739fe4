"""Weight-sharing parameter store with hand-written forward and backward passes.

Parameters live in a dict keyed by ``(edge_index, op_index)``; each value maps
block names (``"W"``, ``"b"``) to float64 arrays.  The fixed stem and head
layers use the pseudo edge indices ``STEM`` and ``HEAD``.  A subnet is just a
genome used to index that dict, so forward/backward work the same on a
``SuperNet`` and on a ``StandaloneNet`` holding only its own blocks.
"""

from __future__ import annotations

import copy
import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .genome import NODES_PER_CELL, ArchitectureGenome, SearchSpaceSpec, random_genome, validate

STEM = -1
HEAD = -2
CHECKPOINT_VERSION = 1

Key = tuple[int, int]
Blocks = dict[str, np.ndarray]


class DimensionError(ValueError):
    pass


class StaleTapeError(RuntimeError):
    pass


class GenomeMismatchError(ValueError):
    pass


@dataclass(eq=False)
class _Net:
    space: SearchSpaceSpec
    params: dict[Key, Blocks]
    opt_state: dict[Key, dict] = field(default_factory=dict)
    version: int = 0

    @property
    def role(self) -> str:
        return self.space.role

    def touch(self) -> None:
        self.version += 1


@dataclass(eq=False)
class SuperNet(_Net):
    pass


@dataclass(eq=False)
class StandaloneNet(_Net):
    genome: ArchitectureGenome | None = None


def fixed_layer_dims(space: SearchSpaceSpec) -> dict[int, tuple[int, int]]:
    return {STEM: (space.in_dim, space.io_dims[0]), HEAD: (space.io_dims[-1], space.out_dim)}


def _block_dims(space: SearchSpaceSpec, key: Key) -> tuple[int, int]:
    edge, _ = key
    if edge in (STEM, HEAD):
        return fixed_layer_dims(space)[edge]
    slot = space.slots[edge]
    return slot.in_dim, slot.out_dim


def _fresh_moments(blocks: Blocks) -> dict:
    return {
        "m": {k: np.zeros_like(v) for k, v in blocks.items()},
        "v": {k: np.zeros_like(v) for k, v in blocks.items()},
        "t": 0,
    }


def init_blocks(space: SearchSpaceSpec, keys, init_scheme: str, rng: np.random.Generator) -> dict[Key, Blocks]:
    params = {}
    for key in keys:
        fan_in, fan_out = _block_dims(space, key)
        if init_scheme == "zero":
            W, b = np.zeros((fan_in, fan_out)), np.zeros(fan_out)
        elif init_scheme == "kaiming_uniform":
            bound = 1.0 / np.sqrt(fan_in)
            W = rng.uniform(-bound, bound, size=(fan_in, fan_out))
            b = rng.uniform(-bound, bound, size=fan_out)
        else:
            raise ValueError(f"unknown init scheme {init_scheme!r}")
        params[key] = {"W": W, "b": b}
    return params


def all_keys(space: SearchSpaceSpec) -> list[Key]:
    return [(STEM, 0)] + space.parameterized_pairs() + [(HEAD, 0)]


def active_keys(space: SearchSpaceSpec, genome: ArchitectureGenome) -> list[Key]:
    return [(STEM, 0)] + genome.active_pairs(space) + [(HEAD, 0)]


def init_supernet(space: SearchSpaceSpec, role: str | None = None, init_scheme: str = "kaiming_uniform", seed: int = 0) -> SuperNet:
    if role is not None and role != space.role:
        raise ValueError(f"space is for {space.role}, not {role}")
    rng = np.random.default_rng(seed)
    params = init_blocks(space, all_keys(space), init_scheme, rng)
    return SuperNet(space, params, {k: _fresh_moments(v) for k, v in params.items()})


def init_standalone(space: SearchSpaceSpec, genome: ArchitectureGenome, init_scheme: str = "kaiming_uniform", seed: int = 0) -> StandaloneNet:
    _check_genome(space, genome)
    rng = np.random.default_rng(seed)
    params = init_blocks(space, active_keys(space, genome), init_scheme, rng)
    return StandaloneNet(space, params, {k: _fresh_moments(v) for k, v in params.items()}, genome=genome)


def _check_genome(space: SearchSpaceSpec, genome: ArchitectureGenome) -> None:
    problems = validate(genome, space)
    if problems:
        raise GenomeMismatchError("; ".join(problems))


# -- activations ------------------------------------------------------------

def _act(name: str | None, a: np.ndarray) -> np.ndarray:
    if name is None:
        return a
    if name == "relu":
        return np.maximum(a, 0.0)
    if name == "tanh":
        return np.tanh(a)
    if name == "elu":
        return np.where(a > 0, a, np.expm1(np.minimum(a, 0.0)))
    raise ValueError(name)


def _act_grad(name: str | None, a: np.ndarray, y: np.ndarray, g: np.ndarray) -> np.ndarray:
    if name is None:
        return g
    if name == "relu":
        return g * (a > 0)
    if name == "tanh":
        return g * (1.0 - y * y)
    if name == "elu":
        return g * np.where(a > 0, 1.0, y + 1.0)
    raise ValueError(name)


# -- forward / backward -------------------------------------------------------

@dataclass
class _Record:
    key: Key | None
    kind: str
    activation: str | None
    src: int
    dst: int
    x: np.ndarray
    a: np.ndarray | None = None
    y: np.ndarray | None = None


@dataclass
class Tape:
    net: _Net
    version: int
    records: list[_Record]
    n_rows: int
    node_dims: dict[int, int]
    input_grad: np.ndarray | None = None
    used: bool = False


def _resolve_genome(net: _Net, genome: ArchitectureGenome | None) -> ArchitectureGenome:
    if isinstance(net, StandaloneNet):
        if genome is not None and genome != net.genome:
            raise GenomeMismatchError("genome differs from the standalone net's genome")
        return net.genome
    if genome is None:
        raise GenomeMismatchError("a SuperNet forward needs a genome")
    _check_genome(net.space, genome)
    return genome


def forward(net: _Net, genome: ArchitectureGenome | None, x: np.ndarray) -> tuple[np.ndarray, Tape]:
    space = net.space
    genome = _resolve_genome(net, genome)
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != space.in_dim:
        raise DimensionError(f"expected (n, {space.in_dim}) input, got {x.shape}")
    n = x.shape[0]
    records: list[_Record] = []
    node_dims = {0: space.io_dims[0]}

    p = net.params[(STEM, 0)]
    a = x @ p["W"] + p["b"]
    h = _act(space.stem_activation, a)
    records.append(_Record((STEM, 0), "dense", space.stem_activation, -1, 0, x, a, h))
    nodes: dict[int, np.ndarray] = {0: h}

    # Node j of cell c has global id 4c + j, so a cell's output node doubles as
    # the next cell's input node.
    choices = genome.choices
    for c in range(space.cells):
        base = c * (NODES_PER_CELL - 1)
        cell_slots = space.slots[c * len(space.edges_per_cell):(c + 1) * len(space.edges_per_cell)]
        for slot in sorted(cell_slots, key=lambda s: s.src):
            k = choices[slot.index]
            op = space.op(slot.index, k)
            src, dst = base + slot.src, base + slot.dst
            node_dims.setdefault(dst, slot.out_dim)
            node_dims.setdefault(src, slot.in_dim)
            if op.kind == "none":
                continue
            xin = nodes.get(src)
            if xin is None:
                xin = np.zeros((n, slot.in_dim))
            rec = _Record(None, op.kind, op.activation, src, dst, xin)
            if op.kind == "identity":
                out = xin
            elif op.kind == "repeat":
                out = np.repeat(xin, 2, axis=1)
            elif op.kind == "pool":
                out = xin.reshape(n, -1, 2).mean(axis=2)
            else:
                rec.key = (slot.index, k)
                p = net.params[rec.key]
                rec.a = xin @ p["W"] + p["b"]
                out = rec.y = _act(op.activation, rec.a)
            records.append(rec)
            nodes[dst] = out if dst not in nodes else nodes[dst] + out

    last = space.cells * (NODES_PER_CELL - 1)
    h = nodes.get(last)
    if h is None:
        h = np.zeros((n, space.io_dims[-1]))
    p = net.params[(HEAD, 0)]
    out = h @ p["W"] + p["b"]
    records.append(_Record((HEAD, 0), "dense", None, last, -2, h, out, out))
    return out, Tape(net, net.version, records, n, node_dims)


def backward(tape: Tape, out_grad: np.ndarray) -> dict[Key, Blocks]:
    """Gradients for every parameter block the forward touched.

    The gradient with respect to the network input is left on
    ``tape.input_grad``.
    """
    if tape.net.version != tape.version:
        raise StaleTapeError("parameters changed since this tape was recorded")
    out_grad = np.asarray(out_grad, dtype=np.float64)
    grads: dict[Key, Blocks] = {}
    node_grad: dict[int, np.ndarray] = {-2: out_grad}
    params = tape.net.params
    for rec in reversed(tape.records):
        g = node_grad.get(rec.dst)
        if g is None:
            # Nothing downstream consumed this node: its gradient is zero.
            g = np.zeros((tape.n_rows, tape.node_dims[rec.dst]))
        if rec.kind == "identity":
            gx = g
        elif rec.kind == "repeat":
            gx = g.reshape(tape.n_rows, -1, 2).sum(axis=2)
        elif rec.kind == "pool":
            gx = np.repeat(g * 0.5, 2, axis=1)
        else:
            ga = _act_grad(rec.activation, rec.a, rec.y, g)
            W = params[rec.key]["W"]
            grads[rec.key] = {"W": rec.x.T @ ga, "b": ga.sum(axis=0)}
            gx = ga @ W.T
        if rec.src in node_grad:
            node_grad[rec.src] = node_grad[rec.src] + gx
        else:
            node_grad[rec.src] = gx
    tape.input_grad = node_grad.get(-1)
    tape.used = True
    return grads


def adam_step(net: _Net, grads: dict[Key, Blocks], lr: float, beta1: float = 0.0, beta2: float = 0.9, eps: float = 1e-8) -> None:
    """Adam with bias correction, applied only to the blocks present in ``grads``.

    Each block keeps its own step counter, so blocks that a subnet skips are
    not biased by steps they never took.
    """
    for key in grads:
        if key not in net.params:
            raise KeyError(f"no parameter block {key}")
        for name, g in grads[key].items():
            if g.shape != net.params[key][name].shape:
                raise DimensionError(f"gradient shape {g.shape} != parameter shape {net.params[key][name].shape} at {key}/{name}")
    for key, blocks in grads.items():
        state = net.opt_state[key]
        state["t"] += 1
        t = state["t"]
        bc1 = 1.0 - beta1 ** t
        bc2 = 1.0 - beta2 ** t
        for name, g in blocks.items():
            m = state["m"][name]
            v = state["v"][name]
            m *= beta1
            m += (1.0 - beta1) * g
            v *= beta2
            v += (1.0 - beta2) * (g * g)
            net.params[key][name] -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    net.touch()


def uniform_path_sample(space: SearchSpaceSpec, role: str, rng: np.random.Generator) -> ArchitectureGenome:
    return random_genome(space, role, rng)


def extract_subnet(supernet: SuperNet, genome: ArchitectureGenome, copy_moments: bool = True) -> StandaloneNet:
    _check_genome(supernet.space, genome)
    keys = active_keys(supernet.space, genome)
    params = {k: {n: v.copy() for n, v in supernet.params[k].items()} for k in keys}
    if copy_moments:
        opt_state = {k: copy.deepcopy(supernet.opt_state[k]) for k in keys}
    else:
        opt_state = {k: _fresh_moments(params[k]) for k in keys}
    return StandaloneNet(supernet.space, params, opt_state, genome=genome)


def copy_weights(dst: StandaloneNet, src: StandaloneNet, copy_moments: bool = True) -> None:
    if dst.genome != src.genome:
        raise GenomeMismatchError("copy_weights needs identical genomes")
    dst.params = {k: {n: v.copy() for n, v in b.items()} for k, b in src.params.items()}
    if copy_moments:
        dst.opt_state = copy.deepcopy(src.opt_state)
    else:
        dst.opt_state = {k: _fresh_moments(b) for k, b in dst.params.items()}
    dst.touch()


def clone_net(net: StandaloneNet) -> StandaloneNet:
    return StandaloneNet(net.space, copy.deepcopy(net.params), copy.deepcopy(net.opt_state), genome=net.genome)


def weight_digest(net: _Net) -> str:
    h = hashlib.sha256()
    for key in sorted(net.params):
        for name in sorted(net.params[key]):
            h.update(f"{key}/{name}".encode())
            h.update(np.ascontiguousarray(net.params[key][name]).tobytes())
    return h.hexdigest()[:16]


# -- checkpoints -------------------------------------------------------------

def save_checkpoint(path: str | Path, net: _Net) -> None:
    arrays = {
        "__version__": np.array(CHECKPOINT_VERSION),
        "__role__": np.array(net.role),
        "__space_id__": np.array(net.space.space_id),
    }
    if isinstance(net, StandaloneNet):
        arrays["__choices__"] = np.array(net.genome.choices)
    for (edge, op), blocks in net.params.items():
        for name, value in blocks.items():
            arrays[f"{edge}:{op}:{name}"] = value
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path: str | Path, space: SearchSpaceSpec) -> _Net:
    from .genome import genome_from_choices

    with np.load(path) as data:
        if "__version__" not in data.files:
            raise ValueError(f"{path}: checkpoint has no version field")
        if int(data["__version__"]) != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {int(data['__version__'])}")
        if str(data["__space_id__"]) != space.space_id:
            raise ValueError(f"{path}: checkpoint space {str(data['__space_id__'])} != {space.space_id}")
        params: dict[Key, Blocks] = {}
        for name in data.files:
            if name.startswith("__"):
                continue
            edge, op, block = name.split(":")
            params.setdefault((int(edge), int(op)), {})[block] = data[name].copy()
        opt_state = {k: _fresh_moments(b) for k, b in params.items()}
        if "__choices__" in data.files:
            genome = genome_from_choices(space, [int(c) for c in data["__choices__"]])
            return StandaloneNet(space, params, opt_state, genome=genome)
    return SuperNet(space, params, opt_state)
