"""A small numpy toolkit: MLPs, a message-passing graph net, Adam, loss heads.

Every block returns its cache from ``forward`` instead of storing it, so one
block can be applied several times (as the graph net's shared core is) and
its gradients summed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

VAR_EPS = 1e-6
LN_EPS = 1e-5


class ConfigError(ValueError):
    """Raised when an input does not fit a network's declared shape."""


class TrainingDiverged(RuntimeError):
    """Raised when a loss becomes non-finite during training."""


def _init_linear(rng: np.random.Generator, fan_in: int, fan_out: int):
    bound = 1.0 / np.sqrt(max(fan_in, 1))
    W = rng.uniform(-bound, bound, size=(fan_in, fan_out))
    b = rng.uniform(-bound, bound, size=fan_out)
    return W, b


class Mlp:
    """Fully connected ReLU network with an optional output layer norm."""

    def __init__(self, input_dim: int, output_dim: int, hidden: Sequence[int],
                 rng: Optional[np.random.Generator] = None,
                 layer_norm: bool = False) -> None:
        sizes = [input_dim, *hidden, output_dim]
        if any(s < 0 for s in sizes) or any(h <= 0 for h in hidden):
            raise ConfigError(f"bad layer sizes {sizes}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.input_dim, self.output_dim = input_dim, output_dim
        self.hidden = list(hidden)
        self.layer_norm = layer_norm
        self.params: List[np.ndarray] = []
        for fan_in, fan_out in zip(sizes, sizes[1:]):
            self.params.extend(_init_linear(rng, fan_in, fan_out))
        if layer_norm:
            self.params.extend([np.ones(output_dim), np.zeros(output_dim)])

    @property
    def n_linear(self) -> int:
        return len(self.hidden) + 1

    def forward(self, x: np.ndarray):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise ConfigError(f"expected input (batch, {self.input_dim}), "
                              f"got {x.shape}")
        caches = []
        h = x
        for i in range(self.n_linear):
            W, b = self.params[2 * i], self.params[2 * i + 1]
            z = h @ W + b
            caches.append(h)
            h = np.maximum(z, 0.0) if i < self.n_linear - 1 else z
        ln_cache = None
        if self.layer_norm:
            gain, bias = self.params[-2], self.params[-1]
            mu = h.mean(axis=1, keepdims=True)
            var = h.var(axis=1, keepdims=True)
            inv = 1.0 / np.sqrt(var + LN_EPS)
            xhat = (h - mu) * inv
            ln_cache = (xhat, inv)
            h = xhat * gain + bias
        return h, (caches, ln_cache)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]

    def backward(self, cache, dout: np.ndarray):
        """Return (d input, parameter gradients aligned with ``params``)."""
        caches, ln_cache = cache
        grads: List[Optional[np.ndarray]] = [None] * len(self.params)
        d = dout
        if self.layer_norm:
            xhat, inv = ln_cache
            gain = self.params[-2]
            grads[-2] = (d * xhat).sum(axis=0)
            grads[-1] = d.sum(axis=0)
            dxhat = d * gain
            n = xhat.shape[1]
            d = inv / n * (n * dxhat - dxhat.sum(axis=1, keepdims=True)
                           - xhat * (dxhat * xhat).sum(axis=1, keepdims=True))
        for i in reversed(range(self.n_linear)):
            h = caches[i]
            W = self.params[2 * i]
            grads[2 * i] = h.T @ d
            grads[2 * i + 1] = d.sum(axis=0)
            d = d @ W.T
            if i > 0:
                d = d * (caches[i] > 0)
        return d, grads


class Adam:
    def __init__(self, params: List[np.ndarray], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads: Sequence[np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


# Loss heads: each maps (network output, target) to (loss, d loss / d output).

def mse(out: np.ndarray, target: np.ndarray) -> Tuple[float, np.ndarray]:
    diff = out - target
    return float(np.mean(diff ** 2)), 2.0 * diff / diff.size


def _elu(x: np.ndarray) -> np.ndarray:
    return np.where(x > 0, x, np.expm1(np.minimum(x, 0.0)))


def variance_from_raw(raw: np.ndarray) -> np.ndarray:
    """ELU(raw) + 1 + eps, positive for every raw value."""
    return _elu(raw) + 1.0 + VAR_EPS


def gaussian_nll(out: np.ndarray, target: np.ndarray) -> Tuple[float, np.ndarray]:
    """Mean negative log likelihood; ``out`` holds [mean, raw variance]."""
    d = target.shape[1]
    mean, raw = out[:, :d], out[:, d:]
    var = variance_from_raw(raw)
    diff = target - mean
    nll = 0.5 * (np.log(2.0 * np.pi * var) + diff ** 2 / var)
    n = out.shape[0]
    d_mean = -diff / var / n
    d_var = 0.5 * (1.0 / var - diff ** 2 / var ** 2) / n
    d_raw = d_var * np.where(raw > 0, 1.0, np.exp(np.minimum(raw, 0.0)))
    return float(nll.sum() / n), np.concatenate([d_mean, d_raw], axis=1)


def bce(logits: np.ndarray, labels: np.ndarray) -> Tuple[float, np.ndarray]:
    """Binary cross-entropy on logits, averaged over all entries."""
    loss = np.logaddexp(0.0, logits) - labels * logits
    return float(loss.mean()), (sigmoid(logits) - labels) / logits.size


def sigmoid(x: np.ndarray) -> np.ndarray:
    return np.exp(-np.logaddexp(0.0, -x))


LOSSES: Dict[str, Callable] = {"mse": mse, "gaussian_nll": gaussian_nll, "bce": bce}


def backward_and_step(net: Mlp, opt: Adam, x: np.ndarray, y: np.ndarray,
                      loss: str) -> float:
    """One optimizer step on (x, y); returns the loss before the step."""
    out, cache = net.forward(x)
    value, dout = LOSSES[loss](out, y)
    if not np.isfinite(value):
        raise TrainingDiverged(f"{loss} loss became {value}")
    _, grads = net.backward(cache, dout)
    opt.step(grads)
    return value


def gaussian_sample(mean: np.ndarray, var: np.ndarray, rng: np.random.Generator,
                    clip_std: Optional[float] = 1.0) -> np.ndarray:
    std = np.sqrt(var)
    draw = mean + std * rng.standard_normal(mean.shape)
    if clip_std is not None:
        draw = np.clip(draw, mean - clip_std * std, mean + clip_std * std)
    return draw


@dataclass
class Normalizer:
    """Per-feature affine standardization fit on a training matrix."""
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, x: np.ndarray) -> "Normalizer":
        x = np.asarray(x, dtype=np.float64)
        std = x.std(axis=0)
        std = np.where(std < 1e-6, 1.0, std)
        return cls(x.mean(axis=0), std)

    @classmethod
    def identity(cls, dim: int) -> "Normalizer":
        return cls(np.zeros(dim), np.ones(dim))

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) / self.std

    def invert(self, z: np.ndarray) -> np.ndarray:
        return z * self.std + self.mean


def train_full_batch(net: Mlp, x: np.ndarray, y: np.ndarray, loss: str,
                     epochs: int, lr: float = 1e-3) -> List[float]:
    """Full-batch Adam; returns the per-epoch loss history."""
    opt = Adam(net.params, lr=lr)
    return [backward_and_step(net, opt, x, y, loss) for _ in range(epochs)]


# Graph network.

@dataclass
class Graph:
    nodes: np.ndarray       # (N, node_dim)
    edges: np.ndarray       # (E, edge_dim)
    senders: np.ndarray     # (E,) int
    receivers: np.ndarray   # (E,) int
    globals: np.ndarray     # (global_dim,)


@dataclass
class GraphBatch:
    nodes: np.ndarray
    edges: np.ndarray
    senders: np.ndarray
    receivers: np.ndarray
    globals: np.ndarray     # (G, global_dim)
    node_graph: np.ndarray  # (N,) graph index of each node
    edge_graph: np.ndarray  # (E,)

    @property
    def n_graphs(self) -> int:
        return self.globals.shape[0]


def batch_graphs(graphs: Sequence[Graph]) -> GraphBatch:
    nodes, edges, snd, rcv, glob, ng, eg = [], [], [], [], [], [], []
    offset = 0
    for gi, g in enumerate(graphs):
        n = g.nodes.shape[0]
        senders = np.asarray(g.senders, dtype=np.int64)
        receivers = np.asarray(g.receivers, dtype=np.int64)
        if len(senders) != len(receivers) or len(senders) != g.edges.shape[0]:
            raise ConfigError("edge arrays disagree in length")
        if len(senders) and (min(senders.min(), receivers.min()) < 0
                             or max(senders.max(), receivers.max()) >= n):
            raise ConfigError("edge refers to a node that does not exist")
        nodes.append(g.nodes)
        edges.append(g.edges)
        snd.append(senders + offset)
        rcv.append(receivers + offset)
        glob.append(g.globals)
        ng.append(np.full(n, gi))
        eg.append(np.full(len(senders), gi))
        offset += n
    return GraphBatch(np.concatenate(nodes), np.concatenate(edges),
                      np.concatenate(snd), np.concatenate(rcv), np.stack(glob),
                      np.concatenate(ng), np.concatenate(eg))


def _segment_sum(values: np.ndarray, index: np.ndarray, n: int) -> np.ndarray:
    out = np.zeros((n, values.shape[1]))
    np.add.at(out, index, values)
    return out


def _inverse_counts(batch: GraphBatch) -> Tuple[np.ndarray, np.ndarray]:
    G = batch.n_graphs
    n = np.bincount(batch.node_graph, minlength=G).astype(np.float64)
    e = np.bincount(batch.edge_graph, minlength=G).astype(np.float64)
    return (1.0 / np.maximum(n, 1.0))[:, None], (1.0 / np.maximum(e, 1.0))[:, None]


class GraphNet:
    """Encode-process-decode graph network emitting one logit per node."""

    def __init__(self, node_dim: int, edge_dim: int, global_dim: int,
                 rng: Optional[np.random.Generator] = None, width: int = 16,
                 rounds: int = 3) -> None:
        rng = rng if rng is not None else np.random.default_rng(0)
        self.dims = (node_dim, edge_dim, global_dim)
        self.width, self.rounds = width, rounds
        w = width

        def block(n_in, n_out, ln=True):
            return Mlp(n_in, n_out, [w], rng, layer_norm=ln)

        self.enc_node = block(node_dim, w)
        self.enc_edge = block(edge_dim, w)
        self.enc_glob = block(global_dim, w)
        # Core inputs concatenate the encoded features with the current latents.
        self.core_edge = block(2 * w + 2 * (2 * w) + 2 * w, w)
        self.core_node = block(2 * w + w + 2 * w, w)
        self.core_glob = block(2 * w + w + w, w)
        self.dec_node = block(w, 1, ln=False)
        self.blocks = [self.enc_node, self.enc_edge, self.enc_glob, self.core_edge,
                       self.core_node, self.core_glob, self.dec_node]

    @property
    def params(self) -> List[np.ndarray]:
        return [p for b in self.blocks for p in b.params]

    def forward(self, batch: GraphBatch):
        nd, ed, gd = self.dims
        if batch.nodes.shape[1] != nd or batch.edges.shape[1] != ed \
                or batch.globals.shape[1] != gd:
            raise ConfigError("graph feature sizes do not match the network")
        N, G = batch.nodes.shape[0], batch.n_graphs
        snd, rcv = batch.senders, batch.receivers
        v0, c_vn = self.enc_node.forward(batch.nodes)
        e0, c_en = self.enc_edge.forward(batch.edges)
        u0, c_un = self.enc_glob.forward(batch.globals)
        v, e, u = v0, e0, u0
        # The global readout averages, so its scale does not grow with object count.
        inv_n, inv_e = _inverse_counts(batch)
        rounds = []
        for _ in range(self.rounds):
            ve, ee, ue = (np.concatenate([v0, v], 1), np.concatenate([e0, e], 1),
                          np.concatenate([u0, u], 1))
            e_in = np.concatenate([ee, ve[snd], ve[rcv], ue[batch.edge_graph]], 1)
            e_new, c_e = self.core_edge.forward(e_in)
            agg_e = _segment_sum(e_new, rcv, N)
            v_in = np.concatenate([ve, agg_e, ue[batch.node_graph]], 1)
            v_new, c_v = self.core_node.forward(v_in)
            u_in = np.concatenate([ue, _segment_sum(v_new, batch.node_graph, G) * inv_n,
                                   _segment_sum(e_new, batch.edge_graph, G) * inv_e], 1)
            u_new, c_u = self.core_glob.forward(u_in)
            rounds.append((c_e, c_v, c_u))
            v, e, u = v_new, e_new, u_new
        out, c_dec = self.dec_node.forward(v)
        cache = (batch, (c_vn, c_en, c_un), rounds, c_dec)
        return out[:, 0], cache

    def backward(self, cache, dlogits: np.ndarray) -> List[np.ndarray]:
        batch, (c_vn, c_en, c_un), rounds, c_dec = cache
        w = self.width
        N, G = batch.nodes.shape[0], batch.n_graphs
        snd, rcv = batch.senders, batch.receivers
        grads = {id(b): [np.zeros_like(p) for p in b.params] for b in self.blocks}

        def acc(block, gs):
            for total, g in zip(grads[id(block)], gs):
                total += g

        inv_n, inv_e = _inverse_counts(batch)
        dv, g = self.dec_node.backward(c_dec, dlogits[:, None])
        acc(self.dec_node, g)
        de = np.zeros((batch.edges.shape[0], w))
        du = np.zeros((G, w))
        dv0 = np.zeros((N, w))
        de0 = np.zeros_like(de)
        du0 = np.zeros_like(du)
        for c_e, c_v, c_u in reversed(rounds):
            # Global update.
            du_in, g = self.core_glob.backward(c_u, du)
            acc(self.core_glob, g)
            due = du_in[:, :2 * w]
            dv_new = dv + (du_in[:, 2 * w:3 * w] * inv_n)[batch.node_graph]
            de_new = de + (du_in[:, 3 * w:] * inv_e)[batch.edge_graph]
            # Node update.
            dv_in, g = self.core_node.backward(c_v, dv_new)
            acc(self.core_node, g)
            dve = dv_in[:, :2 * w].copy()
            de_new = de_new + dv_in[:, 2 * w:3 * w][rcv]
            due = due + _segment_sum(dv_in[:, 3 * w:], batch.node_graph, G)
            # Edge update.
            de_in, g = self.core_edge.backward(c_e, de_new)
            acc(self.core_edge, g)
            dee = de_in[:, :2 * w]
            np.add.at(dve, snd, de_in[:, 2 * w:4 * w])
            np.add.at(dve, rcv, de_in[:, 4 * w:6 * w])
            due = due + _segment_sum(de_in[:, 6 * w:], batch.edge_graph, G)
            dv0 += dve[:, :w]
            de0 += dee[:, :w]
            du0 += due[:, :w]
            dv, de, du = dve[:, w:], dee[:, w:], due[:, w:]
        _, g = self.enc_node.backward(c_vn, dv0 + dv)
        acc(self.enc_node, g)
        _, g = self.enc_edge.backward(c_en, de0 + de)
        acc(self.enc_edge, g)
        _, g = self.enc_glob.backward(c_un, du0 + du)
        acc(self.enc_glob, g)
        return [g for b in self.blocks for g in grads[id(b)]]

    def scores(self, batch: GraphBatch) -> np.ndarray:
        return sigmoid(self.forward(batch)[0])

    def fit(self, graphs: Sequence[Graph], labels: Sequence[np.ndarray],
            epochs: int, rng: np.random.Generator, batch_size: int = 128,
            lr: float = 1e-3) -> List[float]:
        """Minibatch Adam on per-node BCE; returns the per-epoch mean loss."""
        opt = Adam(self.params, lr=lr)
        history = []
        n = len(graphs)
        for _ in range(epochs):
            order = rng.permutation(n)
            total = 0.0
            for start in range(0, n, batch_size):
                idx = order[start:start + batch_size]
                batch = batch_graphs([graphs[i] for i in idx])
                y = np.concatenate([labels[i] for i in idx])
                logits, cache = self.forward(batch)
                value, dlogits = bce(logits, y)
                if not np.isfinite(value):
                    raise TrainingDiverged(f"graph net loss became {value}")
                opt.step(self.backward(cache, dlogits))
                total += value * len(idx)
            history.append(total / max(n, 1))
        return history
