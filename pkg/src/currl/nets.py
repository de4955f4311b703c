"""Entity-pooled actor-critic network with in-repo backpropagation.

The encoder embeds each entity type separately, mean-pools within a type,
and concatenates the pooled codes with the agent's own features, so the same
parameters evaluate on any entity count and the outputs are invariant to
permutations of same-type entities.  Entity sets are canonically sorted
before embedding, which makes the invariance exact in floating point, not
just up to summation order.

No autodiff framework: forward passes cache activations and ``backward``
produces parameter gradients for the losses assembled by the trainer.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

N_ACTIONS = 5


@dataclass(frozen=True)
class ObsLayout:
    """How a flat observation splits into self features and entity sets."""

    self_dim: int
    groups: tuple[tuple[str, int], ...]  # (type name, entity count) per set

    @property
    def total_dim(self) -> int:
        return self.self_dim + sum(2 * c for _, c in self.groups)


def layout_for(spec, n: int) -> ObsLayout:
    from .world import obs_layout

    return ObsLayout(self_dim=4, groups=tuple(obs_layout(spec, n)))


def _canonical_sort(ents: np.ndarray) -> np.ndarray:
    """Sort each entity set lexicographically by (x, y).

    Complex argsort orders by real part then imaginary part; a stable kind
    keeps ties (identical coordinates) deterministic.
    """
    if ents.shape[1] <= 1:
        return ents
    key = ents[:, :, 0] + 1j * ents[:, :, 1]
    order = np.argsort(key, axis=1, kind="stable")
    return np.take_along_axis(ents, order[:, :, None], axis=1)


def _xavier(rng, fan_in: int, fan_out: int, gain: float = 1.0) -> np.ndarray:
    a = gain * np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=(fan_in, fan_out))


class PolicyNet:
    """Goal-conditioned actor and per-agent critic over pooled entity codes.

    The actor and critic are fully separate networks (no shared layers):
    task-distribution shifts produce large value-prediction errors, and
    letting those gradients reshape a shared encoder destroys previously
    learned behavior.
    """

    def __init__(self, entity_types: tuple[str, ...], hidden: int = 64,
                 n_actions: int = N_ACTIONS, dtype=np.float32, rng=None):
        rng = rng or np.random.default_rng(0)
        self.entity_types = tuple(entity_types)
        self.hidden = hidden
        self.n_actions = n_actions
        self.dtype = np.dtype(dtype)
        H = hidden
        p = {}
        for side, out_dim, gain in (("pi", n_actions, 0.01), ("vf", 1, 1.0)):
            p[f"{side}.emb_self.W"] = _xavier(rng, 4, H)
            p[f"{side}.emb_self.b"] = np.zeros(H)
            for t in self.entity_types:
                p[f"{side}.emb_{t}.W"] = _xavier(rng, 2, H)
                p[f"{side}.emb_{t}.b"] = np.zeros(H)
            trunk_in = H * (1 + len(self.entity_types))
            p[f"{side}.trunk.W"] = _xavier(rng, trunk_in, H)
            p[f"{side}.trunk.b"] = np.zeros(H)
            p[f"{side}.head_h.W"] = _xavier(rng, H, H)
            p[f"{side}.head_h.b"] = np.zeros(H)
            p[f"{side}.head_out.W"] = _xavier(rng, H, out_dim, gain=gain)
            p[f"{side}.head_out.b"] = np.zeros(out_dim)
        self.params = {k: v.astype(self.dtype) for k, v in p.items()}

    # -- observation splitting ------------------------------------------------

    def _split(self, obs: np.ndarray, layout: ObsLayout):
        if obs.shape[1] != layout.total_dim:
            raise ValueError(f"observation dim {obs.shape[1]} does not match "
                             f"layout dim {layout.total_dim}")
        self_feat = obs[:, :layout.self_dim]
        sets = {}
        at = layout.self_dim
        for name, count in layout.groups:
            sets[name] = obs[:, at:at + 2 * count].reshape(len(obs), count, 2)
            at += 2 * count
        for name in sets:
            if name not in self.entity_types:
                raise ValueError(f"layout has entity type {name!r} unknown to the net")
        return self_feat, sets

    # -- forward / backward ----------------------------------------------------

    def _encode(self, side: str, self_feat, sets, cache: dict):
        """Pooled encoder for one side ('pi' or 'vf'); caches activations."""
        p = self.params
        S = len(self_feat)
        H = self.hidden
        e_self = np.tanh(self_feat @ p[f"{side}.emb_self.W"]
                         + p[f"{side}.emb_self.b"])
        cache[f"{side}.e_self"] = e_self
        pooled = [e_self]
        for t in self.entity_types:
            ents = sets.get(t)
            if ents is None or ents.shape[1] == 0:
                cache[f"{side}.set_{t}"] = None
                pooled.append(np.zeros((S, H), dtype=self.dtype))
                continue
            count = ents.shape[1]
            flat = ents.reshape(S * count, 2)  # one GEMM over all set members
            e = np.tanh(flat @ p[f"{side}.emb_{t}.W"] + p[f"{side}.emb_{t}.b"])
            cache[f"{side}.set_{t}"] = (flat, e, count)
            pooled.append(e.reshape(S, count, H).mean(axis=1))
        h0 = np.concatenate(pooled, axis=1)
        tr = np.tanh(h0 @ p[f"{side}.trunk.W"] + p[f"{side}.trunk.b"])
        hh = np.tanh(tr @ p[f"{side}.head_h.W"] + p[f"{side}.head_h.b"])
        out = hh @ p[f"{side}.head_out.W"] + p[f"{side}.head_out.b"]
        cache[f"{side}.h0"] = h0
        cache[f"{side}.tr"] = tr
        cache[f"{side}.hh"] = hh
        return out

    def forward(self, obs: np.ndarray, layout: ObsLayout, need_cache: bool = False):
        """Returns (logits, values[, cache]) for a flat obs batch (S, D)."""
        obs = np.ascontiguousarray(obs, dtype=self.dtype)
        self_feat, sets = self._split(obs, layout)
        sets = {t: _canonical_sort(e) for t, e in sets.items()}
        cache = {"layout": layout, "self_in": self_feat}
        logits = self._encode("pi", self_feat, sets, cache)
        values = self._encode("vf", self_feat, sets, cache)[:, 0]
        if not need_cache:
            return logits, values
        return logits, values, cache

    def _encode_backward(self, side: str, cache: dict, dout: np.ndarray,
                         g: dict) -> None:
        p = self.params
        H = self.hidden
        hh, tr, h0 = cache[f"{side}.hh"], cache[f"{side}.tr"], cache[f"{side}.h0"]
        g[f"{side}.head_out.W"] = hh.T @ dout
        g[f"{side}.head_out.b"] = dout.sum(axis=0)
        dhh = (dout @ p[f"{side}.head_out.W"].T) * (1.0 - hh * hh)
        g[f"{side}.head_h.W"] = tr.T @ dhh
        g[f"{side}.head_h.b"] = dhh.sum(axis=0)
        dtr = (dhh @ p[f"{side}.head_h.W"].T) * (1.0 - tr * tr)
        g[f"{side}.trunk.W"] = h0.T @ dtr
        g[f"{side}.trunk.b"] = dtr.sum(axis=0)
        dh0 = dtr @ p[f"{side}.trunk.W"].T

        e_self = cache[f"{side}.e_self"]
        de_self = dh0[:, :H] * (1.0 - e_self * e_self)
        g[f"{side}.emb_self.W"] = cache["self_in"].T @ de_self
        g[f"{side}.emb_self.b"] = de_self.sum(axis=0)

        for idx, t in enumerate(self.entity_types):
            block = dh0[:, H * (idx + 1): H * (idx + 2)]
            stored = cache[f"{side}.set_{t}"]
            if stored is None:
                g[f"{side}.emb_{t}.W"] = np.zeros_like(p[f"{side}.emb_{t}.W"])
                g[f"{side}.emb_{t}.b"] = np.zeros_like(p[f"{side}.emb_{t}.b"])
                continue
            flat, e, count = stored
            S = len(block)
            de = np.empty_like(e)
            np.multiply(e, e, out=de)
            np.subtract(1.0, de, out=de)
            de3 = de.reshape(S, count, H)
            de3 *= block[:, None, :]
            de *= self.dtype.type(1.0 / count)
            g[f"{side}.emb_{t}.W"] = flat.T @ de
            g[f"{side}.emb_{t}.b"] = de.sum(axis=0)

    def backward(self, cache, dlogits: np.ndarray, dvalues: np.ndarray) -> dict:
        """Parameter gradients for upstream per-sample gradients (summed)."""
        g: dict[str, np.ndarray] = {}
        self._encode_backward("pi", cache, dlogits.astype(self.dtype), g)
        self._encode_backward("vf", cache,
                              dvalues.astype(self.dtype)[:, None], g)
        return g

    # -- misc ------------------------------------------------------------------

    def log_probs_and_entropy(self, logits: np.ndarray):
        """Row-wise log-softmax, softmax, and entropy."""
        z = logits - logits.max(axis=1, keepdims=True)
        ez = np.exp(z)
        denom = ez.sum(axis=1, keepdims=True)
        logp = z - np.log(denom)
        probs = ez / denom
        entropy = -(probs * logp).sum(axis=1)
        return logp, probs, entropy

    def sample_actions(self, logits: np.ndarray, rng) -> np.ndarray:
        gumbel = -np.log(-np.log(rng.uniform(size=logits.shape) + 1e-20) + 1e-20)
        return np.argmax(logits + gumbel, axis=1)

    def param_names(self) -> list[str]:
        return sorted(self.params)

    def param_vector(self) -> np.ndarray:
        return np.concatenate([self.params[k].ravel() for k in self.param_names()])

    def set_param_vector(self, vec: np.ndarray) -> None:
        at = 0
        for k in self.param_names():
            n = self.params[k].size
            self.params[k] = vec[at:at + n].reshape(self.params[k].shape).astype(self.dtype)
            at += n

    def grad_vector(self, grads: dict) -> np.ndarray:
        return np.concatenate([grads[k].ravel() for k in self.param_names()])


class Adam:
    """Adaptive-moment optimizer over a named parameter dict."""

    def __init__(self, params: dict, lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-5):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict, grads: dict, max_grad_norm: float = 0.0) -> float:
        if max_grad_norm:
            total = np.sqrt(sum(float((g.astype(np.float64) ** 2).sum())
                                for g in grads.values()))
            if total > max_grad_norm:
                scale = max_grad_norm / total
                grads = {k: g * scale for k, g in grads.items()}
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for k, g in grads.items():
            m = self.m[k]
            v = self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            params[k] -= (self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)
                          ).astype(params[k].dtype)
        return float(self.t)


# ---------------------------------------------------------------------------
# Checkpoint format: text header (names + shapes + config hash), then the
# flat little-endian float32 parameter data in header order.
# ---------------------------------------------------------------------------

MAGIC = "currl-checkpoint v1"


def config_hash(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def save_arrays(path, arrays: dict[str, np.ndarray], cfg_hash: str = "0",
                meta: dict | None = None) -> None:
    names = list(arrays)
    with open(path, "wb") as fh:
        header = [MAGIC, f"config_hash {cfg_hash}"]
        for k, v in (meta or {}).items():
            header.append(f"meta {k} {v}")
        for name in names:
            shape = " ".join(str(s) for s in arrays[name].shape)
            header.append(f"array {name} {shape}".rstrip())
        header.append("end")
        fh.write(("\n".join(header) + "\n").encode())
        for name in names:
            fh.write(np.ascontiguousarray(arrays[name], dtype="<f4").tobytes())


def load_arrays(path):
    """Returns (arrays, config_hash, meta) from a checkpoint file."""
    with open(path, "rb") as fh:
        data = fh.read()
    end_marker = b"\nend\n"
    split = data.index(end_marker)
    header = data[:split].decode().splitlines()
    payload = data[split + len(end_marker):]
    if header[0] != MAGIC:
        raise ValueError(f"not a checkpoint file (header {header[0]!r})")
    cfg_hash = "0"
    meta = {}
    specs = []
    for line in header[1:]:
        kind, _, rest = line.partition(" ")
        if kind == "config_hash":
            cfg_hash = rest
        elif kind == "meta":
            key, _, value = rest.partition(" ")
            meta[key] = value
        elif kind == "array":
            tokens = rest.split()
            specs.append((tokens[0], tuple(int(x) for x in tokens[1:])))
    arrays = {}
    at = 0
    for name, shape in specs:
        n = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(payload, dtype="<f4", count=n, offset=at * 4)
        arrays[name] = arr.reshape(shape).copy()
        at += n
    return arrays, cfg_hash, meta


def save_policy(path, net: PolicyNet, cfg_hash: str = "0",
                optimizer: Adam | None = None, meta: dict | None = None) -> None:
    arrays = dict(net.params)
    meta = dict(meta or {})
    meta["entity_types"] = ",".join(net.entity_types)
    meta["hidden"] = str(net.hidden)
    meta["n_actions"] = str(net.n_actions)
    if optimizer is not None:
        for k in net.params:
            arrays[f"adam.m.{k}"] = optimizer.m[k]
            arrays[f"adam.v.{k}"] = optimizer.v[k]
        meta["adam.t"] = str(optimizer.t)
    save_arrays(path, arrays, cfg_hash, meta)


def load_policy(path, lr: float = 5e-4, adam_eps: float = 1e-5):
    """Rebuild (net, optimizer, cfg_hash, meta); optimizer None if not saved."""
    arrays, cfg_hash, meta = load_arrays(path)
    net = PolicyNet(entity_types=tuple(meta["entity_types"].split(",")),
                    hidden=int(meta["hidden"]), n_actions=int(meta["n_actions"]))
    for k in net.params:
        net.params[k] = arrays[k].astype(net.dtype)
    optimizer = None
    if "adam.t" in meta:
        optimizer = Adam(net.params, lr=lr, eps=adam_eps)
        optimizer.t = int(meta["adam.t"])
        for k in net.params:
            optimizer.m[k] = arrays[f"adam.m.{k}"].astype(net.dtype)
            optimizer.v[k] = arrays[f"adam.v.{k}"].astype(net.dtype)
    return net, optimizer, cfg_hash, meta
