"""Layered transformer encoder with one probe classifier per layer.

Pre-norm blocks; a learned ``[CLS]`` vector is prepended to every sequence and
its state after layer ``i`` feeds probe ``i``. Probe ``L`` (the top layer) is
the main classifier.
"""
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autograd as ag
from .autograd import no_grad
from .nn import ParameterSet, WeightSnapshot, restore_weights, snapshot_weights

CHECKPOINT_FORMAT = "ambikd-checkpoint/1"


@dataclass
class EncoderConfig:
    vocab_size: int = 500
    max_seq_len: int = 24
    num_layers: int = 6
    hidden_dim: int = 64
    num_heads: int = 4
    ffn_dim: int = 128
    dropout: float = 0.1
    num_classes: int = 3
    seed: int = 0
    dtype: str = "float64"
    init_std: float = 0.02

    def validate(self):
        if self.num_layers < 2:
            raise ValueError("num_layers must be >= 2")
        for name in ("vocab_size", "max_seq_len", "hidden_dim", "num_heads", "ffn_dim", "num_classes"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.hidden_dim % self.num_heads:
            raise ValueError(f"hidden_dim {self.hidden_dim} not divisible by num_heads {self.num_heads}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if self.dtype not in ("float64", "float32"):
            raise ValueError("dtype must be float64 or float32")
        return self

    @property
    def head_dim(self):
        return self.hidden_dim // self.num_heads


def main_group():
    return "main-classifier"


def probe_group(i, num_layers):
    return main_group() if i == num_layers else f"probe-{i}"


@dataclass
class LayerOutputs:
    """Per-layer pooled states and distributions for a batch.

    ``probs[i]`` has shape (batch, C) for layer ``i + 1``.
    """
    pooled: list
    logits: list
    probs: list = field(default_factory=list)

    @property
    def main(self):
        return self.probs[-1]


class LayeredModel:
    def __init__(self, config):
        self.config = config.validate()
        self.dtype = np.dtype(config.dtype)
        self.params = ParameterSet()
        init_rng = np.random.default_rng([config.seed, 0])
        self._init_params(init_rng)
        # dropout masks; restored together with the weights on reset
        self.rng = np.random.default_rng([config.seed, 1])
        self.init_snapshot = snapshot_weights(self.params, self.rng)

    def _init_params(self, rng):
        c, dt = self.config, self.dtype
        D, F, L = c.hidden_dim, c.ffn_dim, c.num_layers

        def normal(*shape):
            return (rng.standard_normal(shape) * c.init_std).astype(dt)

        def zeros(*shape):
            return np.zeros(shape, dtype=dt)

        P = self.params
        P.add("embed.tok", normal(c.vocab_size, D), "backbone-embed")
        P.add("embed.pos", normal(c.max_seq_len + 1, D), "backbone-embed")
        P.add("embed.cls", normal(1, 1, D), "backbone-embed")
        for i in range(1, L + 1):
            g = f"backbone-layer-{i}"
            pre = f"layer{i}."
            P.add(pre + "ln1.g", np.ones(D, dtype=dt), g)
            P.add(pre + "ln1.b", zeros(D), g)
            for w in ("q", "k", "v", "o"):
                P.add(pre + f"attn.w{w}", normal(D, D), g)
                # no key bias: softmax over keys is invariant to it, so its gradient is identically 0
                if w != "k":
                    P.add(pre + f"attn.b{w}", zeros(D), g)
            P.add(pre + "ln2.g", np.ones(D, dtype=dt), g)
            P.add(pre + "ln2.b", zeros(D), g)
            P.add(pre + "ffn.w1", normal(D, F), g)
            P.add(pre + "ffn.b1", zeros(F), g)
            P.add(pre + "ffn.w2", normal(F, D), g)
            P.add(pre + "ffn.b2", zeros(D), g)
        for i in range(1, L + 1):
            g = probe_group(i, L)
            P.add(f"probe{i}.w", normal(D, c.num_classes), g)
            P.add(f"probe{i}.b", zeros(c.num_classes), g)

    # -- groups --------------------------------------------------------------
    def backbone_groups(self):
        return ["backbone-embed"] + [f"backbone-layer-{i}" for i in range(1, self.config.num_layers + 1)]

    def main_network_groups(self):
        return self.backbone_groups() + [main_group()]

    def probe_group(self, i):
        return probe_group(i, self.config.num_layers)

    # -- forward -------------------------------------------------------------
    def _check_tokens(self, tokens):
        tokens = np.asarray(tokens)
        if tokens.ndim != 2:
            raise ValueError("tokens must be a 2-D (batch, length) integer array")
        if tokens.shape[1] > self.config.max_seq_len:
            raise ValueError(f"sequence length {tokens.shape[1]} exceeds max_seq_len {self.config.max_seq_len}")
        if tokens.size and (tokens.min() < 0 or tokens.max() >= self.config.vocab_size):
            raise ValueError(f"token id out of range [0, {self.config.vocab_size})")
        return tokens

    def _drop(self, x, train):
        return ag.dropout(x, self.config.dropout, self.rng) if train else x

    def _block(self, i, h, train):
        c, P = self.config, self.params
        pre = f"layer{i}."
        B, T, D = h.shape
        H, dh = c.num_heads, c.head_dim

        a = ag.layer_norm(h, P[pre + "ln1.g"], P[pre + "ln1.b"])

        def heads(name):
            x = a @ P[pre + f"attn.w{name}"]
            if name != "k":
                x = x + P[pre + f"attn.b{name}"]
            return x.reshape(B, T, H, dh).transpose(0, 2, 1, 3)

        q, k, v = heads("q"), heads("k"), heads("v")
        scores = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / np.sqrt(dh))
        att = self._drop(ag.softmax(scores), train)
        ctx = (att @ v).transpose(0, 2, 1, 3).reshape(B, T, D)
        h = h + self._drop(ctx @ P[pre + "attn.wo"] + P[pre + "attn.bo"], train)

        f = ag.layer_norm(h, P[pre + "ln2.g"], P[pre + "ln2.b"])
        f = ag.gelu(f @ P[pre + "ffn.w1"] + P[pre + "ffn.b1"]) @ P[pre + "ffn.w2"] + P[pre + "ffn.b2"]
        return h + self._drop(f, train)

    def forward(self, tokens, train=False, layers=None):
        """Return ``{layer_index: logits Tensor}`` for the requested probe layers.

        ``layers`` defaults to all layers. Layers above the highest requested
        one are not computed.
        """
        tokens = self._check_tokens(tokens)
        c, P = self.config, self.params
        L = c.num_layers
        layers = list(range(1, L + 1)) if layers is None else sorted(set(layers))
        if not layers or layers[0] < 1 or layers[-1] > L:
            raise ValueError(f"layers must be within 1..{L}")
        B, T = tokens.shape

        tok = ag.embedding(P["embed.tok"], tokens)
        cls = ag.broadcast_to(P["embed.cls"], (B, 1, c.hidden_dim))
        h = ag.concat([cls, tok], axis=1) + P["embed.pos"][: T + 1]
        h = self._drop(h, train)

        out = {}
        wanted = set(layers)
        for i in range(1, layers[-1] + 1):
            h = self._block(i, h, train)
            if i in wanted:
                pooled = h[:, 0, :]
                out[i] = pooled @ P[f"probe{i}.w"] + P[f"probe{i}.b"]
        return out

    def forward_all_layers(self, tokens, dropout_active=False):
        """Inference pass returning pooled states, logits and distributions for every layer."""
        tokens = self._check_tokens(tokens)
        c, P = self.config, self.params
        pooled, logits = [], []
        with no_grad():
            B, T = tokens.shape
            tok = ag.embedding(P["embed.tok"], tokens)
            cls = ag.broadcast_to(P["embed.cls"], (B, 1, c.hidden_dim))
            h = ag.concat([cls, tok], axis=1) + P["embed.pos"][: T + 1]
            h = self._drop(h, dropout_active)
            for i in range(1, c.num_layers + 1):
                h = self._block(i, h, dropout_active)
                z = h.data[:, 0, :]
                pooled.append(z)
                logits.append(z @ P[f"probe{i}.w"].data + P[f"probe{i}.b"].data)
        probs = [ag.kernels.softmax_rows(np.ascontiguousarray(z)).astype(np.float64) for z in logits]
        return LayerOutputs(pooled=pooled, logits=logits, probs=probs)

    def predict_logits(self, tokens, dropout_active=False, batch_size=256):
        """Main-classifier logits for a (possibly large) token array."""
        tokens = self._check_tokens(tokens)
        L = self.config.num_layers
        chunks = []
        with no_grad():
            for s in range(0, len(tokens), batch_size):
                chunks.append(self.forward(tokens[s:s + batch_size], train=dropout_active, layers=[L])[L].data)
        if not chunks:
            return np.zeros((0, self.config.num_classes))
        return np.concatenate(chunks).astype(np.float64)

    def all_layer_probs(self, tokens, batch_size=256):
        """(L, N, C) array of per-layer distributions, dropout off."""
        chunks = [self.forward_all_layers(tokens[s:s + batch_size]).probs
                  for s in range(0, len(tokens), batch_size)]
        return np.stack([np.concatenate([ch[i] for ch in chunks]) for i in range(self.config.num_layers)])

    # -- weights -------------------------------------------------------------
    def snapshot(self):
        return snapshot_weights(self.params, self.rng)

    def restore(self, snap):
        restore_weights(self.params, snap, self.rng)

    def reset_to_init(self):
        self.restore(self.init_snapshot)


def build_model(config):
    return LayeredModel(config)


def save_checkpoint(model, path, extra=None):
    """Write a single ``.npz`` checkpoint.

    Keys: ``__format__`` and ``__config__`` (JSON strings), ``__meta__`` (JSON of
    ``extra``), ``param/<name>`` for current weights, ``init/<name>`` for the
    initialization snapshot and ``init_rng`` (JSON of the dropout RNG state).
    """
    arrays = {
        "__format__": np.array(CHECKPOINT_FORMAT),
        "__config__": np.array(json.dumps(asdict(model.config), sort_keys=True)),
        "__meta__": np.array(json.dumps(extra or {}, sort_keys=True, default=str)),
        "init_rng": np.array(json.dumps(model.init_snapshot.rng_state)),
    }
    for n, t in model.params.items():
        arrays[f"param/{n}"] = t.data
        arrays[f"init/{n}"] = model.init_snapshot.tensors[n]
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path):
    with np.load(path, allow_pickle=False) as z:
        fmt = str(z["__format__"])
        if fmt != CHECKPOINT_FORMAT:
            raise ValueError(f"{path}: unsupported checkpoint format {fmt!r}")
        config = EncoderConfig(**json.loads(str(z["__config__"])))
        model = LayeredModel(config)
        params = {k[len("param/"):]: z[k] for k in z.files if k.startswith("param/")}
        init = {k[len("init/"):]: z[k] for k in z.files if k.startswith("init/")}
        rng_state = json.loads(str(z["init_rng"]))
        meta = json.loads(str(z["__meta__"]))
    model.init_snapshot = WeightSnapshot(init, rng_state)
    model.params.load_state_dict(params)
    return model, meta
