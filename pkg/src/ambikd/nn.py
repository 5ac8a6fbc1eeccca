"""Parameters, optimizer, weight snapshots and gradient checking."""
import copy
import hashlib
from dataclasses import dataclass, field

import numpy as np

from .autograd import LOG_FLOOR, NonFiniteError, Tensor, no_grad


def softmax(logits, axis=-1):
    """Numerically stable softmax on a plain array."""
    x = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise NonFiniteError("softmax input contains NaN or Inf")
    z = np.exp(x - x.max(axis=axis, keepdims=True))
    return z / z.sum(axis=axis, keepdims=True)


def cross_entropy(pred, target):
    """``-sum(target * ln(pred))`` with ``pred`` floored at 1e-12. Works row-wise on 2-D input."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"length mismatch: pred {pred.shape} vs target {target.shape}")
    return -(target * np.log(np.maximum(pred, LOG_FLOOR))).sum(axis=-1)


class ParameterSet:
    """Named parameters, each tagged with exactly one group.

    Groups used by the encoder: ``backbone-embed``, ``backbone-layer-<i>``,
    ``probe-<i>`` and ``main-classifier``.
    """

    def __init__(self):
        self._params = {}
        self._groups = {}

    def add(self, name, data, group):
        if name in self._params:
            raise KeyError(f"duplicate parameter {name!r}")
        t = Tensor(np.array(data), requires_grad=True, name=name)
        self._params[name] = t
        self._groups[name] = group
        return t

    def __getitem__(self, name):
        return self._params[name]

    def __iter__(self):
        return iter(self._params)

    def __len__(self):
        return len(self._params)

    def items(self):
        return self._params.items()

    def group_of(self, name):
        return self._groups[name]

    def groups(self):
        return sorted(set(self._groups.values()))

    def members(self, group):
        return [n for n, g in self._groups.items() if g == group]

    def is_trainable(self, name):
        return self._params[name].requires_grad

    def trainable(self):
        return [n for n, t in self._params.items() if t.requires_grad]

    def set_trainable(self, groups, flag):
        groups = {groups} if isinstance(groups, str) else set(groups)
        unknown = groups - set(self._groups.values())
        if unknown:
            raise KeyError(f"unknown parameter groups: {sorted(unknown)}")
        for n, g in self._groups.items():
            if g in groups:
                self._params[n].requires_grad = flag

    def freeze(self, groups):
        self.set_trainable(groups, False)

    def unfreeze(self, groups):
        self.set_trainable(groups, True)

    def only_trainable(self, groups):
        """Make exactly ``groups`` trainable and freeze the rest."""
        groups = {groups} if isinstance(groups, str) else set(groups)
        self.freeze(self.groups())
        self.unfreeze(groups)

    def zero_grad(self):
        for t in self._params.values():
            t.grad = None

    def num_scalars(self):
        return sum(t.data.size for t in self._params.values())

    def checksum(self, group=None):
        """sha256 over raw parameter bytes (all parameters, or one group)."""
        h = hashlib.sha256()
        for n, t in self._params.items():
            if group is None or self._groups[n] == group:
                h.update(n.encode())
                h.update(np.ascontiguousarray(t.data).tobytes())
        return h.hexdigest()

    def group_checksums(self):
        return {g: self.checksum(g) for g in self.groups()}

    def state_dict(self):
        return {n: t.data.copy() for n, t in self._params.items()}

    def load_state_dict(self, state):
        if set(state) != set(self._params):
            missing = sorted(set(self._params) - set(state))
            extra = sorted(set(state) - set(self._params))
            raise ValueError(f"state mismatch: missing={missing} unexpected={extra}")
        for n, arr in state.items():
            t = self._params[n]
            if arr.shape != t.data.shape:
                raise ValueError(f"shape mismatch for {n}: {arr.shape} vs {t.data.shape}")
            np.copyto(t.data, arr)


@dataclass
class WeightSnapshot:
    tensors: dict
    rng_state: dict = None

    def copy(self):
        return WeightSnapshot({k: v.copy() for k, v in self.tensors.items()},
                              copy.deepcopy(self.rng_state))


def snapshot_weights(params, rng=None):
    return WeightSnapshot(params.state_dict(),
                          copy.deepcopy(rng.bit_generator.state) if rng is not None else None)


def restore_weights(params, snap, rng=None):
    params.load_state_dict(snap.tensors)
    if rng is not None and snap.rng_state is not None:
        rng.bit_generator.state = copy.deepcopy(snap.rng_state)


class LinearDecay:
    """Learning rate decays linearly from ``lr`` to 0 over ``total_steps``."""

    def __init__(self, lr, total_steps):
        self.lr0 = lr
        self.total_steps = max(int(total_steps), 1)
        self.t = 0

    def current(self):
        return self.lr0 * max(0.0, 1.0 - self.t / self.total_steps)

    def advance(self):
        self.t += 1


class ConstantLR:
    def __init__(self, lr):
        self.lr0 = lr
        self.t = 0

    def current(self):
        return self.lr0

    def advance(self):
        self.t += 1


@dataclass
class AdamW:
    """AdamW with decoupled weight decay.

    Weight decay applies to parameters with ``ndim >= 2`` (biases, norm gains
    and other 1-D vectors are not decayed). Frozen parameters are skipped
    entirely, including their moment estimates and bias-correction counters.
    """
    params: ParameterSet
    schedule: object
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: dict = field(default_factory=dict)

    def hyperparameters(self):
        return {"lr": self.schedule.lr0, "weight_decay": self.weight_decay,
                "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps}

    def step(self, lr=None):
        lr = self.schedule.current() if lr is None else lr
        for name, p in self.params.items():
            if not p.requires_grad:
                continue
            g = p.grad
            if g is None:
                raise ValueError(f"missing gradient for trainable parameter {name!r}")
            if g.shape != p.data.shape:
                raise ValueError(f"gradient shape {g.shape} != parameter shape {p.data.shape} for {name!r}")
            if not np.all(np.isfinite(g)):
                raise NonFiniteError(f"non-finite gradient for {name!r}")
            if name not in self.m:
                self.m[name] = np.zeros_like(p.data)
                self.v[name] = np.zeros_like(p.data)
                self.t[name] = 0
            m, v = self.m[name], self.v[name]
            self.t[name] += 1
            k = self.t[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            if self.weight_decay and p.data.ndim >= 2:
                p.data *= 1.0 - lr * self.weight_decay
            mhat = m / (1.0 - self.beta1 ** k)
            vhat = v / (1.0 - self.beta2 ** k)
            p.data -= lr * mhat / (np.sqrt(vhat) + self.eps)
        self.step_count += 1


def grad_check(params, loss_fn, epsilon=1e-5, names=None):
    """Max relative error between autodiff and central-difference gradients.

    ``loss_fn()`` must rebuild the (deterministic) loss Tensor from the current
    parameter values. Frozen parameters are left out of the comparison.
    Returns ``max |g_ad - g_fd| / max(1e-8, |g_ad| + |g_fd|)``.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    names = [n for n in (names or params.trainable()) if params.is_trainable(n)]
    params.zero_grad()
    loss_fn().backward()
    analytic = {n: (params[n].grad.copy() if params[n].grad is not None
                    else np.zeros_like(params[n].data)) for n in names}
    params.zero_grad()

    worst = 0.0
    with no_grad():
        for n in names:
            data = params[n].data
            flat = data.reshape(-1)
            g_fd = np.empty(flat.size)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + epsilon
                up = float(loss_fn().data)
                flat[i] = orig - epsilon
                down = float(loss_fn().data)
                flat[i] = orig
                g_fd[i] = (up - down) / (2 * epsilon)
            g_ad = analytic[n].reshape(-1)
            rel = np.abs(g_ad - g_fd) / np.maximum(1e-8, np.abs(g_ad) + np.abs(g_fd))
            worst = max(worst, float(rel.max(initial=0.0)))
    return worst
