"""Actor and critic networks, the optimizer, target tracking, checkpoints.

Both network families share one skeleton: the own-pair features are
embedded, a query derived from them attends over the entity sets
(single-head dot-product, learned empty-set constant), and a two-layer
ReLU trunk feeds a 2-way head -- softmax action probabilities for the
actor, action values for the critic.

Critics come in twin pairs whose elementwise minimum curbs value
overestimation. The two members have independent parameters but are
evaluated jointly: every parameter carries a leading twin axis, so one
batched pass (and one backward) covers the pair. The critic additionally
attends over an action-annotated summary of the other agents.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .features import ACT_DIM, OWN_DIM, REQ_DIM, VEH_DIM, ActionSetBatch, ObsBatch, Observation

D_MODEL = 32
HIDDEN = 64

CHECKPOINT_SCHEMA = "amodlab-checkpoint/v1"


class NonFiniteGradient(RuntimeError):
    """A gradient or optimizer update produced non-finite values."""


class Linear:
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator):
        bound = 1.0 / np.sqrt(n_in)
        self.weight = Tensor(rng.uniform(-bound, bound, size=(n_in, n_out)), requires_grad=True)
        self.bias = Tensor(rng.uniform(-bound, bound, size=(n_out,)), requires_grad=True)

    def __call__(self, x) -> Tensor:
        return ad.affine(x, self.weight, self.bias)

    def relu(self, x) -> Tensor:
        return ad.dense_relu(x, self.weight, self.bias)

    def params(self) -> list[Tensor]:
        return [self.weight, self.bias]


class SetPool:
    """Attention pooling over a masked entity set."""

    def __init__(self, d_in: int, rng: np.random.Generator):
        self.embed = Linear(d_in, D_MODEL, rng)
        self.key = Linear(D_MODEL, D_MODEL, rng)
        self.value = Linear(D_MODEL, D_MODEL, rng)
        bound = 1.0 / np.sqrt(D_MODEL)
        self.empty = Tensor(rng.uniform(-bound, bound, size=(D_MODEL,)), requires_grad=True)

    def __call__(self, query: Tensor, xs: np.ndarray, mask: np.ndarray) -> Tensor:
        return ad.attention_pool(
            np.asarray(xs, dtype=np.float64),
            mask,
            query,
            self.embed.weight,
            self.embed.bias,
            self.key.weight,
            self.key.bias,
            self.value.weight,
            self.value.bias,
            self.empty,
        )

    def params(self) -> list[Tensor]:
        return self.embed.params() + self.key.params() + self.value.params() + [self.empty]


def _flatten_params(params: list[Tensor]) -> np.ndarray:
    """Re-home parameter arrays as views into one contiguous buffer.

    In-place updates (optimizer steps, soft updates) then operate on the
    flat buffer in a single vectorized pass.
    """
    buf = np.empty(sum(p.values.size for p in params))
    offset = 0
    for p in params:
        n = p.values.size
        buf[offset : offset + n] = p.values.ravel()
        p.values = buf[offset : offset + n].reshape(p.values.shape)
        offset += n
    return buf


class ActorNet:
    """Policy network: per-agent accept/reject probabilities."""

    def __init__(self, seed: int):
        rng = np.random.default_rng(seed)
        self.own = Linear(OWN_DIM, D_MODEL, rng)
        self.query = Linear(D_MODEL, D_MODEL, rng)
        self.req_pool = SetPool(REQ_DIM, rng)
        self.veh_pool = SetPool(VEH_DIM, rng)
        self.fc1 = Linear(D_MODEL * 3, HIDDEN, rng)
        self.fc2 = Linear(HIDDEN, HIDDEN, rng)
        self.head = Linear(HIDDEN, 2, rng)
        self.flat_values = _flatten_params(self.params())

    def logits(self, batch: ObsBatch) -> Tensor:
        h = self.own.relu(batch.own)
        q = self.query(h)
        z = ad.concat(
            [
                h,
                self.req_pool(q, batch.requests, batch.request_mask),
                self.veh_pool(q, batch.vehicles, batch.vehicle_mask),
            ],
            axis=-1,
        )
        return self.head(self.fc2.relu(self.fc1.relu(z)))

    def forward(self, batch: ObsBatch) -> tuple[Tensor, Tensor]:
        """(probabilities, log-probabilities), each (N, 2)."""
        z = self.logits(batch)
        return ad.softmax(z, axis=-1), ad.log_softmax(z, axis=-1)

    def probs(self, batch: ObsBatch) -> np.ndarray:
        with ad.no_grad():
            return self.forward(batch)[0].values

    def params(self) -> list[Tensor]:
        return (
            self.own.params()
            + self.query.params()
            + self.req_pool.params()
            + self.veh_pool.params()
            + self.fc1.params()
            + self.fc2.params()
            + self.head.params()
        )


class TwinLinear:
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator):
        bound = 1.0 / np.sqrt(n_in)
        self.weight = Tensor(
            rng.uniform(-bound, bound, size=(2, n_in, n_out)), requires_grad=True
        )
        self.bias = Tensor(rng.uniform(-bound, bound, size=(2, n_out)), requires_grad=True)

    def __call__(self, x, x_twin: bool = True) -> Tensor:
        return ad.twin_affine(x, self.weight, self.bias, x_twin)

    def relu(self, x, x_twin: bool = True) -> Tensor:
        return ad.twin_dense_relu(x, self.weight, self.bias, x_twin)

    def params(self) -> list[Tensor]:
        return [self.weight, self.bias]


class TwinSetPool:
    """Attention pooling over a shared entity set, one pass per twin pair."""

    def __init__(self, d_in: int, rng: np.random.Generator):
        self.embed = TwinLinear(d_in, D_MODEL, rng)
        self.key = TwinLinear(D_MODEL, D_MODEL, rng)
        self.value = TwinLinear(D_MODEL, D_MODEL, rng)
        bound = 1.0 / np.sqrt(D_MODEL)
        self.empty = Tensor(
            rng.uniform(-bound, bound, size=(2, D_MODEL)), requires_grad=True
        )

    def __call__(self, query: Tensor, xs: np.ndarray, mask: np.ndarray) -> Tensor:
        return ad.twin_attention_pool(
            np.asarray(xs, dtype=np.float64),
            mask,
            query,
            self.embed.weight,
            self.embed.bias,
            self.key.weight,
            self.key.bias,
            self.value.weight,
            self.value.bias,
            self.empty,
        )

    def params(self) -> list[Tensor]:
        return self.embed.params() + self.key.params() + self.value.params() + [self.empty]


class TwinCriticNet:
    """A twin pair of Q networks with independent parameters.

    forward() returns the action values of both members, shape (2, N, 2);
    callers take the minimum over the leading axis.
    """

    def __init__(self, seed: int):
        rng = np.random.default_rng(seed)
        self.own = TwinLinear(OWN_DIM, D_MODEL, rng)
        self.query = TwinLinear(D_MODEL, D_MODEL, rng)
        self.req_pool = TwinSetPool(REQ_DIM, rng)
        self.veh_pool = TwinSetPool(VEH_DIM, rng)
        self.act_pool = TwinSetPool(ACT_DIM, rng)
        self.fc1 = TwinLinear(D_MODEL * 4, HIDDEN, rng)
        self.fc2 = TwinLinear(HIDDEN, HIDDEN, rng)
        self.head = TwinLinear(HIDDEN, 2, rng)
        self.flat_values = _flatten_params(self.params())

    def forward(self, batch: ObsBatch, acts: ActionSetBatch) -> Tensor:
        h = self.own.relu(batch.own, x_twin=False)  # (2, N, D)
        q = self.query(h)
        z = ad.concat(
            [
                h,
                self.req_pool(q, batch.requests, batch.request_mask),
                self.veh_pool(q, batch.vehicles, batch.vehicle_mask),
                self.act_pool(q, acts.acts, acts.act_mask),
            ],
            axis=-1,
        )
        return self.head(self.fc2.relu(self.fc1.relu(z)))

    def q_values(self, batch: ObsBatch, acts: ActionSetBatch) -> np.ndarray:
        with ad.no_grad():
            return self.forward(batch, acts).values

    def min_q(self, batch: ObsBatch, acts: ActionSetBatch) -> np.ndarray:
        return self.q_values(batch, acts).min(axis=0)

    def params(self) -> list[Tensor]:
        return (
            self.own.params()
            + self.query.params()
            + self.req_pool.params()
            + self.veh_pool.params()
            + self.act_pool.params()
            + self.fc1.params()
            + self.fc2.params()
            + self.head.params()
        )


def actor_forward(net: ActorNet, obs: Observation) -> tuple[float, float]:
    """Single-agent policy evaluation: (p_accept, p_reject)."""
    from .features import stack_observations

    p = net.probs(stack_observations([obs]))[0]
    return float(p[0]), float(p[1])


def critic_forward(
    net: TwinCriticNet, obs: Observation, others_actions: np.ndarray, member: int = 0
) -> np.ndarray:
    """Single-agent Q evaluation by one twin member, given the other
    agents' action-annotated set (A, ACT_DIM)."""
    from .features import stack_observations

    others_actions = np.asarray(others_actions, dtype=float).reshape(-1, ACT_DIM)
    n_others = others_actions.shape[0]
    acts = ActionSetBatch(
        acts=others_actions[None] if n_others else np.zeros((1, 1, ACT_DIM)),
        act_mask=np.ones((1, n_others), dtype=bool) if n_others else np.zeros((1, 1), dtype=bool),
    )
    return net.q_values(stack_observations([obs]), acts)[member, 0]


def clone_network(net):
    """Architecture-and-parameter copy, used for target networks."""
    twin = type(net)(seed=0)
    twin.flat_values[...] = net.flat_values
    return twin


def soft_update(target, source, tau: float) -> None:
    """target <- (1 - tau) * target + tau * source, elementwise."""
    if not 0.0 < tau <= 1.0:
        raise ValueError("tau must be in (0, 1]")
    tbuf = getattr(target, "flat_values", None)
    sbuf = getattr(source, "flat_values", None)
    if tbuf is not None and sbuf is not None and tbuf.shape == sbuf.shape:
        tbuf *= 1.0 - tau
        tbuf += tau * sbuf
        return
    tps, sps = target.params(), source.params()
    if len(tps) != len(sps):
        raise ValueError("parameter lists differ in length")
    for tp, sp in zip(tps, sps):
        if tp.values.shape != sp.values.shape:
            raise ValueError("parameter shape mismatch")
        tp.values *= 1.0 - tau
        tp.values += tau * sp.values


class Adam:
    """Adaptive-moment optimizer with moments kept in flat buffers."""

    def __init__(
        self,
        params: list[Tensor],
        lr: float,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        flat_values: np.ndarray | None = None,
    ):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self._spans: list[tuple[int, int]] = []
        offset = 0
        for p in self.params:
            self._spans.append((offset, offset + p.values.size))
            offset += p.values.size
        total = offset
        if flat_values is not None and flat_values.size != total:
            raise ValueError("flat buffer does not match the parameter list")
        self._flat_values = flat_values
        self._g = np.zeros(total)
        self.m = np.zeros(total)
        self.v = np.zeros(total)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        self.t += 1
        g = self._g
        for p, (a, b) in zip(self.params, self._spans):
            if p.grad is None:
                g[a:b] = 0.0
            else:
                g[a:b] = p.grad.reshape(-1)
        if not np.isfinite(g).all():
            raise NonFiniteGradient("non-finite gradient")
        self.m *= self.beta1
        self.m += (1.0 - self.beta1) * g
        self.v *= self.beta2
        self.v += (1.0 - self.beta2) * (g * g)
        update = self.m / (1.0 - self.beta1**self.t)
        denom = np.sqrt(self.v / (1.0 - self.beta2**self.t))
        denom += self.eps
        update /= denom
        update *= self.lr
        if self._flat_values is not None:
            self._flat_values -= update
        else:
            for p, (a, b) in zip(self.params, self._spans):
                p.values -= update[a:b].reshape(p.values.shape)


def backward_and_step(loss: Tensor, optimizer: Adam) -> float:
    """Backpropagate a scalar loss, apply the update, clear gradients."""
    value = loss.item()
    loss.backward()
    optimizer.step()
    optimizer.zero_grad()
    return value


# -- checkpoints ----------------------------------------------------------------


def save_checkpoint(
    path,
    nets: dict,
    optimizers: dict[str, Adam] | None = None,
    rng_states: dict | None = None,
    meta: dict | None = None,
) -> None:
    """Dump all parameter arrays, optimizer state, and RNG state to one file.

    The round trip is bit-exact: arrays are stored as raw float64 and RNG
    bit-generator states as JSON.
    """
    arrays: dict[str, np.ndarray] = {}
    for name, net in nets.items():
        for i, p in enumerate(net.params()):
            arrays[f"net::{name}::{i}"] = p.values
    if optimizers:
        for name, opt in optimizers.items():
            arrays[f"optt::{name}"] = np.array(opt.t, dtype=np.int64)
            arrays[f"optm::{name}"] = opt.m
            arrays[f"optv::{name}"] = opt.v
    header = {
        "schema": CHECKPOINT_SCHEMA,
        "meta": meta or {},
        "rng_states": rng_states or {},
    }
    arrays["header"] = np.frombuffer(json.dumps(header).encode(), dtype=np.uint8)
    np.savez(Path(path), **arrays)


def load_checkpoint(path, nets: dict, optimizers: dict[str, Adam] | None = None) -> dict:
    """Restore parameters and optimizer state in place; return the header."""
    with np.load(Path(path)) as data:
        header = json.loads(bytes(data["header"]).decode())
        if header.get("schema") != CHECKPOINT_SCHEMA:
            raise ValueError(f"{path}: unsupported checkpoint schema")
        for name, net in nets.items():
            for i, p in enumerate(net.params()):
                stored = data[f"net::{name}::{i}"]
                if stored.shape != p.values.shape:
                    raise ValueError(f"{path}: shape mismatch for {name} parameter {i}")
                p.values[...] = stored
        if optimizers:
            for name, opt in optimizers.items():
                opt.t = int(data[f"optt::{name}"])
                opt.m[...] = data[f"optm::{name}"]
                opt.v[...] = data[f"optv::{name}"]
    return header
