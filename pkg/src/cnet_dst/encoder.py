"""GRU-based confusion network encoder.

Each timestep of a cnet holds ``k`` alternative hypotheses.  Every hypothesis
is run through the same GRU cell against the *same* previous state, and the
``k`` resulting states are pooled into the state for that timestep:

* average pooling  -- ``mean_i h_i``
* weighted pooling -- ``sum_i score_i * h_i`` with the raw posterior scores

A cnet with one certain hypothesis per timestep reduces to an ordinary GRU.

Two routes are provided.  :func:`gru_step`, :func:`encode_timestep` and
:func:`encode_cnet` are built from primitive tape operations and mirror the
equations one to one.  :func:`encode_batch` is a single fused tape node with a
hand-written backward pass through time that advances a whole mini-batch of
sequences in lockstep; the tracker uses it for speed and the tests hold it
against the primitive route.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Callable, Mapping, Optional, Sequence, Union

import numpy as np

from . import numerics as nx
from .cnet import ConfusionNetwork
from .errors import ConfigError, DegenerateWeightsError, StructureError
from .numerics import Tensor

# Test hook: scales the recurrent candidate-weight gradient of the fused
# encoder.  Anything other than 1.0 deliberately breaks backprop.
_BACKWARD_FAULT = 1.0


class PoolingMode(str, enum.Enum):
    AVERAGE = "average"
    WEIGHTED = "weighted"

    @classmethod
    def parse(cls, value) -> "PoolingMode":
        try:
            return cls(value)
        except ValueError:
            raise ConfigError(f"unknown pooling mode {value!r}; use 'average' or 'weighted'") from None


GRU_NAMES = ("W_z", "U_z", "b_z", "W_h", "U_h", "b_h", "W_r", "U_r", "b_r")


@dataclass
class GruParams:
    W_z: Tensor
    U_z: Tensor
    b_z: Tensor
    W_h: Tensor
    U_h: Tensor
    b_h: Tensor
    W_r: Tensor
    U_r: Tensor
    b_r: Tensor

    def __post_init__(self):
        d_h, d_in = self.W_z.shape
        for gate in "zhr":
            W, U, b = (getattr(self, f"{p}_{gate}") for p in "WUb")
            if W.shape != (d_h, d_in) or U.shape != (d_h, d_h) or b.shape != (d_h,):
                raise StructureError(f"inconsistent GRU parameter shapes for gate {gate}")

    @property
    def d_in(self) -> int:
        return self.W_z.shape[1]

    @property
    def d_h(self) -> int:
        return self.W_z.shape[0]

    @classmethod
    def init(cls, d_in: int, d_h: int, rng: np.random.Generator, prefix: str = "gru.") -> "GruParams":
        """Glorot-uniform matrices, zero biases."""
        kw = {}
        for gate in "zhr":
            kw[f"W_{gate}"] = nx.parameter(nx.glorot_uniform(rng, (d_h, d_in)), f"{prefix}W_{gate}")
            kw[f"U_{gate}"] = nx.parameter(nx.glorot_uniform(rng, (d_h, d_h)), f"{prefix}U_{gate}")
            kw[f"b_{gate}"] = nx.parameter(np.zeros(d_h), f"{prefix}b_{gate}")
        return cls(**kw)

    def tensors(self) -> dict[str, Tensor]:
        return {name: getattr(self, name) for name in GRU_NAMES}


@dataclass
class TurnCombinerParams:
    W_s: Tensor
    W_u: Tensor
    b: Tensor

    def __post_init__(self):
        if self.W_s.shape != self.W_u.shape or self.b.shape != (self.W_s.shape[0],):
            raise StructureError("turn combiner shapes disagree")

    @classmethod
    def init(cls, d_h: int, d_c: int, rng: np.random.Generator, prefix: str = "combine.") -> "TurnCombinerParams":
        return cls(
            nx.parameter(nx.glorot_uniform(rng, (d_c, d_h)), f"{prefix}W_s"),
            nx.parameter(nx.glorot_uniform(rng, (d_c, d_h)), f"{prefix}W_u"),
            nx.parameter(np.zeros(d_c), f"{prefix}b"),
        )

    def tensors(self) -> dict[str, Tensor]:
        return {"W_s": self.W_s, "W_u": self.W_u, "b": self.b}


# --------------------------------------------------------------------------
# primitive route


def gru_step(x, h_prev, params: GruParams) -> Tensor:
    """One GRU update.  ``x`` may be a single input or a ``k x d_in`` stack of inputs."""
    x, h_prev = nx.as_tensor(x), nx.as_tensor(h_prev)
    if x.shape[-1] != params.d_in or h_prev.shape != (params.d_h,):
        raise StructureError(
            f"gru_step: got input {x.shape} and state {h_prev.shape} for a {params.d_in}->{params.d_h} cell"
        )
    z = nx.sigmoid(nx.linear(x, params.W_z, params.b_z) + nx.linear(h_prev, params.U_z))
    r = nx.sigmoid(nx.linear(x, params.W_r, params.b_r) + nx.linear(h_prev, params.U_r))
    h_cand = nx.tanh(nx.linear(x, params.W_h, params.b_h) + nx.linear(r * h_prev, params.U_h))
    return z * h_prev + (1.0 - z) * h_cand


def _pool_weights(scores: np.ndarray, mode: PoolingMode, renormalize: bool) -> np.ndarray:
    k = len(scores)
    if mode is PoolingMode.AVERAGE:
        return np.full(k, 1.0 / k)
    if np.any(scores < 0):
        raise StructureError("confidence scores must be non-negative")
    total = scores.sum()
    if total == 0.0:
        raise DegenerateWeightsError("weighted pooling over hypotheses whose scores are all zero")
    return scores / total if renormalize else scores


def encode_timestep(
    hyps: Sequence[tuple],
    h_prev,
    params: GruParams,
    mode: Union[PoolingMode, str] = PoolingMode.WEIGHTED,
    renormalize: bool = False,
) -> Tensor:
    """Pool the GRU states of ``k`` alternative inputs ``[(vector, score), ...]`` that share ``h_prev``."""
    mode = PoolingMode.parse(mode)
    if not hyps:
        raise StructureError("encode_timestep needs at least one hypothesis")
    X = nx.stack([v for v, _ in hyps])
    scores = np.array([s for _, s in hyps], dtype=np.float64)
    w = _pool_weights(scores, mode, renormalize)
    H = gru_step(X, h_prev, params)
    return nx.matmul(Tensor(w), H)


def encode_cnet(
    cnet: ConfusionNetwork,
    embed: Union[Callable[[str], object], Mapping[str, object]],
    h0,
    params: GruParams,
    mode: Union[PoolingMode, str] = PoolingMode.WEIGHTED,
    renormalize: bool = False,
) -> tuple[Tensor, list[Tensor]]:
    """Fold :func:`encode_timestep` over ``cnet``; returns the final state and the per-timestep states.

    Confidence scores are ``exp(log_score)``.  An empty network returns ``h0``
    and an empty trace.
    """
    lookup = embed.__getitem__ if isinstance(embed, Mapping) else embed
    h = nx.as_tensor(h0)
    trace = []
    for ts in cnet.timesteps:
        hyps = [(lookup(hyp.token), hyp.prob) for hyp in ts.hypotheses]
        h = encode_timestep(hyps, h, params, mode, renormalize)
        trace.append(h)
    return h, trace


def combine_turn(s, u, params: TurnCombinerParams) -> Tensor:
    """``W_s s + W_u u + b``; rows of ``s`` and ``u`` may be stacked turns."""
    s, u = nx.as_tensor(s), nx.as_tensor(u)
    if s.shape != u.shape or s.shape[-1] != params.W_s.shape[1]:
        raise StructureError(f"combine_turn: system {s.shape} / user {u.shape} vs W {params.W_s.shape}")
    return nx.linear(s, params.W_s, params.b) + nx.linear(u, params.W_u)


# --------------------------------------------------------------------------
# fused route


@dataclass(frozen=True)
class StepPlan:
    """Row layout of one timestep inside a stacked input matrix."""

    start: int
    stop: int
    weights: np.ndarray


def plan_steps(
    scores_per_step: Sequence[Sequence[float]],
    mode: Union[PoolingMode, str],
    renormalize: bool = False,
) -> list[StepPlan]:
    """Turn per-timestep confidence scores into contiguous row ranges and pooling weights."""
    mode = PoolingMode.parse(mode)
    plans, row = [], 0
    for scores in scores_per_step:
        scores = np.asarray(scores, dtype=np.float64)
        if scores.size == 0:
            raise StructureError("timestep with no hypotheses")
        plans.append(StepPlan(row, row + scores.size, _pool_weights(scores, mode, renormalize)))
        row += scores.size
    return plans


@dataclass(frozen=True)
class _LockstepStep:
    lo: int              # this step's rows are lo:hi of the step-major row order
    hi: int
    n_active: int        # sequences still running (a prefix of the length-sorted order)
    owner: np.ndarray    # rank of each row's sequence
    pool: np.ndarray     # n_active x rows pooling weights
    member: np.ndarray   # n_active x rows 0/1 ownership


@dataclass(frozen=True)
class BatchPlan:
    """Lockstep schedule for several sequences whose rows are stacked sequence after sequence.

    Internally sequences are ranked longest first and rows are visited in
    step-major order, so each step touches a contiguous block.
    """

    lengths: np.ndarray
    n_rows: int
    perm: np.ndarray     # step-major position -> input row
    rank: np.ndarray     # sequence -> rank in the length-sorted order
    steps: tuple

    @property
    def n_seqs(self) -> int:
        return len(self.lengths)

    @property
    def stride(self) -> int:
        """Rows per sequence in the state matrix returned by :func:`encode_batch`."""
        return int(self.lengths.max(initial=0)) + 1

    def state_index(self, seq: int, t) -> np.ndarray:
        return seq * self.stride + np.asarray(t)


def build_batch_plan(sequences: Sequence[Sequence[StepPlan]]) -> BatchPlan:
    B = len(sequences)
    lengths = np.array([len(s) for s in sequences], dtype=np.intp)
    order = np.argsort(-lengths, kind="stable")
    rank = np.empty(B, dtype=np.intp)
    rank[order] = np.arange(B)
    sizes = [np.array([st.stop - st.start for st in s], dtype=np.intp) for s in sequences]
    n_rows = int(sum(sz.sum() for sz in sizes))
    if n_rows == 0:
        return BatchPlan(lengths, 0, np.zeros(0, dtype=np.intp), rank, ())
    weights = np.concatenate([st.weights for s in sequences for st in s])
    step_of = np.concatenate([np.repeat(np.arange(len(sz)), sz) for sz in sizes])
    rank_of = np.concatenate([np.full(sz.sum(), rank[b], dtype=np.intp) for b, sz in enumerate(sizes)])
    perm = np.argsort(step_of * B + rank_of, kind="stable")
    step_sorted, owner_all, w_all = step_of[perm], rank_of[perm], weights[perm]
    bounds = np.searchsorted(step_sorted, np.arange(int(lengths.max()) + 1))
    plan = []
    for t in range(len(bounds) - 1):
        lo, hi = int(bounds[t]), int(bounds[t + 1])
        owner = owner_all[lo:hi]
        n_active = int(owner[-1]) + 1
        member = np.zeros((n_active, hi - lo))
        member[owner, np.arange(hi - lo)] = 1.0
        plan.append(_LockstepStep(lo, hi, n_active, owner, member * w_all[lo:hi], member))
    return BatchPlan(lengths, n_rows, perm, rank, tuple(plan))


def encode_batch(X: Tensor, plan: BatchPlan, h0, params: GruParams) -> Tensor:
    """Run the cnet GRU over several sequences at once in one tape node.

    ``X`` stacks the inputs of every hypothesis, sequence after sequence and
    timestep after timestep.  Returns an ``(n_seqs * stride) x d_h`` matrix:
    row ``plan.state_index(b, t)`` is the state of sequence ``b`` after ``t``
    timesteps (``t = 0`` is ``h0``; rows past a sequence's end repeat its
    final state).
    """
    h0 = nx.as_tensor(h0)
    p = params
    if X.shape[-1] != p.d_in or h0.shape != (p.d_h,):
        raise StructureError("encode_batch: input/state dims do not match the GRU")
    if plan.n_rows != X.shape[0]:
        raise StructureError(f"batch plan covers {plan.n_rows} rows, input has {X.shape[0]}")
    Xd = X.data[plan.perm]
    d = p.d_h
    B, stride = plan.n_seqs, plan.stride
    Wz, Wh, Wr = p.W_z.data, p.W_h.data, p.W_r.data
    Uh = p.U_h.data
    # update and reset gates share one recurrent product
    Uzr = np.concatenate([p.U_z.data, p.U_r.data])
    XZR = Xd @ np.concatenate([Wz, Wr]).T + np.concatenate([p.b_z.data, p.b_r.data])
    XH = Xd @ Wh.T + p.b_h.data

    states = np.empty((B, stride, d))   # in rank order
    states[:, 0] = h0.data
    cur = np.repeat(h0.data[None, :], B, axis=0)
    ZR = np.empty_like(XZR)
    RH = np.empty_like(XH)
    HP = np.empty_like(XH)
    C = np.empty_like(XH)
    for t, st in enumerate(plan.steps):
        sl = slice(st.lo, st.hi)
        hp = cur[st.owner]
        zr = 0.5 * np.tanh(0.5 * (XZR[sl] + hp @ Uzr.T)) + 0.5
        rh = zr[:, d:] * hp
        c = np.tanh(XH[sl] + rh @ Uh.T)
        cur[:st.n_active] = st.pool @ (c + zr[:, :d] * (hp - c))
        states[:, t + 1] = cur
        ZR[sl] = zr
        RH[sl] = rh
        HP[sl] = hp
        C[sl] = c

    def backward(G):
        G = G.reshape(B, stride, d)[np.argsort(plan.rank)]
        dXZR = np.empty_like(XZR)
        dXH = np.empty_like(XH)
        carry = np.zeros((B, d))
        for t in range(len(plan.steps) - 1, -1, -1):
            st = plan.steps[t]
            sl = slice(st.lo, st.hi)
            n = st.n_active
            zr, c, hp = ZR[sl], C[sl], HP[sl]
            z = zr[:, :d]
            # finished sequences just copy their state forward
            carry[n:] += G[n:, t + 1]
            dhi = st.pool.T @ (G[:n, t + 1] + carry[:n])
            dc_pre = dhi * (1.0 - z) * (1.0 - c * c)
            drh = dc_pre @ Uh
            dzr = np.concatenate([dhi * (hp - c), drh * hp], axis=1) * zr * (1.0 - zr)
            dXZR[sl] = dzr
            dXH[sl] = dc_pre
            carry[:n] = st.member @ (dhi * z + drh * zr[:, d:] + dzr @ Uzr)
        dUzr = dXZR.T @ HP
        dUh = dXH.T @ RH
        dXZ, dXR = dXZR[:, :d], dXZR[:, d:]
        dX = np.empty_like(Xd)
        dX[plan.perm] = dXZ @ Wz + dXR @ Wr + dXH @ Wh
        dh0 = (G[:, 0] + carry).sum(axis=0)
        return (
            dX, dh0,
            dXZ.T @ Xd, dUzr[:d], dXZ.sum(axis=0),
            dXH.T @ Xd, dUh * _BACKWARD_FAULT, dXH.sum(axis=0),
            dXR.T @ Xd, dUzr[d:], dXR.sum(axis=0),
        )

    parents = (X, h0, p.W_z, p.U_z, p.b_z, p.W_h, p.U_h, p.b_h, p.W_r, p.U_r, p.b_r)
    return Tensor._from_op(states[plan.rank].reshape(B * stride, d), parents, backward)


def encode_sequence(X: Tensor, steps: Sequence[StepPlan], h0, params: GruParams) -> Tensor:
    """Single-sequence form of :func:`encode_batch`: a ``(T + 1) x d_h`` state matrix, row 0 = ``h0``."""
    return encode_batch(X, build_batch_plan([steps]), h0, params)


def encode_cnet_fused(
    cnet: ConfusionNetwork,
    embed: Union[Callable[[str], object], Mapping[str, object]],
    h0,
    params: GruParams,
    mode: Union[PoolingMode, str] = PoolingMode.WEIGHTED,
    renormalize: bool = False,
) -> tuple[Tensor, Tensor]:
    """Same contract as :func:`encode_cnet` through the fused node; returns ``(final, all_states)``."""
    h0 = nx.as_tensor(h0)
    if not len(cnet):
        return h0, Tensor(np.empty((0, params.d_h)))
    lookup = embed.__getitem__ if isinstance(embed, Mapping) else embed
    X = nx.stack([lookup(h.token) for ts in cnet for h in ts.hypotheses])
    steps = plan_steps([[h.prob for h in ts.hypotheses] for ts in cnet], mode, renormalize)
    H = encode_sequence(X, steps, h0, params)
    return nx.take_rows(H, len(cnet)), nx.take_rows(H, np.arange(1, len(cnet) + 1))
