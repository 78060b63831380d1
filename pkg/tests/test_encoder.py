import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cnet_dst import encoder as enc
from cnet_dst import numerics as nx
from cnet_dst.cnet import ConfusionNetwork, Hypothesis, Timestep, degenerate_cnet
from cnet_dst.errors import DegenerateWeightsError, StructureError
from oracles import gru_step as oracle_step


def raw(params):
    return {k: v.data for k, v in params.tensors().items()}


def make_params(d_in, d_h, seed, scale=1.0):
    p = enc.GruParams.init(d_in, d_h, nx.make_rng(seed))
    rng = nx.make_rng(seed, 1)
    for t in p.tensors().values():
        t.data[...] = rng.normal(scale=scale * 0.5, size=t.shape)
    return p


def zero_params(d_in, d_h):
    p = enc.GruParams.init(d_in, d_h, nx.make_rng(0))
    for t in p.tensors().values():
        t.data[...] = 0.0
    return p


EMB_RNG = np.random.default_rng(77)
WORDS = ["a", "b", "c", "d", "e", "!null"]
EMB = {w: EMB_RNG.normal(size=3) for w in WORDS}


def random_cnet(rng, n_steps, max_k=3, p_lo=0.05):
    steps = []
    for i in range(n_steps):
        k = int(rng.integers(1, max_k + 1))
        toks = rng.choice(WORDS, size=k, replace=False)
        probs = rng.dirichlet(np.ones(k)) * rng.uniform(0.6, 1.0)
        probs = np.maximum(probs, p_lo)
        steps.append(Timestep(float(i), float(i + 1),
                              tuple(Hypothesis(str(t), float(np.log(min(p, 1.0)))) for t, p in zip(toks, probs))))
    return ConfusionNetwork(tuple(steps))


# -- gru_step ----------------------------------------------------------------

def test_zero_params_fixed_points():
    p = zero_params(3, 4)
    np.testing.assert_array_equal(enc.gru_step(np.ones(3), np.zeros(4), p).data, np.zeros(4))
    v = np.array([0.2, -0.4, 0.6, 1.0])
    np.testing.assert_allclose(enc.gru_step(np.ones(3), v, p).data, 0.5 * v, atol=1e-15)


def test_gru_step_matches_scalar_oracle(rng):
    p = make_params(3, 4, seed=3)
    for _ in range(5):
        x, h = rng.normal(size=3), np.tanh(rng.normal(size=4))
        np.testing.assert_allclose(enc.gru_step(x, h, p).data, oracle_step(x, h, raw(p)), atol=1e-12)


def test_gru_step_dimension_errors():
    p = make_params(3, 4, 0)
    with pytest.raises(StructureError):
        enc.gru_step(np.ones(2), np.zeros(4), p)
    with pytest.raises(StructureError):
        enc.gru_step(np.ones(3), np.zeros(5), p)


def test_param_shape_validation():
    p = make_params(3, 4, 0).tensors()
    p["U_h"] = nx.parameter(np.zeros((4, 3)))
    with pytest.raises(StructureError):
        enc.GruParams(**p)


# -- encode_timestep ---------------------------------------------------------

@pytest.mark.parametrize("mode", ["average", "weighted"])
def test_single_hypothesis_collapses(mode, rng):
    p = make_params(3, 4, 1)
    x, h = rng.normal(size=3), rng.normal(size=4) * 0.5
    out = enc.encode_timestep([(x, 1.0)], h, p, mode).data
    np.testing.assert_allclose(out, enc.gru_step(x, h, p).data, atol=1e-15)


def test_identical_embeddings_average(rng):
    p = make_params(3, 4, 1)
    x, h = rng.normal(size=3), rng.normal(size=4) * 0.5
    out = enc.encode_timestep([(x, 0.2), (x, 0.5), (x, 0.1)], h, p, "average").data
    np.testing.assert_allclose(out, enc.gru_step(x, h, p).data, atol=1e-15)


def test_one_hot_weighting(rng):
    p = make_params(3, 4, 1)
    x1, x2, h = rng.normal(size=3), rng.normal(size=3), rng.normal(size=4) * 0.5
    out = enc.encode_timestep([(x1, 1.0), (x2, 0.0)], h, p, "weighted").data
    np.testing.assert_allclose(out, enc.gru_step(x1, h, p).data, atol=1e-15)


def test_weighted_is_raw_sum_against_oracle(rng):
    p = make_params(3, 4, 2)
    h = rng.normal(size=4) * 0.5
    hyps = [(rng.normal(size=3), s) for s in (0.5, 0.2, 0.1)]
    expect = sum(s * oracle_step(x, h, raw(p)) for x, s in hyps)
    np.testing.assert_allclose(enc.encode_timestep(hyps, h, p, "weighted").data, expect, atol=1e-12)
    renorm = enc.encode_timestep(hyps, h, p, "weighted", renormalize=True).data
    np.testing.assert_allclose(renorm, expect / 0.8, atol=1e-12)


def test_timestep_errors(rng):
    p = make_params(3, 4, 0)
    with pytest.raises(StructureError):
        enc.encode_timestep([], np.zeros(4), p)
    with pytest.raises(DegenerateWeightsError):
        enc.encode_timestep([(np.ones(3), 0.0), (np.ones(3), 0.0)], np.zeros(4), p, "weighted")
    with pytest.raises(StructureError):
        enc.encode_timestep([(np.ones(3), -0.1)], np.zeros(4), p, "weighted")


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), k=st.integers(1, 5), data=st.data())
def test_pooling_permutation_invariant(seed, k, data):
    rng = np.random.default_rng(seed)
    p = make_params(3, 4, seed % 50)
    h = np.tanh(rng.normal(size=4))
    hyps = [(rng.normal(size=3), float(s)) for s in rng.uniform(0.01, 1.0 / k, size=k)]
    perm = data.draw(st.permutations(range(k)))
    for mode in ("average", "weighted"):
        a = enc.encode_timestep(hyps, h, p, mode).data
        b = enc.encode_timestep([hyps[i] for i in perm], h, p, mode).data
        assert np.max(np.abs(a - b)) <= 1e-12


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), k=st.integers(1, 5))
def test_average_equals_weighted_with_uniform_scores(seed, k):
    rng = np.random.default_rng(seed)
    p = make_params(3, 4, seed % 50)
    h = np.tanh(rng.normal(size=4))
    hyps = [(rng.normal(size=3), 1.0 / k) for _ in range(k)]
    a = enc.encode_timestep(hyps, h, p, "average").data
    w = enc.encode_timestep(hyps, h, p, "weighted").data
    assert np.max(np.abs(a - w)) <= 1e-12


# -- encode_cnet -------------------------------------------------------------

def test_empty_cnet_returns_h0():
    p = make_params(3, 4, 0)
    h0 = np.array([0.1, 0.2, 0.3, 0.4])
    final, trace = enc.encode_cnet(ConfusionNetwork(()), EMB, h0, p)
    np.testing.assert_array_equal(final.data, h0)
    assert trace == []
    final_f, states = enc.encode_cnet_fused(ConfusionNetwork(()), EMB, h0, p)
    np.testing.assert_array_equal(final_f.data, h0)
    assert states.shape == (0, 4)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 10_000), tokens=st.lists(st.sampled_from(WORDS), min_size=1, max_size=8))
def test_subsumes_plain_gru(seed, tokens):
    p = make_params(3, 4, seed % 97)
    h = np.zeros(4)
    for t in tokens:
        h = oracle_step(EMB[t], h, raw(p))
    c = degenerate_cnet(tokens)
    for mode in ("average", "weighted"):
        final, trace = enc.encode_cnet(c, EMB, np.zeros(4), p, mode)
        assert np.max(np.abs(final.data - h)) <= 1e-12
        assert len(trace) == len(tokens)
        final_f, _ = enc.encode_cnet_fused(c, EMB, np.zeros(4), p, mode)
        assert np.max(np.abs(final_f.data - h)) <= 1e-12


def test_reversed_hypotheses_same_output(rng):
    p = make_params(3, 4, 5)
    c = random_cnet(rng, 5)
    rev = ConfusionNetwork(tuple(Timestep(ts.start, ts.end, ts.hypotheses[::-1]) for ts in c))
    for mode in ("average", "weighted"):
        a = enc.encode_cnet(c, EMB, np.zeros(4), p, mode)[0].data
        b = enc.encode_cnet(rev, EMB, np.zeros(4), p, mode)[0].data
        assert np.max(np.abs(a - b)) <= 1e-12


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_hidden_state_bounded(seed):
    rng = np.random.default_rng(seed)
    p = make_params(3, 6, seed % 31, scale=4.0)
    c = random_cnet(rng, 6, max_k=4)
    for mode in ("average", "weighted"):  # random_cnet keeps raw score sums <= 1
        _, trace = enc.encode_cnet(c, EMB, np.zeros(6), p, mode)
        assert all(np.all(np.abs(h.data) < 1.0) for h in trace)


# -- fused and batched routes ---------------------------------------------------

@pytest.mark.parametrize("mode", ["average", "weighted"])
@pytest.mark.parametrize("renorm", [False, True])
def test_fused_matches_primitive(mode, renorm, rng):
    p = make_params(3, 5, 9)
    for n in (1, 3, 6):
        c = random_cnet(rng, n)
        h0 = np.tanh(rng.normal(size=5))
        final, trace = enc.encode_cnet(c, EMB, h0, p, mode, renorm)
        final_f, states = enc.encode_cnet_fused(c, EMB, h0, p, mode, renorm)
        np.testing.assert_allclose(final_f.data, final.data, atol=1e-14)
        np.testing.assert_allclose(states.data, np.stack([h.data for h in trace]), atol=1e-14)


def _embedded(cnets, mode="weighted"):
    X = np.stack([EMB[h.token] for c in cnets for ts in c for h in ts.hypotheses])
    steps = [enc.plan_steps([[h.prob for h in ts.hypotheses] for ts in c], mode) for c in cnets]
    offset = 0
    shifted = []
    for c, s in zip(cnets, steps):
        shifted.append([enc.StepPlan(sp.start + offset, sp.stop + offset, sp.weights) for sp in s])
        offset += sum(len(ts) for ts in c)
    return X, shifted


def test_batch_matches_individual_sequences(rng):
    p = make_params(3, 5, 4)
    cnets = [random_cnet(rng, n) for n in (4, 1, 6, 6, 2)]
    X, steps = _embedded(cnets)
    h0 = np.zeros(5)
    plan = enc.build_batch_plan(steps)
    H = enc.encode_batch(nx.as_tensor(X), plan, h0, p).data
    assert plan.n_seqs == 5 and plan.stride == 7
    for b, c in enumerate(cnets):
        _, trace = enc.encode_cnet(c, EMB, h0, p, "weighted")
        for t, h in enumerate(trace, start=1):
            np.testing.assert_allclose(H[plan.state_index(b, t)], h.data, atol=1e-14)
        last = trace[-1].data
        for t in range(len(c) + 1, plan.stride):  # padding repeats the final state
            np.testing.assert_allclose(H[plan.state_index(b, t)], last, atol=0)


def _fused_loss_fn(cnets, p, weights_out):
    X, steps = _embedded(cnets)
    Xp = nx.parameter(X, "X")
    plan = enc.build_batch_plan(steps)

    def loss():
        H = enc.encode_batch(Xp, plan, np.zeros(p.d_h), p)
        return nx.tensor_sum(nx.mul(H, weights_out))

    return loss, Xp, plan


def test_batch_gradient_matches_primitive(rng):
    p = make_params(3, 4, 6)
    cnets = [random_cnet(rng, n) for n in (3, 2, 4)]
    plan = enc.build_batch_plan(_embedded(cnets)[1])
    R = rng.normal(size=(plan.n_seqs * plan.stride, 4))
    loss, _, _ = _fused_loss_fn(cnets, p, R)
    loss().backward()
    fused = {k: v.grad.copy() for k, v in p.tensors().items()}
    for t in p.tensors().values():
        t.grad = None
    total = None
    for b, c in enumerate(cnets):
        _, trace = enc.encode_cnet(c, EMB, np.zeros(4), p, "weighted")
        for t in range(1, plan.stride):
            h = trace[min(t, len(trace)) - 1]
            term = nx.tensor_sum(nx.mul(h, R[plan.state_index(b, t)]))
            total = term if total is None else nx.add(total, term)
    total.backward()
    for k, v in p.tensors().items():
        np.testing.assert_allclose(fused[k], v.grad, atol=1e-12, err_msg=k)


def test_fused_gradient_finite_difference(rng):
    p = make_params(3, 4, 8)
    cnets = [random_cnet(rng, n) for n in (4, 3)]
    X, steps = _embedded(cnets)
    plan = enc.build_batch_plan(steps)
    R = rng.normal(size=(plan.n_seqs * plan.stride, 4))
    loss, Xp, _ = _fused_loss_fn(cnets, p, R)
    params = dict(p.tensors(), X=Xp)
    assert nx.grad_check(loss, params, 1e-4) < 1e-4


def test_primitive_gradient_finite_difference(rng):
    p = make_params(3, 4, 8)
    c = random_cnet(rng, 4)
    R = rng.normal(size=4)

    def loss():
        final, _ = enc.encode_cnet(c, EMB, np.zeros(4), p, "average")
        return nx.tensor_sum(nx.mul(final, R))

    assert nx.grad_check(loss, p.tensors(), 1e-4) < 1e-4


def test_corrupted_backward_is_detected(rng, monkeypatch):
    p = make_params(3, 4, 8)
    cnets = [random_cnet(rng, 4)]
    X, steps = _embedded(cnets)
    plan = enc.build_batch_plan(steps)
    R = rng.normal(size=(plan.n_seqs * plan.stride, 4))
    loss, _, _ = _fused_loss_fn(cnets, p, R)
    monkeypatch.setattr(enc, "_BACKWARD_FAULT", 1.5)
    assert nx.grad_check(loss, p.tensors(), 1e-4) > 1e-2


# -- combine_turn -------------------------------------------------------------

def test_combine_identity_and_bias():
    v = np.array([0.3, -0.2, 0.9])
    P = enc.TurnCombinerParams(nx.parameter(np.eye(3)), nx.parameter(np.zeros((3, 3))), nx.parameter(np.zeros(3)))
    np.testing.assert_array_equal(enc.combine_turn(v, np.ones(3), P).data, v)
    b = np.array([1.0, 2.0, 3.0])
    P = enc.TurnCombinerParams(nx.parameter(np.zeros((3, 3))), nx.parameter(np.zeros((3, 3))), nx.parameter(b))
    np.testing.assert_array_equal(enc.combine_turn(v, v, P).data, b)


def test_combine_triple_loop_oracle(rng):
    P = enc.TurnCombinerParams.init(4, 3, nx.make_rng(2))
    P.b.data[...] = rng.normal(size=3)
    s, u = rng.normal(size=4), rng.normal(size=4)
    expect = np.zeros(3)
    for i in range(3):
        expect[i] = P.b.data[i]
        for j in range(4):
            expect[i] += P.W_s.data[i, j] * s[j] + P.W_u.data[i, j] * u[j]
    np.testing.assert_allclose(enc.combine_turn(s, u, P).data, expect, atol=1e-12)
    with pytest.raises(StructureError):
        enc.combine_turn(s, np.ones(3), P)
