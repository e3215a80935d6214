import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from atnk import tensor as T
from atnk.decoder import greedy_decode, teacher_forced_logprob
from atnk.model import Seq2Seq
from atnk.tasks import EOS, TaskInstance, gen_copy, gen_tsp
from atnk.training import (BaselineState, TrainConfig, enumerate_lower_bound, enumerate_lower_bound_grad,
                           evaluate, make_batches, mle_loss, reinforce_grad, sgd_step, sources_of, train)

from conftest import tiny_config
from test_decoder import pointer_model, randomize


def inst(src, tgt):
    return TaskInstance(tuple(src), tuple(tgt))


def hard_model(seed=0, **kw):
    return Seq2Seq(tiny_config(attention="hard", **kw), seed=seed)


class TestMleLoss:
    def test_symmetric_single_token(self, tiny_model):
        tiny_model.decoder.out_W.value[:] = 0.0
        loss = mle_loss(tiny_model, [inst([3, 4], [EOS])])
        assert loss.item() == pytest.approx(math.log(tiny_model.config.tgt_vocab), abs=1e-12)

    def test_empty_batch(self, tiny_model):
        with pytest.raises(ValueError):
            mle_loss(tiny_model, [])

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 10_000))
    def test_nonnegative(self, seed):
        rng = np.random.default_rng(seed)
        model = randomize(Seq2Seq(tiny_config(), seed=seed), rng, 2.0)
        batch = gen_copy(seed, 4, 4, (1, 4))
        assert mle_loss(model, batch).item() >= 0.0

    @pytest.mark.parametrize("attention", ["soft", "location"])
    def test_gradient_two_instance_batch(self, attention, rng):
        model = randomize(Seq2Seq(tiny_config(attention=attention), seed=1), rng, 0.5)
        batch = [inst([3, 5, 4], [3, 5, 4, EOS]), inst([6, 3], [6, 3, EOS])]
        report = T.grad_check(lambda: mle_loss(model, batch), model.parameters())
        assert report.passed, str(report)


class TestSgd:
    def params(self, rng):
        return {"a": T.Tensor(rng.normal(size=(2, 3)), requires_grad=True),
                "b": T.Tensor(rng.normal(size=4), requires_grad=True)}

    def test_zero_grads_unchanged(self, rng):
        ps = self.params(rng)
        before = {k: p.value.copy() for k, p in ps.items()}
        sgd_step(ps, TrainConfig())
        for k in ps:
            np.testing.assert_array_equal(ps[k].value, before[k])

    def test_clip_halves_step(self):
        p = T.Tensor(np.zeros(2), requires_grad=True)
        p.grad = np.array([6.0, 8.0])
        norm = sgd_step({"p": p}, TrainConfig(lr=1.0, grad_clip=5.0))
        assert norm == 10.0
        np.testing.assert_allclose(p.value, [-3.0, -4.0])
        np.testing.assert_array_equal(p.grad, 0.0)

    def test_identity_with_zero_lr_and_no_clip(self, rng):
        ps = self.params(rng)
        for p in ps.values():
            p.grad = rng.normal(size=p.shape)
        before = {k: p.value.copy() for k, p in ps.items()}
        cfg = TrainConfig(grad_clip=math.inf)
        cfg.lr = 0.0
        sgd_step(ps, cfg)
        for k in ps:
            np.testing.assert_array_equal(ps[k].value, before[k])

    def test_nonfinite_names_parameter(self, rng):
        ps = self.params(rng)
        g = np.zeros(4)
        g[1] = np.nan
        ps["b"].grad = g
        with pytest.raises(T.NumericError, match="'b'"):
            sgd_step(ps, TrainConfig())

    def test_copy_loss_decreases(self):
        model = Seq2Seq(tiny_config(hidden=8, d_emb=4, d_a=8), seed=0)
        batch = [b for b in gen_copy(3, 16, 4, 3)]
        cfg = TrainConfig(lr=0.05)
        losses = []
        for _ in range(11):
            loss = mle_loss(model, batch)
            losses.append(loss.item())
            T.backward(loss)
            sgd_step(model.parameters(), cfg)
        assert all(b < a for a, b in zip(losses, losses[1:]))

    @pytest.mark.parametrize("kw", [dict(lr=0.0), dict(M_samples=0), dict(baseline_decay=1.0),
                                    dict(grad_clip=0.0), dict(batch_size=0), dict(epochs=-1)])
    def test_config_validation(self, kw):
        with pytest.raises(ValueError):
            TrainConfig(**kw)


class TestBaseline:
    def test_first_update_is_mean(self):
        b = BaselineState(0.9)
        assert b.value == 0.0
        b.update(np.array([-1.0, -3.0]))
        assert b.value == -2.0

    def test_disabled_stays_zero(self):
        b = BaselineState(0.9, enabled=False)
        b.update(np.array([-5.0]))
        assert b.value == 0.0

    @given(st.lists(st.lists(st.floats(-50, 0), min_size=1, max_size=4), min_size=1, max_size=10),
           st.floats(0.0, 0.99))
    def test_convex_combination(self, batches, decay):
        b = BaselineState(decay)
        seen = []
        for r in batches:
            b.update(np.array(r))
            seen += r
            assert min(seen) - 1e-9 <= b.value <= max(seen) + 1e-9


class TestEnumeration:
    def test_single_context_has_no_gap(self, rng):
        model = randomize(hard_model(), rng)
        lb = enumerate_lower_bound(model, inst([4], [3, 5, EOS]))
        assert lb.bound.item() == pytest.approx(lb.log_likelihood, abs=1e-12)
        assert lb.paths.shape == (1, 3)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000))
    def test_jensen(self, seed):
        rng = np.random.default_rng(seed)
        model = randomize(hard_model(seed), rng, 1.5)
        n = int(rng.integers(1, 4))
        src = rng.integers(3, 7, size=n)
        tgt = list(rng.integers(3, 7, size=int(rng.integers(0, 3)))) + [EOS]
        lb = enumerate_lower_bound(model, inst(src, tgt))
        assert lb.bound.item() <= lb.log_likelihood + 1e-12

    def test_hand_enumeration(self, rng):
        model = randomize(hard_model(2), rng)
        instance = inst([3, 6], [5, EOS])
        ctx = model.encode(sources_of([instance]))
        bound, joint = 0.0, []
        for r in [(0, 0), (0, 1), (1, 0), (1, 1)]:
            lp_y, trace = teacher_forced_logprob(model, ctx, [[5, EOS]], forced=[list(r)], mode="hard")
            lp_r = trace.path_log_prob.value[0]
            bound += math.exp(lp_r) * lp_y.value[0]
            joint.append(lp_r + lp_y.value[0])
        lb = enumerate_lower_bound(model, instance)
        assert lb.bound.item() == pytest.approx(bound, abs=1e-12)
        assert lb.log_likelihood == pytest.approx(math.log(sum(math.exp(j) for j in joint)), abs=1e-12)

    def test_too_many_paths(self, tiny_model):
        with pytest.raises(ValueError):
            enumerate_lower_bound(tiny_model, inst([3] * 11, [3, 3, 3, EOS]))

    def test_grad_matches_finite_differences(self, rng):
        model = randomize(hard_model(3), rng)
        instance = inst([3, 6, 4], [5, EOS])
        grads = enumerate_lower_bound_grad(model, instance)
        params = model.parameters()
        probe = np.random.default_rng(0)
        for name in ["decoder.attn.v_a", "decoder.gru.W", "encoder.fwd.U", "decoder.out_W"]:
            flat = params[name].value.reshape(-1)
            for i in probe.choice(flat.size, size=min(6, flat.size), replace=False):
                orig = flat[i]
                flat[i] = orig + 1e-5
                up = enumerate_lower_bound(model, instance).bound.item()
                flat[i] = orig - 1e-5
                down = enumerate_lower_bound(model, instance).bound.item()
                flat[i] = orig
                fd = (up - down) / 2e-5
                assert abs(grads[name].reshape(-1)[i] - fd) / max(1.0, abs(fd)) < 1e-6, name

    def test_unused_rows_have_zero_gradient(self, rng):
        model = randomize(hard_model(4), rng)
        grads = enumerate_lower_bound_grad(model, inst([3, 4], [5, EOS]))
        src_rows = grads["src_embed.table"]
        assert np.all(src_rows[[0, 1, 2, 5, 6]] == 0) and np.any(src_rows[3] != 0)
        tgt_rows = grads["decoder.embed.table"]
        # inputs are BOS then 5
        assert np.all(tgt_rows[[0, 2, 3, 4, 6]] == 0) and np.any(tgt_rows[1] != 0)

    def test_single_path_equals_mle_gradient(self, rng):
        model = randomize(hard_model(5), rng)
        instance = inst([4], [3, EOS])
        grads = enumerate_lower_bound_grad(model, instance)
        soft = Seq2Seq(tiny_config(), seed=0)
        soft.copy_from(model)
        loss = mle_loss(soft, [instance])
        T.backward(loss)
        for name, p in soft.parameters().items():
            np.testing.assert_allclose(grads[name], -p.grad, atol=1e-12)


class TestReinforce:
    def test_deterministic_policy_reduces_to_mle(self, rng):
        model = randomize(hard_model(6), rng)
        instance = inst([5], [3, 4, EOS])
        res = reinforce_grad(model, instance, TrainConfig(M_samples=3), BaselineState(), rng)
        exact = enumerate_lower_bound_grad(model, instance)
        for name in exact:
            np.testing.assert_allclose(res.grads[name], exact[name], atol=1e-12)
        assert res.paths.shape == (3, 3) and np.all(res.paths == 0)

    def test_baseline_updated_after_use(self, rng):
        model = randomize(hard_model(7), rng)
        b = BaselineState(0.5)
        res = reinforce_grad(model, inst([3, 4], [5, EOS]), TrainConfig(M_samples=4), b, rng)
        assert res.baseline == 0.0
        assert b.value == pytest.approx(res.rewards.mean())

    def test_variance_norm_scales_score_term(self, rng):
        model = randomize(hard_model(8), rng)
        instance = inst([3, 4, 5], [5, EOS])
        grads = {}
        for vn in (False, True):
            b = BaselineState(0.9)
            b.update(np.array([-5.0, -1.0]))  # b = -3, running SD = 2
            grads[vn] = reinforce_grad(model, instance, TrainConfig(M_samples=5, variance_norm=vn), b,
                                       np.random.default_rng(1)).grads
        # v_a only influences the attention probabilities, so it only sees the score-function term
        ratio = grads[True]["decoder.attn.v_a"] / grads[False]["decoder.attn.v_a"]
        np.testing.assert_allclose(ratio, ratio.flat[0], rtol=1e-9)
        assert ratio.flat[0] == pytest.approx(0.5, rel=1e-9)


class TestTrain:
    def test_zero_epochs(self, tiny_model):
        before = {k: p.value.copy() for k, p in tiny_model.parameters().items()}
        log = train(tiny_model, gen_copy(0, 8, 4, 3), TrainConfig(epochs=0))
        assert log.records == []
        for k, p in tiny_model.parameters().items():
            np.testing.assert_array_equal(p.value, before[k])

    @pytest.mark.parametrize("attention", ["soft", "hard"])
    def test_deterministic(self, attention):
        data = gen_copy(1, 24, 4, (1, 3))
        logs, params = [], []
        for _ in range(2):
            model = Seq2Seq(tiny_config(attention=attention), seed=3)
            log = train(model, data, TrainConfig(epochs=2, batch_size=5, seed=9), dev_set=data[:6])
            logs.append([(r.epoch, r.split, r.nll, r.acc) for r in log.records])
            params.append({k: p.value.copy() for k, p in model.parameters().items()})
        assert str(logs[0]) == str(logs[1])
        for k in params[0]:
            assert params[0][k].tobytes() == params[1][k].tobytes()

    def test_batches_cover_each_instance_once(self):
        data = gen_copy(2, 40, 4, (1, 5))
        batches = make_batches(data, 3, np.random.default_rng(0))
        seen = sorted(id(x) for b in batches for x in b)
        assert seen == sorted(id(x) for x in data)
        assert all(len({x.shape_key for x in b}) == 1 for b in batches)

    def test_mask_epochs_only_affect_leading_epochs(self):
        data = gen_tsp(0, 12, 4)
        runs = {}
        for name, kw in {"curriculum": dict(mask_epochs=1), "masked": dict(pointer_mask=True),
                         "unmasked": {}}.items():
            model = randomize(pointer_model(4), np.random.default_rng(4), 0.5)
            log = train(model, data, TrainConfig(epochs=2, batch_size=4, **kw))
            runs[name] = [r.nll for r in log.records]
        assert runs["curriculum"][0] == runs["masked"][0]
        assert runs["curriculum"][0] != runs["unmasked"][0]
        assert runs["curriculum"][1] not in (runs["masked"][1], runs["unmasked"][1])

    def test_hard_training_reports_nan_train_accuracy(self):
        model = Seq2Seq(tiny_config(attention="hard"), seed=0)
        log = train(model, gen_copy(0, 6, 4, 2), TrainConfig(epochs=1, M_samples=2))
        assert math.isnan(log.records[0].acc) and log.records[0].nll > 0

    @settings(max_examples=10, deadline=None)
    @given(st.integers(0, 10_000))
    def test_exact_match_equals_greedy(self, seed):
        rng = np.random.default_rng(seed)
        model = randomize(Seq2Seq(tiny_config(), seed=seed), rng, 2.0)
        data = gen_copy(seed, 12, 3, (1, 2))
        hits = 0
        for x in data:
            seqs, _ = greedy_decode(model, model.encode(sources_of([x])), len(x.target))
            hits += seqs[0] == x.target
        assert evaluate(model, data)["acc"] == hits / len(data)
