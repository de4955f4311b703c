import numpy as np
import pytest

from currl import nets
from currl.nets import Adam, ObsLayout, PolicyNet
from currl.tasks import Scenario, default_scenario_spec
from currl.world import obs_dim


def _layout(n=4, balls=False):
    groups = [("others", n - 1)]
    if balls:
        groups.append(("balls", n))
    groups.append(("landmarks", n))
    return ObsLayout(self_dim=4, groups=tuple(groups))


def _random_obs(rng, layout, batch=16):
    return rng.uniform(-3, 3, size=(batch, layout.total_dim)).astype(np.float32)


def _permute_obs(obs, layout, rng):
    """Shuffle same-type entity 2-blocks within each set."""
    out = obs.copy()
    at = layout.self_dim
    for _, count in layout.groups:
        width = 2 * count
        block = out[:, at:at + width].reshape(len(obs), count, 2)
        perm = rng.permutation(count)
        out[:, at:at + width] = block[:, perm].reshape(len(obs), width)
        at += width
    return out


class TestPermutationInvariance:
    def test_logits_and_values_bitwise_invariant(self):
        rng = np.random.default_rng(0)
        layout = _layout(n=5)
        net = PolicyNet(("others", "landmarks"), rng=rng)
        for trial in range(100):
            obs = _random_obs(rng, layout, batch=4)
            logits, values = net.forward(obs, layout)
            shuffled = _permute_obs(obs, layout, rng)
            logits2, values2 = net.forward(shuffled, layout)
            assert np.array_equal(logits, logits2)
            assert np.array_equal(values, values2)

    def test_push_ball_three_types(self):
        rng = np.random.default_rng(1)
        layout = _layout(n=3, balls=True)
        net = PolicyNet(("others", "balls", "landmarks"), rng=rng)
        obs = _random_obs(rng, layout)
        logits, values = net.forward(obs, layout)
        logits2, values2 = net.forward(_permute_obs(obs, layout, rng), layout)
        assert np.array_equal(logits, logits2)
        assert np.array_equal(values, values2)


class TestEntityCountTransfer:
    def test_same_params_evaluate_on_any_n(self):
        rng = np.random.default_rng(2)
        net = PolicyNet(("others", "landmarks"), rng=rng)
        for n in (2, 4, 8, 16):
            layout = _layout(n=n)
            logits, values = net.forward(_random_obs(rng, layout), layout)
            assert logits.shape == (16, 5)
            assert values.shape == (16,)

    def test_layout_matches_world_obs_dim(self):
        spec = default_scenario_spec(Scenario.SIMPLE_SPREAD)
        layout = nets.layout_for(spec, 4)
        assert layout.total_dim == obs_dim(spec, 4)

    def test_unknown_entity_type_rejected(self):
        rng = np.random.default_rng(3)
        net = PolicyNet(("others", "landmarks"), rng=rng)
        layout = _layout(n=3, balls=True)
        with pytest.raises(ValueError):
            net.forward(_random_obs(rng, layout), layout)

    def test_single_agent_empty_other_set(self):
        rng = np.random.default_rng(4)
        net = PolicyNet(("others", "landmarks"), rng=rng)
        layout = _layout(n=1)
        logits, values = net.forward(_random_obs(rng, layout), layout)
        assert np.all(np.isfinite(logits)) and np.all(np.isfinite(values))


class TestAdam:
    def test_zero_gradient_is_noop(self):
        rng = np.random.default_rng(5)
        net = PolicyNet(("others", "landmarks"), rng=rng)
        before = {k: v.copy() for k, v in net.params.items()}
        opt = Adam(net.params, lr=1e-3)
        opt.step(net.params, {k: np.zeros_like(v) for k, v in net.params.items()},
                 max_grad_norm=10.0)
        for k in before:
            assert np.array_equal(net.params[k], before[k])

    def test_gradient_descends(self):
        rng = np.random.default_rng(6)
        params = {"w": np.array([1.0, -2.0], dtype=np.float32)}
        opt = Adam(params, lr=0.1)
        for _ in range(200):
            opt.step(params, {"w": 2.0 * params["w"]})  # d/dw of w^2
        assert np.abs(params["w"]).max() < 1e-2

    def test_grad_norm_clipping(self):
        params = {"w": np.zeros(4, dtype=np.float32)}
        opt = Adam(params, lr=1.0)
        big = {"w": np.full(4, 100.0, dtype=np.float32)}
        opt.step(params, big, max_grad_norm=1.0)
        # after clipping, first-step Adam update is lr * g / (|g| + eps) ~ lr
        assert np.abs(params["w"]).max() <= 1.0 + 1e-6


class TestCheckpoints:
    def test_array_round_trip_bit_exact(self, tmp_path, rng):
        arrays = {
            "a.W": rng.normal(size=(7, 3)).astype(np.float32),
            "a.b": rng.normal(size=3).astype(np.float32),
            "scalar": np.array(2.5, dtype=np.float32),
        }
        path = tmp_path / "arrays.ckpt"
        nets.save_arrays(path, arrays, cfg_hash="abc123", meta={"k": "v"})
        loaded, cfg_hash, meta = nets.load_arrays(path)
        assert cfg_hash == "abc123"
        assert meta["k"] == "v"
        for k, v in arrays.items():
            assert np.array_equal(loaded[k], v)
            assert loaded[k].dtype == np.dtype("<f4")

    def test_policy_round_trip_with_optimizer(self, tmp_path):
        rng = np.random.default_rng(8)
        net = PolicyNet(("others", "landmarks"), rng=rng)
        opt = Adam(net.params, lr=5e-4, eps=1e-5)
        layout = _layout(n=4)
        obs = _random_obs(rng, layout)
        logits, values, cache = net.forward(obs, layout, need_cache=True)
        grads = net.backward(cache, np.ones_like(logits) * 0.01,
                             np.ones_like(values) * 0.01)
        opt.step(net.params, grads)
        path = tmp_path / "policy.ckpt"
        nets.save_policy(path, net, "hash0", optimizer=opt, meta={"iteration": "7"})
        net2, opt2, cfg_hash, meta = nets.load_policy(path)
        assert meta["iteration"] == "7"
        assert opt2.t == opt.t
        for k in net.params:
            assert np.array_equal(net.params[k], net2.params[k])
            assert np.array_equal(opt.m[k], opt2.m[k])
            assert np.array_equal(opt.v[k], opt2.v[k])
        out1 = net.forward(obs, layout)
        out2 = net2.forward(obs, layout)
        assert np.array_equal(out1[0], out2[0])

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bogus.ckpt"
        path.write_bytes(b"not a checkpoint\nend\n")
        with pytest.raises(ValueError):
            nets.load_arrays(path)


class TestParamVector:
    def test_round_trip(self):
        rng = np.random.default_rng(9)
        net = PolicyNet(("others", "landmarks"), rng=rng)
        vec = net.param_vector()
        net.set_param_vector(vec * 0.0)
        assert net.param_vector().sum() == 0.0
        net.set_param_vector(vec)
        assert np.array_equal(net.param_vector(), vec)
