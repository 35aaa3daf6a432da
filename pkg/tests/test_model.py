import math

import numpy as np
import pytest

from nodefdm import atmosphere as atm, autodiff as ad, data, model as M


def drivers_from(flight, n, start=0):
    return {k: np.asarray(flight[k], dtype=float)[None, start:start + n] for k in M.DRIVERS}


def state0(flight, k=0):
    return {k_: np.array([[float(flight[k_][k])]]) for k_ in data.STATE}


@pytest.fixture(scope="module")
def net(norm_stats):
    return M.NodeFdm(norm_stats, seed=3)


def random_inputs(rng, n=4):
    x = {"alt": rng.uniform(0, 12000, (n, 1)), "dist": rng.uniform(0, 1e6, (n, 1)),
         "fpa": rng.uniform(-0.1, 0.1, (n, 1)), "tas": rng.uniform(80, 250, (n, 1)),
         "mass": rng.uniform(5e4, 7e4, (n, 1))}
    u = {"sel_alt": rng.uniform(0, 12000, (n, 1)), "sel_spd": rng.uniform(80, 170, (n, 1)),
         "sel_vs": np.zeros((n, 1)), "flap": np.zeros((n, 1)), "gear": np.zeros((n, 1)),
         "spdbrk": np.zeros((n, 1))}
    e0 = {"oat": rng.uniform(210, 300, (n, 1)), "wind_par": rng.normal(0, 10, (n, 1)),
          "wind_perp": rng.normal(0, 10, (n, 1))}
    return x, u, {**u, **e0}


def zero_rate_net(stats):
    """Model whose learned airspeed and path-angle rates are exactly zero."""
    net = M.NodeFdm(stats, seed=0)
    p = net.layers["derivative"].params
    for h in ("d_tas", "d_fpa"):
        p[f"head.{h}.weight"].value[:] = 0.0
        p[f"head.{h}.bias"].value[:] = -stats.mean[h] / stats.std[h]
    return net


class TestTrajectoryLayer:
    def test_level_zero_vs(self):
        rng = np.random.default_rng(0)
        x, _, d = random_inputs(rng)
        x["fpa"] = np.zeros((4, 1))
        assert not M.trajectory_layer(x, d, d)["vs"].any()

    def test_calm_ground_speed(self):
        x, _, d = random_inputs(np.random.default_rng(1))
        d["wind_par"] = np.zeros((4, 1))
        np.testing.assert_array_equal(M.trajectory_layer(x, d, d)["gs"], x["tas"])

    def test_mach_oracle(self):
        x, _, d = random_inputs(np.random.default_rng(2), n=1)
        x["tas"], d["oat"] = np.array([[240.0]]), np.array([[220.0]])
        m = M.trajectory_layer(x, d, d)["mach"][0, 0]
        assert m == pytest.approx(240.0 / math.sqrt(1.4 * 287.05287 * 220.0), abs=1e-12)
        assert m == pytest.approx(0.807, abs=1e-3)

    def test_cas_and_targets(self):
        x, _, d = random_inputs(np.random.default_rng(3))
        e1 = M.trajectory_layer(x, d, d)
        np.testing.assert_allclose(e1["cas"], atm.tas_to_cas(x["tas"], x["alt"], d["oat"]),
                                   rtol=1e-12)
        np.testing.assert_array_equal(e1["dh_sel"], d["sel_alt"] - x["alt"])
        np.testing.assert_array_equal(e1["dv_sel"], d["sel_spd"] - e1["cas"])

    def test_tensor_and_array_paths_agree(self):
        x, _, d = random_inputs(np.random.default_rng(4))
        plain = M.trajectory_layer(x, d, d)
        tens = M.trajectory_layer({k: ad.parameter(v) for k, v in x.items()}, d, d)
        for k, v in plain.items():
            got = tens[k].value if isinstance(tens[k], ad.Tensor) else tens[k]
            np.testing.assert_allclose(got, v, rtol=1e-13)

    def test_pressure_op_gradient(self):
        h = ad.parameter(np.array([[1000.0], [10999.0], [12000.0]]))
        _, (g,) = ad.grad(lambda: ad.total(M.isa_pressure_op(h)), [h])
        np.testing.assert_allclose(g, atm.isa_pressure_derivative(h.value), rtol=1e-12)


class TestStepDerivative:
    def test_forced_fuel_flow(self, norm_stats):
        net = M.NodeFdm(norm_stats, seed=1)
        head = net.layers["engine"].params
        st = norm_stats
        target = 0.5
        raw = math.log(math.expm1(net.fuel_beta * target)) / net.fuel_beta
        head["head.fuel_flow.weight"].value[:] = 0.0
        head["head.fuel_flow.bias"].value[:] = (raw - st.mean["fuel_flow"]) / st.std["fuel_flow"]
        x, _, d = random_inputs(np.random.default_rng(5))
        dm = net.step_derivative(x, d, d)["mass"].value
        np.testing.assert_allclose(dm, -0.5, rtol=1e-12)

    def test_level_no_climb(self, net):
        x, _, d = random_inputs(np.random.default_rng(6))
        x["fpa"] = np.zeros((4, 1))
        dx = net.step_derivative(x, d, d)
        assert not np.asarray(dx["alt"]).any()

    def test_tied_derivatives(self, net):
        rng = np.random.default_rng(7)
        x, _, d = random_inputs(rng, n=64)
        dx = net.step_derivative(x, d, d)
        np.testing.assert_allclose(dx["alt"], x["tas"] * np.sin(x["fpa"]), rtol=1e-12)
        np.testing.assert_allclose(dx["dist"], x["tas"] - d["wind_par"], rtol=1e-12)

    def test_bit_reproducible(self, norm_stats):
        x, _, d = random_inputs(np.random.default_rng(8))
        a = M.NodeFdm(norm_stats, seed=11).step_derivative(x, d, d)
        b = M.NodeFdm(norm_stats, seed=11).step_derivative(x, d, d)
        for k in a:
            assert np.asarray(ad.as_tensor(a[k]).value).tobytes() == \
                np.asarray(ad.as_tensor(b[k]).value).tobytes()


class TestRollout:
    def test_constant_field(self):
        c = {"alt": 1.5, "tas": -0.25}
        field = lambda x, u, e: ({k: np.full((1, 1), v) for k, v in c.items()}, {})
        x0 = {"alt": np.array([[100.0]]), "tas": np.array([[200.0]])}
        roll = M.euler_rollout(field, x0, {"d": np.zeros((1, 120))}, 120, 4.0)
        for k, v in c.items():
            expected = x0[k][0, 0]
            for _ in range(120):
                expected = expected + 4.0 * v
            assert roll.state_array(k)[0, -1] == expected
            assert abs(roll.state_array(k)[0, -1] - (x0[k][0, 0] + 120 * 4.0 * v)) <= 1e-12 * 1e3

    def test_linear_field(self):
        a = -0.01
        field = lambda x, u, e: ({"alt": a * x["alt"]}, {})
        roll = M.euler_rollout(field, {"alt": np.array([[3.0]])}, {}, 120, 4.0)
        closed = 3.0 * (1 + 4.0 * a) ** np.arange(121)
        np.testing.assert_allclose(roll.state_array("alt")[0], closed, rtol=1e-12)

    def test_composition_bit_identical(self, net, flight):
        full = net.rollout(state0(flight), drivers_from(flight, 120), 120)
        first = net.rollout(state0(flight), drivers_from(flight, 60), 60)
        mid = {k: first.state_array(k)[:, -1:] for k in first.states}
        second = net.rollout(mid, drivers_from(flight, 60, 60), 60)
        for k in data.STATE:
            joined = np.concatenate([first.state_array(k), second.state_array(k)[:, 1:]], axis=1)
            assert joined.tobytes() == full.state_array(k).tobytes()

    def test_mass_non_increasing(self, norm_stats, flight):
        for seed in range(3):
            net = M.NodeFdm(norm_stats, seed=seed)
            roll = net.rollout(state0(flight), drivers_from(flight, 200), 200)
            assert np.all(np.diff(roll.state_array("mass")) <= 0.0)

    def test_zero_rates_keep_state(self, norm_stats, flight):
        net = zero_rate_net(norm_stats)
        x0 = state0(flight, 100)
        x0["fpa"] = np.zeros((1, 1))
        drv = drivers_from(flight, 60, 100)
        drv["wind_par"] = np.full((1, 60), x0["tas"][0, 0])
        roll = net.rollout(x0, drv, 60)
        for k in ("alt", "dist", "fpa", "tas"):
            np.testing.assert_allclose(roll.state_array(k), x0[k][0, 0], atol=1e-12)

    def test_altitude_abort(self):
        field = lambda x, u, e: ({"alt": np.full((1, 1), -50.0)}, {})
        with pytest.raises(M.RolloutError) as info:
            M.euler_rollout(field, {"alt": np.array([[0.0]])}, {}, 10, 4.0, check_altitude=True)
        assert info.value.step == 0

    def test_non_finite_abort(self):
        field = lambda x, u, e: ({"alt": np.full((1, 1), np.inf)}, {})
        with pytest.raises(M.RolloutError, match="non-finite"):
            M.euler_rollout(field, {"alt": np.array([[0.0]])}, {}, 3, 4.0)

    def test_predict_flight_horizon(self, norm_stats, flight):
        pred = zero_rate_net(norm_stats).predict_flight(flight.slice(0, 150))
        assert len(pred) == 150
        assert pred["alt"][0] == flight["alt"][0]
        pred.validate(min_records=1)


class TestLoss:
    def _roll(self, values):
        return M.Rollout({"alt": [ad.constant(v) for v in values.T[:, :, None]]}, {})

    def test_perfect_prediction(self, net, flight):
        seqs = data.slice_sequences(flight)[:2]
        batch = M.stack_sequences(seqs)
        w = M.LossWeights.from_stats(net.stats)
        roll = self._roll(batch["alt"])
        loss = M.composite_loss(roll, batch, M.LossWeights({"alt": w.weights["alt"]}))
        assert loss.value[0, 0] == 0.0

    def test_hand_value(self):
        truth = {"alt": np.zeros((3, 10))}
        roll = self._roll(np.ones((3, 10)))
        weights = M.LossWeights.from_stats(data.NormStats({"alt": 0.0}, {"alt": 2.0}).__class__(
            {f: 0.0 for f in M.LOSS_FEATURES}, {f: 2.0 for f in M.LOSS_FEATURES}))
        one = M.LossWeights({"alt": weights.weights["alt"]})
        assert M.composite_loss(roll, truth, one).value[0, 0] == pytest.approx(0.25, abs=1e-15)

    def test_linear_in_weights(self, net, flight):
        batch = M.stack_sequences(data.slice_sequences(flight)[:3])
        w = M.LossWeights.from_stats(net.stats)
        a = M.sequence_loss(net, batch, w).value[0, 0]
        b = M.sequence_loss(net, batch, w.scaled(2.0)).value[0, 0]
        assert b == pytest.approx(2 * a, rel=1e-13)

    def test_conventions(self, norm_stats):
        var = M.LossWeights.from_stats(norm_stats, "inverse_variance")
        std = M.LossWeights.from_stats(norm_stats, "inverse_std")
        assert "dist" not in var.weights
        assert var.weights["alt"] == pytest.approx(1 / norm_stats.std["alt"] ** 2)
        assert std.weights["alt"] == pytest.approx(1 / norm_stats.std["alt"])
        assert "dist" in M.LossWeights.from_stats(norm_stats, include_distance=True).weights
        with pytest.raises(ValueError):
            M.LossWeights.from_stats(norm_stats, "median")

    def test_short_truth(self, net, flight):
        batch = M.stack_sequences(data.slice_sequences(flight)[:1])
        roll = net.rollout({k: batch[k][:, :1] for k in data.STATE},
                           {k: batch[k] for k in M.DRIVERS}, 60)
        short = {k: v[:, :30] for k, v in batch.items()}
        with pytest.raises(ValueError, match="steps"):
            M.composite_loss(roll, short, M.LossWeights.from_stats(net.stats), 60)


class TestCheckpoint:
    def test_round_trip(self, net, flight, tmp_path):
        path = tmp_path / "ck.json"
        M.save_checkpoint(net.to_checkpoint(M.LossWeights.from_stats(net.stats)), path)
        back = M.NodeFdm.from_checkpoint(M.load_checkpoint(path))
        a = net.rollout(state0(flight), drivers_from(flight, 80), 80)
        b = back.rollout(state0(flight), drivers_from(flight, 80), 80)
        for c in data.STATE:
            assert a.state_array(c).tobytes() == b.state_array(c).tobytes()
        for c in a.intermediates:
            assert a.intermediate_array(c).tobytes() == b.intermediate_array(c).tobytes()

    def test_tampered_spec(self, net):
        ck = net.to_checkpoint()
        ck["layers"]["angle"]["spec"]["hidden"] = 12
        with pytest.raises(ValueError, match="hash"):
            M.NodeFdm.from_checkpoint(ck)

    def test_wrong_version(self, net):
        ck = net.to_checkpoint()
        ck["version"] = 99
        with pytest.raises(ValueError, match="version"):
            M.NodeFdm.from_checkpoint(ck)

    def test_not_a_checkpoint(self):
        with pytest.raises(ValueError):
            M.NodeFdm.from_checkpoint({"format": "other"})
