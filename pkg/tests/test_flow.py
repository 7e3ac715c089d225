import math

import numpy as np
import pytest

from eoslab.flow import FlowConfig, integrate_fixed, integrate_flow, rk4_step
from eoslab.quadratic import QuadraticObjective, QuadraticSpec

from conftest import small_mlp
from oracles import rk4_linear_factor


def test_rk4_one_step_scalar():
    f = QuadraticObjective(QuadraticSpec((1.0,)))
    assert rk4_step(f, np.array([1.0]), 0.1)[0] == pytest.approx(0.9048375, abs=1e-7)


@pytest.mark.parametrize("a,h", [(0.3, 0.5), (20.0, 0.01), (2.0, 1.2)])
def test_rk4_matches_quartic_factor(a, h):
    f = QuadraticObjective(QuadraticSpec((a,)))
    assert rk4_step(f, np.array([1.0]), h)[0] == pytest.approx(rk4_linear_factor(a * h), rel=1e-14)


def test_rk4_small_step_is_negative_gradient():
    f, theta, _ = small_mlp()
    g = f.gradient(theta)
    for h in (1e-3, 1e-4):
        d = (rk4_step(f, theta, h) - theta) / h
        assert np.linalg.norm(d + g) < 50 * h * np.linalg.norm(g)


def test_rk4_rejects_nonpositive_step():
    f = QuadraticObjective(QuadraticSpec((1.0,)))
    with pytest.raises(ValueError):
        rk4_step(f, np.array([1.0]), 0.0)


def test_order_four():
    f = QuadraticObjective(QuadraticSpec((20.0, 1.0)))
    x0 = np.array([1.0, 1.0])
    exact = np.exp(-np.array([20.0, 1.0]))
    e1 = np.linalg.norm(integrate_fixed(f, x0, 0.02, 50) - exact)
    e2 = np.linalg.norm(integrate_fixed(f, x0, 0.01, 100) - exact)
    assert 12 <= e1 / e2 <= 20


def test_flow_config_validation():
    with pytest.raises(ValueError):
        FlowConfig(alpha=2.0)
    with pytest.raises(ValueError):
        FlowConfig(save_every=0)


class TestIntegrateFlow:
    def test_quadratic_analytic(self):
        f = QuadraticObjective(QuadraticSpec((20.0, 1.0)))
        trace = integrate_flow(f, [1.0, 1.0], FlowConfig(alpha=0.05, save_every=0.5, max_time=1.0))
        assert trace.label == "gradient_flow" and trace.status == "max_time"
        assert trace.final_state.time == 1.0
        np.testing.assert_allclose(trace.final_state.theta, np.exp(-np.array([20.0, 1.0])), rtol=1e-5)
        assert [r.time for r in trace.records] == [0.0, 0.5, 1.0]

    def test_loss_non_increasing(self):
        f, theta, _ = small_mlp()
        trace = integrate_flow(f, theta, FlowConfig(save_every=0.5, max_time=20.0))
        assert not trace.diverged
        assert np.all(np.diff(trace.losses) <= 0)

    def test_alpha_self_consistency(self):
        f, theta, _ = small_mlp()
        a = integrate_flow(f, theta, FlowConfig(alpha=1.0, save_every=5.0, max_time=10.0))
        b = integrate_flow(f, theta, FlowConfig(alpha=0.5, save_every=5.0, max_time=10.0))
        assert a.records[-1].loss == pytest.approx(b.records[-1].loss, rel=1e-3)
        assert b.meta["rk_steps"] > a.meta["rk_steps"]

    def test_nonsmooth_label(self):
        f, theta, _ = small_mlp(activation="relu")
        trace = integrate_flow(f, theta, FlowConfig(max_time=1.0))
        assert trace.label == "runge_kutta"

    def test_step_growth_is_clamped(self):
        # Sharpness drops to zero after one step, so h would jump without the clamp.
        f = QuadraticObjective(QuadraticSpec((10.0,)))
        trace = integrate_flow(f, [1.0], FlowConfig(alpha=0.5, refresh_every=1, save_every=100.0,
                                                    max_time=100.0, max_steps=5))
        assert trace.status == "max_steps"
        assert trace.final_state.time == pytest.approx(0.05 * 5)

    def test_targets_and_diagnostics(self):
        f, theta, _ = small_mlp()
        seen = []
        cfg = FlowConfig(save_every=1.0, max_time=500.0, target_loss=0.2)
        trace = integrate_flow(f, theta, cfg, diagnostics=[("gnorm", lambda f, s: np.linalg.norm(f.gradient(s.theta)))],
                               callback=lambda s, r: seen.append(r.time))
        assert trace.status == "reached_target"
        assert trace.records[-1].loss <= 0.2
        assert len(trace.diagnostic("gnorm")) == len(trace.records) == len(seen)
        assert all(r.sharpness is not None for r in trace.records)
        for r in trace.records[:-1]:
            assert math.isclose(r.time, round(r.time))
