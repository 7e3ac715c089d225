import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from eoslab import autodiff, losses, models, tasks
from eoslab.quadratic import QuadraticObjective, QuadraticSpec

from conftest import small_mlp
from oracles import fd_gradient, fd_hvp, fd_second_diagonal, reference_cross_entropy, \
    reference_mse, reference_outputs, rel_err

SMOOTH = ("tanh", "elu", "softplus")


class TestValue:
    def test_hand_evaluable_quadratic(self):
        f = QuadraticObjective(QuadraticSpec((1.0,)))
        assert autodiff.value(f, [2.0]) == 2.0

    def test_zero_residual_mse(self):
        data = tasks.Dataset(np.eye(3), np.array([0, 1, 2]), "classification", classes=3)
        model = models.ModelSpec(input_dim=3, output_dim=3, hidden=(), activation="identity")
        f = models.build_computation(model, losses.LossSpec("mse", 3), data)
        params = [(np.eye(3), np.zeros(3))]
        assert f.value(f.flatten(params)) == 0.0

    def test_deep_linear_single_layer_interpolates(self):
        data = tasks.deep_linear_dataset(8, 4, seed=3)
        A = data.provenance["target_map"]
        model = models.ModelSpec.deep_linear(1, 4)
        f = models.build_computation(model, losses.LossSpec("mse", 4), data)
        assert f.value(A.ravel()) == pytest.approx(0.0, abs=1e-24)

    def test_nan_propagates(self):
        f, theta, _ = small_mlp()
        theta[0] = np.nan
        assert np.isnan(autodiff.value(f, theta))

    def test_dimension_mismatch(self):
        f, theta, _ = small_mlp()
        with pytest.raises(ValueError):
            autodiff.value(f, theta[:-1])
        with pytest.raises(ValueError):
            autodiff.gradient(f, np.append(theta, 0.0))
        with pytest.raises(ValueError):
            autodiff.hvp(f, theta, theta[:-1])

    @pytest.mark.parametrize("activation", ["tanh", "relu", "softplus"])
    def test_matches_reference_forward_mse(self, activation):
        f, theta, model = small_mlp(activation)
        widths = [model.input_dim, *model.hidden, model.output_dim]
        out = reference_outputs(widths, activation, theta, f.inputs)
        np.testing.assert_allclose(f.outputs(theta), out, rtol=1e-12, atol=1e-12)
        assert f.value(theta) == pytest.approx(reference_mse(out, f.targets), rel=1e-12)

    def test_matches_reference_cross_entropy(self):
        f, theta, model = small_mlp("elu", "cross_entropy")
        widths = [model.input_dim, *model.hidden, model.output_dim]
        out = reference_outputs(widths, "elu", theta, f.inputs)
        assert f.value(theta) == pytest.approx(reference_cross_entropy(out, f.targets), rel=1e-12)

    def test_deterministic_bitwise(self):
        f, theta, _ = small_mlp()
        v1, g1 = f.value_and_gradient(theta)
        v2, g2 = f.value_and_gradient(theta.copy())
        assert v1 == v2 and np.array_equal(g1, g2)


class TestGradient:
    def test_quadratic_is_ax_plus_b(self, rng):
        Q, _ = np.linalg.qr(rng.standard_normal((4, 4)))
        spec = QuadraticSpec((3.0, 1.0, 0.5, -2.0), basis=Q, linear=rng.standard_normal(4))
        f = QuadraticObjective(spec)
        x = rng.standard_normal(4)
        np.testing.assert_allclose(f.gradient(x), spec.A @ x + spec.linear, rtol=1e-14)

    def test_zero_at_quadratic_optimum(self, rng):
        spec = QuadraticSpec((3.0, 1.0), linear=np.array([1.0, -2.0]))
        f = QuadraticObjective(spec)
        np.testing.assert_allclose(f.gradient(spec.minimizer()), 0.0, atol=1e-15)

    @pytest.mark.parametrize("activation", SMOOTH)
    @pytest.mark.parametrize("loss", ["mse", "cross_entropy", "logistic"])
    def test_finite_differences(self, activation, loss):
        f, theta, _ = small_mlp(activation, loss)
        assert f.dim <= 200
        rng = np.random.default_rng(0)
        for _ in range(3):
            point = theta + 0.3 * rng.standard_normal(f.dim)
            assert rel_err(f.gradient(point), fd_gradient(f.value, point)) < 1e-5

    @pytest.mark.parametrize("activation", ["relu", "hardtanh"])
    def test_finite_differences_away_from_kinks(self, activation):
        f, theta, _ = small_mlp(activation)
        rng = np.random.default_rng(1)
        kinks = (0.0,) if activation == "relu" else (-1.0, 1.0)
        checked = 0
        for _ in range(40):
            point = theta + 0.3 * rng.standard_normal(f.dim)
            pre = np.concatenate([z.ravel() for z in f.preactivations(point)])
            if min(np.min(np.abs(pre - k)) for k in kinks) < 1e-3:
                continue
            # Steps small enough that no pre-activation can cross a kink.
            assert rel_err(f.gradient(point), fd_gradient(f.value, point, rel_step=1e-6)) < 1e-5
            v = rng.standard_normal(f.dim)
            assert rel_err(f.hvp(point, v), fd_hvp(f.gradient, point, v, eps=1e-6)) < 1e-4
            checked += 1
        assert checked >= 5

    def test_ntk_parameterization_gradient(self):
        f, theta, _ = small_mlp("tanh", parameterization="ntk")
        assert rel_err(f.gradient(theta), fd_gradient(f.value, theta)) < 1e-5


class TestHVP:
    def test_quadratic(self, rng):
        spec = QuadraticSpec((5.0, 2.0, -1.0))
        f = QuadraticObjective(spec)
        v = rng.standard_normal(3)
        np.testing.assert_array_equal(f.hvp(rng.standard_normal(3), v), spec.A @ v)

    @pytest.mark.parametrize("activation", SMOOTH)
    @pytest.mark.parametrize("loss", ["mse", "cross_entropy", "logistic"])
    def test_finite_differences(self, activation, loss):
        f, theta, _ = small_mlp(activation, loss)
        rng = np.random.default_rng(2)
        for _ in range(3):
            point = theta + 0.3 * rng.standard_normal(f.dim)
            v = rng.standard_normal(f.dim)
            assert rel_err(f.hvp(point, v), fd_hvp(f.gradient, point, v)) < 1e-4

    @pytest.mark.parametrize("activation", SMOOTH)
    def test_symmetry(self, activation):
        f, theta, _ = small_mlp(activation, "cross_entropy")
        rng = np.random.default_rng(3)
        u, v = rng.standard_normal((2, f.dim))
        a, b = u @ f.hvp(theta, v), v @ f.hvp(theta, u)
        assert abs(a - b) <= 1e-8 * max(abs(a), abs(b))

    def test_deep_linear_finite_differences(self):
        data = tasks.deep_linear_dataset(10, 4, seed=0)
        model = models.ModelSpec.deep_linear(3, 4, seed=1)
        f = models.build_computation(model, losses.LossSpec("mse", 4), data)
        theta = models.init_params(model)
        v = np.random.default_rng(0).standard_normal(f.dim)
        assert rel_err(f.hvp(theta, v), fd_hvp(f.gradient, theta, v)) < 1e-6


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), a=st.floats(-3, 3), b=st.floats(-3, 3),
       activation=st.sampled_from(SMOOTH), loss=st.sampled_from(["mse", "cross_entropy"]))
def test_hvp_symmetric_and_linear(seed, a, b, activation, loss):
    f, theta, _ = small_mlp(activation, loss, seed=seed % 7)
    rng = np.random.default_rng(seed)
    theta = theta + 0.5 * rng.standard_normal(f.dim)
    u, v = rng.standard_normal((2, f.dim))
    hu, hv = f.hvp(theta, u), f.hvp(theta, v)
    x, y = u @ hv, v @ hu
    assert abs(x - y) <= 1e-8 * max(abs(x), abs(y), 1e-12)
    lin = f.hvp(theta, a * v + b * u)
    ref = a * hv + b * hu
    assert np.linalg.norm(lin - ref) <= 1e-12 * max(np.linalg.norm(ref), np.linalg.norm(lin), 1e-300) \
        + 1e-15 * (abs(a) * np.linalg.norm(hv) + abs(b) * np.linalg.norm(hu))


class TestDenseHessian:
    def test_quadratic_exact(self, rng):
        Q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
        spec = QuadraticSpec((4.0, 2.0, 1.0), basis=Q)
        f = QuadraticObjective(spec)
        np.testing.assert_array_equal(autodiff.dense_hessian(f, np.zeros(3)), 0.5 * (spec.A + spec.A.T))

    def test_asymmetry_small_before_symmetrizing(self):
        f, theta, _ = small_mlp("tanh", "cross_entropy")
        H = autodiff.dense_hessian(f, theta, symmetrize=False)
        assert np.max(np.abs(H - H.T)) < 1e-8 * np.max(np.abs(H))

    def test_diagonal_matches_second_differences(self):
        f, theta, _ = small_mlp("softplus", "mse")
        H = autodiff.dense_hessian(f, theta)
        for i in range(0, f.dim, 7):
            fd = fd_second_diagonal(f.value, theta, i)
            assert abs(H[i, i] - fd) <= 1e-3 * max(abs(fd), 1e-3)

    def test_refuses_large_models(self):
        f, theta, _ = small_mlp()
        with pytest.raises(ValueError, match="oracle limit"):
            autodiff.dense_hessian(f, theta, limit=f.dim - 1)


class TestGaussNewtonProducts:
    def test_jvp_vjp_adjoint(self):
        f, theta, _ = small_mlp("tanh", "cross_entropy")
        rng = np.random.default_rng(4)
        v = rng.standard_normal(f.dim)
        u = rng.standard_normal((f.n, 3))
        assert np.sum(u * f.jvp(theta, v)) == pytest.approx(v @ f.vjp(theta, u), rel=1e-12)

    def test_jvp_matches_output_differences(self):
        f, theta, _ = small_mlp("elu", "mse")
        v = np.random.default_rng(5).standard_normal(f.dim)
        eps = 1e-6
        fd = (f.outputs(theta + eps * v) - f.outputs(theta - eps * v)) / (2 * eps)
        assert rel_err(f.jvp(theta, v), fd) < 1e-6

    def test_mse_gauss_newton_equals_hessian_for_linear_model(self):
        data = tasks.deep_linear_dataset(10, 4, seed=0)
        model = models.ModelSpec.deep_linear(1, 4)
        f = models.build_computation(model, losses.LossSpec("mse", 4), data)
        theta = models.init_params(model)
        v = np.random.default_rng(0).standard_normal(f.dim)
        np.testing.assert_allclose(f.gn_product(theta, v), f.hvp(theta, v), rtol=1e-12, atol=1e-14)
