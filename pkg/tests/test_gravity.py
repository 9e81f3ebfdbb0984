"""Mascon ground truth, quadrature acceleration, datasets and density-field training."""

import numpy as np
import pytest

from neuralbodies.diffcore import MlpModel, Tape, backward, forward
from neuralbodies.errors import ConfigurationError, SingularityError
from neuralbodies.geometry import MasconModel, make_cube, make_icosphere, mesh_to_mascons
from neuralbodies.gravity import (AccelerationDataset, DensityField, GeodesyConfig, QuadratureGrid,
                                  dataset_loss, evaluate_density, evaluate_field_error,
                                  generate_acceleration_dataset, geodesy_loss, mascon_acceleration,
                                  predicted_acceleration, train_geodesynet)


def point_mass(m=1.0, at=(0.0, 0.0, 0.0)):
    return MasconModel(np.array([at], float), np.array([m]))


def zeroed(field):
    field.model.set_parameters({k: np.zeros_like(v) for k, v in field.model.parameters().items()})
    return field


def constant_field(c, hidden=(4,)):
    f = zeroed(DensityField.create(hidden, 0, "softplus"))
    # softplus(b) = c  =>  b = log(exp(c) - 1)
    p = f.model.parameters()
    p[f"layers.{len(hidden)}.bias"] = np.array([np.log(np.expm1(c))])
    f.model.set_parameters(p)
    return f


@pytest.fixture(scope="module")
def sphere_truth():
    return mesh_to_mascons(make_icosphere(1.0, 3), 0.1)


# mascon ground truth ---------------------------------------------------------------

def test_single_mascon_inverse_square():
    assert mascon_acceleration(point_mass(), np.array([2.0, 0, 0])) == pytest.approx([-0.25, 0, 0])


def test_symmetric_pair_on_bisector():
    m = MasconModel(np.array([[0, 1.0, 0], [0, -1.0, 0]]), np.array([0.5, 0.5]))
    a = mascon_acceleration(m, np.array([3.0, 0, 0]))
    assert a[0] < 0
    assert a[1] == pytest.approx(0.0, abs=1e-15) and a[2] == 0.0


def test_sphere_shell_theorem(sphere_truth):
    a = mascon_acceleration(sphere_truth, np.array([2.0, 0, 0]))
    assert np.linalg.norm(a - [-0.25, 0, 0]) / 0.25 < 0.01


def test_third_law_symmetry(sphere_truth):
    X = np.array([1.7, -0.4, 0.9])
    field_at_x = mascon_acceleration(sphere_truth, X)
    # force of a unit mass at X on each mascon, summed, is equal and opposite
    back = sum(m * mascon_acceleration(point_mass(1.0, X), p)
               for p, m in zip(sphere_truth.points, sphere_truth.masses))
    assert np.allclose(field_at_x, -back, rtol=1e-12, atol=1e-15)


def test_mascon_singularity():
    with pytest.raises(SingularityError):
        mascon_acceleration(point_mass(), np.array([0.0, 0.0, 1e-12]))


def test_batched_mascon_matches_single(sphere_truth):
    X = np.random.default_rng(0).normal(size=(5, 3)) * 3
    batch = mascon_acceleration(sphere_truth, X)
    for x, a in zip(X, batch):
        assert np.allclose(mascon_acceleration(sphere_truth, x), a, rtol=1e-13)


# quadrature ----------------------------------------------------------------------

@pytest.mark.parametrize("grid", [QuadratureGrid.regular(1.0, 8), QuadratureGrid.regular(1.5, 5),
                                  QuadratureGrid.low_discrepancy(1.0, 512, seed=1)])
def test_grid_weights_and_bounds(grid):
    h = grid.halfwidth
    assert grid.weights.sum() == pytest.approx((2 * h) ** 3, rel=1e-12)
    assert np.all(grid.weights > 0)
    assert np.all(np.abs(grid.nodes) <= h)


def test_zero_field_zero_acceleration():
    f = zeroed(DensityField.create((5,), 0, "softplus"))
    f.model.set_parameters({**f.model.parameters(), "layers.1.bias": np.array([-1e3])})
    g = QuadratureGrid.regular(1.0, 8)
    assert np.allclose(predicted_acceleration(f, np.array([[2.0, 0, 0]]), g), 0.0, atol=1e-300)


def test_constant_field_equals_mascon_sum():
    c = 0.3
    f = constant_field(c)
    g = QuadratureGrid.regular(1.0, 10)
    rho = forward(f.model, g.nodes)[:, 0]
    truth = MasconModel(g.nodes, g.weights * rho)
    X = np.array([[2.0, 0.3, -0.1], [0.0, 2.5, 1.0]])
    a_hat, a = predicted_acceleration(f, X, g), mascon_acceleration(truth, X)
    assert np.abs(a_hat - a).max() <= 1e-12 * np.abs(a).max()


def test_taped_prediction_matches_plain():
    f = DensityField.create((6, 6), 3, "abs")
    g = QuadratureGrid.regular(1.0, 8)
    X = np.random.default_rng(1).normal(size=(4, 3)) * 3
    X[np.linalg.norm(X, axis=1) < 2] *= 2
    tape = Tape()
    assert np.allclose(predicted_acceleration(f, X, g, tape).value, predicted_acceleration(f, X, g),
                       rtol=1e-13, atol=1e-16)


def test_prediction_linear_in_density():
    f = DensityField.create((6,), 2, "abs")
    g = QuadratureGrid.regular(1.0, 8)
    X = np.array([[2.0, 0.5, 0.0]])
    rho = f.node_density(g)
    a1 = predicted_acceleration(f, X, g, density=rho)
    a3 = predicted_acceleration(f, X, g, density=3.0 * rho)
    assert np.allclose(a3, 3.0 * a1, rtol=1e-13)


def test_node_singularity():
    g = QuadratureGrid.regular(1.0, 4)
    f = DensityField.create((4,), 0, "abs")
    with pytest.raises(SingularityError):
        predicted_acceleration(f, g.nodes[:1] + 1e-4, g)


def test_quadrature_refinement_cauchy():
    f = DensityField.create((8,), 5, "softplus")
    X = np.array([[1.8, 0.4, -0.3]])
    a = [predicted_acceleration(f, X, QuadratureGrid.regular(1.0, n))[0] for n in (8, 16, 32, 64)]
    diffs = [np.linalg.norm(a[k + 1] - a[k]) for k in range(3)]
    assert diffs[0] > diffs[1] > diffs[2]


# datasets ------------------------------------------------------------------------

def test_dataset_rejects_empty_and_intersecting(sphere_truth):
    with pytest.raises(ConfigurationError):
        generate_acceleration_dataset(sphere_truth, 0)
    with pytest.raises(ConfigurationError):
        generate_acceleration_dataset(sphere_truth, 10, (0.5, 3.0), body_radius=1.0)


def test_dataset_in_shell_and_deterministic(sphere_truth):
    d = generate_acceleration_dataset(sphere_truth, 300, (1.5, 3.0), seed=4, body_radius=1.0)
    r = np.linalg.norm(d.positions, axis=1)
    assert np.all((r >= 1.5) & (r <= 3.0))
    again = generate_acceleration_dataset(sphere_truth, 300, (1.5, 3.0), seed=4, body_radius=1.0)
    assert again.positions.tobytes() == d.positions.tobytes()
    assert again.accelerations.tobytes() == d.accelerations.tobytes()


def test_dataset_shell_theorem_mass(sphere_truth):
    d = generate_acceleration_dataset(sphere_truth, 500, (1.5, 3.0), seed=0, body_radius=1.0)
    gm = np.linalg.norm(d.accelerations, axis=1) * np.linalg.norm(d.positions, axis=1) ** 2
    assert np.mean(gm) == pytest.approx(1.0, rel=0.02)


def test_dataset_noise_hook(sphere_truth):
    clean = generate_acceleration_dataset(sphere_truth, 50, seed=1, body_radius=1.0)
    noisy = generate_acceleration_dataset(sphere_truth, 50, seed=1, body_radius=1.0, noise_sigma=1e-3)
    assert np.array_equal(clean.positions, noisy.positions)
    assert 0 < np.abs(noisy.accelerations - clean.accelerations).max() < 1e-2


def test_dataset_csv_round_trip(tmp_path, sphere_truth):
    d = generate_acceleration_dataset(sphere_truth, 20, seed=2, body_radius=1.0)
    d.save_csv(tmp_path / "g.csv")
    assert (tmp_path / "g.csv").read_text().splitlines()[0] == "x,y,z,ax,ay,az"
    back = AccelerationDataset.load_csv(tmp_path / "g.csv")
    assert back.positions.tobytes() == d.positions.tobytes()
    assert back.accelerations.tobytes() == d.accelerations.tobytes()


# training ------------------------------------------------------------------------

@pytest.fixture(scope="module")
def small_setup():
    grid = QuadratureGrid.regular(1.0, 8)
    truth = mesh_to_mascons(make_icosphere(0.8, 2), 0.1)
    data = generate_acceleration_dataset(truth, 40, (1.5, 3.0), seed=3, body_radius=0.8)
    return grid, truth, data


def test_loss_gradient_matches_finite_differences(small_setup):
    grid, _, data = small_setup
    f = DensityField.create((5, 5), 1, "abs")
    batch = data[:5]
    tape = Tape()
    loss = geodesy_loss(f, batch, grid, tape)
    grads = backward(tape, output=loss)
    params = f.model.parameters()
    h = 1e-6
    for name in params:
        for idx in list(np.ndindex(params[name].shape))[:4]:
            p = {k: v.copy() for k, v in params.items()}
            p[name][idx] += h
            f.model.set_parameters(p)
            fp = dataset_loss(f, batch, grid)
            p[name][idx] -= 2 * h
            f.model.set_parameters(p)
            fm = dataset_loss(f, batch, grid)
            f.model.set_parameters(params)
            fd = (fp - fm) / (2 * h)
            assert abs(grads[name][idx] - fd) / max(1.0, abs(fd)) < 1e-5


def test_perfect_field_is_fixed_point(small_setup):
    grid = small_setup[0]
    f = DensityField.create((5,), 7, "abs")
    rho = forward(f.model, grid.nodes)[:, 0]
    truth = MasconModel(grid.nodes, grid.weights * rho)
    data = generate_acceleration_dataset(truth, 20, (2.0, 3.0), seed=0)
    assert dataset_loss(f, data, grid) < 1e-20
    before = f.model.parameters()
    train_geodesynet(data, f, grid, GeodesyConfig(iterations=1, batch_size=20, monitor_every=1))
    for k, v in f.model.parameters().items():
        assert np.abs(v - before[k]).max() < 1e-6


def test_one_step_descends(small_setup):
    grid, _, data = small_setup
    f = DensityField.create((5,), 2, "abs")
    loss0 = dataset_loss(f, data, grid)
    train_geodesynet(data, f, grid, GeodesyConfig(iterations=1, batch_size=len(data), lr=1e-4,
                                                  monitor_every=1))
    assert dataset_loss(f, data, grid) < loss0


def test_training_history_and_best_checkpoint(small_setup):
    grid, _, data = small_setup
    f = DensityField.create((6,), 0, "abs")
    f, res, _ = train_geodesynet(data, f, grid, GeodesyConfig(iterations=30, batch_size=10,
                                                              monitor_every=10))
    assert len(res.history) == 30 and np.all(np.isfinite(res.history))
    assert dataset_loss(f, data, grid) == pytest.approx(res.best_loss, rel=1e-12)
    assert res.best_loss == min(v for _, v in res.monitor)


def test_training_needs_ten_samples(small_setup):
    grid, _, data = small_setup
    with pytest.raises(ConfigurationError):
        train_geodesynet(data[:9], DensityField.create((4,), 0), grid)


# density evaluation --------------------------------------------------------------

def test_zero_network_absolute_density():
    f = zeroed(DensityField.create((4,), 0, "abs"))
    p = np.random.default_rng(0).uniform(-1, 1, size=(20, 3))
    assert np.allclose(evaluate_density(f, p), 0.0, atol=1e-8)


def test_differential_zero_network():
    shape = make_cube(1.0)
    f = zeroed(DensityField.create((4,), 0, mode="differential", shape=shape, rho_u=2.5))
    assert evaluate_density(f, np.array([0.1, 0.2, -0.3])) == 2.5
    assert evaluate_density(f, np.array([0.9, 0.0, 0.0])) == 0.0


def test_differential_needs_shape_and_absolute_needs_transform():
    with pytest.raises(ConfigurationError):
        DensityField.create((4,), 0, mode="differential")
    with pytest.raises(ConfigurationError):
        DensityField(MlpModel.create(3, 1, (4,)))


def test_density_outside_domain_rejected():
    with pytest.raises(ConfigurationError):
        evaluate_density(DensityField.create((4,), 0), np.array([1.5, 0, 0]))


def test_field_error_of_exact_field():
    c = 0.2
    f = constant_field(c)
    g = QuadratureGrid.regular(1.0, 6)
    rho = forward(f.model, g.nodes)[:, 0]
    truth = MasconModel(g.nodes, g.weights * rho)
    test = generate_acceleration_dataset(truth, 20, (2.0, 3.0), seed=5)
    err = evaluate_field_error(f, truth, test, g)
    assert err["median"] < 1e-12 and err["p95"] < 1e-12


def test_density_field_round_trip():
    f = DensityField.create((4,), 0, "abs", domain_halfwidth=1.2)
    back = DensityField.from_dict(f.to_dict())
    assert back.domain_halfwidth == 1.2 and back.mode == "absolute"
    p = np.array([[0.1, 0.2, 0.3]])
    assert evaluate_density(back, p).tobytes() == evaluate_density(f, p).tobytes()
