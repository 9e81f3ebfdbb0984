"""Point clouds, the mesh distance oracle, SDF training, marching cubes and Chamfer distance."""

import numpy as np
import pytest
from scipy.stats import chisquare

from neuralbodies.diffcore import MlpModel, Tape, backward
from neuralbodies.errors import ConfigurationError
from neuralbodies.geometry import TriangleMesh, make_cube, make_icosphere, points_inside
from neuralbodies.shape import (PointCloud, SdfConfig, SdfNetwork, chamfer_distance,
                                closest_point_distance2, load_ply, marching_cubes, nearest_neighbors,
                                sample_lidar, save_ply, sdf_loss, sdf_metrics, sdf_oracle_mesh, train_sdf)

CUBE = make_cube(1.0)


def plane_net():
    """Phi(x) = z exactly: a single affine layer."""
    return SdfNetwork(MlpModel([{"weights": np.array([[0.0, 0.0, 1.0]]), "bias": np.zeros(1)}]))


def ball(x, radius=1.0):
    return radius - np.linalg.norm(x, axis=1)


# distance oracle -----------------------------------------------------------------

def test_cube_oracle_by_hand():
    assert sdf_oracle_mesh(CUBE, np.zeros(3)) == pytest.approx(0.5, abs=1e-15)
    assert sdf_oracle_mesh(CUBE, np.array([1.5, 0.0, 0.0])) == pytest.approx(-1.0, abs=1e-15)
    # outside a corner: distance is to the vertex
    assert sdf_oracle_mesh(CUBE, np.array([1.5, 1.5, 1.5])) == pytest.approx(-np.sqrt(3.0), abs=1e-12)


def test_icosphere_oracle():
    ico = make_icosphere(1.0, 4)
    assert sdf_oracle_mesh(ico, np.array([0.0, 0.0, 0.5])) == pytest.approx(0.5, rel=0.01)


def test_triangle_regions():
    tri = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    pts = np.array([[0.2, 0.2, 2.0], [-1.0, -1.0, 0.0], [0.5, -1.0, 0.0], [1.0, 1.0, 0.0], [2.0, 0.0, 1.0]])
    expected = [4.0, 2.0, 1.0, 0.5, 2.0]
    assert np.allclose(closest_point_distance2(pts, tri[None])[:, 0], expected, rtol=0, atol=1e-15)


def test_oracle_sign_and_lipschitz():
    ico = make_icosphere(1.0, 2)
    rng = np.random.default_rng(0)
    a = rng.uniform(-1.5, 1.5, size=(300, 3))
    b = a + rng.normal(scale=0.1, size=a.shape)
    fa, fb = sdf_oracle_mesh(ico, a), sdf_oracle_mesh(ico, b)
    assert np.array_equal(fa > 0, points_inside(ico, a))
    assert np.all(np.abs(fa - fb) <= np.linalg.norm(a - b, axis=1) + 1e-12)


# LiDAR sampling and point clouds ---------------------------------------------------

def test_lidar_points_on_surface():
    ico = make_icosphere(1.0, 2)
    cloud = sample_lidar(ico, 500, seed=1)
    tri = ico.triangles[cloud.faces]
    n = ico.face_normals()[cloud.faces]
    assert np.abs(np.einsum("ij,ij->i", cloud.points - tri[:, 0], n)).max() < 1e-12
    assert np.abs(sdf_oracle_mesh(ico, cloud.points[:50])).max() < 1e-9
    assert np.array_equal(cloud.normals, n)


def test_lidar_face_counts_area_weighted():
    # all twelve cube triangles have the same area
    cloud = sample_lidar(CUBE, 100_000, seed=2)
    counts = np.bincount(cloud.faces, minlength=12)
    assert chisquare(counts).pvalue > 1e-3


def test_lidar_deterministic_and_validated():
    a = sample_lidar(CUBE, 100, seed=3)
    assert a.points.tobytes() == sample_lidar(CUBE, 100, seed=3).points.tobytes()
    assert a.points.tobytes() != sample_lidar(CUBE, 100, seed=4).points.tobytes()
    with pytest.raises(ConfigurationError):
        sample_lidar(CUBE, 0)


def test_point_cloud_validation():
    with pytest.raises(ConfigurationError):
        PointCloud(np.zeros((0, 3)))
    with pytest.raises(ConfigurationError):
        PointCloud(np.zeros((2, 3)), np.ones((2, 3)))
    with pytest.raises(ConfigurationError):
        PointCloud(np.zeros((2, 3)), np.array([[0, 0, 1.0]]))


def test_csv_and_ply_round_trip(tmp_path):
    cloud = sample_lidar(make_icosphere(1.0, 1), 40, seed=5)
    cloud.save_csv(tmp_path / "c.csv")
    assert (tmp_path / "c.csv").read_text().splitlines()[0] == "x,y,z,nx,ny,nz"
    back = PointCloud.load(tmp_path / "c.csv")
    assert np.array_equal(back.points, cloud.points)
    assert np.allclose(back.normals, cloud.normals, rtol=0, atol=1e-15)
    save_ply(cloud, tmp_path / "c.ply")
    back = PointCloud.load(tmp_path / "c.ply")
    assert np.array_equal(back.points, cloud.points)
    bare = PointCloud(cloud.points)
    save_ply(bare, tmp_path / "bare.ply")
    assert load_ply(tmp_path / "bare.ply").normals is None


def test_binary_ply_rejected(tmp_path):
    p = tmp_path / "b.ply"
    p.write_text("ply\nformat binary_little_endian 1.0\nelement vertex 1\nproperty float x\nend_header\n")
    with pytest.raises(ConfigurationError):
        load_ply(p)


# network and loss ------------------------------------------------------------------

def test_network_shape_checks():
    with pytest.raises(ConfigurationError):
        SdfNetwork(MlpModel.create(3, 2, (4,)))
    with pytest.raises(ConfigurationError):
        SdfNetwork(MlpModel.create(3, 1, (4,), output_transform="softplus"))


def test_plane_has_zero_loss():
    net = plane_net()
    rng = np.random.default_rng(6)
    surface = np.column_stack([rng.normal(size=(50, 2)), np.zeros(50)])
    loss = sdf_loss(net, surface, rng.uniform(-1, 1, size=(50, 3)), 0.1, Tape())
    assert float(loss.value) == 0.0
    m = sdf_metrics(net, PointCloud(surface), rng.uniform(-1, 1, size=(20, 3)))
    assert m["surface_rms"] == 0.0 and m["eikonal_rms"] == 0.0


def test_gradient_descent_step_lowers_loss():
    net = SdfNetwork.create((8, 8), seed=0)
    rng = np.random.default_rng(7)
    surface = sample_lidar(make_icosphere(0.5, 1), 64, seed=0).points
    uni = rng.uniform(-1, 1, size=(64, 3))
    tape = Tape()
    loss = sdf_loss(net, surface, uni, 0.1, tape)
    grads = backward(tape, output=loss)
    params = net.model.parameters()
    net.model.set_parameters({k: params[k] - 1e-3 * grads[k] for k in params})
    assert float(sdf_loss(net, surface, uni, 0.1, Tape()).value) < float(loss.value)


def test_training_short_run_and_orientation():
    cloud = sample_lidar(make_icosphere(0.6, 2), 400, seed=0)
    net, res, metrics, _ = train_sdf(cloud, SdfNetwork.create((16, 16), seed=0),
                                     SdfConfig(iterations=300, batch_size=100, lr=1e-2, monitor_every=50))
    assert res.history[-1] < res.history[0]
    assert net(np.zeros(3)) > 0 > net(np.array([0.95, 0.95, 0.95]))
    assert metrics["best_iteration"] % 50 == 0
    back = SdfNetwork.from_dict(net.to_dict())
    assert back(cloud.points[:5]).tobytes() == net(cloud.points[:5]).tobytes()


# marching cubes ------------------------------------------------------------------

@pytest.fixture(scope="module")
def sphere_mc():
    return marching_cubes(ball, halfwidth=2.0, resolution=32)


def test_marching_cubes_sphere(sphere_mc):
    cell = 4.0 / 31
    r = np.linalg.norm(sphere_mc.vertices, axis=1)
    assert np.abs(r - 1.0).max() < np.sqrt(3) * cell
    assert sphere_mc.signed_volume() == pytest.approx(4 / 3 * np.pi, rel=0.05)
    assert sphere_mc.is_watertight()


def test_marching_cubes_no_surface():
    assert len(marching_cubes(lambda x: np.ones(len(x)), 1.0, 8).faces) == 0
    with pytest.raises(ConfigurationError):
        marching_cubes(ball, 1.0, 1)


def test_marching_cubes_independent_of_evaluation_order(sphere_mc):
    def shuffled(x):
        perm = np.random.default_rng(0).permutation(len(x))
        out = np.empty(len(x))
        out[perm] = ball(x[perm])
        return out

    again = marching_cubes(shuffled, halfwidth=2.0, resolution=32)
    assert np.array_equal(again.vertices, sphere_mc.vertices)
    assert np.array_equal(again.faces, sphere_mc.faces)


def test_marching_cubes_off_centre():
    mesh = marching_cubes(lambda x: ball(x - [0.3, 0.0, 0.0], 0.5), 1.0, 24, center=(0.3, 0.0, 0.0))
    assert np.allclose(mesh.vertices.mean(axis=0), [0.3, 0, 0], atol=0.02)


# Chamfer distance ----------------------------------------------------------------

def test_chamfer_by_hand():
    a = np.random.default_rng(8).normal(size=(30, 3))
    assert chamfer_distance(a, a) == 0.0
    assert chamfer_distance(np.zeros((1, 3)), np.array([[0.0, 3.0, 4.0]])) == pytest.approx(50.0)
    b = np.random.default_rng(9).normal(size=(20, 3))
    assert chamfer_distance(a, b) == chamfer_distance(b, a)
    with pytest.raises(ConfigurationError):
        chamfer_distance(np.zeros((0, 3)), a)


def test_accelerated_equals_bruteforce():
    rng = np.random.default_rng(10)
    a, b = rng.normal(size=(1000, 3)), rng.normal(size=(1000, 3))
    assert chamfer_distance(a, b) == chamfer_distance(a, b, accelerated=False)
    ia, da = nearest_neighbors(a, b)
    ib, db = nearest_neighbors(a, b, accelerated=False)
    assert np.array_equal(ia, ib) and np.array_equal(da, db)


def test_nearest_ties_go_to_lower_index():
    b = np.array([[1.0, 0, 0], [-1.0, 0, 0], [0, 1.0, 0]])
    idx, _ = nearest_neighbors(np.zeros((1, 3)), b)
    assert idx[0] == 0 == nearest_neighbors(np.zeros((1, 3)), b, accelerated=False)[0][0]


def test_chamfer_of_mesh_and_cloud():
    ico = make_icosphere(1.0, 3)
    cloud = sample_lidar(ico, 2000, seed=11)
    assert chamfer_distance(TriangleMesh(ico.vertices, ico.faces).vertices, cloud) < 0.01
