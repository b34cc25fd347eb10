import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from drot.core import ProblemError, SolverConfig, TransportPlan
from drot.transfer import barycentric_project, color_transfer, kmeans_quantize, to_float_image

skimage_data = pytest.importorskip("skimage.data")


def small(img, step):
    return np.ascontiguousarray(img[::step, ::step, :3])


@pytest.fixture(scope="module")
def cat():
    return small(skimage_data.chelsea(), 3)


@pytest.fixture(scope="module")
def coffee():
    return small(skimage_data.coffee(), 4)


def mean_channel_difference(x, y):
    return float(np.mean(np.abs(to_float_image(x) - to_float_image(y))))


# k-means


def test_identical_pixels_one_cluster():
    q = kmeans_quantize(np.tile([[0.2, 0.4, 0.6]], (10, 1)), 1)
    np.testing.assert_allclose(q.centers, [[0.2, 0.4, 0.6]])
    assert q.weights.tolist() == [1.0]
    assert np.all(q.assignment == 0)


def test_two_separated_clusters():
    px = np.array([[0, 0, 0]] * 5 + [[1, 1, 1]] * 5, dtype=float)
    q = kmeans_quantize(px, 2)
    order = np.argsort(q.centers[:, 0])
    np.testing.assert_allclose(q.centers[order], [[0, 0, 0], [1, 1, 1]])
    np.testing.assert_allclose(q.weights[order], [0.5, 0.5])


def test_k_larger_than_distinct_pixels_rejected():
    with pytest.raises(ProblemError, match="distinct"):
        kmeans_quantize(np.zeros((4, 3)), 2)


def test_empty_image_rejected():
    with pytest.raises(ProblemError):
        kmeans_quantize(np.zeros((0, 3)), 1)


def test_quantize_image_shape_and_weights(cat):
    q = kmeans_quantize(to_float_image(cat), 16)
    assert (q.height, q.width) == cat.shape[:2]
    assert q.assignment.shape == (cat.shape[0] * cat.shape[1],)
    assert q.weights.sum() == pytest.approx(1.0, abs=1e-15)
    assert np.all(q.weights > 0)
    counts = np.bincount(q.assignment, minlength=q.centers.shape[0])
    np.testing.assert_array_equal(q.weights, counts / q.assignment.size)
    assert q.centers.min() >= 0 and q.centers.max() <= 1


def test_quantize_deterministic_for_a_seed(cat):
    img = to_float_image(cat)
    q1, q2 = kmeans_quantize(img, 8, seed=3), kmeans_quantize(img, 8, seed=3)
    np.testing.assert_array_equal(q1.centers, q2.centers)
    np.testing.assert_array_equal(q1.assignment, q2.assignment)


# barycentric projection

TARGETS = np.array([[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]])


def test_identity_plan_maps_rows_to_single_targets():
    pts, zero = barycentric_project(TransportPlan.from_dense(np.eye(2) / 2), TARGETS)
    np.testing.assert_allclose(pts, TARGETS)
    assert not zero.any()


def test_split_row_maps_to_average():
    pts, _ = barycentric_project(TransportPlan.from_dense([[0.5, 0.5]]), TARGETS)
    np.testing.assert_allclose(pts, [[0.5, 0.5, 0.5]])


def test_zero_row_keeps_source_and_is_flagged():
    src = np.array([[0.1, 0.2, 0.3], [0.9, 0.8, 0.7]])
    pts, zero = barycentric_project(TransportPlan.from_dense([[0.0, 0.0], [0.2, 0.0]]), TARGETS, src)
    np.testing.assert_allclose(pts[0], src[0])
    np.testing.assert_allclose(pts[1], TARGETS[0])
    assert zero.tolist() == [True, False]


def test_plan_target_mismatch_rejected():
    with pytest.raises(ProblemError):
        barycentric_project(TransportPlan.empty(2, 3), TARGETS)


@given(st.integers(0, 2**32 - 1))
def test_projection_stays_in_target_box(seed):
    rng = np.random.default_rng(seed)
    P = rng.random((5, 7)) * (rng.random((5, 7)) < 0.5)
    targets = rng.random((7, 3))
    pts, zero = barycentric_project(TransportPlan.from_dense(P), targets)
    lo, hi = targets.min(0), targets.max(0)
    ok = pts[~zero]
    assert np.all(ok >= lo - 1e-12) and np.all(ok <= hi + 1e-12)
    assert zero.tolist() == (P.sum(1) == 0).tolist()


# end to end


def test_self_transfer_is_near_identity(cat):
    res = color_transfer(cat, cat, 8, SolverConfig(gamma=1e4))
    assert res.converged
    # every centre maps back onto itself; what remains is quantisation error
    np.testing.assert_allclose(res.projected_centers, res.source.centers, atol=1e-6)
    assert mean_channel_difference(res.image, cat) < 0.05
    assert res.image.shape == cat.shape and res.image.min() >= 0 and res.image.max() <= 1


def test_entropy_outputs_agree_across_gamma(cat, coffee):
    outs = []
    for gamma in (0.1, 1.0, 10.0):
        cfg = SolverConfig(gamma=gamma, phi="entropy", varphi="entropy", cost_shift=1e-3)
        res = color_transfer(cat, coffee, 64, cfg)
        assert res.converged
        outs.append(res.image)
    for i in range(3):
        for j in range(i + 1, 3):
            assert mean_channel_difference(outs[i], outs[j]) < 0.05


def test_small_gamma_quadratic_destroys_mass(cat, coffee):
    res = color_transfer(cat, coffee, 64, SolverConfig(gamma=10.0))
    assert res.converged
    assert res.report.mass_destroyed > 0.1


def test_transfer_is_deterministic(cat, coffee):
    cfg = SolverConfig(gamma=100.0)
    r1 = color_transfer(cat, coffee, 16, cfg)
    r2 = color_transfer(cat, coffee, 16, cfg)
    np.testing.assert_array_equal(r1.image, r2.image)


def test_solver_failure_carries_stage_context(cat):
    cfg = SolverConfig(gamma=1e300, phi="exponential", varphi="exponential", feasibility_tol=1e-300)
    with pytest.raises(RuntimeError, match="colour transfer failed while solving"):
        color_transfer(cat, cat, 4, cfg)


def test_float_image_validation():
    with pytest.raises(ProblemError):
        to_float_image(np.zeros((4, 4)))
    with pytest.raises(ProblemError):
        to_float_image(np.full((2, 2, 3), 2.0))
    np.testing.assert_allclose(to_float_image(np.full((1, 1, 3), 255, np.uint8)), 1.0)
