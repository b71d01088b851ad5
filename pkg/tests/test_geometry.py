"""Projection, Procrustes alignment, e3d, and smoothness diagnostics."""

import numpy as np
import pytest

from monosurf import autodiff as ad
from monosurf import gradcheck
from monosurf.errors import (
    DegeneracyError,
    DegenerateDepthError,
    DimensionError,
    ParameterError,
)
from monosurf.geometry import (
    CameraIntrinsics,
    SurfaceSequence,
    e3d_metric,
    mean_laplacian_magnitude,
    procrustes_align,
    project_orthographic,
    project_perspective,
)

PAPER_K = CameraIntrinsics(fx=280.0, fy=497.7, cx=128.0, cy=128.0)


def _rotation(rng):
    q = rng.standard_normal(4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def test_perspective_principal_ray():
    out = project_perspective(np.array([[[0.0, 0.0, 1.0]]]), PAPER_K)
    np.testing.assert_allclose(out.data[0, 0], [128.0, 128.0], atol=1e-12)


def test_perspective_documented_point():
    out = project_perspective(np.array([[[1.0, 0.0, 2.0]]]), PAPER_K)
    np.testing.assert_allclose(out.data[0, 0], [268.0, 128.0], atol=1e-12)


def test_perspective_rejects_nonpositive_depth():
    with pytest.raises(DegenerateDepthError):
        project_perspective(np.array([[[0.0, 0.0, -1.0]]]), PAPER_K)
    with pytest.raises(DegenerateDepthError):
        project_perspective(np.array([[[0.0, 0.0, 0.0]]]), PAPER_K)


def test_perspective_gradcheck():
    res = gradcheck.run_check("project_perspective", trials=20, seed=0)
    assert res.passed and res.worst_rel < 1e-6


def test_perspective_commutes_with_intrinsic_rescaling():
    rng = np.random.default_rng(1)
    pts = np.stack(
        [rng.uniform(-1, 1, 10), rng.uniform(-1, 1, 10), rng.uniform(0.5, 3, 10)],
        axis=-1,
    )
    for s in (0.25, 2.0, 7.5):
        a = project_perspective(pts, PAPER_K).data * s
        b = project_perspective(pts, PAPER_K.scaled(s)).data
        np.testing.assert_allclose(a, b, rtol=1e-12)


def test_orthographic_depth_invariance():
    cam = CameraIntrinsics(1, 1, 128, 128, mode="orthographic", ortho_scale=1.0)
    a = project_orthographic(np.array([[0.0, 0.0, 5.0]]), cam).data
    b = project_orthographic(np.array([[0.0, 0.0, -17.0]]), cam).data
    np.testing.assert_array_equal(a, b)
    np.testing.assert_allclose(a[0], [128.0, 128.0])


def test_orthographic_documented_point():
    cam = CameraIntrinsics(1, 1, 0.0, 0.0, mode="orthographic", ortho_scale=10.0)
    out = project_orthographic(np.array([[1.0, 2.0, 5.0]]), cam).data
    np.testing.assert_allclose(out[0], [10.0, 20.0])


def test_procrustes_recovers_rigid_motion():
    rng = np.random.default_rng(2)
    gt = rng.standard_normal((40, 3))
    rot = _rotation(rng)
    t = rng.standard_normal(3)
    pred = gt @ rot.T + t
    align, aligned = procrustes_align(pred, gt)
    np.testing.assert_allclose(aligned, gt, atol=1e-8)
    np.testing.assert_allclose(align.rotation, rot.T, atol=1e-8)
    assert np.linalg.det(align.rotation) == pytest.approx(1.0, abs=1e-9)


def test_procrustes_identity_on_equal_inputs():
    rng = np.random.default_rng(3)
    gt = rng.standard_normal((25, 3))
    align, aligned = procrustes_align(gt, gt)
    np.testing.assert_allclose(align.rotation, np.eye(3), atol=1e-9)
    np.testing.assert_allclose(align.translation, 0.0, atol=1e-9)
    np.testing.assert_allclose(aligned, gt, atol=1e-12)


def test_procrustes_similarity_recovery():
    rng = np.random.default_rng(4)
    gt = rng.standard_normal((30, 3))
    align, aligned = procrustes_align(2.0 * gt, gt, allow_scale=True)
    assert align.scale == pytest.approx(0.5, abs=1e-10)
    assert np.linalg.norm(aligned - gt) < 1e-8


def test_procrustes_never_reflects():
    rng = np.random.default_rng(5)
    for _ in range(50):
        gt = rng.standard_normal((12, 3))
        pred = gt.copy()
        pred[:, 2] *= -1  # a reflection of the target
        align, _ = procrustes_align(pred, gt)
        assert np.linalg.det(align.rotation) == pytest.approx(1.0, abs=1e-9)


def test_procrustes_degenerate_gt():
    pred = np.random.default_rng(6).standard_normal((10, 3))
    with pytest.raises(DegeneracyError):
        procrustes_align(pred, np.ones((10, 3)))


def test_e3d_zero_for_identical():
    rng = np.random.default_rng(7)
    s = rng.standard_normal((4, 5, 5, 3)) + np.array([0, 0, 3.0])
    e, sigma, per = e3d_metric(s, s, align=False)
    assert e == 0.0 and sigma == 0.0
    np.testing.assert_array_equal(per, 0.0)
    e_aligned, _, _ = e3d_metric(s, s, align=True)
    assert e_aligned < 1e-12  # alignment itself only adds float roundoff


def test_e3d_all_zero_prediction_unaligned_term_is_one():
    rng = np.random.default_rng(8)
    gt = rng.standard_normal((3, 4, 4, 3)) + np.array([0, 0, 2.0])
    e, sigma, per = e3d_metric(np.zeros_like(gt), gt, align=False)
    np.testing.assert_array_equal(per, 1.0)
    assert e == 1.0 and sigma == 0.0


def test_e3d_invariant_under_rigid_motion_when_aligned():
    rng = np.random.default_rng(9)
    gt = rng.standard_normal((3, 6, 6, 3))
    pred = gt + 0.05 * rng.standard_normal(gt.shape)
    base, _, _ = e3d_metric(pred, gt, align=True)
    rot = _rotation(rng)
    t = rng.standard_normal(3)
    moved = pred @ rot.T + t
    e, _, _ = e3d_metric(moved, gt, align=True)
    assert abs(e - base) < 1e-8


def test_e3d_zero_norm_gt_degenerate():
    with pytest.raises(DegeneracyError):
        e3d_metric(np.ones((1, 3, 3, 3)), np.zeros((1, 3, 3, 3)))


def test_e3d_shape_mismatch():
    with pytest.raises(DimensionError):
        e3d_metric(np.zeros((1, 3, 3, 3)), np.zeros((2, 3, 3, 3)))


def test_laplacian_zero_on_uniform_plane():
    ys, xs = np.meshgrid(np.linspace(0, 1, 7), np.linspace(0, 2, 7), indexing="ij")
    plane = np.stack([xs, ys, 0.3 * xs + 0.1 * ys + 2.0], axis=-1)
    assert mean_laplacian_magnitude(plane) < 1e-12


def test_laplacian_single_displacement_matches_bruteforce():
    g = 5
    ys, xs = np.meshgrid(np.linspace(0, 1, g), np.linspace(0, 1, g), indexing="ij")
    surf = np.stack([xs, ys, np.zeros_like(xs)], axis=-1)
    d = 0.37
    surf[2, 2, 2] += d

    # independent brute-force summation over interior vertices
    total = 0.0
    for i in range(1, g - 1):
        for j in range(1, g - 1):
            lap = (
                4 * surf[i, j]
                - surf[i - 1, j]
                - surf[i + 1, j]
                - surf[i, j - 1]
                - surf[i, j + 1]
            )
            total += float(np.sqrt((lap**2).sum()))
    expected = total / (g - 2) ** 2
    assert mean_laplacian_magnitude(surf) == pytest.approx(expected, rel=1e-12)
    # displaced centre contributes 4d; its four interior neighbours d each
    assert expected == pytest.approx((4 * d + 4 * d) / 9, rel=1e-12)


def test_laplacian_translation_invariant():
    rng = np.random.default_rng(10)
    surf = rng.standard_normal((6, 6, 3))
    a = mean_laplacian_magnitude(surf)
    b = mean_laplacian_magnitude(surf + np.array([1.0, -2.0, 0.5]))
    assert a == pytest.approx(b, rel=1e-12)


def test_surface_sequence_validation():
    with pytest.raises(DimensionError):
        SurfaceSequence(np.zeros((2, 3, 4, 3)))
    with pytest.raises(ParameterError):
        SurfaceSequence(np.full((1, 3, 3, 3), np.nan))
    seq = SurfaceSequence(np.zeros((2, 4, 4, 3)))
    assert seq.frames == 2 and seq.grid_side == 4


def test_camera_intrinsics_validation():
    with pytest.raises(ParameterError):
        CameraIntrinsics(fx=-1, fy=1, cx=0, cy=0)
    with pytest.raises(ParameterError):
        CameraIntrinsics(fx=1, fy=1, cx=0, cy=0, mode="fisheye")
