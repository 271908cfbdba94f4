"""Levenberg-Marquardt pose refinement on reprojection error."""

from __future__ import annotations

import numpy as np

from ..geometry import CameraIntrinsics, Pose, skew, so3_exp


def perturb(pose: Pose, delta) -> Pose:
    """Apply a local 6-vector perturbation (rotation omega, center shift)."""
    delta = np.asarray(delta, dtype=float)
    R = so3_exp(delta[:3]) @ pose.rotation
    return Pose.from_rotation(R, pose.position + delta[3:])


def _residuals(R, c, points, pixels, intr):
    Xc = (points - c) @ R.T
    z = Xc[:, 2]
    u = intr.fx * Xc[:, 0] / z + intr.cx
    v = intr.fy * Xc[:, 1] / z + intr.cy
    return np.column_stack([u - pixels[:, 0], v - pixels[:, 1]]).reshape(-1)


def reprojection_residuals(pose: Pose, points, pixels, intrinsics: CameraIntrinsics, delta=None):
    """Stacked (u, v) reprojection residuals, optionally at a perturbed pose."""
    points = np.asarray(points, dtype=float)
    pixels = np.asarray(pixels, dtype=float)
    R, c = pose.rotation, pose.position
    if delta is not None:
        delta = np.asarray(delta, dtype=float)
        R = so3_exp(delta[:3]) @ R
        c = c + delta[3:]
    return _residuals(R, c, points, pixels, intrinsics)


def _jacobian(R, c, points, intr):
    Xc = (points - c) @ R.T
    x, y, z = Xc.T
    n = len(points)
    dproj = np.zeros((n, 2, 3))
    dproj[:, 0, 0] = intr.fx / z
    dproj[:, 0, 2] = -intr.fx * x / z**2
    dproj[:, 1, 1] = intr.fy / z
    dproj[:, 1, 2] = -intr.fy * y / z**2
    dX = np.zeros((n, 3, 6))
    for i in range(n):
        dX[i, :, :3] = -skew(Xc[i])
    dX[:, :, 3:] = -R
    return np.einsum("nij,njk->nik", dproj, dX).reshape(2 * n, 6)


def reprojection_jacobian(pose: Pose, points, intrinsics: CameraIntrinsics) -> np.ndarray:
    """Jacobian of the residuals w.r.t. the local perturbation, at zero."""
    return _jacobian(pose.rotation, pose.position, np.asarray(points, dtype=float), intrinsics)


def refine_pose(initial: Pose, points, pixels, intrinsics: CameraIntrinsics,
                max_iterations: int = 100, gradient_tol: float = 1e-10,
                step_tol: float = 1e-12) -> Pose:
    """Minimize summed squared reprojection error over the 6-dof pose.

    Returns ``initial`` itself when no step lowers the cost.
    """
    points = np.asarray(points, dtype=float)
    pixels = np.asarray(pixels, dtype=float)
    if len(points) < 4:
        raise ValueError("pose refinement needs at least 4 correspondences")
    R, c = initial.rotation, initial.position.copy()
    r = _residuals(R, c, points, pixels, intrinsics)
    cost = r @ r
    if not np.isfinite(cost):
        return initial
    mu = None
    improved = False
    for _ in range(max_iterations):
        J = _jacobian(R, c, points, intrinsics)
        g = J.T @ r
        if np.linalg.norm(g) < gradient_tol:
            break
        H = J.T @ J
        if mu is None:
            mu = 1e-3 * np.max(np.diag(H))
        step_taken = False
        while True:
            try:
                delta = np.linalg.solve(H + mu * np.eye(6), -g)
            except np.linalg.LinAlgError:
                mu *= 10.0
                continue
            if np.linalg.norm(delta) < step_tol:
                break
            R_new = so3_exp(delta[:3]) @ R
            c_new = c + delta[3:]
            r_new = _residuals(R_new, c_new, points, pixels, intrinsics)
            cost_new = r_new @ r_new
            if np.isfinite(cost_new) and cost_new < cost:
                R, c, r, cost = R_new, c_new, r_new, cost_new
                mu = max(mu / 3.0, 1e-12)
                step_taken = improved = True
                break
            mu *= 4.0
        if not step_taken:
            break
    if not improved:
        return initial
    # re-orthonormalize accumulated rotation products
    u, _, vt = np.linalg.svd(R)
    return Pose.from_rotation(u @ vt, c)
