"""Batched SO(3) helpers shared by the simulator, planner and controllers.

All functions accept either a single item (shape (3,), (3, 3), (4,)) or a
leading batch dimension and are pure numpy.
"""

import numpy as np

_EPS = 1e-12


def hat(w):
    """Skew-symmetric matrix (batched): hat(w) @ v == cross(w, v)."""
    w = np.asarray(w)
    single = w.ndim == 1
    w = np.atleast_2d(w)
    out = np.zeros(w.shape[:-1] + (3, 3), dtype=w.dtype)
    out[..., 0, 1] = -w[..., 2]
    out[..., 0, 2] = w[..., 1]
    out[..., 1, 0] = w[..., 2]
    out[..., 1, 2] = -w[..., 0]
    out[..., 2, 0] = -w[..., 1]
    out[..., 2, 1] = w[..., 0]
    return out[0] if single else out


def exp_so3(w):
    """Rodrigues rotation from a rotation vector, batched, stable near 0."""
    w = np.asarray(w, dtype=np.float64)
    single = w.ndim == 1
    w = np.atleast_2d(w)
    theta = np.linalg.norm(w, axis=-1, keepdims=True)
    small = theta[..., 0] < 1e-8
    axis = np.where(theta > _EPS, w / np.maximum(theta, _EPS), 0.0)
    K = hat(axis)
    KK = K @ K
    s = np.sin(theta)[..., None]
    c1 = (1.0 - np.cos(theta))[..., None]
    R = np.eye(3) + s * K + c1 * KK
    if np.any(small):
        # first-order fallback keeps exp exact for w == 0
        R_small = np.eye(3) + hat(w)
        R[small] = R_small[small]
    return R[0] if single else R


def log_so3(R):
    """Rotation vector of R (batched); principal branch, |w| <= pi."""
    R = np.asarray(R, dtype=np.float64)
    single = R.ndim == 2
    R = R.reshape((-1, 3, 3)) if single else R
    tr = np.clip((R[..., 0, 0] + R[..., 1, 1] + R[..., 2, 2] - 1.0) / 2.0, -1.0, 1.0)
    theta = np.arccos(tr)
    v = np.stack(
        [
            R[..., 2, 1] - R[..., 1, 2],
            R[..., 0, 2] - R[..., 2, 0],
            R[..., 1, 0] - R[..., 0, 1],
        ],
        axis=-1,
    )
    sin_t = np.sin(theta)
    scale = np.where(sin_t > 1e-7, theta / np.maximum(2.0 * sin_t, _EPS), 0.5 + theta**2 / 12.0)
    w = v * scale[..., None]
    near_pi = theta > np.pi - 1e-4
    if np.any(near_pi):
        idx = np.flatnonzero(near_pi)
        for i in idx:
            # axis from the dominant column of R + I
            A = R[i] + np.eye(3)
            col = np.argmax(np.linalg.norm(A, axis=0))
            axis = A[:, col] / max(np.linalg.norm(A[:, col]), _EPS)
            # fix sign so that exp(theta*axis) matches R's off-diagonal part
            if np.dot(axis, v[i]) < 0:
                axis = -axis
            w[i] = theta[i] * axis
    return w[0] if single else w


def renormalize(R):
    """Project a near-rotation back onto SO(3) via Gram-Schmidt on columns."""
    R = np.asarray(R, dtype=np.float64)
    single = R.ndim == 2
    R = R[None] if single else R
    x = R[..., :, 0]
    y = R[..., :, 1]
    x = x / np.maximum(np.linalg.norm(x, axis=-1, keepdims=True), _EPS)
    y = y - np.sum(x * y, axis=-1, keepdims=True) * x
    y = y / np.maximum(np.linalg.norm(y, axis=-1, keepdims=True), _EPS)
    z = np.cross(x, y)
    out = np.stack([x, y, z], axis=-1)
    return out[0] if single else out


def quat_from_mat(R):
    """Unit quaternion (w, x, y, z) from rotation matrix, batched."""
    R = np.asarray(R, dtype=np.float64)
    single = R.ndim == 2
    R = R[None] if single else R
    n = R.shape[0]
    q = np.empty((n, 4))
    t = R[:, 0, 0] + R[:, 1, 1] + R[:, 2, 2]
    for i in range(n):  # branchy Shepperd method; library I/O only, not hot
        if t[i] > 0:
            s = np.sqrt(t[i] + 1.0) * 2
            q[i] = [0.25 * s, (R[i, 2, 1] - R[i, 1, 2]) / s,
                    (R[i, 0, 2] - R[i, 2, 0]) / s, (R[i, 1, 0] - R[i, 0, 1]) / s]
        elif R[i, 0, 0] >= R[i, 1, 1] and R[i, 0, 0] >= R[i, 2, 2]:
            s = np.sqrt(1.0 + R[i, 0, 0] - R[i, 1, 1] - R[i, 2, 2]) * 2
            q[i] = [(R[i, 2, 1] - R[i, 1, 2]) / s, 0.25 * s,
                    (R[i, 0, 1] + R[i, 1, 0]) / s, (R[i, 0, 2] + R[i, 2, 0]) / s]
        elif R[i, 1, 1] >= R[i, 2, 2]:
            s = np.sqrt(1.0 + R[i, 1, 1] - R[i, 0, 0] - R[i, 2, 2]) * 2
            q[i] = [(R[i, 0, 2] - R[i, 2, 0]) / s, (R[i, 0, 1] + R[i, 1, 0]) / s,
                    0.25 * s, (R[i, 1, 2] + R[i, 2, 1]) / s]
        else:
            s = np.sqrt(1.0 + R[i, 2, 2] - R[i, 0, 0] - R[i, 1, 1]) * 2
            q[i] = [(R[i, 1, 0] - R[i, 0, 1]) / s, (R[i, 0, 2] + R[i, 2, 0]) / s,
                    (R[i, 1, 2] + R[i, 2, 1]) / s, 0.25 * s]
        q[i] /= np.linalg.norm(q[i])
    return q[0] if single else q


def mat_from_quat(q):
    """Rotation matrix from unit quaternion (w, x, y, z), batched."""
    q = np.asarray(q, dtype=np.float64)
    single = q.ndim == 1
    q = np.atleast_2d(q)
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    R = np.empty(q.shape[:-1] + (3, 3))
    R[:, 0, 0] = 1 - 2 * (y * y + z * z)
    R[:, 0, 1] = 2 * (x * y - w * z)
    R[:, 0, 2] = 2 * (x * z + w * y)
    R[:, 1, 0] = 2 * (x * y + w * z)
    R[:, 1, 1] = 1 - 2 * (x * x + z * z)
    R[:, 1, 2] = 2 * (y * z - w * x)
    R[:, 2, 0] = 2 * (x * z - w * y)
    R[:, 2, 1] = 2 * (y * z + w * x)
    R[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return R[0] if single else R


def rot_z(yaw):
    """Rotation about world z, batched over yaw."""
    yaw = np.asarray(yaw, dtype=np.float64)
    single = yaw.ndim == 0
    yaw = np.atleast_1d(yaw)
    c, s = np.cos(yaw), np.sin(yaw)
    R = np.zeros(yaw.shape + (3, 3))
    R[..., 0, 0] = c
    R[..., 0, 1] = -s
    R[..., 1, 0] = s
    R[..., 1, 1] = c
    R[..., 2, 2] = 1.0
    return R[0] if single else R


def roll_pitch_yaw(R):
    """ZYX (yaw-pitch-roll) Euler angles from R, batched.

    roll = atan2(R32, R33), pitch = -asin(R31), yaw = atan2(R21, R11).
    """
    R = np.asarray(R)
    single = R.ndim == 2
    R = R[None] if single else R
    roll = np.arctan2(R[..., 2, 1], R[..., 2, 2])
    pitch = -np.arcsin(np.clip(R[..., 2, 0], -1.0, 1.0))
    yaw = np.arctan2(R[..., 1, 0], R[..., 0, 0])
    if single:
        return roll[0], pitch[0], yaw[0]
    return roll, pitch, yaw


def with_yaw(R, yaw):
    """Rebuild R keeping its ZYX roll/pitch but replacing the yaw angle."""
    r, p, _ = roll_pitch_yaw(R)
    return rot_z(yaw) @ exp_so3(np.array([0.0, p, 0.0])) @ exp_so3(np.array([r, 0.0, 0.0]))
