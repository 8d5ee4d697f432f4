"""Independent brute-force reference implementations used only by tests.

These deliberately avoid the library's closed-form code paths: link
transforms are composed from four primitive matrices, chains are walked
explicitly from the root along each path, and metrics use plain double
loops over frames and joints.
"""

import math

import numpy as np

from poselift.skeleton import (
    DH_TABLE,
    JOINT_FRAME,
    N_JOINTS,
    N_LINKS,
)


def _rot_z_mat(t):
    return np.array(
        [
            [math.cos(t), -math.sin(t), 0.0, 0.0],
            [math.sin(t), math.cos(t), 0.0, 0.0],
            [0.0, 0.0, 1.0, 0.0],
            [0.0, 0.0, 0.0, 1.0],
        ]
    )


def _rot_x_mat(t):
    return np.array(
        [
            [1.0, 0.0, 0.0, 0.0],
            [0.0, math.cos(t), -math.sin(t), 0.0],
            [0.0, math.sin(t), math.cos(t), 0.0],
            [0.0, 0.0, 0.0, 1.0],
        ]
    )


def _trans_mat(x, y, z):
    m = np.eye(4)
    m[0, 3] = x
    m[1, 3] = y
    m[2, 3] = z
    return m


def link_local_oracle(theta, d, a, alpha):
    """Rot(z) * Trans(z) * Trans(x) * Rot(x) as an explicit product."""
    return _rot_z_mat(theta) @ _trans_mat(0, 0, d) @ _trans_mat(a, 0, 0) @ _rot_x_mat(alpha)


def _path_to_root(link):
    path = []
    while link >= 0:
        path.append(link)
        link = DH_TABLE[link][5]
    return list(reversed(path))


def fk_oracle(model, theta):
    """Joint positions by walking root-to-frame paths link by link."""
    theta = np.asarray(theta, dtype=float)
    h = model.height_mm
    b = model.bone_ratios
    locals_ = []
    for base_deg, idx, d_expr, a_expr, alpha_deg, _ in DH_TABLE:
        ang = math.radians(base_deg) + theta[idx]
        d = 0.0 if d_expr[1] is None else d_expr[0] * b[d_expr[1]] * h
        a = 0.0 if a_expr[1] is None else a_expr[0] * b[a_expr[1]] * h
        locals_.append(link_local_oracle(ang, d, a, math.radians(alpha_deg)))
    root = model.root_matrix()
    joints = np.empty((N_JOINTS, 3))
    for j, fr in enumerate(JOINT_FRAME):
        m = root.copy()
        if fr >= 0:
            for link in _path_to_root(fr):
                m = np.dot(m, locals_[link])
        joints[j] = m[:3, 3]
    return joints


def naive_mpjpe(pred, gt):
    """Double-loop mean per-joint distance."""
    total = 0.0
    count = 0
    for t in range(len(pred)):
        for j in range(pred.shape[1]):
            diff = pred[t, j] - gt[t, j]
            total += math.sqrt(diff[0] ** 2 + diff[1] ** 2 + diff[2] ** 2)
            count += 1
    return total / count


def fscore_from_counts(pred, gt):
    """Micro F1 from explicitly counted confusion cells."""
    tp = fp = fn = 0
    flat_p = np.asarray(pred).reshape(-1)
    flat_g = np.asarray(gt).reshape(-1)
    for p, g in zip(flat_p, flat_g):
        if p and g:
            tp += 1
        elif p and not g:
            fp += 1
        elif not p and g:
            fn += 1
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)
