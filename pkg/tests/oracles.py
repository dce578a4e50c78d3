"""Independent reference implementations used as test oracles."""

import math

import numpy as np


def gp_dense(inputs, observations, queries, sigma_in_sq=0.02, kappa=1.0):
    """Mean-centred GP posterior via an explicit matrix inverse and Python loops."""
    X = np.asarray(inputs, dtype=float)
    f = np.asarray(observations, dtype=float)
    Q = np.asarray(queries, dtype=float)
    n = len(X)
    K = np.empty((n, n))
    for a in range(n):
        for b in range(n):
            K[a, b] = math.exp(-kappa * math.dist(X[a], X[b]))
    Kinv = np.linalg.inv(K + sigma_in_sq * np.eye(n))
    mean = float(np.mean(f))
    pred, var = [], []
    for q in Q:
        k = np.array([math.exp(-kappa * math.dist(q, x)) for x in X])
        pred.append(mean + k @ Kinv @ (f - mean))
        var.append(1.0 - k @ Kinv @ k)
    return np.array(pred), np.array(var)


def precision_fuse(preds, variances):
    """One-shot inverse-variance weighted mean of a stack of observations."""
    w = 1.0 / np.asarray(variances, dtype=float)
    return (w * np.asarray(preds, dtype=float)).sum(axis=0) / w.sum(axis=0), 1.0 / w.sum(axis=0)


def kitti_rpe(est, gt, lengths):
    """Textbook KITTI segment errors built from 4x4 matrices and the error pose."""
    M_est = [p.matrix() for p in est]
    M_gt = [p.matrix() for p in gt]
    dist = [0.0]
    for a, b in zip(M_gt, M_gt[1:]):
        dist.append(dist[-1] + float(np.linalg.norm(b[:3, 3] - a[:3, 3])))
    t_err, r_err = [], []
    for first in range(len(gt)):
        for L in lengths:
            last = next((k for k in range(first, len(gt)) if dist[k] > dist[first] + L), None)
            if last is None:
                continue
            d_gt = np.linalg.inv(M_gt[first]) @ M_gt[last]
            d_est = np.linalg.inv(M_est[first]) @ M_est[last]
            err = np.linalg.inv(d_est) @ d_gt
            t_err.append(np.linalg.norm(err[:3, 3]) / L)
            c = max(-1.0, min(1.0, 0.5 * (np.trace(err[:3, :3]) - 1.0)))
            r_err.append(math.acos(c) / L)
    return 100.0 * float(np.mean(t_err)), 100.0 * math.degrees(float(np.mean(r_err)))
