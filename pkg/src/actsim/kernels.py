"""Hot numeric kernels.

Each kernel exists twice: an explicit-loop body compiled with numba, and a
vectorised numpy body. ``backend()`` in :mod:`actsim._accel` decides which one
the public names point at. Both take plain float64/int64 arrays only.
"""

import numpy as np

from ._accel import HAVE_NUMBA, njit

_TINY = 1e-300


def _efe_loops(post, b_stack, pol_actions, start, a_mat, log_c, row_entropy):
    n_pol, horizon = pol_actions.shape
    n_s = post.shape[0]
    n_o = a_mat.shape[1]
    out = np.zeros(n_pol)
    q = np.empty(n_s)
    nxt = np.empty(n_s)
    for p in range(n_pol):
        for s in range(n_s):
            q[s] = post[s]
        g = 0.0
        for k in range(horizon):
            act = pol_actions[p, (start + k) % horizon]
            for j in range(n_s):
                acc = 0.0
                for i in range(n_s):
                    acc += q[i] * b_stack[act, i, j]
                nxt[j] = acc
            for j in range(n_s):
                q[j] = nxt[j]
            risk = 0.0
            for o in range(n_o):
                qo = 0.0
                for s in range(n_s):
                    qo += q[s] * a_mat[s, o]
                if qo > 0.0:
                    risk += qo * (np.log(qo) - log_c[o])
            amb = 0.0
            for s in range(n_s):
                amb += q[s] * row_entropy[s]
            g += risk + amb
        out[p] = g
    return out


def _efe_numpy(post, b_stack, pol_actions, start, a_mat, log_c, row_entropy):
    n_pol, horizon = pol_actions.shape
    q = np.broadcast_to(post, (n_pol, post.shape[0])).copy()
    g = np.zeros(n_pol)
    for k in range(horizon):
        acts = pol_actions[:, (start + k) % horizon]
        q = np.einsum("ps,pst->pt", q, b_stack[acts])
        qo = q @ a_mat
        with np.errstate(divide="ignore", invalid="ignore"):
            risk = np.where(qo > 0.0, qo * (np.log(np.where(qo > 0.0, qo, 1.0)) - log_c), 0.0)
        g += risk.sum(axis=1) + q @ row_entropy
    return g


def _predictions_loops(post, b_stack, pol_actions, pos):
    n_pol = pol_actions.shape[0]
    n_s = post.shape[0]
    out = np.zeros((n_pol, n_s))
    for p in range(n_pol):
        act = pol_actions[p, pos]
        for j in range(n_s):
            acc = 0.0
            for i in range(n_s):
                acc += post[i] * b_stack[act, i, j]
            out[p, j] = acc
    return out


def _predictions_numpy(post, b_stack, pol_actions, pos):
    return np.einsum("s,pst->pt", post, b_stack[pol_actions[:, pos]])


def _enumerate_loops(d, b_seq, lik):
    # filtered marginals by summing over every state path, one prefix length at a time
    n_t, n_s = lik.shape
    out = np.zeros((n_t, n_s))
    idx = np.zeros(n_t, dtype=np.int64)
    for t in range(n_t):
        total = n_s ** (t + 1)
        for code in range(total):
            c = code
            for k in range(t + 1):
                idx[k] = c % n_s
                c //= n_s
            w = d[idx[0]] * lik[0, idx[0]]
            for k in range(1, t + 1):
                w *= b_seq[k - 1, idx[k - 1], idx[k]] * lik[k, idx[k]]
            out[t, idx[t]] += w
    return out


def _enumerate_numpy(d, b_seq, lik):
    n_t, n_s = lik.shape
    out = np.zeros((n_t, n_s))
    for t in range(n_t):
        paths = np.indices((n_s,) * (t + 1)).reshape(t + 1, -1)
        w = d[paths[0]] * lik[0, paths[0]]
        for k in range(1, t + 1):
            w = w * b_seq[k - 1, paths[k - 1], paths[k]] * lik[k, paths[k]]
        out[t] = np.bincount(paths[t], weights=w, minlength=n_s)
    return out


if HAVE_NUMBA:
    efe_all = njit(_efe_loops)
    policy_predictions = njit(_predictions_loops)
    enumerate_filtered = njit(_enumerate_loops)
else:
    efe_all = _efe_numpy
    policy_predictions = _predictions_numpy
    enumerate_filtered = _enumerate_numpy

# both paths stay importable for the cross-check tests and the benchmark
NUMPY_KERNELS = {
    "efe_all": _efe_numpy,
    "policy_predictions": _predictions_numpy,
    "enumerate_filtered": _enumerate_numpy,
}
LOOP_KERNELS = {
    "efe_all": efe_all if HAVE_NUMBA else _efe_loops,
    "policy_predictions": policy_predictions if HAVE_NUMBA else _predictions_loops,
    "enumerate_filtered": enumerate_filtered if HAVE_NUMBA else _enumerate_loops,
}
