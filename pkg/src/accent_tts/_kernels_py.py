"""Pure-Python/numpy versions of the compiled kernels in ``_kernels.pyx``.

Same signatures, same tie-breaking, same results to rounding.
"""
import numpy as np


def dtw_path(cost):
    cost = np.ascontiguousarray(cost, dtype=np.float64)
    n, m = cost.shape
    acc = np.empty((n, m))
    acc[0] = np.cumsum(cost[0])
    acc[:, 0] = np.cumsum(cost[:, 0])
    for i in range(1, n):
        row = acc[i]
        up = acc[i - 1]
        # diagonal/vertical candidates are known for the whole row; the
        # horizontal dependency needs the sequential scan.
        best_dv = np.minimum(up[:-1], up[1:]) + cost[i, 1:]
        ci = cost[i]
        for j in range(1, m):
            left = row[j - 1] + ci[j]
            v = best_dv[j - 1]
            row[j] = v if v <= left else left

    path_i, path_j = [n - 1], [m - 1]
    i, j = n - 1, m - 1
    while i > 0 or j > 0:
        if i == 0:
            j -= 1
        elif j == 0:
            i -= 1
        else:
            a, b, c = acc[i - 1, j - 1], acc[i - 1, j], acc[i, j - 1]
            if a <= b and a <= c:
                i -= 1
                j -= 1
            elif b <= c:
                i -= 1
            else:
                j -= 1
        path_i.append(i)
        path_j.append(j)
    return (
        float(acc[n - 1, m - 1]),
        np.array(path_i[::-1], dtype=np.intp),
        np.array(path_j[::-1], dtype=np.intp),
    )


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def gru_forward(xproj, U, b_hh, h0):
    T = xproj.shape[0]
    H = h0.shape[0]
    hs = np.empty((T, H))
    rs = np.empty((T, H))
    zs = np.empty((T, H))
    ns = np.empty((T, H))
    ghn = np.empty((T, H))
    h = np.array(h0, dtype=np.float64)
    for t in range(T):
        gh = h @ U + b_hh
        gi = xproj[t]
        r = _sigmoid(gi[:H] + gh[:H])
        z = _sigmoid(gi[H:2 * H] + gh[H:2 * H])
        n = np.tanh(gi[2 * H:] + r * gh[2 * H:])
        h = (1.0 - z) * n + z * h
        hs[t], rs[t], zs[t], ns[t], ghn[t] = h, r, z, n, gh[2 * H:]
    return hs, (rs, zs, ns, ghn)


def gru_backward(dhs, h0, hs, cache, U):
    rs, zs, ns, ghn = cache
    T, H = dhs.shape
    dx = np.zeros((T, 3 * H))
    dU = np.zeros((H, 3 * H))
    db = np.zeros(3 * H)
    dnext = np.zeros(H)
    for t in range(T - 1, -1, -1):
        hprev = hs[t - 1] if t > 0 else h0
        r, z, n = rs[t], zs[t], ns[t]
        dh = dhs[t] + dnext
        dn = dh * (1.0 - z)
        dz = dh * (hprev - n) * z * (1.0 - z)
        dnp = dn * (1.0 - n * n)
        dr = dnp * ghn[t] * r * (1.0 - r)
        dgh = np.concatenate([dr, dz, dnp * r])
        dx[t] = np.concatenate([dr, dz, dnp])
        db += dgh
        dU += np.outer(hprev, dgh)
        dnext = dh * z + U @ dgh
    return dx, dU, db, dnext
