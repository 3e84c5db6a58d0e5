# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops: DTW accumulation/backtracking and the GRU recurrence.

Signatures and results mirror ``_kernels_py`` exactly; ``kernels`` picks one
at import time.
"""
import numpy as np

cimport numpy as cnp
from libc.math cimport exp, tanh, INFINITY

cnp.import_array()


def dtw_path(double[:, ::1] cost):
    """Minimum-total-cost monotone alignment through a local cost matrix.

    Returns ``(total, path_i, path_j)`` with the path ordered from (0, 0) to
    (n-1, m-1). Ties prefer the diagonal move, then the row move.
    """
    cdef Py_ssize_t n = cost.shape[0], m = cost.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double best, a, b, c
    acc_arr = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] acc = acc_arr

    acc[0, 0] = cost[0, 0]
    for j in range(1, m):
        acc[0, j] = acc[0, j - 1] + cost[0, j]
    for i in range(1, n):
        acc[i, 0] = acc[i - 1, 0] + cost[i, 0]
        for j in range(1, m):
            a = acc[i - 1, j - 1]
            b = acc[i - 1, j]
            c = acc[i, j - 1]
            best = a
            if b < best:
                best = b
            if c < best:
                best = c
            acc[i, j] = best + cost[i, j]

    pi = np.empty(n + m, dtype=np.intp)
    pj = np.empty(n + m, dtype=np.intp)
    cdef Py_ssize_t[::1] vi = pi
    cdef Py_ssize_t[::1] vj = pj
    i = n - 1
    j = m - 1
    k = 0
    while True:
        vi[k] = i
        vj[k] = j
        k += 1
        if i == 0 and j == 0:
            break
        if i == 0:
            j -= 1
        elif j == 0:
            i -= 1
        else:
            a = acc[i - 1, j - 1]
            b = acc[i - 1, j]
            c = acc[i, j - 1]
            if a <= b and a <= c:
                i -= 1
                j -= 1
            elif b <= c:
                i -= 1
            else:
                j -= 1
    return float(acc[n - 1, m - 1]), pi[:k][::-1].copy(), pj[:k][::-1].copy()


cdef inline double _sigmoid(double x) nogil:
    if x >= 0:
        return 1.0 / (1.0 + exp(-x))
    cdef double e = exp(x)
    return e / (1.0 + e)


def gru_forward(double[:, ::1] xproj, double[:, ::1] U, double[::1] b_hh, double[::1] h0):
    """Run a GRU over pre-projected inputs ``xproj = x @ W_ih + b_ih``.

    Gate order in the 3H axis is (reset, update, candidate). Returns the
    hidden sequence and the per-step caches consumed by ``gru_backward``.
    """
    cdef Py_ssize_t T = xproj.shape[0], H = h0.shape[0]
    cdef Py_ssize_t t, k, c
    cdef double acc_r, acc_z, acc_n, hk, r, z, nval
    hs_arr = np.empty((T, H), dtype=np.float64)
    r_arr = np.empty((T, H), dtype=np.float64)
    z_arr = np.empty((T, H), dtype=np.float64)
    n_arr = np.empty((T, H), dtype=np.float64)
    ghn_arr = np.empty((T, H), dtype=np.float64)
    cdef double[:, ::1] hs = hs_arr
    cdef double[:, ::1] rs = r_arr
    cdef double[:, ::1] zs = z_arr
    cdef double[:, ::1] ns = n_arr
    cdef double[:, ::1] ghn = ghn_arr
    prev_arr = np.array(h0, dtype=np.float64)
    cdef double[::1] prev = prev_arr

    for t in range(T):
        for c in range(H):
            acc_r = b_hh[c]
            acc_z = b_hh[H + c]
            acc_n = b_hh[2 * H + c]
            for k in range(H):
                hk = prev[k]
                acc_r += hk * U[k, c]
                acc_z += hk * U[k, H + c]
                acc_n += hk * U[k, 2 * H + c]
            r = _sigmoid(xproj[t, c] + acc_r)
            z = _sigmoid(xproj[t, H + c] + acc_z)
            nval = tanh(xproj[t, 2 * H + c] + r * acc_n)
            rs[t, c] = r
            zs[t, c] = z
            ns[t, c] = nval
            ghn[t, c] = acc_n
        for c in range(H):
            hs[t, c] = (1.0 - zs[t, c]) * ns[t, c] + zs[t, c] * prev[c]
        for c in range(H):
            prev[c] = hs[t, c]
    return hs_arr, (r_arr, z_arr, n_arr, ghn_arr)


def gru_backward(double[:, ::1] dhs, double[::1] h0, hs_arr, cache, double[:, ::1] U):
    """Backpropagate through ``gru_forward``.

    Returns ``(dxproj, dU, db_hh, dh0)``.
    """
    r_arr, z_arr, n_arr, ghn_arr = cache
    cdef double[:, ::1] hs = hs_arr
    cdef double[:, ::1] rs = r_arr
    cdef double[:, ::1] zs = z_arr
    cdef double[:, ::1] ns = n_arr
    cdef double[:, ::1] ghn = ghn_arr
    cdef Py_ssize_t T = dhs.shape[0], H = h0.shape[0]
    cdef Py_ssize_t t, k, c
    cdef double dh, hprev, dn, dz, dnp, dr, s

    dx_arr = np.zeros((T, 3 * H), dtype=np.float64)
    dU_arr = np.zeros((H, 3 * H), dtype=np.float64)
    db_arr = np.zeros(3 * H, dtype=np.float64)
    dnext_arr = np.zeros(H, dtype=np.float64)
    dprev_arr = np.zeros(H, dtype=np.float64)
    dgh_arr = np.zeros(3 * H, dtype=np.float64)
    cdef double[:, ::1] dx = dx_arr
    cdef double[:, ::1] dU = dU_arr
    cdef double[::1] db = db_arr
    cdef double[::1] dnext = dnext_arr
    cdef double[::1] dprev = dprev_arr
    cdef double[::1] dgh = dgh_arr

    for t in range(T - 1, -1, -1):
        for c in range(H):
            dh = dhs[t, c] + dnext[c]
            if t > 0:
                hprev = hs[t - 1, c]
            else:
                hprev = h0[c]
            dn = dh * (1.0 - zs[t, c])
            dz = dh * (hprev - ns[t, c])
            dprev[c] = dh * zs[t, c]
            dnp = dn * (1.0 - ns[t, c] * ns[t, c])
            dr = dnp * ghn[t, c] * rs[t, c] * (1.0 - rs[t, c])
            dz = dz * zs[t, c] * (1.0 - zs[t, c])
            dx[t, c] = dr
            dx[t, H + c] = dz
            dx[t, 2 * H + c] = dnp
            dgh[c] = dr
            dgh[H + c] = dz
            dgh[2 * H + c] = dnp * rs[t, c]
        for c in range(3 * H):
            db[c] += dgh[c]
        for k in range(H):
            if t > 0:
                hprev = hs[t - 1, k]
            else:
                hprev = h0[k]
            s = 0.0
            for c in range(3 * H):
                dU[k, c] += hprev * dgh[c]
                s += dgh[c] * U[k, c]
            dnext[k] = dprev[k] + s
    return dx_arr, dU_arr, db_arr, dnext_arr.copy()
