# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled training kernels.

Same calling convention as ``pyfallback``; see that module's docstring.
All loops are serial, so results are reproducible run to run.
"""

from libc.math cimport exp, log, tanh

import numpy as np

PROB_FLOOR = 1e-12

name = "cython"
compiled = True

cdef double _PROB_FLOOR = 1e-12


# --- linear regression ---

cdef double _linreg_loss_all(const double[::1] w, const double[:, ::1] X,
                             const double[:, ::1] Y) noexcept nogil:
    cdef Py_ssize_t n = X.shape[0], d = X.shape[1], o = Y.shape[1]
    cdef Py_ssize_t i, f, c
    cdef double pred, diff, total = 0.0
    for i in range(n):
        for c in range(o):
            pred = w[d * o + c]
            for f in range(d):
                pred += X[i, f] * w[f * o + c]
            diff = pred - Y[i, c]
            total += diff * diff
    return total / n


cdef void _linreg_grad_rows(const double[::1] w, const double[:, ::1] X,
                            const double[:, ::1] Y, const long long[::1] rows,
                            Py_ssize_t lo, Py_ssize_t hi,
                            double[::1] g) noexcept nogil:
    cdef Py_ssize_t d = X.shape[1], o = Y.shape[1]
    cdef Py_ssize_t m = hi - lo
    cdef Py_ssize_t t, i, f, c, k
    cdef double pred, coef
    cdef double scale = 2.0 / m
    for k in range(g.shape[0]):
        g[k] = 0.0
    for t in range(lo, hi):
        i = rows[t]
        for c in range(o):
            pred = w[d * o + c]
            for f in range(d):
                pred += X[i, f] * w[f * o + c]
            coef = scale * (pred - Y[i, c])
            for f in range(d):
                g[f * o + c] += coef * X[i, f]
            g[d * o + c] += coef


def linreg_loss(double[::1] w, double[:, ::1] X, double[:, ::1] Y):
    return _linreg_loss_all(w, X, Y)


def linreg_grad(double[::1] w, double[:, ::1] X, double[:, ::1] Y):
    g = np.zeros(w.shape[0], dtype=np.float64)
    cdef double[::1] gv = g
    cdef long long[::1] rows = np.arange(X.shape[0], dtype=np.int64)
    _linreg_grad_rows(w, X, Y, rows, 0, X.shape[0], gv)
    return g


def linreg_sgd_epoch(double[::1] w, double[:, ::1] X, double[:, ::1] Y,
                     long long[::1] perm, double lr, Py_ssize_t batch_size):
    cdef Py_ssize_t n = X.shape[0]
    cdef Py_ssize_t lo = 0, hi, k
    g = np.zeros(w.shape[0], dtype=np.float64)
    cdef double[::1] gv = g
    with nogil:
        while lo < n:
            hi = lo + batch_size
            if hi > n:
                hi = n
            _linreg_grad_rows(w, X, Y, perm, lo, hi, gv)
            for k in range(w.shape[0]):
                w[k] -= lr * gv[k]
            lo = hi


# --- multinomial logistic regression ---

cdef double _logreg_loss_all(const double[::1] w, const double[:, ::1] X,
                             const long long[::1] y,
                             double[::1] prob) noexcept nogil:
    cdef Py_ssize_t n = X.shape[0], d = X.shape[1], c = prob.shape[0]
    cdef Py_ssize_t i, f, k
    cdef double mx, s, p, total = 0.0
    for i in range(n):
        for k in range(c):
            s = w[d * c + k]
            for f in range(d):
                s += X[i, f] * w[f * c + k]
            prob[k] = s
        mx = prob[0]
        for k in range(1, c):
            if prob[k] > mx:
                mx = prob[k]
        s = 0.0
        for k in range(c):
            prob[k] = exp(prob[k] - mx)
            s += prob[k]
        p = prob[y[i]] / s
        if p < _PROB_FLOOR:
            p = _PROB_FLOOR
        total -= log(p)
    return total / n


cdef void _logreg_grad_rows(const double[::1] w, const double[:, ::1] X,
                            const long long[::1] y, const long long[::1] rows,
                            Py_ssize_t lo, Py_ssize_t hi,
                            double[::1] g, double[::1] prob) noexcept nogil:
    cdef Py_ssize_t d = X.shape[1], c = prob.shape[0]
    cdef Py_ssize_t m = hi - lo
    cdef Py_ssize_t t, i, f, k
    cdef double mx, s, coef
    for k in range(g.shape[0]):
        g[k] = 0.0
    for t in range(lo, hi):
        i = rows[t]
        for k in range(c):
            s = w[d * c + k]
            for f in range(d):
                s += X[i, f] * w[f * c + k]
            prob[k] = s
        mx = prob[0]
        for k in range(1, c):
            if prob[k] > mx:
                mx = prob[k]
        s = 0.0
        for k in range(c):
            prob[k] = exp(prob[k] - mx)
            s += prob[k]
        for k in range(c):
            coef = prob[k] / s
            if k == y[i]:
                coef -= 1.0
            coef /= m
            for f in range(d):
                g[f * c + k] += coef * X[i, f]
            g[d * c + k] += coef


def logreg_loss(double[::1] w, double[:, ::1] X, long long[::1] y):
    cdef Py_ssize_t c = w.shape[0] // (X.shape[1] + 1)
    prob = np.empty(c, dtype=np.float64)
    cdef double[::1] pv = prob
    return _logreg_loss_all(w, X, y, pv)


def logreg_grad(double[::1] w, double[:, ::1] X, long long[::1] y):
    cdef Py_ssize_t c = w.shape[0] // (X.shape[1] + 1)
    g = np.zeros(w.shape[0], dtype=np.float64)
    prob = np.empty(c, dtype=np.float64)
    cdef double[::1] gv = g
    cdef double[::1] pv = prob
    cdef long long[::1] rows = np.arange(X.shape[0], dtype=np.int64)
    _logreg_grad_rows(w, X, y, rows, 0, X.shape[0], gv, pv)
    return g


def logreg_sgd_epoch(double[::1] w, double[:, ::1] X, long long[::1] y,
                     long long[::1] perm, double lr, Py_ssize_t batch_size):
    cdef Py_ssize_t n = X.shape[0]
    cdef Py_ssize_t c = w.shape[0] // (X.shape[1] + 1)
    cdef Py_ssize_t lo = 0, hi, k
    g = np.zeros(w.shape[0], dtype=np.float64)
    prob = np.empty(c, dtype=np.float64)
    cdef double[::1] gv = g
    cdef double[::1] pv = prob
    with nogil:
        while lo < n:
            hi = lo + batch_size
            if hi > n:
                hi = n
            _logreg_grad_rows(w, X, y, perm, lo, hi, gv, pv)
            for k in range(w.shape[0]):
                w[k] -= lr * gv[k]
            lo = hi


# --- one-hidden-layer MLP (tanh, softmax cross-entropy) ---

cdef double _mlp_loss_all(const double[::1] w, const double[:, ::1] X,
                          const long long[::1] y, double[::1] hid,
                          double[::1] prob) noexcept nogil:
    cdef Py_ssize_t n = X.shape[0], d = X.shape[1]
    cdef Py_ssize_t h = hid.shape[0], c = prob.shape[0]
    cdef Py_ssize_t o1 = d * h, o2 = o1 + h, o3 = o2 + h * c
    cdef Py_ssize_t i, f, j, k
    cdef double s, mx, p, total = 0.0
    for i in range(n):
        for j in range(h):
            s = w[o1 + j]
            for f in range(d):
                s += X[i, f] * w[f * h + j]
            hid[j] = tanh(s)
        for k in range(c):
            s = w[o3 + k]
            for j in range(h):
                s += hid[j] * w[o2 + j * c + k]
            prob[k] = s
        mx = prob[0]
        for k in range(1, c):
            if prob[k] > mx:
                mx = prob[k]
        s = 0.0
        for k in range(c):
            prob[k] = exp(prob[k] - mx)
            s += prob[k]
        p = prob[y[i]] / s
        if p < _PROB_FLOOR:
            p = _PROB_FLOOR
        total -= log(p)
    return total / n


cdef void _mlp_grad_rows(const double[::1] w, const double[:, ::1] X,
                         const long long[::1] y, const long long[::1] rows,
                         Py_ssize_t lo, Py_ssize_t hi, double[::1] g,
                         double[::1] hid, double[::1] prob) noexcept nogil:
    cdef Py_ssize_t d = X.shape[1]
    cdef Py_ssize_t h = hid.shape[0], c = prob.shape[0]
    cdef Py_ssize_t o1 = d * h, o2 = o1 + h, o3 = o2 + h * c
    cdef Py_ssize_t m = hi - lo
    cdef Py_ssize_t t, i, f, j, k
    cdef double s, mx, dz1, dh
    for k in range(g.shape[0]):
        g[k] = 0.0
    for t in range(lo, hi):
        i = rows[t]
        for j in range(h):
            s = w[o1 + j]
            for f in range(d):
                s += X[i, f] * w[f * h + j]
            hid[j] = tanh(s)
        for k in range(c):
            s = w[o3 + k]
            for j in range(h):
                s += hid[j] * w[o2 + j * c + k]
            prob[k] = s
        mx = prob[0]
        for k in range(1, c):
            if prob[k] > mx:
                mx = prob[k]
        s = 0.0
        for k in range(c):
            prob[k] = exp(prob[k] - mx)
            s += prob[k]
        # prob becomes dz2 = (softmax - onehot) / m
        for k in range(c):
            prob[k] /= s
            if k == y[i]:
                prob[k] -= 1.0
            prob[k] /= m
            g[o3 + k] += prob[k]
        for j in range(h):
            dh = 0.0
            for k in range(c):
                dh += prob[k] * w[o2 + j * c + k]
                g[o2 + j * c + k] += hid[j] * prob[k]
            dz1 = dh * (1.0 - hid[j] * hid[j])
            for f in range(d):
                g[f * h + j] += dz1 * X[i, f]
            g[o1 + j] += dz1


def mlp_loss(double[::1] w, double[:, ::1] X, long long[::1] y,
             Py_ssize_t hidden):
    cdef Py_ssize_t c = (w.shape[0] - (X.shape[1] + 1) * hidden) // (hidden + 1)
    hid = np.empty(hidden, dtype=np.float64)
    prob = np.empty(c, dtype=np.float64)
    cdef double[::1] hv = hid
    cdef double[::1] pv = prob
    return _mlp_loss_all(w, X, y, hv, pv)


def mlp_grad(double[::1] w, double[:, ::1] X, long long[::1] y,
             Py_ssize_t hidden):
    cdef Py_ssize_t c = (w.shape[0] - (X.shape[1] + 1) * hidden) // (hidden + 1)
    g = np.zeros(w.shape[0], dtype=np.float64)
    hid = np.empty(hidden, dtype=np.float64)
    prob = np.empty(c, dtype=np.float64)
    cdef double[::1] gv = g
    cdef double[::1] hv = hid
    cdef double[::1] pv = prob
    cdef long long[::1] rows = np.arange(X.shape[0], dtype=np.int64)
    _mlp_grad_rows(w, X, y, rows, 0, X.shape[0], gv, hv, pv)
    return g


def mlp_sgd_epoch(double[::1] w, double[:, ::1] X, long long[::1] y,
                  long long[::1] perm, double lr, Py_ssize_t batch_size,
                  Py_ssize_t hidden):
    cdef Py_ssize_t n = X.shape[0]
    cdef Py_ssize_t c = (w.shape[0] - (X.shape[1] + 1) * hidden) // (hidden + 1)
    cdef Py_ssize_t lo = 0, hi, k
    g = np.zeros(w.shape[0], dtype=np.float64)
    hid = np.empty(hidden, dtype=np.float64)
    prob = np.empty(c, dtype=np.float64)
    cdef double[::1] gv = g
    cdef double[::1] hv = hid
    cdef double[::1] pv = prob
    with nogil:
        while lo < n:
            hi = lo + batch_size
            if hi > n:
                hi = n
            _mlp_grad_rows(w, X, y, perm, lo, hi, gv, hv, pv)
            for k in range(w.shape[0]):
                w[k] -= lr * gv[k]
            lo = hi
