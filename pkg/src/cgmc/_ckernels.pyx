# cython: language_level=3
"""Compiled sampling kernels.

Mirror of ``_pykernels``; see that module for the argument and counter
conventions.  Loops run without the GIL so chains can share a thread pool.
"""
from libc.math cimport exp
from libc.stdint cimport int64_t, uint64_t, uint8_t

NAME = "cython"


cdef inline double _clamp(double lr) noexcept nogil:
    if lr > 700.0:
        return 700.0
    if lr < -700.0:
        return -700.0
    return lr


def classical_block(uint8_t[::1] occ, int64_t total, double K, int long_kind,
                    double j_over_n, const double[::1] tab, Py_ssize_t L, double h,
                    const double[:, ::1] u, int64_t t0, int64_t burn_in, int64_t thinning,
                    int64_t[::1] series, Py_ssize_t spos, int64_t[::1] hist, uint64_t code,
                    int64_t[::1] counters, double[::1] fstats):
    cdef Py_ssize_t N = occ.shape[0]
    cdef Py_ssize_t n_steps = u.shape[0]
    cdef bint use_hist = hist.shape[0] > 0
    cdef int64_t c_prop = 0, c_acc = 0, c_pairs = 0
    cdef double amin = fstats[0]
    cdef int64_t t = t0
    cdef Py_ssize_t i, x, left, right, dist, y, z
    cdef int ox, d, nn
    cdef double lf, a, delta, lr, alpha
    with nogil:
        for i in range(n_steps):
            x = <Py_ssize_t>(u[i, 0] * N)
            ox = occ[x]
            d = 1 - 2 * ox
            left = N - 1 if x == 0 else x - 1
            right = 0 if x == N - 1 else x + 1
            if left == right:
                nn = occ[left]
            else:
                nn = occ[left] + occ[right]
            if long_kind == 0:
                lf = j_over_n * <double>(total - ox)
                c_pairs += 1
            else:
                lf = 0.0
                for dist in range(1, L + 1):
                    y = x + dist
                    if y >= N:
                        y -= N
                    z = x - dist
                    if z < 0:
                        z += N
                    if y == z:
                        lf += tab[dist] * <double>occ[y]
                        c_pairs += 1
                    else:
                        lf += tab[dist] * <double>(occ[y] + occ[z])
                        c_pairs += 2
            a = K * <double>nn + lf
            delta = <double>(-d) * a - h * <double>d
            lr = _clamp(-delta)
            alpha = exp(lr)
            if alpha < amin:
                amin = alpha
            c_prop += 1
            if u[i, 1] < alpha:
                occ[x] = 1 - ox
                total += d
                if use_hist:
                    code ^= (<uint64_t>1) << x
                c_acc += 1
            if t >= burn_in and (t - burn_in) % thinning == 0:
                series[spos] = total
                spos += 1
                if use_hist:
                    hist[code] += 1
            t += 1
    counters[0] += c_prop
    counters[1] += c_prop
    counters[2] += c_prop
    counters[3] += c_acc
    counters[4] += c_pairs
    fstats[0] = amin
    return total, spos, code


def coupled_block(uint8_t[::1] occ, int64_t[::1] cell, int64_t total, int64_t q, double K,
                  const double[:, ::1] jbar, const double[::1] jdiag, const double[::1] logc,
                  const int64_t[::1] res_ptr, const int64_t[::1] res_dy, const double[::1] res_val, double h,
                  const double[:, ::1] u, int64_t t0, int64_t burn_in, int64_t thinning,
                  int64_t[::1] series, Py_ssize_t spos, int64_t[::1] hist, uint64_t code,
                  int64_t[::1] counters, double[::1] fstats):
    cdef Py_ssize_t N = occ.shape[0]
    cdef Py_ssize_t M = cell.shape[0]
    cdef Py_ssize_t n_steps = u.shape[0]
    cdef bint use_hist = hist.shape[0] > 0
    cdef int64_t c_prop = 0, c_cacc = 0, c_feval = 0, c_facc = 0, c_pairs = 0, c_cpairs = 0
    cdef double amin = fstats[0]
    cdef int64_t t = t0
    cdef Py_ssize_t i, k, l, x, left, right, base, r, p, y, j, ii
    cdef int64_t n, s, own, count
    cdef int want, nn
    cdef double fld, dcoarse, lrc, acc, a, dfine, alpha
    with nogil:
        for i in range(n_steps):
            c_prop += 1
            k = <Py_ssize_t>(u[i, 0] * M)
            s = -1 if u[i, 1] < 0.5 else 1
            n = cell[k]
            if 0 <= n + s <= q:
                fld = 0.0
                # jbar has an exact zero diagonal, so the own cell adds nothing
                for l in range(M):
                    fld += jbar[k, l] * <double>cell[l]
                c_cpairs += M
                own = n if s > 0 else n - 1
                dcoarse = <double>(-s) * (fld + jdiag[k] * <double>own) - h * <double>s
                lrc = _clamp(-dcoarse + (logc[n + s] - logc[n]))
                if u[i, 3] < exp(lrc):
                    c_cacc += 1
                    want = 0 if s > 0 else 1
                    count = q - n if s > 0 else n
                    j = <Py_ssize_t>(u[i, 2] * count)
                    base = k * q
                    x = base
                    for ii in range(q):
                        if occ[base + ii] == want:
                            if j == 0:
                                x = base + ii
                                break
                            j -= 1
                    left = N - 1 if x == 0 else x - 1
                    right = 0 if x == N - 1 else x + 1
                    if left == right:
                        nn = occ[left]
                    else:
                        nn = occ[left] + occ[right]
                    r = x % q
                    acc = 0.0
                    for p in range(res_ptr[r], res_ptr[r + 1]):
                        y = x + res_dy[p]
                        if y >= N:
                            y -= N
                        acc += res_val[p] * <double>occ[y]
                    c_pairs += res_ptr[r + 1] - res_ptr[r]
                    a = K * <double>nn + acc
                    dfine = <double>(-s) * a
                    alpha = exp(_clamp(-dfine))
                    c_feval += 1
                    if alpha < amin:
                        amin = alpha
                    if u[i, 4] < alpha:
                        occ[x] = 1 - occ[x]
                        cell[k] = n + s
                        total += s
                        if use_hist:
                            code ^= (<uint64_t>1) << x
                        c_facc += 1
            if t >= burn_in and (t - burn_in) % thinning == 0:
                series[spos] = total
                spos += 1
                if use_hist:
                    hist[code] += 1
            t += 1
    counters[0] += c_prop
    counters[1] += c_cacc
    counters[2] += c_feval
    counters[3] += c_facc
    counters[4] += c_pairs
    counters[5] += c_cpairs
    fstats[0] = amin
    return total, spos, code
