"""Pure-Python sampling kernels.

Reference twin of ``_ckernels.pyx``: same arguments, same arithmetic in the
same order, so both backends produce identical chains from identical
uniforms.  Each step consumes one row of ``u`` (2 columns for the classical
chain, 5 for the coupled chain) whether or not every draw is needed.

Counter slots (``counters``): 0 proposed, 1 coarse accepted, 2 fine
evaluated, 3 fine accepted, 4 long-range pair terms, 5 coarse pair terms.
``fstats[0]`` tracks the smallest fine acceptance probability seen.
"""
from math import exp

NAME = "python"


def _clamp(lr):
    if lr > 700.0:
        return 700.0
    if lr < -700.0:
        return -700.0
    return lr


def classical_block(occ, total, K, long_kind, j_over_n, tab, L, h,
                    u, t0, burn_in, thinning, series, spos, hist, code,
                    counters, fstats):
    N = occ.shape[0]
    o = occ.tolist()
    w = tab.tolist()
    rows = u.tolist()
    use_hist = hist.shape[0] > 0
    c_prop = c_acc = c_pairs = 0
    amin = fstats[0]
    t = t0
    for u0, u1 in rows:
        x = int(u0 * N)
        ox = o[x]
        d = 1 - 2 * ox
        left = N - 1 if x == 0 else x - 1
        right = 0 if x == N - 1 else x + 1
        if left == right:
            nn = o[left]
        else:
            nn = o[left] + o[right]
        if long_kind == 0:
            lf = j_over_n * float(total - ox)
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
                    lf += w[dist] * float(o[y])
                    c_pairs += 1
                else:
                    lf += w[dist] * float(o[y] + o[z])
                    c_pairs += 2
        a = K * float(nn) + lf
        delta = float(-d) * a - h * float(d)
        lr = _clamp(-delta)
        alpha = exp(lr)
        if alpha < amin:
            amin = alpha
        c_prop += 1
        if u1 < alpha:
            o[x] = 1 - ox
            total += d
            if use_hist:
                code ^= 1 << x
            c_acc += 1
        if t >= burn_in and (t - burn_in) % thinning == 0:
            series[spos] = total
            spos += 1
            if use_hist:
                hist[code] += 1
        t += 1
    occ[:] = o
    counters[0] += c_prop
    counters[1] += c_prop
    counters[2] += c_prop
    counters[3] += c_acc
    counters[4] += c_pairs
    fstats[0] = amin
    return total, spos, code


def coupled_block(occ, cell, total, q, K, jbar, jdiag, logc,
                  res_ptr, res_dy, res_val, h,
                  u, t0, burn_in, thinning, series, spos, hist, code,
                  counters, fstats):
    N = occ.shape[0]
    M = cell.shape[0]
    o = occ.tolist()
    c = cell.tolist()
    jb = jbar.tolist()
    jd = jdiag.tolist()
    lc = logc.tolist()
    rp = res_ptr.tolist()
    rdy = res_dy.tolist()
    rv = res_val.tolist()
    rows = u.tolist()
    use_hist = hist.shape[0] > 0
    c_prop = c_cacc = c_feval = c_facc = c_pairs = c_cpairs = 0
    amin = fstats[0]
    t = t0
    for u0, u1, u2, u3, u4 in rows:
        c_prop += 1
        k = int(u0 * M)
        s = -1 if u1 < 0.5 else 1
        n = c[k]
        if 0 <= n + s <= q:
            row = jb[k]
            fld = 0.0
            # row[k] is an exact zero, so the own cell adds nothing
            for l in range(M):
                fld += row[l] * float(c[l])
            c_cpairs += M
            own = n if s > 0 else n - 1
            dcoarse = float(-s) * (fld + jd[k] * float(own)) - h * float(s)
            lrc = _clamp(-dcoarse + (lc[n + s] - lc[n]))
            if u3 < exp(lrc):
                c_cacc += 1
                want = 0 if s > 0 else 1
                count = q - n if s > 0 else n
                j = int(u2 * count)
                base = k * q
                x = base
                for i in range(q):
                    if o[base + i] == want:
                        if j == 0:
                            x = base + i
                            break
                        j -= 1
                left = N - 1 if x == 0 else x - 1
                right = 0 if x == N - 1 else x + 1
                if left == right:
                    nn = o[left]
                else:
                    nn = o[left] + o[right]
                r = x % q
                acc = 0.0
                for p in range(rp[r], rp[r + 1]):
                    y = x + rdy[p]
                    if y >= N:
                        y -= N
                    acc += rv[p] * float(o[y])
                c_pairs += rp[r + 1] - rp[r]
                a = K * float(nn) + acc
                dfine = float(-s) * a
                alpha = exp(_clamp(-dfine))
                c_feval += 1
                if alpha < amin:
                    amin = alpha
                if u4 < alpha:
                    o[x] = 1 - o[x]
                    c[k] = n + s
                    total += s
                    if use_hist:
                        code ^= 1 << x
                    c_facc += 1
        if t >= burn_in and (t - burn_in) % thinning == 0:
            series[spos] = total
            spos += 1
            if use_hist:
                hist[code] += 1
        t += 1
    occ[:] = o
    cell[:] = c
    counters[0] += c_prop
    counters[1] += c_cacc
    counters[2] += c_feval
    counters[3] += c_facc
    counters[4] += c_pairs
    counters[5] += c_cpairs
    fstats[0] = amin
    return total, spos, code
