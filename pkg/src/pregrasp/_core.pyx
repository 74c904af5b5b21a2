# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled fused energy kernel.

Same signature and semantics as :func:`pregrasp._fallback.evaluate`; forces
are accumulated straight into per-link force/moment sums instead of being
stored per point.
"""

from libc.math cimport sqrt, fabs, sin, cos, hypot

cdef int GOLDEN_ITERS = 64
cdef double KINK_STEP = 1e-7
cdef double INVPHI = 0.6180339887498949
cdef double EPS = 1e-12


cdef inline double dot3(const double* a, const double* b) noexcept nogil:
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]


cdef inline void cross3(const double* a, const double* b, double* out) noexcept nogil:
    out[0] = a[1] * b[2] - a[2] * b[1]
    out[1] = a[2] * b[0] - a[0] * b[2]
    out[2] = a[0] * b[1] - a[1] * b[0]


cdef inline void matvec(const double* M, const double* v, double* out) noexcept nogil:
    # M row-major 3x3
    out[0] = M[0] * v[0] + M[1] * v[1] + M[2] * v[2]
    out[1] = M[3] * v[0] + M[4] * v[1] + M[5] * v[2]
    out[2] = M[6] * v[0] + M[7] * v[1] + M[8] * v[2]


cdef inline void matTvec(const double* M, const double* v, double* out) noexcept nogil:
    out[0] = M[0] * v[0] + M[3] * v[1] + M[6] * v[2]
    out[1] = M[1] * v[0] + M[4] * v[1] + M[7] * v[2]
    out[2] = M[2] * v[0] + M[5] * v[1] + M[8] * v[2]


cdef inline void matmul(const double* A, const double* B, double* out) noexcept nogil:
    cdef int i, j
    for i in range(3):
        for j in range(3):
            out[3 * i + j] = A[3 * i] * B[j] + A[3 * i + 1] * B[3 + j] + A[3 * i + 2] * B[6 + j]


cdef inline void axis_rot(const double* ax, double angle, double* out) noexcept nogil:
    cdef double x = ax[0], y = ax[1], z = ax[2]
    cdef double c = cos(angle), s = sin(angle)
    cdef double C = 1.0 - c
    out[0] = c + x * x * C
    out[1] = x * y * C - z * s
    out[2] = x * z * C + y * s
    out[3] = y * x * C + z * s
    out[4] = c + y * y * C
    out[5] = y * z * C - x * s
    out[6] = z * x * C - y * s
    out[7] = z * y * C + x * s
    out[8] = c + z * z * C


cdef inline void outer_sub(double* H, const double* g, double scale) noexcept nogil:
    # H = (I - g g^T) * scale
    cdef int i, j
    for i in range(3):
        for j in range(3):
            H[3 * i + j] = ((1.0 if i == j else 0.0) - g[i] * g[j]) * scale


cdef int sdf_local(long kind, const double* dims, const double* p, double* d, double* g, double* H, bint want_h) noexcept nogil:
    """Primitive SDF in its own frame; returns 1 when the gradient is undefined."""
    cdef double v[3]
    cdef double q[3]
    cdef double o[3]
    cdef double s[3]
    cdef double u[3]
    cdef double ez[3]
    cdef double Hrho[9]
    cdef double L, r, h, zc, inner, rho, a, c, sz, Lsafe
    cdef int i, j, k, deg = 0
    cdef bint side, outside, rim, axis_pts
    if want_h:
        for i in range(9):
            H[i] = 0.0
    if kind == 0 or kind == 3:
        r = dims[0]
        v[0] = p[0]
        v[1] = p[1]
        v[2] = p[2]
        side = False
        if kind == 3:
            h = dims[1]
            zc = p[2]
            if zc < -h:
                zc = -h
            elif zc > h:
                zc = h
            v[2] = p[2] - zc
            side = fabs(p[2]) < h
        L = sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2])
        if L < EPS:
            g[0] = 0.0
            g[1] = 0.0
            g[2] = 1.0
            d[0] = L - r
            return 1
        g[0] = v[0] / L
        g[1] = v[1] / L
        g[2] = v[2] / L
        d[0] = L - r
        if want_h:
            outer_sub(H, g, 1.0 / L)
            if side:
                H[8] -= 1.0 / L
        return 0
    elif kind == 1:
        L = 0.0
        for i in range(3):
            s[i] = 1.0 if p[i] >= 0 else -1.0
            q[i] = fabs(p[i]) - dims[i]
            o[i] = q[i] if q[i] > 0.0 else 0.0
            L += o[i] * o[i]
        L = sqrt(L)
        outside = L > 0
        if outside:
            d[0] = L
            for i in range(3):
                g[i] = s[i] * o[i] / L
            if want_h:
                for i in range(3):
                    for j in range(3):
                        if q[i] > 0 and q[j] > 0:
                            H[3 * i + j] = ((1.0 if i == j else 0.0) - g[i] * g[j]) / L
        else:
            k = 0
            inner = q[0]
            for i in range(1, 3):
                if q[i] > inner:
                    inner = q[i]
                    k = i
            d[0] = inner
            g[0] = 0.0
            g[1] = 0.0
            g[2] = 0.0
            g[k] = s[k]
        return 0
    else:
        r = dims[0]
        h = dims[1]
        rho = hypot(p[0], p[1])
        axis_pts = rho < EPS
        if axis_pts:
            u[0] = 1.0
            u[1] = 0.0
        else:
            u[0] = p[0] / rho
            u[1] = p[1] / rho
        u[2] = 0.0
        sz = 1.0 if p[2] >= 0 else -1.0
        a = rho - r
        c = fabs(p[2]) - h
        ez[0] = 0.0
        ez[1] = 0.0
        ez[2] = sz
        rim = a > 0 and c > 0
        side = (not rim) and a > c
        if rim:
            L = hypot(a, c)
            d[0] = L
            for i in range(3):
                g[i] = (a * u[i] + c * ez[i]) / L
        else:
            d[0] = a if a > c else c
            for i in range(3):
                g[i] = u[i] if side else ez[i]
        deg = 1 if (axis_pts and side) else 0
        if want_h and (side or rim):
            for i in range(9):
                Hrho[i] = 0.0
            if not axis_pts:
                Hrho[0] = (1.0 - u[0] * u[0]) / rho
                Hrho[1] = -u[0] * u[1] / rho
                Hrho[3] = -u[1] * u[0] / rho
                Hrho[4] = (1.0 - u[1] * u[1]) / rho
            if side:
                for i in range(9):
                    H[i] = Hrho[i]
            else:
                for i in range(3):
                    for j in range(3):
                        H[3 * i + j] = (u[i] * u[j] + ez[i] * ez[j] - g[i] * g[j] + a * Hrho[3 * i + j]) / L
        return deg


cdef int sdf_world(long kind, const double* dims, const double* R, const double* t, const double* x,
                   double* d, double* g, double* H, bint want_h) noexcept nogil:
    cdef double dx[3]
    cdef double loc[3]
    cdef double gl[3]
    cdef double Hl[9]
    cdef double tmp[9]
    cdef int i, j, k, deg
    for i in range(3):
        dx[i] = x[i] - t[i]
    matTvec(R, dx, loc)
    deg = sdf_local(kind, dims, loc, d, gl, Hl, want_h)
    matvec(R, gl, g)
    if want_h:
        # H = R Hl R^T
        for i in range(3):
            for j in range(3):
                tmp[3 * i + j] = R[3 * i] * Hl[j] + R[3 * i + 1] * Hl[3 + j] + R[3 * i + 2] * Hl[6 + j]
        for i in range(3):
            for j in range(3):
                H[3 * i + j] = tmp[3 * i] * R[3 * j] + tmp[3 * i + 1] * R[3 * j + 1] + tmp[3 * i + 2] * R[3 * j + 2]
    return deg


cdef inline void add_force(double[:, ::1] Fl, double[:, ::1] Ml, long link, const double* x, const double* f, double scale) noexcept nogil:
    cdef double fs[3]
    cdef double m[3]
    fs[0] = f[0] * scale
    fs[1] = f[1] * scale
    fs[2] = f[2] * scale
    cross3(x, fs, m)
    Fl[link, 0] += fs[0]
    Fl[link, 1] += fs[1]
    Fl[link, 2] += fs[2]
    Ml[link, 0] += m[0]
    Ml[link, 1] += m[1]
    Ml[link, 2] += m[2]


cdef inline double clamp01(double x) noexcept nogil:
    return 0.0 if x < 0.0 else (1.0 if x > 1.0 else x)


cdef void segment_closest(const double* p1, const double* q1, const double* p2, const double* q2,
                          double* s_out, double* t_out) noexcept nogil:
    cdef double d1[3]
    cdef double d2[3]
    cdef double r[3]
    cdef int i
    for i in range(3):
        d1[i] = q1[i] - p1[i]
        d2[i] = q2[i] - p2[i]
        r[i] = p1[i] - p2[i]
    cdef double a = dot3(d1, d1), e = dot3(d2, d2), f = dot3(d2, r)
    cdef double c = dot3(d1, r), b = dot3(d1, d2)
    cdef double eps = 1e-18, s = 0.0, t = 0.0, denom
    if a <= eps and e <= eps:
        pass
    elif a <= eps:
        t = clamp01(f / e)
    elif e <= eps:
        s = clamp01(-c / a)
    else:
        denom = a * e - b * b
        s = clamp01((b * f - c * e) / denom) if denom > 1e-18 else 0.0
        t = (b * s + f) / e
        if t < 0.0:
            t = 0.0
            s = clamp01(-c / a)
        elif t > 1.0:
            t = 1.0
            s = clamp01((b - c) / a)
    s_out[0] = s
    t_out[0] = t


cdef inline double box_dist(const double* p0, const double* seg, double t, const double* half) noexcept nogil:
    cdef double L = 0.0, qm = -1e300, qi, pi
    cdef int i
    for i in range(3):
        pi = p0[i] + t * seg[i]
        qi = fabs(pi) - half[i]
        if qi > 0:
            L += qi * qi
        if qi > qm:
            qm = qi
    return sqrt(L) + (qm if qm < 0.0 else 0.0)


cdef double segment_box_closest(const double* p0, const double* seg, const double* half) noexcept nogil:
    cdef double lo = 0.0, hi = 1.0
    cdef double x1 = hi - INVPHI * (hi - lo)
    cdef double x2 = lo + INVPHI * (hi - lo)
    cdef double f1 = box_dist(p0, seg, x1, half)
    cdef double f2 = box_dist(p0, seg, x2, half)
    cdef double t, best, fe
    cdef int it
    for it in range(GOLDEN_ITERS):
        if f1 < f2:
            hi = x2
            x2 = x1
            f2 = f1
            x1 = hi - INVPHI * (hi - lo)
            f1 = box_dist(p0, seg, x1, half)
        else:
            lo = x1
            x1 = x2
            f1 = f2
            x2 = lo + INVPHI * (hi - lo)
            f2 = box_dist(p0, seg, x2, half)
    t = 0.5 * (lo + hi)
    best = box_dist(p0, seg, t, half)
    fe = box_dist(p0, seg, 0.0, half)
    if fe <= best:
        t = 0.0
        best = fe
    fe = box_dist(p0, seg, 1.0, half)
    if fe < best:
        t = 1.0
    return t


cdef void kink_direction(const double* p0, const double* seg, double t, const double* half, double* g) noexcept nogil:
    cdef double pm[3]
    cdef double pp[3]
    cdef double gm[3]
    cdef double gp[3]
    cdef double dd, sm, sp
    cdef int i
    for i in range(3):
        pm[i] = p0[i] + (t - KINK_STEP) * seg[i]
        pp[i] = p0[i] + (t + KINK_STEP) * seg[i]
    sdf_local(1, half, pm, &dd, gm, NULL, False)
    sdf_local(1, half, pp, &dd, gp, NULL, False)
    sm = dot3(gm, seg)
    sp = dot3(gp, seg)
    if sp - sm <= 1e-15:
        return
    for i in range(3):
        g[i] = (sp * gm[i] - sm * gp[i]) / (sp - sm)


cdef double self_collision(const long[::1] p_link, const long[::1] p_kind, const double[:, ::1] p_a,
                           const double[:, ::1] p_b, const double[:, :, ::1] p_R, const double[::1] p_r,
                           const long[:, ::1] pairs, double[:, :, ::1] Rs, double[:, ::1] ts, double delta,
                           double scale, bint want_grad, double[:, ::1] Fl, double[:, ::1] Ml) noexcept nogil:
    cdef Py_ssize_t P = pairs.shape[0], k
    cdef long ia, ib, la, lb
    cdef double A0[3]
    cdef double A1[3]
    cdef double B0[3]
    cdef double B1[3]
    cdef double c1[3]
    cdef double c2[3]
    cdef double v[3]
    cdef double u[3]
    cdef double BR[9]
    cdef double Bc[3]
    cdef double l0[3]
    cdef double l1[3]
    cdef double seg[3]
    cdef double sl[3]
    cdef double gl[3]
    cdef double tmp[3]
    cdef double s, t, L, dist, pen, dEdd, d
    cdef double E = 0.0
    cdef int i
    for k in range(P):
        ia = pairs[k, 0]
        ib = pairs[k, 1]
        la = p_link[ia]
        lb = p_link[ib]
        matvec(&Rs[la, 0, 0], &p_a[ia, 0], A0)
        matvec(&Rs[la, 0, 0], &p_b[ia, 0], A1)
        for i in range(3):
            A0[i] += ts[la, i]
            A1[i] += ts[la, i]
        if p_kind[ib] == 0:
            matvec(&Rs[lb, 0, 0], &p_a[ib, 0], B0)
            matvec(&Rs[lb, 0, 0], &p_b[ib, 0], B1)
            for i in range(3):
                B0[i] += ts[lb, i]
                B1[i] += ts[lb, i]
            segment_closest(A0, A1, B0, B1, &s, &t)
            for i in range(3):
                c1[i] = A0[i] + s * (A1[i] - A0[i])
                c2[i] = B0[i] + t * (B1[i] - B0[i])
                v[i] = c1[i] - c2[i]
            L = sqrt(dot3(v, v))
            if L < 1e-12:
                u[0] = 0.0
                u[1] = 0.0
                u[2] = 1.0
            else:
                for i in range(3):
                    u[i] = v[i] / L
            dist = L - p_r[ia] - p_r[ib]
        else:
            matmul(&Rs[lb, 0, 0], &p_R[ib, 0, 0], BR)
            matvec(&Rs[lb, 0, 0], &p_a[ib, 0], Bc)
            for i in range(3):
                Bc[i] += ts[lb, i]
                v[i] = A0[i] - Bc[i]
            matTvec(BR, v, l0)
            for i in range(3):
                v[i] = A1[i] - Bc[i]
            matTvec(BR, v, l1)
            for i in range(3):
                seg[i] = l1[i] - l0[i]
            t = segment_box_closest(l0, seg, &p_b[ib, 0])
            for i in range(3):
                sl[i] = l0[i] + t * seg[i]
            sdf_local(1, &p_b[ib, 0], sl, &d, gl, NULL, False)
            if d < 0.0 and 0.0 < t < 1.0:
                kink_direction(l0, seg, t, &p_b[ib, 0], gl)
            matvec(BR, sl, c1)
            for i in range(3):
                c1[i] += Bc[i]
                c2[i] = c1[i]
            matvec(BR, gl, u)
            dist = d - p_r[ia]
        pen = delta - dist
        if pen <= 0.0:
            continue
        E += pen * pen
        if want_grad:
            dEdd = -2.0 * pen * scale
            add_force(Fl, Ml, la, c1, u, dEdd)
            add_force(Fl, Ml, lb, c2, u, -dEdd)
    return E


def evaluate(
    const long[::1] parent, const long[::1] qidx, const double[:, ::1] axis, const double[:, :, ::1] orig_R,
    const double[:, ::1] orig_t, const double[::1] lower, const double[::1] upper,
    const long[::1] s_link, const double[:, ::1] s_local,
    const long[::1] p_link, const long[::1] p_kind, const double[:, ::1] p_a, const double[:, ::1] p_b,
    const double[:, :, ::1] p_R, const double[::1] p_r, const long[:, ::1] pairs,
    const long[::1] o_kind, const double[:, ::1] o_dims, const double[:, :, ::1] o_R, const double[:, ::1] o_t,
    int table, const long[:, ::1] contacts, const double[::1] weights,
    const double[::1] base_t, const double[:, ::1] base_R, const double[::1] q,
    double[::1] terms, double[::1] grad, int want_grad,
):
    """Evaluate every energy term and, optionally, the weighted gradient.

    See :func:`pregrasp._fallback.evaluate` for the argument layout.
    Returns the number of contacts with an undefined surface normal.
    """
    cdef double w_fc = weights[0], lam_p = weights[1], lam_sp = weights[2], lam_q = weights[3]
    cdef double lam_d = weights[4], attract = weights[5], tau = weights[6], clearance = weights[7]
    cdef Py_ssize_t L = parent.shape[0], N = s_link.shape[0], O = o_kind.shape[0]
    cdef Py_ssize_t nc = contacts.shape[1], nq = q.shape[0]
    import numpy as np
    Rs_arr = np.empty((L, 3, 3))
    ts_arr = np.empty((L, 3))
    Fl_arr = np.zeros((L, 3))
    Ml_arr = np.zeros((L, 3))
    X_arr = np.empty((N, 3))
    cdef double[:, :, ::1] Rs = Rs_arr
    cdef double[:, ::1] ts = ts_arr
    cdef double[:, ::1] Fl = Fl_arr
    cdef double[:, ::1] Ml = Ml_arr
    cdef double[:, ::1] X = X_arr
    cdef double tmpR[9]
    cdef double rot[9]
    cdef double tv[3]
    cdef double d, pen, Ep = 0.0, S = 0.0, Esp, Eq = 0.0, over, under
    cdef double g[3]
    cdef double H[9]
    cdef double F[3]
    cdef double T[3]
    cdef double r[3]
    cdef double n[3]
    cdef double rxT[3]
    cdef double nxT[3]
    cdef double dx[3]
    cdef double a[3]
    cdef double v[3]
    cdef double fc, dsum
    cdef int degenerate = 0
    cdef Py_ssize_t i, j, k, c, idx
    cdef long pi, jq, li
    cdef bint wg = want_grad != 0

    with nogil:
        # forward kinematics
        for i in range(L):
            pi = parent[i]
            if pi < 0:
                matmul(&base_R[0, 0], &orig_R[i, 0, 0], tmpR)
                matvec(&base_R[0, 0], &orig_t[i, 0], tv)
                for k in range(3):
                    ts[i, k] = tv[k] + base_t[k]
            else:
                matmul(&Rs[pi, 0, 0], &orig_R[i, 0, 0], tmpR)
                matvec(&Rs[pi, 0, 0], &orig_t[i, 0], tv)
                for k in range(3):
                    ts[i, k] = tv[k] + ts[pi, k]
            jq = qidx[i]
            if jq >= 0:
                axis_rot(&axis[i, 0], q[jq], rot)
                matmul(tmpR, rot, &Rs[i, 0, 0])
            else:
                for k in range(9):
                    Rs[i, k // 3, k % 3] = tmpR[k]

        # posed samples, penetration and attraction
        for i in range(N):
            li = s_link[i]
            matvec(&Rs[li, 0, 0], &s_local[i, 0], &X[i, 0])
            for k in range(3):
                X[i, k] += ts[li, k]
            for j in range(O):
                sdf_world(o_kind[j], &o_dims[j, 0], &o_R[j, 0, 0], &o_t[j, 0], &X[i, 0], &d, g, H, False)
                if d < 0.0:
                    Ep += d * d
                    if wg:
                        add_force(Fl, Ml, li, &X[i, 0], g, lam_p * 2.0 * d)
                elif tau > 0.0 and d > 0.0 and d <= tau:
                    S += d
                    if wg and attract != 0.0:
                        add_force(Fl, Ml, li, &X[i, 0], g, attract)
            if table and X[i, 2] < 0.0:
                Ep += X[i, 2] * X[i, 2]
                if wg:
                    g[0] = 0.0
                    g[1] = 0.0
                    g[2] = 1.0
                    add_force(Fl, Ml, li, &X[i, 0], g, lam_p * 2.0 * X[i, 2])

        # force closure
        for j in range(O):
            for k in range(3):
                F[k] = 0.0
                T[k] = 0.0
            dsum = 0.0
            for c in range(nc):
                idx = contacts[j, c]
                degenerate += sdf_world(o_kind[j], &o_dims[j, 0], &o_R[j, 0, 0], &o_t[j, 0], &X[idx, 0], &d, g, H, False)
                for k in range(3):
                    n[k] = -g[k]
                    r[k] = X[idx, k] - o_t[j, k]
                    F[k] += n[k]
                cross3(r, n, v)
                for k in range(3):
                    T[k] += v[k]
                dsum += d * d
            terms[j] = dot3(F, F) + dot3(T, T) + lam_d * dsum
            if wg and w_fc != 0.0:
                for c in range(nc):
                    idx = contacts[j, c]
                    sdf_world(o_kind[j], &o_dims[j, 0], &o_R[j, 0, 0], &o_t[j, 0], &X[idx, 0], &d, g, H, True)
                    for k in range(3):
                        n[k] = -g[k]
                        r[k] = X[idx, k] - o_t[j, k]
                    cross3(r, T, rxT)
                    cross3(n, T, nxT)
                    for k in range(3):
                        v[k] = rxT[k] - F[k]
                    matvec(H, v, dx)
                    for k in range(3):
                        dx[k] = 2.0 * (dx[k] + nxT[k] + lam_d * d * g[k])
                    add_force(Fl, Ml, s_link[idx], &X[idx, 0], dx, w_fc)

        for k in range(nq):
            over = q[k] - upper[k]
            under = lower[k] - q[k]
            if over > 0.0:
                Eq += over * over
            if under > 0.0:
                Eq += under * under

        Esp = self_collision(p_link, p_kind, p_a, p_b, p_R, p_r, pairs, Rs, ts, clearance, lam_sp, wg, Fl, Ml)

        terms[O] = Ep
        terms[O + 1] = Esp
        terms[O + 2] = Eq
        terms[O + 3] = S

        if wg:
            for i in range(L - 1, 0, -1):
                pi = parent[i]
                for k in range(3):
                    Fl[pi, k] += Fl[i, k]
                    Ml[pi, k] += Ml[i, k]
            for k in range(grad.shape[0]):
                grad[k] = 0.0
            cross3(&base_t[0], &Fl[0, 0], v)
            for k in range(3):
                grad[k] = Fl[0, k]
                grad[3 + k] = Ml[0, k] - v[k]
            for i in range(L):
                jq = qidx[i]
                if jq >= 0:
                    matvec(&Rs[i, 0, 0], &axis[i, 0], a)
                    cross3(&ts[i, 0], &Fl[i, 0], v)
                    for k in range(3):
                        tv[k] = Ml[i, k] - v[k]
                    grad[6 + jq] = dot3(a, tv)
            for k in range(nq):
                over = q[k] - upper[k]
                under = lower[k] - q[k]
                if over > 0.0:
                    grad[6 + k] += lam_q * 2.0 * over
                elif under > 0.0:
                    grad[6 + k] -= lam_q * 2.0 * under
    return degenerate
