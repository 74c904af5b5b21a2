"""Pure-numpy implementation of the fused energy kernel.

Mirrors ``_core.pyx`` argument for argument; :mod:`pregrasp.backend`
selects one of the two at import time.
"""

import numpy as np

from .geometry import KINDS, primitive_sdf

GOLDEN_ITERS = 64
KINK_STEP = 1e-7
_INVPHI = (np.sqrt(5.0) - 1.0) / 2.0


def _axis_rot(axis, angle):
    x, y, z = axis
    c, s = np.cos(angle), np.sin(angle)
    C = 1.0 - c
    return np.array(
        [
            [c + x * x * C, x * y * C - z * s, x * z * C + y * s],
            [y * x * C + z * s, c + y * y * C, y * z * C - x * s],
            [z * x * C - y * s, z * y * C + x * s, c + z * z * C],
        ]
    )


def link_frames(parent, qidx, axis, orig_R, orig_t, base_t, base_R, q):
    L = len(parent)
    dt = np.result_type(base_R, q, np.float64)
    Rs = np.empty((L, 3, 3), dtype=dt)
    ts = np.empty((L, 3), dtype=dt)
    for i in range(L):
        p = parent[i]
        PR, Pt = (base_R, base_t) if p < 0 else (Rs[p], ts[p])
        R = PR @ orig_R[i]
        ts[i] = PR @ orig_t[i] + Pt
        j = qidx[i]
        if j >= 0:
            R = R @ _axis_rot(axis[i], q[j])
        Rs[i] = R
    return Rs, ts


def _object_sdf(kind, dims, R, t, X, hessian=False):
    local = (X - t) @ R
    out = primitive_sdf(KINDS[kind], dims, local, hessian=hessian)
    if hessian:
        d, g, H, deg = out
        return d, g @ R.T, np.einsum("ij,njk,lk->nil", R, H, R), deg
    d, g, deg = out
    return d, g @ R.T, deg


def segment_closest(p1, q1, p2, q2):
    """Closest parameters ``(s, t)`` between batches of segments."""
    d1 = q1 - p1
    d2 = q2 - p2
    r = p1 - p2
    a = np.einsum("ij,ij->i", d1, d1)
    e = np.einsum("ij,ij->i", d2, d2)
    f = np.einsum("ij,ij->i", d2, r)
    c = np.einsum("ij,ij->i", d1, r)
    b = np.einsum("ij,ij->i", d1, d2)
    eps = 1e-18
    n = len(a)
    s = np.zeros(n, dtype=a.dtype)
    t = np.zeros(n, dtype=a.dtype)
    for k in range(n):
        if a[k] <= eps and e[k] <= eps:
            continue
        if a[k] <= eps:
            t[k] = min(max(f[k] / e[k], 0.0), 1.0)
            continue
        if e[k] <= eps:
            s[k] = min(max(-c[k] / a[k], 0.0), 1.0)
            continue
        denom = a[k] * e[k] - b[k] * b[k]
        sk = min(max((b[k] * f[k] - c[k] * e[k]) / denom, 0.0), 1.0) if denom > 1e-18 else 0.0
        tk = (b[k] * sk + f[k]) / e[k]
        if tk < 0.0:
            tk = 0.0
            sk = min(max(-c[k] / a[k], 0.0), 1.0)
        elif tk > 1.0:
            tk = 1.0
            sk = min(max((b[k] - c[k]) / a[k], 0.0), 1.0)
        s[k], t[k] = sk, tk
    return s, t


def _box_local_sdf(P, half):
    d, g, _ = primitive_sdf("box", half, P)
    return d, g


def _box_dist(P, half):
    q = np.abs(P) - half
    return np.linalg.norm(np.maximum(q, 0.0), axis=-1) + np.minimum(q.max(axis=-1), 0.0)


def segment_box_closest(p0, p1, half):
    """Parameters of the points on box-frame segments closest to their boxes.

    The box distance is convex along a segment, so golden-section search
    converges to the global minimum; the endpoints are checked explicitly.
    Works on batches: ``p0``, ``p1``, ``half`` are ``(n, 3)``.
    """
    seg = p1 - p0

    def f(t):
        return _box_dist(p0 + t[:, None] * seg, half)

    n = len(p0)
    lo = np.zeros(n, dtype=p0.dtype)
    hi = np.ones(n, dtype=p0.dtype)
    x1 = hi - _INVPHI * (hi - lo)
    x2 = lo + _INVPHI * (hi - lo)
    f1, f2 = f(x1), f(x2)
    for _ in range(GOLDEN_ITERS):
        left = f1 < f2
        # left: keep [lo, x2]; otherwise keep [x1, hi]
        hi = np.where(left, x2, hi)
        lo = np.where(left, lo, x1)
        nx1 = np.where(left, hi - _INVPHI * (hi - lo), x2)
        nx2 = np.where(left, x1, lo + _INVPHI * (hi - lo))
        fn = f(np.where(left, nx1, nx2))
        f1, f2 = np.where(left, fn, f2), np.where(left, f1, fn)
        x1, x2 = nx1, nx2
    t = 0.5 * (lo + hi)
    best = f(t)
    for end in (0.0, 1.0):
        te = np.full(n, end, dtype=p0.dtype)
        fe = f(te)
        better = fe <= best if end == 0.0 else fe < best
        t = np.where(better, te, t)
        best = np.where(better, fe, best)
    return t


def _kink_direction(p0, p1, t, half, g):
    """Sensitivity direction of ``min_t sdf`` at an interior minimiser.

    Inside a box the distance is piecewise linear, so the minimiser along a
    segment usually sits on a kink. The value then moves with a weighted
    mix of the one-sided gradients, weighted by their slopes along the
    segment.
    """
    seg = p1 - p0
    gm = _box_local_sdf((p0 + (t - KINK_STEP) * seg)[None], half)[1][0]
    gp = _box_local_sdf((p0 + (t + KINK_STEP) * seg)[None], half)[1][0]
    sm, sp = gm @ seg, gp @ seg
    if sp - sm <= 1e-15:
        return g
    return (sp * gm - sm * gp) / (sp - sm)


def self_collision(p_link, p_kind, p_a, p_b, p_R, p_r, pairs, Rs, ts, delta):
    """Self-penetration energy and the point forces it induces.

    Returns ``(E, links, points, forces, distances)``.
    """
    P = len(pairs)
    if P == 0:
        dt = Rs.dtype
        return 0.0, np.zeros(0, dtype=np.int64), np.zeros((0, 3), dt), np.zeros((0, 3), dt), np.zeros(0, dt)
    ia, ib = pairs[:, 0], pairs[:, 1]
    la, lb = p_link[ia], p_link[ib]
    A0 = np.einsum("nij,nj->ni", Rs[la], p_a[ia]) + ts[la]
    A1 = np.einsum("nij,nj->ni", Rs[la], p_b[ia]) + ts[la]
    dt = Rs.dtype
    dist = np.zeros(P, dtype=dt)
    ca = np.zeros((P, 3), dtype=dt)
    cb = np.zeros((P, 3), dtype=dt)
    u = np.zeros((P, 3), dtype=dt)
    caps = p_kind[ib] == 0
    if caps.any():
        k = np.nonzero(caps)[0]
        B0 = np.einsum("nij,nj->ni", Rs[lb[k]], p_a[ib[k]]) + ts[lb[k]]
        B1 = np.einsum("nij,nj->ni", Rs[lb[k]], p_b[ib[k]]) + ts[lb[k]]
        s, t = segment_closest(A0[k], A1[k], B0, B1)
        c1 = A0[k] + s[:, None] * (A1[k] - A0[k])
        c2 = B0 + t[:, None] * (B1 - B0)
        v = c1 - c2
        L = np.linalg.norm(v, axis=1)
        bad = L < 1e-12
        uu = v / np.where(bad, 1.0, L)[:, None]
        uu[bad] = (0.0, 0.0, 1.0)
        dist[k] = L - p_r[ia[k]] - p_r[ib[k]]
        ca[k], cb[k], u[k] = c1, c2, uu
    if (~caps).any():
        k = np.nonzero(~caps)[0]
        # box frame in world
        BR = np.einsum("nij,njk->nik", Rs[lb[k]], p_R[ib[k]])
        Bc = np.einsum("nij,nj->ni", Rs[lb[k]], p_a[ib[k]]) + ts[lb[k]]
        l0 = np.einsum("nji,nj->ni", BR, A0[k] - Bc)
        l1 = np.einsum("nji,nj->ni", BR, A1[k] - Bc)
        half = p_b[ib[k]]
        t = segment_box_closest(l0, l1, half)
        sl = l0 + t[:, None] * (l1 - l0)
        d = np.empty(len(k), dtype=dt)
        g = np.empty((len(k), 3), dtype=dt)
        for m in range(len(k)):
            d[m], g[m] = (v[0] for v in _box_local_sdf(sl[m : m + 1], half[m]))
            if d[m] < 0.0 and 0.0 < t[m] < 1.0:
                g[m] = _kink_direction(l0[m], l1[m], t[m], half[m], g[m])
        cw = np.einsum("nij,nj->ni", BR, sl) + Bc
        dist[k] = d - p_r[ia[k]]
        ca[k] = cw
        cb[k] = cw
        u[k] = np.einsum("nij,nj->ni", BR, g)
    pen = np.maximum(delta - dist, 0.0)
    E = np.sum(pen * pen)
    dEdd = -2.0 * pen
    links = np.concatenate([la, lb])
    points = np.concatenate([ca, cb])
    forces = np.concatenate([dEdd[:, None] * u, -dEdd[:, None] * u])
    return E, links, points, forces, dist


def evaluate(
    parent, qidx, axis, orig_R, orig_t, lower, upper,
    s_link, s_local,
    p_link, p_kind, p_a, p_b, p_R, p_r, pairs,
    o_kind, o_dims, o_R, o_t, table,
    contacts, weights,
    base_t, base_R, q,
    terms, grad, want_grad,
):  # fmt: skip
    """Evaluate every energy term and, optionally, the weighted gradient.

    ``weights`` is ``(w_fc, lam_p, lam_sp, lam_q, lam_d, attract, tau,
    clearance)``. ``terms`` receives ``(fc_0..fc_{O-1}, E_p, E_sp, E_q,
    attraction_sum)``; ``grad`` receives the gradient of
    ``w_fc*sum(fc) + lam_p*E_p + lam_sp*E_sp + lam_q*E_q + attract*sum``.
    Returns the number of contacts with an undefined surface normal.
    """
    w_fc, lam_p, lam_sp, lam_q, lam_d, attract, tau, clearance = weights
    O = len(o_kind)
    Rs, ts = link_frames(parent, qidx, axis, orig_R, orig_t, base_t, base_R, q)
    X = np.einsum("nij,nj->ni", Rs[s_link], s_local) + ts[s_link]
    forces = np.zeros_like(X)
    Ep = X.dtype.type(0)
    S = X.dtype.type(0)
    degenerate = 0
    for j in range(O):
        d, g, _ = _object_sdf(o_kind[j], o_dims[j], o_R[j], o_t[j], X)
        pen = np.minimum(d, 0.0)
        Ep += np.sum(pen * pen)
        forces += (lam_p * 2.0 * pen)[:, None] * g
        if tau > 0.0:
            band = (d > 0.0) & (d <= tau)
            S += np.sum(d[band])
            if attract != 0.0:
                forces[band] += attract * g[band]
    if table:
        pen = np.minimum(X[:, 2], 0.0)
        Ep += np.sum(pen * pen)
        forces[:, 2] += lam_p * 2.0 * pen

    fc = np.zeros(O, dtype=X.dtype)
    for j in range(O):
        idx = contacts[j]
        x = X[idx]
        d, g, H, deg = _object_sdf(o_kind[j], o_dims[j], o_R[j], o_t[j], x, hessian=True)
        degenerate += int(deg.sum())
        n = -g
        r = x - o_t[j]
        F = n.sum(axis=0)
        T = np.cross(r, n).sum(axis=0)
        fc[j] = F @ F + T @ T + lam_d * (d @ d)
        if want_grad and w_fc != 0.0:
            dx = 2.0 * (np.einsum("nij,nj->ni", H, np.cross(r, T) - F) + np.cross(n, T) + lam_d * d[:, None] * g)
            np.add.at(forces, idx, w_fc * dx)

    over = np.maximum(q - upper, 0.0)
    under = np.maximum(lower - q, 0.0)
    Eq = over @ over + under @ under

    Esp, sl, sp, sf, _ = self_collision(p_link, p_kind, p_a, p_b, p_R, p_r, pairs, Rs, ts, clearance)

    terms[:O] = fc
    terms[O] = Ep
    terms[O + 1] = Esp
    terms[O + 2] = Eq
    terms[O + 3] = S

    if want_grad:
        links = np.concatenate([s_link, sl])
        points = np.concatenate([X, sp])
        allf = np.concatenate([forces, lam_sp * sf])
        L = len(parent)
        Fl = np.zeros((L, 3), dtype=X.dtype)
        Ml = np.zeros((L, 3), dtype=X.dtype)
        np.add.at(Fl, links, allf)
        np.add.at(Ml, links, np.cross(points, allf))
        for i in range(L - 1, 0, -1):
            Fl[parent[i]] += Fl[i]
            Ml[parent[i]] += Ml[i]
        grad[:] = 0.0
        grad[:3] = Fl[0]
        grad[3:6] = Ml[0] - np.cross(base_t, Fl[0])
        for i in range(L):
            j = qidx[i]
            if j >= 0:
                a = Rs[i] @ axis[i]
                grad[6 + j] = a @ (Ml[i] - np.cross(ts[i], Fl[i]))
        grad[6:] += lam_q * 2.0 * (over - under)
    return degenerate
