"""Numba kernels on packed triangular lattices.

``idx`` is the (M, P) global index map of one level, ``N`` its lattice size.
Interior stencil coefficients per macro are ``coef[m] = (c, e, n, nw)``: the
diagonal, the E/W, N/S and NW/SE couplings.
"""

import numba as nb


@nb.njit(inline="always")
def _p(i, j, N):
    return j * (N + 1) - j * (j - 1) // 2 + i


@nb.njit(cache=True)
def stencil_apply(idx, N, coef, u, y):
    """``y[g] = (A u)[g]`` for all face-interior nodes."""
    M = idx.shape[0]
    for m in range(M):
        c, e, n, nw = coef[m, 0], coef[m, 1], coef[m, 2], coef[m, 3]
        for j in range(1, N - 1):
            for i in range(1, N - j):
                p = _p(i, j, N)
                g = idx[m, p]
                y[g] = (
                    c * u[g]
                    + e * (u[idx[m, p + 1]] + u[idx[m, p - 1]])
                    + n * (u[idx[m, _p(i, j + 1, N)]] + u[idx[m, _p(i, j - 1, N)]])
                    + nw * (u[idx[m, _p(i - 1, j + 1, N)]] + u[idx[m, _p(i + 1, j - 1, N)]])
                )


@nb.njit(cache=True)
def stencil_residual(idx, N, coef, u, b, r):
    M = idx.shape[0]
    for m in range(M):
        c, e, n, nw = coef[m, 0], coef[m, 1], coef[m, 2], coef[m, 3]
        for j in range(1, N - 1):
            for i in range(1, N - j):
                p = _p(i, j, N)
                g = idx[m, p]
                r[g] = b[g] - (
                    c * u[g]
                    + e * (u[idx[m, p + 1]] + u[idx[m, p - 1]])
                    + n * (u[idx[m, _p(i, j + 1, N)]] + u[idx[m, _p(i, j - 1, N)]])
                    + nw * (u[idx[m, _p(i - 1, j + 1, N)]] + u[idx[m, _p(i + 1, j - 1, N)]])
                )


@nb.njit(cache=True)
def stencil_gs(idx, N, coef, u, b):
    """One forward Gauss-Seidel pass over the face interiors, macro by macro."""
    M = idx.shape[0]
    for m in range(M):
        c, e, n, nw = coef[m, 0], coef[m, 1], coef[m, 2], coef[m, 3]
        inv = 1.0 / c
        for j in range(1, N - 1):
            for i in range(1, N - j):
                p = _p(i, j, N)
                g = idx[m, p]
                s = (
                    e * (u[idx[m, p + 1]] + u[idx[m, p - 1]])
                    + n * (u[idx[m, _p(i, j + 1, N)]] + u[idx[m, _p(i, j - 1, N)]])
                    + nw * (u[idx[m, _p(i - 1, j + 1, N)]] + u[idx[m, _p(i + 1, j - 1, N)]])
                )
                u[g] = (b[g] - s) * inv


@nb.njit(cache=True)
def csr_apply_rows(indptr, indices, data, rows, u, y):
    for k in range(rows.shape[0]):
        r = rows[k]
        s = 0.0
        for q in range(indptr[r], indptr[r + 1]):
            s += data[q] * u[indices[q]]
        y[r] = s


@nb.njit(cache=True)
def csr_residual_rows(indptr, indices, data, rows, u, b, res):
    for k in range(rows.shape[0]):
        r = rows[k]
        s = 0.0
        for q in range(indptr[r], indptr[r + 1]):
            s += data[q] * u[indices[q]]
        res[r] = b[r] - s


@nb.njit(cache=True)
def csr_gs_rows(indptr, indices, data, diag, rows, u, b):
    for k in range(rows.shape[0]):
        r = rows[k]
        s = 0.0
        for q in range(indptr[r], indptr[r + 1]):
            c = indices[q]
            if c != r:
                s += data[q] * u[c]
        u[r] = (b[r] - s) / diag[r]


@nb.njit(cache=True)
def prolongate(idx_c, idx_f, Nc, uc, uf):
    """Linear interpolation from the level with lattice size ``Nc`` to ``2 Nc``."""
    M = idx_c.shape[0]
    Nf = 2 * Nc
    for m in range(M):
        for jf in range(Nf + 1):
            for i_f in range(Nf + 1 - jf):
                g = idx_f[m, _p(i_f, jf, Nf)]
                io = i_f & 1
                jo = jf & 1
                if io == 0 and jo == 0:
                    uf[g] = uc[idx_c[m, _p(i_f // 2, jf // 2, Nc)]]
                elif jo == 0:
                    a = uc[idx_c[m, _p((i_f - 1) // 2, jf // 2, Nc)]]
                    b = uc[idx_c[m, _p((i_f + 1) // 2, jf // 2, Nc)]]
                    uf[g] = 0.5 * (a + b)
                elif io == 0:
                    a = uc[idx_c[m, _p(i_f // 2, (jf - 1) // 2, Nc)]]
                    b = uc[idx_c[m, _p(i_f // 2, (jf + 1) // 2, Nc)]]
                    uf[g] = 0.5 * (a + b)
                else:
                    a = uc[idx_c[m, _p((i_f - 1) // 2, (jf + 1) // 2, Nc)]]
                    b = uc[idx_c[m, _p((i_f + 1) // 2, (jf - 1) // 2, Nc)]]
                    uf[g] = 0.5 * (a + b)


@nb.njit(cache=True)
def restrict(idx_c, idx_f, owned_f, Nc, rf, rc):
    """Transpose of :func:`prolongate`; ``rc`` must be zero on entry."""
    M = idx_c.shape[0]
    Nf = 2 * Nc
    for m in range(M):
        for jf in range(Nf + 1):
            for i_f in range(Nf + 1 - jf):
                pf = _p(i_f, jf, Nf)
                if not owned_f[m, pf]:
                    continue
                v = rf[idx_f[m, pf]]
                io = i_f & 1
                jo = jf & 1
                if io == 0 and jo == 0:
                    rc[idx_c[m, _p(i_f // 2, jf // 2, Nc)]] += v
                elif jo == 0:
                    rc[idx_c[m, _p((i_f - 1) // 2, jf // 2, Nc)]] += 0.5 * v
                    rc[idx_c[m, _p((i_f + 1) // 2, jf // 2, Nc)]] += 0.5 * v
                elif io == 0:
                    rc[idx_c[m, _p(i_f // 2, (jf - 1) // 2, Nc)]] += 0.5 * v
                    rc[idx_c[m, _p(i_f // 2, (jf + 1) // 2, Nc)]] += 0.5 * v
                else:
                    rc[idx_c[m, _p((i_f - 1) // 2, (jf + 1) // 2, Nc)]] += 0.5 * v
                    rc[idx_c[m, _p((i_f + 1) // 2, (jf - 1) // 2, Nc)]] += 0.5 * v


@nb.njit(cache=True)
def element_apply(idx, N, Ke, u, y):
    """Macro-local element loop: ``y += sum_T K_T u_T`` with ``Ke[m]`` shared by
    all fine triangles of macro ``m`` (up and down triangles alike)."""
    M = idx.shape[0]
    for m in range(M):
        K = Ke[m]
        for j in range(N):
            for i in range(N - j):
                a = idx[m, _p(i, j, N)]
                b = idx[m, _p(i + 1, j, N)]
                c = idx[m, _p(i, j + 1, N)]
                ua, ub, uc = u[a], u[b], u[c]
                y[a] += K[0, 0] * ua + K[0, 1] * ub + K[0, 2] * uc
                y[b] += K[1, 0] * ua + K[1, 1] * ub + K[1, 2] * uc
                y[c] += K[2, 0] * ua + K[2, 1] * ub + K[2, 2] * uc
                if i + j <= N - 2:
                    a = idx[m, _p(i + 1, j + 1, N)]
                    ua = u[a]
                    ub, uc = u[c], u[b]
                    y[a] += K[0, 0] * ua + K[0, 1] * ub + K[0, 2] * uc
                    y[c] += K[1, 0] * ua + K[1, 1] * ub + K[1, 2] * uc
                    y[b] += K[2, 0] * ua + K[2, 1] * ub + K[2, 2] * uc


@nb.njit(cache=True)
def local_mass_norms_sq(idx, N, area_f, u, out):
    """Per-macro ``u^T M_T u`` from the P1 element mass matrix."""
    M = idx.shape[0]
    for m in range(M):
        s = 0.0
        for j in range(N):
            for i in range(N - j):
                a = u[idx[m, _p(i, j, N)]]
                b = u[idx[m, _p(i + 1, j, N)]]
                c = u[idx[m, _p(i, j + 1, N)]]
                t = a + b + c
                s += t * t + a * a + b * b + c * c
                if i + j <= N - 2:
                    a = u[idx[m, _p(i + 1, j + 1, N)]]
                    t = a + b + c
                    s += t * t + a * a + b * b + c * c
        out[m] = s * area_f[m] / 12.0


# kernels taking a jitted function argument are not cached: the cache index
# would keep references to dispatchers of other processes
@nb.njit
def load_vector(f, params, corners, idx, N, b):
    """Edge-midpoint quadrature of ``int phi_i f``; ``b`` is accumulated."""
    M = idx.shape[0]
    Nf = 2 * N
    for m in range(M):
        x0, y0 = corners[m, 0, 0], corners[m, 0, 1]
        dx1, dy1 = corners[m, 1, 0] - x0, corners[m, 1, 1] - y0
        dx2, dy2 = corners[m, 2, 0] - x0, corners[m, 2, 1] - y0
        w = 0.5 * (dx1 * dy2 - dy1 * dx2) / (N * N) / 6.0
        for j in range(N):
            for i in range(N - j):
                # up triangle (i,j),(i+1,j),(i,j+1); midpoints on the 2N lattice
                f01 = f(x0 + (2 * i + 1) / Nf * dx1 + (2 * j) / Nf * dx2, y0 + (2 * i + 1) / Nf * dy1 + (2 * j) / Nf * dy2, params)
                f02 = f(x0 + (2 * i) / Nf * dx1 + (2 * j + 1) / Nf * dx2, y0 + (2 * i) / Nf * dy1 + (2 * j + 1) / Nf * dy2, params)
                f12 = f(
                    x0 + (2 * i + 1) / Nf * dx1 + (2 * j + 1) / Nf * dx2,
                    y0 + (2 * i + 1) / Nf * dy1 + (2 * j + 1) / Nf * dy2,
                    params,
                )
                b[idx[m, _p(i, j, N)]] += w * (f01 + f02)
                b[idx[m, _p(i + 1, j, N)]] += w * (f01 + f12)
                b[idx[m, _p(i, j + 1, N)]] += w * (f02 + f12)
                if i + j <= N - 2:
                    # down triangle (i+1,j+1),(i,j+1),(i+1,j)
                    fa = f(
                        x0 + (2 * i + 1) / Nf * dx1 + (2 * j + 2) / Nf * dx2,
                        y0 + (2 * i + 1) / Nf * dy1 + (2 * j + 2) / Nf * dy2,
                        params,
                    )
                    fb = f(
                        x0 + (2 * i + 2) / Nf * dx1 + (2 * j + 1) / Nf * dx2,
                        y0 + (2 * i + 2) / Nf * dy1 + (2 * j + 1) / Nf * dy2,
                        params,
                    )
                    b[idx[m, _p(i + 1, j + 1, N)]] += w * (fa + fb)
                    b[idx[m, _p(i, j + 1, N)]] += w * (fa + f12)
                    b[idx[m, _p(i + 1, j, N)]] += w * (fb + f12)


# 6-point degree-4 rule on the reference triangle: barycentric points, weights summing to 1
_A1 = 0.445948490915965
_W1 = 0.223381589678011
_A2 = 0.091576213509771
_W2 = 0.109951743655322


@nb.njit
def _tri_error(u, params, xa, ya, xb, yb, xc, yc, ua, ub, uc):
    s = 0.0
    for k in range(6):
        if k < 3:
            la = _A1
            wgt = _W1
        else:
            la = _A2
            wgt = _W2
        lo = 1.0 - 2.0 * la
        r = k % 3
        if r == 0:
            l0, l1, l2 = lo, la, la
        elif r == 1:
            l0, l1, l2 = la, lo, la
        else:
            l0, l1, l2 = la, la, lo
        x = l0 * xa + l1 * xb + l2 * xc
        y = l0 * ya + l1 * yb + l2 * yc
        d = u(x, y, params) - (l0 * ua + l1 * ub + l2 * uc)
        s += wgt * d * d
    return s


@nb.njit
def exact_error_sq(u, params, corners, idx, N, uh, out):
    """Per-macro squared L2 error between ``u`` and the P1 function ``uh``."""
    M = idx.shape[0]
    for m in range(M):
        x0, y0 = corners[m, 0, 0], corners[m, 0, 1]
        dx1, dy1 = (corners[m, 1, 0] - x0) / N, (corners[m, 1, 1] - y0) / N
        dx2, dy2 = (corners[m, 2, 0] - x0) / N, (corners[m, 2, 1] - y0) / N
        area = 0.5 * (dx1 * dy2 - dy1 * dx2)
        s = 0.0
        for j in range(N):
            for i in range(N - j):
                xa, ya = x0 + i * dx1 + j * dx2, y0 + i * dy1 + j * dy2
                xb, yb = xa + dx1, ya + dy1
                xc, yc = xa + dx2, ya + dy2
                ua = uh[idx[m, _p(i, j, N)]]
                ub = uh[idx[m, _p(i + 1, j, N)]]
                uc = uh[idx[m, _p(i, j + 1, N)]]
                s += _tri_error(u, params, xa, ya, xb, yb, xc, yc, ua, ub, uc)
                if i + j <= N - 2:
                    xd, yd = xb + dx2, yb + dy2
                    ud = uh[idx[m, _p(i + 1, j + 1, N)]]
                    s += _tri_error(u, params, xd, yd, xc, yc, xb, yb, ud, uc, ub)
        out[m] = s * area


@nb.njit
def interpolate_interior(u, params, corners, idx, N, out):
    """Nodal values of ``u`` at the face-interior nodes."""
    M = idx.shape[0]
    for m in range(M):
        x0, y0 = corners[m, 0, 0], corners[m, 0, 1]
        dx1, dy1 = (corners[m, 1, 0] - x0) / N, (corners[m, 1, 1] - y0) / N
        dx2, dy2 = (corners[m, 2, 0] - x0) / N, (corners[m, 2, 1] - y0) / N
        for j in range(1, N - 1):
            for i in range(1, N - j):
                out[idx[m, _p(i, j, N)]] = u(x0 + i * dx1 + j * dx2, y0 + i * dy1 + j * dy2, params)
