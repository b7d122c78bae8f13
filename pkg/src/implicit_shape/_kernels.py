"""Compiled inner loops: point location, P3 evaluation and orbit integration."""

import numpy as np
from numba import njit

TRACE_OK = 0
TRACE_MAX_STEPS = 1
TRACE_GRAD_FLOOR = 2
TRACE_LEFT_DOMAIN = 3

_INSIDE_TOL = 1e-10


@njit(cache=True)
def _bary(tri, x, y, origin, tinv, out):
    dx = x - origin[tri, 0]
    dy = y - origin[tri, 1]
    l1 = tinv[tri, 0, 0] * dx + tinv[tri, 0, 1] * dy
    l2 = tinv[tri, 1, 0] * dx + tinv[tri, 1, 1] * dy
    out[0] = 1.0 - l1 - l2
    out[1] = l1
    out[2] = l2
    return min(out[0], min(l1, l2))


@njit(cache=True)
def locate_point(x, y, hint, grid, cell_ptr, cell_tris, origin, tinv, bary):
    """Return the triangle containing (x, y), or -1; fills ``bary``.

    ``grid`` = (xmin, ymin, cell_w, cell_h, nx, ny). ``hint`` is tried first.
    """
    if hint >= 0:
        if _bary(hint, x, y, origin, tinv, bary) >= -_INSIDE_TOL:
            return hint
    nx = int(grid[4])
    ny = int(grid[5])
    fx = (x - grid[0]) / grid[2]
    fy = (y - grid[1]) / grid[3]
    if fx < -1e-9 or fy < -1e-9 or fx > nx + 1e-9 or fy > ny + 1e-9:
        return -1
    ix = min(max(int(fx), 0), nx - 1)
    iy = min(max(int(fy), 0), ny - 1)
    cell = iy * nx + ix
    best = -1
    best_min = -np.inf
    tmp = np.empty(3)
    for p in range(cell_ptr[cell], cell_ptr[cell + 1]):
        t = cell_tris[p]
        mn = _bary(t, x, y, origin, tinv, tmp)
        if mn > best_min:
            best_min = mn
            best = t
            bary[0] = tmp[0]
            bary[1] = tmp[1]
            bary[2] = tmp[2]
    if best_min < -_INSIDE_TOL:
        return -1
    return best


@njit(cache=True)
def locate_many(pts, grid, cell_ptr, cell_tris, origin, tinv):
    n = pts.shape[0]
    tris = np.empty(n, dtype=np.int64)
    bary = np.empty((n, 3))
    b = np.empty(3)
    hint = -1
    for i in range(n):
        t = locate_point(pts[i, 0], pts[i, 1], hint, grid, cell_ptr, cell_tris,
                         origin, tinv, b)
        tris[i] = t
        if t >= 0:
            bary[i, 0] = b[0]
            bary[i, 1] = b[1]
            bary[i, 2] = b[2]
            hint = t
        else:
            bary[i, :] = np.nan
    return tris, bary


@njit(cache=True)
def p3_basis(l0, l1, l2, out):
    out[0] = 0.5 * l0 * (3 * l0 - 1) * (3 * l0 - 2)
    out[1] = 0.5 * l1 * (3 * l1 - 1) * (3 * l1 - 2)
    out[2] = 0.5 * l2 * (3 * l2 - 1) * (3 * l2 - 2)
    out[3] = 4.5 * l0 * l1 * (3 * l0 - 1)
    out[4] = 4.5 * l0 * l1 * (3 * l1 - 1)
    out[5] = 4.5 * l1 * l2 * (3 * l1 - 1)
    out[6] = 4.5 * l1 * l2 * (3 * l2 - 1)
    out[7] = 4.5 * l2 * l0 * (3 * l2 - 1)
    out[8] = 4.5 * l2 * l0 * (3 * l0 - 1)
    out[9] = 27.0 * l0 * l1 * l2


@njit(cache=True)
def _field_grad(x, y, hint, grid, cell_ptr, cell_tris, origin, tinv, conn,
                gx, gy, bary, phi, res):
    t = locate_point(x, y, hint, grid, cell_ptr, cell_tris, origin, tinv, bary)
    if t < 0:
        return -1
    p3_basis(bary[0], bary[1], bary[2], phi)
    a = 0.0
    b = 0.0
    for l in range(10):
        node = conn[t, l]
        a += phi[l] * gx[node]
        b += phi[l] * gy[node]
    res[0] = a
    res[1] = b
    return t


@njit(cache=True)
def trace_orbit(x0, y0, dt, scheme, max_steps, m_min, guard, grad_floor,
                grid, cell_ptr, cell_tris, origin, tinv, conn, gx, gy):
    """Integrate z' = (-d2 g, d1 g) from (x0, y0) until the orbit closes.

    Closure is detected on the section through the start point normal to
    the initial velocity. Returns (points, m, theta, status, info) where
    points[0..m] are the samples and theta in (0, 1] is the fraction of the
    last step needed to reach the section.
    """
    cap = 4096
    pts = np.empty((cap, 2))
    pts[0, 0] = x0
    pts[0, 1] = y0
    bary = np.empty(3)
    phi = np.empty(10)
    g = np.empty(2)
    hint = -1

    hint = _field_grad(x0, y0, hint, grid, cell_ptr, cell_tris, origin, tinv,
                       conn, gx, gy, bary, phi, g)
    if hint < 0:
        return pts[:1], 0, 0.0, TRACE_LEFT_DOMAIN, 0.0
    speed0 = np.sqrt(g[0] * g[0] + g[1] * g[1])
    if speed0 < grad_floor:
        return pts[:1], 0, 0.0, TRACE_GRAD_FLOOR, speed0
    d0x = -g[1] / speed0
    d0y = g[0] / speed0

    s_prev = 0.0
    x = x0
    y = y0
    k1 = np.empty(2)
    k2 = np.empty(2)
    k3 = np.empty(2)
    k4 = np.empty(2)
    for k in range(1, max_steps + 1):
        if scheme == 0:
            hint = _field_grad(x, y, hint, grid, cell_ptr, cell_tris, origin,
                               tinv, conn, gx, gy, bary, phi, g)
            if hint < 0:
                return pts[:k], k - 1, 0.0, TRACE_LEFT_DOMAIN, 0.0
            sp = np.sqrt(g[0] * g[0] + g[1] * g[1])
            if sp < grad_floor:
                return pts[:k], k - 1, 0.0, TRACE_GRAD_FLOOR, sp
            xn = x - dt * g[1]
            yn = y + dt * g[0]
        else:
            hint = _field_grad(x, y, hint, grid, cell_ptr, cell_tris, origin,
                               tinv, conn, gx, gy, bary, phi, g)
            if hint < 0:
                return pts[:k], k - 1, 0.0, TRACE_LEFT_DOMAIN, 0.0
            sp = np.sqrt(g[0] * g[0] + g[1] * g[1])
            if sp < grad_floor:
                return pts[:k], k - 1, 0.0, TRACE_GRAD_FLOOR, sp
            k1[0] = -g[1]
            k1[1] = g[0]
            ok = True
            for stage in range(3):
                if stage == 0:
                    xs = x + 0.5 * dt * k1[0]
                    ys = y + 0.5 * dt * k1[1]
                elif stage == 1:
                    xs = x + 0.5 * dt * k2[0]
                    ys = y + 0.5 * dt * k2[1]
                else:
                    xs = x + dt * k3[0]
                    ys = y + dt * k3[1]
                hint = _field_grad(xs, ys, hint, grid, cell_ptr, cell_tris,
                                   origin, tinv, conn, gx, gy, bary, phi, g)
                if hint < 0:
                    ok = False
                    break
                if stage == 0:
                    k2[0] = -g[1]
                    k2[1] = g[0]
                elif stage == 1:
                    k3[0] = -g[1]
                    k3[1] = g[0]
                else:
                    k4[0] = -g[1]
                    k4[1] = g[0]
            if not ok:
                return pts[:k], k - 1, 0.0, TRACE_LEFT_DOMAIN, 0.0
            xn = x + dt / 6.0 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
            yn = y + dt / 6.0 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])

        if k >= cap:
            new = np.empty((2 * cap, 2))
            new[:cap] = pts
            pts = new
            cap *= 2
        pts[k, 0] = xn
        pts[k, 1] = yn
        x = xn
        y = yn

        s = (xn - x0) * d0x + (yn - y0) * d0y
        if k >= m_min and s_prev < 0.0 <= s:
            dist = np.sqrt((xn - x0) ** 2 + (yn - y0) ** 2)
            if dist <= guard:
                theta = -s_prev / (s - s_prev)
                return pts[:k + 1], k, theta, TRACE_OK, dist
        s_prev = s

    dist = np.sqrt((x - x0) ** 2 + (y - y0) ** 2)
    return pts[:max_steps + 1], max_steps, 0.0, TRACE_MAX_STEPS, dist
