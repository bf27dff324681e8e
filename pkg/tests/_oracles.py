"""Ray-driven reference projectors, written independently of the package."""
import numpy as np


def _ray(g, k, j):
    th = np.deg2rad(g.angles_deg[k])
    c, s = np.cos(th), np.sin(th)
    u = (j - (g.n_det - 1) / 2) * g.det_width + g.det_offset
    return u, c, s


def _pixel_index(n, x, y):
    """Flat index of the pixel containing (x, y), or -1."""
    col = int(np.floor(x + n / 2))
    row = int(np.floor(n / 2 - y))
    if 0 <= col < n and 0 <= row < n:
        return row * n + col
    return -1


def siddon_row(g, k, j):
    """Chord lengths of the central ray through every pixel (dict index -> length)."""
    n = g.n_pixels
    u, c, s = _ray(g, k, j)
    p = np.array([u * c, u * s])
    d = np.array([-s, c])
    h = n / 2
    ts = []
    for axis in (0, 1):
        if abs(d[axis]) > 1e-15:
            for e in np.arange(-h, h + 1):
                ts.append((e - p[axis]) / d[axis])
    ts = np.unique(ts)
    row = {}
    for t0, t1 in zip(ts[:-1], ts[1:]):
        mid = p + 0.5 * (t0 + t1) * d
        if abs(mid[0]) >= h or abs(mid[1]) >= h:
            continue
        idx = _pixel_index(n, *mid)
        if idx >= 0 and t1 - t0 > 1e-12:
            row[idx] = row.get(idx, 0.0) + (t1 - t0)
    return row


def joseph_row(g, k, j):
    """Joseph interpolation weights stepping along the dominant axis."""
    n = g.n_pixels
    u, c, s = _ray(g, k, j)
    centres = np.arange(n) - (n - 1) / 2
    row = {}
    if abs(s) >= abs(c):
        # x-stepping over pixel columns; interpolate in y between row centres
        for col, x in enumerate(centres):
            tau = (u * c - x) / s
            y = u * s + tau * c
            r = (n - 1) / 2 - y          # fractional row coordinate
            r0 = int(np.floor(r))
            for rr, w in ((r0, 1 - (r - r0)), (r0 + 1, r - r0)):
                if 0 <= rr < n and w > 0:
                    row[rr * n + col] = row.get(rr * n + col, 0.0) + w / abs(s)
    else:
        for rr, y in enumerate(centres[::-1]):
            tau = (y - u * s) / c
            x = u * c - tau * s
            q = x + (n - 1) / 2
            q0 = int(np.floor(q))
            for cc, w in ((q0, 1 - (q - q0)), (q0 + 1, q - q0)):
                if 0 <= cc < n and w > 0:
                    row[rr * n + cc] = row.get(rr * n + cc, 0.0) + w / abs(c)
    return {i: v for i, v in row.items() if v >= 1e-12}


def _clip(poly, a, b, off):
    """Keep the part of a convex polygon with a*x + b*y <= off."""
    out = []
    for i in range(len(poly)):
        P, Q = poly[i], poly[(i + 1) % len(poly)]
        fp, fq = a * P[0] + b * P[1] - off, a * Q[0] + b * Q[1] - off
        if fp <= 0:
            out.append(P)
        if fp * fq < 0:
            t = fp / (fp - fq)
            out.append((P[0] + t * (Q[0] - P[0]), P[1] + t * (Q[1] - P[1])))
    return out


def _area(poly):
    if len(poly) < 3:
        return 0.0
    x = np.array([p[0] for p in poly])
    y = np.array([p[1] for p in poly])
    return 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def strip_row(g, k, j):
    """Pixel-strip overlap areas divided by the strip width."""
    n = g.n_pixels
    u, c, s = _ray(g, k, j)
    w = g.det_width
    row = {}
    for r in range(n):
        for q in range(n):
            x0, y0 = q - n / 2, n / 2 - r - 1
            sq = [(x0, y0), (x0 + 1, y0), (x0 + 1, y0 + 1), (x0, y0 + 1)]
            poly = _clip(sq, c, s, u + w / 2)
            poly = _clip(poly, -c, -s, -(u - w / 2))
            a = _area(poly) / w
            if a >= 1e-12:
                row[r * n + q] = a
    return row


def chord_length(n, u, c, s):
    """Length of the line {t : x cos + y sin = u} inside the centred n x n square."""
    h = n / 2
    d = np.array([-s, c])
    p = np.array([u * c, u * s])
    lo, hi = -np.inf, np.inf
    for axis in (0, 1):
        if abs(d[axis]) < 1e-15:
            if abs(p[axis]) >= h:
                return 0.0
            continue
        t1, t2 = sorted(((-h - p[axis]) / d[axis], (h - p[axis]) / d[axis]))
        lo, hi = max(lo, t1), min(hi, t2)
    return max(0.0, hi - lo)
