"""Pure-NumPy rasterization kernels (fallback backend).

Mirrors pointsplat._kernels operation for operation: identical formulas,
identical evaluation order per pixel (front-to-back in slot order, channels
ascending), so results match the compiled core bit for bit.  Vectorization
runs across pixels; the sequential dimension is the contributor slot.
"""

import numpy as np


def _pow_gamma(w: np.ndarray, gamma: float) -> np.ndarray:
    if gamma == 0.0:
        return np.ones_like(w)
    if gamma == 1.0:
        return w.copy()
    return np.power(w, gamma)


def _cover_pairs(u, v, width, height, radius, falloff):
    """All (point, pixel) pairs with positive influence.

    Returns (pid, pix, w, dist) sorted by (pixel, depth-later); here only the
    geometric filter runs: squared-distance disk test, then w = 1 - d/falloff > 0.
    """
    n = u.shape[0]
    ixa = np.clip(np.ceil(u - radius - 0.5), 0, width - 1).astype(np.int64)
    ixb = np.clip(np.floor(u + radius - 0.5), 0, width - 1).astype(np.int64)
    iya = np.clip(np.ceil(v - radius - 0.5), 0, height - 1).astype(np.int64)
    iyb = np.clip(np.floor(v + radius - 0.5), 0, height - 1).astype(np.int64)
    bw = np.maximum(ixb - ixa + 1, 0)
    bh = np.maximum(iyb - iya + 1, 0)
    counts = bw * bh
    total = int(counts.sum())
    if total == 0:
        empty = np.empty(0, dtype=np.int64)
        return empty, empty, np.empty(0), np.empty(0)
    pid = np.repeat(np.arange(n, dtype=np.int64), counts)
    base = np.cumsum(counts) - counts
    within = np.arange(total, dtype=np.int64) - np.repeat(base, counts)
    px = ixa[pid] + within % bw[pid]
    py = iya[pid] + within // bw[pid]
    dx = (px + 0.5) - u[pid]
    dy = (py + 0.5) - v[pid]
    dsq = dx * dx + dy * dy
    inside = dsq <= radius * radius
    pid, px, py, dsq = pid[inside], px[inside], py[inside], dsq[inside]
    dist = np.sqrt(dsq)
    w = 1.0 - dist / falloff
    pos = w > 0.0
    return pid[pos], py[pos] * width + px[pos], w[pos], dist[pos]


def _slot_layout(rank: np.ndarray):
    """Per-slot entry index lists: slot s holds the s-th nearest contributors."""
    if rank.size == 0:
        return []
    order = np.argsort(rank, kind="stable")
    bounds = np.cumsum(np.bincount(rank))
    return np.split(order, bounds[:-1])


def forward(u, v, z, feats, labels, width, height, radius, falloff, kmax,
            gamma, mode, tile_size, threads):
    """Rasterize projected points; see rasterizer.render for the contract.

    Contributor records carry labels[point]; tile_size and threads are
    accepted for interface parity (the NumPy path is untiled and
    single-threaded; results are identical by construction).
    """
    npix = width * height
    nchan = feats.shape[1]
    image = np.zeros((npix, nchan), dtype=np.float64)
    depth = np.zeros(npix, dtype=np.float64)
    cover = np.ones(npix, dtype=np.float64)
    offsets = np.zeros(npix + 1, dtype=np.int64)

    pid, pix, w, _ = _cover_pairs(u, v, width, height, radius, falloff)
    if pid.size == 0:
        return (
            image.reshape(height, width, nchan),
            np.zeros((height, width), dtype=np.float64),
            depth.reshape(height, width),
            offsets,
            np.empty(0, dtype=np.int64),
            np.empty(0),
            np.empty(0),
        )

    # Group by pixel, nearest first; ties on depth break by point index.
    order = np.lexsort((pid, z[pid], pix))
    pid, pix, w = pid[order], pix[order], w[order]
    full = np.bincount(pix, minlength=npix)
    rank = np.arange(pid.size, dtype=np.int64) - np.repeat(
        np.cumsum(full) - full, full
    )
    keep = rank < kmax
    pid, pix, w, rank = pid[keep], pix[keep], w[keep], rank[keep]
    zc = z[pid]
    offsets[1:] = np.cumsum(np.minimum(full, kmax))

    trans = np.ones(npix, dtype=np.float64)
    wsum = np.zeros(npix, dtype=np.float64)
    for sel in _slot_layout(rank):
        p = pix[sel]
        a = _pow_gamma(w[sel], gamma)
        if mode == 0:
            coef = a * trans[p]
            trans[p] = trans[p] * (1.0 - a)
        else:
            coef = a
        cover[p] = cover[p] * (1.0 - a)
        image[p] += coef[:, None] * feats[pid[sel]]
        depth[p] += coef * zc[sel]
        wsum[p] += coef
    if mode == 2:
        covered = offsets[1:] > offsets[:-1]
        image[covered] /= wsum[covered, None]
        depth[covered] /= wsum[covered]

    return (
        image.reshape(height, width, nchan),
        (1.0 - cover).reshape(height, width),
        depth.reshape(height, width),
        offsets,
        labels[pid],
        w,
        zc,
    )


def backward(u, v, feats, grad, offsets, rows, weights, falloff, gamma, mode,
             threads):
    """Adjoint of forward for the feature image: per-point feature gradients
    plus screen-space (du, dv) gradients of each splat center.

    `rows`/`weights` are the forward pass's contributor record (CSR over
    pixels); the projection chain back to 3D happens in the caller.
    """
    npix, nchan = offsets.shape[0] - 1, feats.shape[1]
    nk = feats.shape[0]
    gflat = grad.reshape(npix, nchan)
    dfeat = np.zeros((nk, nchan), dtype=np.float64)
    du = np.zeros(nk, dtype=np.float64)
    dv = np.zeros(nk, dtype=np.float64)
    total = int(offsets[-1])
    if total == 0:
        return dfeat, du, dv

    counts = np.diff(offsets)
    pix = np.repeat(np.arange(npix, dtype=np.int64), counts)
    rank = np.arange(total, dtype=np.int64) - np.repeat(offsets[:-1], counts)
    slots = _slot_layout(rank)
    a = _pow_gamma(weights, gamma)
    frow = feats[rows]
    gpix = gflat[pix]

    ecoef = np.empty(total, dtype=np.float64)
    da = np.empty(total, dtype=np.float64)
    if mode == 0:
        tprev = np.empty(total, dtype=np.float64)
        trans = np.ones(npix, dtype=np.float64)
        for sel in slots:
            p = pix[sel]
            tprev[sel] = trans[p]
            trans[p] = trans[p] * (1.0 - a[sel])
        ecoef[:] = a * tprev
        # Suffix pass: csuf holds sum_{k>i} a_k F_k prod_{i<j<k} (1 - a_j).
        csuf = np.zeros((npix, nchan), dtype=np.float64)
        for sel in reversed(slots):
            p = pix[sel]
            acc = np.zeros(sel.shape[0], dtype=np.float64)
            for c in range(nchan):
                acc = acc + gpix[sel, c] * (frow[sel, c] - csuf[p, c])
            da[sel] = tprev[sel] * acc
            csuf[p] = a[sel, None] * frow[sel] + (1.0 - a[sel])[:, None] * csuf[p]
    elif mode == 1:
        ecoef[:] = a
        acc = np.zeros(total, dtype=np.float64)
        for c in range(nchan):
            acc = acc + gpix[:, c] * frow[:, c]
        da[:] = acc
    else:
        wsum = np.zeros(npix, dtype=np.float64)
        ssum = np.zeros((npix, nchan), dtype=np.float64)
        for sel in slots:
            p = pix[sel]
            wsum[p] = wsum[p] + a[sel]
            ssum[p] = ssum[p] + a[sel, None] * frow[sel]
        out = np.zeros((npix, nchan), dtype=np.float64)
        covered = counts > 0
        out[covered] = ssum[covered] / wsum[covered, None]
        ecoef[:] = a / wsum[pix]
        acc = np.zeros(total, dtype=np.float64)
        for c in range(nchan):
            acc = acc + gpix[:, c] * (frow[:, c] - out[pix, c])
        da[:] = acc / wsum[pix]

    if gamma == 0.0:
        dw = np.zeros(total, dtype=np.float64)
    elif gamma == 1.0:
        dw = da
    else:
        dgam = gamma * np.power(weights, gamma - 1.0)
        dw = dgam * da

    # Chain through w = 1 - d/falloff and d = |center - pixel center|;
    # the subderivative at d = 0 is zero (saturated clamp, undefined direction).
    width = grad.shape[1]
    dxc = u[rows] - ((pix % width) + 0.5)
    dyc = v[rows] - ((pix // width) + 0.5)
    dist = np.sqrt(dxc * dxc + dyc * dyc)
    invm = -1.0 / falloff
    ddist = dw * invm
    scale = np.zeros(total, dtype=np.float64)
    nz = dist > 0.0
    scale[nz] = ddist[nz] / dist[nz]
    edu = scale * dxc
    edv = scale * dyc

    # Scatter per-entry adjoints in CSR (pixel row-major) order.
    np.add.at(dfeat, rows, ecoef[:, None] * gpix)
    np.add.at(du, rows, edu)
    np.add.at(dv, rows, edv)
    return dfeat, du, dv
