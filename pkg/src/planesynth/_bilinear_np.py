"""NumPy fallback for the bilinear gather/scatter kernels.

Semantics are shared with the compiled core (``_bilinear_cy``): pixel centers
sit at integer coordinates, the interpolation cell is chosen with ``floor``
(right-continuous at integer junctions), and out-of-range samples are handled
by index clamping (``MODE_CLAMP``) or by zeroing the out-of-bounds corners
(``MODE_ZERO``). The forward sum is accumulated corner by corner in the same
order as the compiled loop so both backends agree to the last ulp.
"""

import numpy as np

MODE_CLAMP = 0
MODE_ZERO = 1


def _corner_data(values, xs, ys, mode):
    h, w = values.shape[0], values.shape[1]
    x0f = np.floor(xs)
    y0f = np.floor(ys)
    fx = xs - x0f
    fy = ys - y0f
    x0 = x0f.astype(np.int64)
    y0 = y0f.astype(np.int64)
    x1 = x0 + 1
    y1 = y0 + 1
    x0c = np.clip(x0, 0, w - 1)
    x1c = np.clip(x1, 0, w - 1)
    y0c = np.clip(y0, 0, h - 1)
    y1c = np.clip(y1, 0, h - 1)
    corners = ((y0c, x0c), (y0c, x1c), (y1c, x0c), (y1c, x1c))
    if mode == MODE_ZERO:
        inx0 = (x0 >= 0) & (x0 <= w - 1)
        inx1 = (x1 >= 0) & (x1 <= w - 1)
        iny0 = (y0 >= 0) & (y0 <= h - 1)
        iny1 = (y1 >= 0) & (y1 <= h - 1)
        masks = tuple(
            (mx & my).astype(np.float64)
            for mx, my in ((inx0, iny0), (inx1, iny0), (inx0, iny1), (inx1, iny1))
        )
    else:
        masks = (None, None, None, None)
    vals = []
    for (yc, xc), m in zip(corners, masks):
        v = values[yc, xc]
        if m is not None:
            v = v * m[:, None]
        vals.append(v)
    return (fx, fy), corners, masks, tuple(vals)


def bilinear_forward(values, xs, ys, mode):
    """Sample ``values`` (H, W, C) at flat coords ``xs``/``ys`` (P,) -> (P, C)."""
    (fx, fy), _, _, (v00, v10, v01, v11) = _corner_data(values, xs, ys, mode)
    w00 = ((1.0 - fx) * (1.0 - fy))[:, None]
    w10 = (fx * (1.0 - fy))[:, None]
    w01 = ((1.0 - fx) * fy)[:, None]
    w11 = (fx * fy)[:, None]
    return v00 * w00 + v10 * w10 + v01 * w01 + v11 * w11


def bilinear_backward(values, xs, ys, gout, mode):
    """Adjoints of :func:`bilinear_forward`.

    Returns ``(gvalues, gxs, gys)`` with ``gvalues`` of shape (H, W, C) and
    the coordinate gradients flat (P,). Corner scatter uses ``bincount``;
    the accumulation order differs from the compiled loop, so cross-backend
    agreement on the value gradient is exact only up to rounding.
    """
    h, w, c = values.shape
    (fx, fy), corners, masks, (v00, v10, v01, v11) = _corner_data(
        values, xs, ys, mode
    )
    weights = (
        (1.0 - fx) * (1.0 - fy),
        fx * (1.0 - fy),
        (1.0 - fx) * fy,
        fx * fy,
    )

    gval = np.zeros(h * w * c, dtype=np.float64)
    for (yc, xc), m, wgt in zip(corners, masks, weights):
        contrib = gout * wgt[:, None]
        if m is not None:
            contrib = contrib * m[:, None]
        base = (yc * w + xc) * c
        for ch in range(c):
            gval += np.bincount(
                base + ch, weights=contrib[:, ch], minlength=h * w * c
            )
    gval = gval.reshape(h, w, c)

    # Masked corner values are already zeroed, which makes the piecewise
    # derivative correct for both boundary modes.
    dfx = (v10 - v00) * (1.0 - fy)[:, None] + (v11 - v01) * fy[:, None]
    dfy = (v01 - v00) * (1.0 - fx)[:, None] + (v11 - v10) * fx[:, None]
    gxs = (gout * dfx).sum(axis=1)
    gys = (gout * dfy).sum(axis=1)
    return gval, gxs, gys
