"""Pure-numpy patch gather/scatter used by the convolution operators.

These two routines are the hot inner loops of conv2d / conv2d_transpose in
both directions; the compiled backend in ``_patchcore.pyx`` implements the
same contracts. Accumulation order in ``col2im`` is fixed to (ki, kj) so both
backends produce bit-identical results.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def im2col(x, kh, kw, sh, sw, out_h, out_w):
    """Gather kernel-sized patches of a padded (N, C, Hp, Wp) array.

    Returns a (N, C*kh*kw, out_h*out_w) array with row index
    (c*kh + ki)*kw + kj and column index oh*out_w + ow, reading
    x[n, c, oh*sh + ki, ow*sw + kj].
    """
    n, c = x.shape[:2]
    # windows: (N, C, H', W', kh, kw) view, strided by (sh, sw)
    windows = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw]
    windows = windows[:, :, :out_h, :out_w]
    cols = windows.transpose(0, 1, 4, 5, 2, 3).reshape(n, c * kh * kw, out_h * out_w)
    return np.ascontiguousarray(cols)


def col2im(cols, c, hp, wp, kh, kw, sh, sw, out_h, out_w):
    """Scatter-add patches back onto a zeroed padded (N, C, Hp, Wp) grid.

    Adjoint of im2col: overlapping patch positions accumulate.
    """
    n = cols.shape[0]
    patches = cols.reshape(n, c, kh, kw, out_h, out_w)
    x = np.zeros((n, c, hp, wp), dtype=cols.dtype)
    for ki in range(kh):
        hi = ki + sh * out_h
        for kj in range(kw):
            wj = kj + sw * out_w
            x[:, :, ki:hi:sh, kj:wj:sw] += patches[:, :, ki, kj]
    return x
