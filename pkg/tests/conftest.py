import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def conv2d_loops(x, weights, bias=None, stride=1, pad=0):
    """Six-nested-loop convolution oracle, deliberately naive."""
    n, c_in, h, w = x.shape
    c_out, _, kh, kw = weights.shape
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    out = np.zeros((n, c_out, oh, ow))
    for b in range(n):
        for co in range(c_out):
            for oy in range(oh):
                for ox in range(ow):
                    acc = 0.0
                    for ci in range(c_in):
                        for ky in range(kh):
                            for kx in range(kw):
                                iy = oy * stride + ky - pad
                                ix = ox * stride + kx - pad
                                if 0 <= iy < h and 0 <= ix < w:
                                    acc += x[b, ci, iy, ix] * weights[co, ci, ky, kx]
                    out[b, co, oy, ox] = acc
                    if bias is not None:
                        out[b, co, oy, ox] += bias[co]
    return out
