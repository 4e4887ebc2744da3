"""Pure-numpy kernels. Reference path and fallback when numba is disabled."""
import numpy as np

GELU_K = np.sqrt(2.0 / np.pi)
GELU_A = 0.044715


def extract_patches(img, p, stride):
    """(B, C, H, W) -> (B, H', W', C, p*p), windows flattened row-major."""
    B, C, H, W = img.shape
    hp = (H - p) // stride + 1
    wp = (W - p) // stride + 1
    win = np.lib.stride_tricks.sliding_window_view(img, (p, p), axis=(2, 3))
    win = win[:, :, ::stride, ::stride][:, :, :hp, :wp]
    out = win.transpose(0, 2, 3, 1, 4, 5).reshape(B, hp, wp, C, p * p)
    return np.ascontiguousarray(out)


def fold_patches(g, H, W, p, stride):
    """Adjoint of extract_patches: scatter-add patch gradients onto the image grid."""
    B, hp, wp, C, _ = g.shape
    g6 = g.reshape(B, hp, wp, C, p, p).transpose(0, 3, 1, 2, 4, 5)
    out = np.zeros((B, C, H, W), dtype=g.dtype)
    hspan = stride * (hp - 1) + 1
    wspan = stride * (wp - 1) + 1
    for dy in range(p):
        for dx in range(p):
            out[:, :, dy:dy + hspan:stride, dx:dx + wspan:stride] += g6[..., dy, dx]
    return out


def layernorm_forward(x, gamma, beta, eps):
    """Rows of a 2-D array normalised with the 1/n variance. Returns (y, xhat, rstd)."""
    mu = x.mean(axis=1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    y = xhat * gamma + beta
    return y, xhat, rstd[:, 0]


def layernorm_backward(gy, xhat, rstd, gamma):
    n = xhat.shape[1]
    ggamma = (gy * xhat).sum(axis=0)
    gbeta = gy.sum(axis=0)
    gxhat = gy * gamma
    s1 = gxhat.sum(axis=1, keepdims=True)
    s2 = (gxhat * xhat).sum(axis=1, keepdims=True)
    gx = (n * gxhat - s1 - xhat * s2) * (rstd[:, None] / n)
    return gx.astype(xhat.dtype, copy=False), ggamma, gbeta


def gelu_forward(x):
    t = np.tanh(GELU_K * (x + GELU_A * x * x * x))
    return (0.5 * x * (1.0 + t)).astype(x.dtype, copy=False)


def gelu_backward(x, gy):
    x2 = x * x
    t = np.tanh(GELU_K * (x + GELU_A * x2 * x))
    dt = GELU_K * (1.0 + 3.0 * GELU_A * x2)
    d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dt
    return (gy * d).astype(x.dtype, copy=False)
