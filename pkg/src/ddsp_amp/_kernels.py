"""Compiled inner loops for the sequential parts of the signal chain.

Everything here is a plain scalar loop over time; batch rows are independent.
fastmath stays off so block-split processing is bit-identical to one call.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def _sigmoid(v):
    if v >= 0.0:
        return 1.0 / (1.0 + np.exp(-v))
    e = np.exp(v)
    return e / (1.0 + e)


@njit(cache=True)
def biquad_td(b0, b1, b2, a1, a2, x, s1, s2):
    """Direct-form II transposed biquad over a 1-D signal; returns (y, s1, s2)."""
    n = x.shape[0]
    y = np.empty(n)
    for i in range(n):
        xi = x[i]
        yi = b0 * xi + s1
        s1 = b1 * xi - a1 * yi + s2
        s2 = b2 * xi - a2 * yi
        y[i] = yi
    return y, s1, s2


@njit(cache=True)
def gru1_forward(p, x, h0):
    """Hidden-size-1 GRU over rows of x (B, T).

    p = (w_r, w_z, w_c, u_r, u_z, u_c, b_r, b_z, b_c). Returns the hidden
    sequence (which is also the output) plus the gate values needed for BPTT.
    """
    wr, wz, wc, ur, uz, uc, br, bz, bc = p[0], p[1], p[2], p[3], p[4], p[5], p[6], p[7], p[8]
    nb, nt = x.shape
    hs = np.empty((nb, nt))
    rs = np.empty((nb, nt))
    zs = np.empty((nb, nt))
    cs = np.empty((nb, nt))
    for b in range(nb):
        h = h0[b]
        for t in range(nt):
            xt = x[b, t]
            r = _sigmoid(wr * xt + ur * h + br)
            z = _sigmoid(wz * xt + uz * h + bz)
            c = np.tanh(wc * xt + r * uc * h + bc)
            h = (1.0 - z) * c + z * h
            rs[b, t] = r
            zs[b, t] = z
            cs[b, t] = c
            hs[b, t] = h
    return hs, rs, zs, cs


@njit(cache=True)
def gru1_backward(p, x, h0, hs, rs, zs, cs, gy):
    """Backpropagation through time for gru1_forward; returns (gp, gx, gh0)."""
    wr, wz, wc, ur, uz, uc = p[0], p[1], p[2], p[3], p[4], p[5]
    nb, nt = x.shape
    gp = np.zeros(9)
    gx = np.empty((nb, nt))
    gh0 = np.empty(nb)
    for b in range(nb):
        gh = 0.0
        for t in range(nt - 1, -1, -1):
            gh += gy[b, t]
            hp = hs[b, t - 1] if t > 0 else h0[b]
            xt = x[b, t]
            r = rs[b, t]
            z = zs[b, t]
            c = cs[b, t]
            gc = gh * (1.0 - z)
            gz = gh * (hp - c)
            ghp = gh * z
            gac = gc * (1.0 - c * c)
            gr = gac * uc * hp
            gaz = gz * z * (1.0 - z)
            gar = gr * r * (1.0 - r)
            gp[0] += gar * xt
            gp[1] += gaz * xt
            gp[2] += gac * xt
            gp[3] += gar * hp
            gp[4] += gaz * hp
            gp[5] += gac * r * hp
            gp[6] += gar
            gp[7] += gaz
            gp[8] += gac
            ghp += gac * r * uc + gaz * uz + gar * ur
            gx[b, t] = gac * wc + gaz * wz + gar * wr
            gh = ghp
        gh0[b] = gh
    return gp, gx, gh0


@njit(cache=True)
def gru_forward(wx, wh, bias, u, h0):
    """Vector GRU with one bias per gate.

    wx: (3H, I) input weights, wh: (3H, H) recurrent weights, bias: (3H,),
    gate order (r, z, c). u: (B, T, I) inputs, h0: (B, H).
    Returns hidden states (B, T, H) and gates (B, T, 3H) for BPTT.
    """
    nb, nt, ni = u.shape
    nh = wh.shape[1]
    hs = np.empty((nb, nt, nh))
    gates = np.empty((nb, nt, 3 * nh))
    ax = np.empty(3 * nh)
    ah = np.empty(3 * nh)
    for b in range(nb):
        h = h0[b].copy()
        for t in range(nt):
            for k in range(3 * nh):
                acc = bias[k]
                for i in range(ni):
                    acc += wx[k, i] * u[b, t, i]
                ax[k] = acc
                acc = 0.0
                for j in range(nh):
                    acc += wh[k, j] * h[j]
                ah[k] = acc
            for j in range(nh):
                r = _sigmoid(ax[j] + ah[j])
                z = _sigmoid(ax[nh + j] + ah[nh + j])
                c = np.tanh(ax[2 * nh + j] + r * ah[2 * nh + j])
                gates[b, t, j] = r
                gates[b, t, nh + j] = z
                gates[b, t, 2 * nh + j] = c
            for j in range(nh):
                z = gates[b, t, nh + j]
                h[j] = (1.0 - z) * gates[b, t, 2 * nh + j] + z * h[j]
                hs[b, t, j] = h[j]
    return hs, gates


@njit(cache=True)
def gru_backward(wx, wh, bias, u, h0, hs, gates, gy):
    """BPTT for gru_forward; returns (gwx, gwh, gbias, gu, gh0)."""
    nb, nt, ni = u.shape
    nh = wh.shape[1]
    gwx = np.zeros(wx.shape)
    gwh = np.zeros(wh.shape)
    gb = np.zeros(bias.shape)
    gu = np.zeros(u.shape)
    gh0 = np.zeros(h0.shape)
    gh = np.empty(nh)
    gnext = np.empty(nh)
    ga = np.empty(3 * nh)  # grads wrt input-side pre-activations (incl. bias)
    gah = np.empty(3 * nh)  # grads wrt recurrent matvec outputs
    hp = np.empty(nh)
    for b in range(nb):
        for j in range(nh):
            gh[j] = 0.0
        for t in range(nt - 1, -1, -1):
            for j in range(nh):
                hp[j] = hs[b, t - 1, j] if t > 0 else h0[b, j]
            # recompute recurrent candidate term U_c h
            for j in range(nh):
                gh[j] += gy[b, t, j]
            for j in range(nh):
                r = gates[b, t, j]
                z = gates[b, t, nh + j]
                c = gates[b, t, 2 * nh + j]
                acc = 0.0
                for k in range(nh):
                    acc += wh[2 * nh + j, k] * hp[k]
                g = gh[j]
                gc = g * (1.0 - z)
                gz = g * (hp[j] - c)
                gnext[j] = g * z
                gac = gc * (1.0 - c * c)
                gr = gac * acc
                ga[2 * nh + j] = gac
                gah[2 * nh + j] = gac * r
                gaz = gz * z * (1.0 - z)
                ga[nh + j] = gaz
                gah[nh + j] = gaz
                gar = gr * r * (1.0 - r)
                ga[j] = gar
                gah[j] = gar
            for k in range(3 * nh):
                gb[k] += ga[k]
                for i in range(ni):
                    gwx[k, i] += ga[k] * u[b, t, i]
                    gu[b, t, i] += ga[k] * wx[k, i]
                for j in range(nh):
                    gwh[k, j] += gah[k] * hp[j]
                    gnext[j] += gah[k] * wh[k, j]
            for j in range(nh):
                gh[j] = gnext[j]
        for j in range(nh):
            gh0[b, j] = gh[j]
    return gwx, gwh, gb, gu, gh0


@njit(cache=True)
def cascade_response(c, zinv):
    """c: (K, 5, B) real coefficients, zinv: (F,) complex. Returns H per section and the product."""
    nk, _, nb = c.shape
    nf = zinv.shape[0]
    h = np.empty((nk, nb, nf), dtype=np.complex128)
    den = np.empty((nk, nb, nf), dtype=np.complex128)
    prod = np.ones((nb, nf), dtype=np.complex128)
    for k in range(nk):
        for b in range(nb):
            b0, b1, b2, a1, a2 = c[k, 0, b], c[k, 1, b], c[k, 2, b], c[k, 3, b], c[k, 4, b]
            for f in range(nf):
                z1 = zinv[f]
                z2 = z1 * z1
                d = 1.0 + a1 * z1 + a2 * z2
                hv = (b0 + b1 * z1 + b2 * z2) / d
                den[k, b, f] = d
                h[k, b, f] = hv
                prod[b, f] *= hv
    return h, den, prod


@njit(cache=True)
def cascade_response_grad(g, h, den, zinv):
    """Real gradients (K, 5, B) of the cascade product given its complex cotangent g (B, F)."""
    nk, nb, nf = h.shape
    out = np.zeros((nk, 5, nb))
    loo = np.empty(nk, dtype=np.complex128)
    for b in range(nb):
        for f in range(nf):
            acc = 1.0 + 0.0j
            for k in range(nk):
                loo[k] = acc
                acc *= h[k, b, f]
            acc = 1.0 + 0.0j
            for k in range(nk - 1, -1, -1):
                loo[k] *= acc
                acc *= h[k, b, f]
            z1c = np.conj(zinv[f])
            z2c = z1c * z1c
            gf = g[b, f]
            for k in range(nk):
                gh = gf * np.conj(loo[k])
                gd = gh / np.conj(den[k, b, f])
                gn = -gh * np.conj(h[k, b, f] / den[k, b, f])
                out[k, 0, b] += gd.real
                out[k, 1, b] += (gd * z1c).real
                out[k, 2, b] += (gd * z2c).real
                out[k, 3, b] += (gn * z1c).real
                out[k, 4, b] += (gn * z2c).real
    return out
