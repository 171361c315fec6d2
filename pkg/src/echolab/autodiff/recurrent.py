"""Fused recurrent primitives with hand-written backpropagation through time.

Both ops take an explicit initial state and return ``(outputs, final_state)``;
the final state is a plain array so callers can carry it across sequence
chunks without extending the tape.
"""
from __future__ import annotations

import numpy as np

from .conv import conv_backward, conv_forward
from .ops import _sigmoid
from .tensor import NonFiniteError, Tensor, as_tensor, make


def gru_sequence(x, w, u, b, h0=None) -> tuple[Tensor, np.ndarray]:
    """Grouped GRU over ``x`` of shape ``(B, T, G, D)``.

    Per group: ``w (D, 3H)``, ``u (H, 3H)``, ``b (3H,)`` with gate order
    update, reset, candidate::

        z = sig(x Wz + h Uz + bz)
        r = sig(x Wr + h Ur + br)
        n = tanh(x Wn + r * (h Un) + bn)
        h' = (1 - z) * n + z * h

    Groups never exchange information. Returns states ``(B, T, G, H)``.
    """
    x, w, u, b = (as_tensor(t) for t in (x, w, u, b))
    batch, steps, groups, din = x.shape
    hidden = u.shape[1]
    if w.shape != (groups, din, 3 * hidden) or u.shape != (groups, hidden, 3 * hidden) or b.shape != (
        groups,
        3 * hidden,
    ):
        raise ValueError(
            f"GRU parameter shapes {w.shape}, {u.shape}, {b.shape} inconsistent with "
            f"{groups} groups, input {din}, hidden {hidden}"
        )
    h0t = None
    if h0 is None:
        h = np.zeros((groups, batch, hidden))
    else:
        h0t = as_tensor(h0)
        h = h0t.data.transpose(1, 0, 2).copy()

    xw = (x.data.transpose(2, 1, 0, 3) @ w.data[:, None]).transpose(1, 0, 2, 3) + b.data[None, :, None, :]
    shape = (steps, groups, batch, hidden)
    hs, hprev, zs, rs, ns, hun = (np.empty(shape) for _ in range(6))
    H = hidden
    for t in range(steps):
        hu = h @ u.data
        z = _sigmoid(xw[t, ..., :H] + hu[..., :H])
        r = _sigmoid(xw[t, ..., H : 2 * H] + hu[..., H : 2 * H])
        n = np.tanh(xw[t, ..., 2 * H :] + r * hu[..., 2 * H :])
        hprev[t], zs[t], rs[t], ns[t], hun[t] = h, z, r, n, hu[..., 2 * H :]
        h = n + z * (h - n)
        if not np.all(np.isfinite(h)):
            raise NonFiniteError(f"GRU state became non-finite at step {t}")
        hs[t] = h

    def back(g):
        gt = g.transpose(1, 2, 0, 3)
        dxw = np.empty((steps, groups, batch, 3 * H))
        dhu_all = np.empty_like(dxw)
        dh = np.zeros((groups, batch, H))
        ut = u.data.transpose(0, 2, 1)
        for t in range(steps - 1, -1, -1):
            dh = dh + gt[t]
            z, r, n = zs[t], rs[t], ns[t]
            dz = dh * (hprev[t] - n) * z * (1.0 - z)
            dan = dh * (1.0 - z) * (1.0 - n**2)
            dr = dan * hun[t] * r * (1.0 - r)
            dxw[t, ..., :H] = dz
            dxw[t, ..., H : 2 * H] = dr
            dxw[t, ..., 2 * H :] = dan
            dhu_all[t, ..., :H] = dz
            dhu_all[t, ..., H : 2 * H] = dr
            dhu_all[t, ..., 2 * H :] = dan * r
            dh = dh * z + dhu_all[t] @ ut
        xg = x.data.transpose(2, 1, 0, 3).reshape(groups, steps * batch, din)
        dg = dxw.transpose(1, 0, 2, 3).reshape(groups, steps * batch, 3 * H)
        dw = xg.transpose(0, 2, 1) @ dg
        hg = hprev.transpose(1, 0, 2, 3).reshape(groups, steps * batch, H)
        du = hg.transpose(0, 2, 1) @ dhu_all.transpose(1, 0, 2, 3).reshape(groups, steps * batch, 3 * H)
        dx = (dg @ w.data.transpose(0, 2, 1)).reshape(groups, steps, batch, din).transpose(2, 1, 0, 3)
        grads = [dx, dw, du, dxw.sum(axis=(0, 2))]
        if h0t is not None:
            grads.append(dh.transpose(1, 0, 2))
        return grads

    parents = [x, w, u, b] + ([h0t] if h0t is not None else [])
    return make(hs.transpose(2, 0, 1, 3), parents, back), h.transpose(1, 0, 2).copy()


def convlstm_sequence(x, wx, wh, b, state=None) -> tuple[Tensor, tuple[np.ndarray, np.ndarray]]:
    """Peephole-free ConvLSTM over ``x`` of shape ``(B, T, bins, Cin)``.

    Gate transforms are frequency convolutions: ``wx (N, Cin, 4F)``,
    ``wh (N, F, 4F)``, ``b (4F,)``; gate order input, forget, cell, output.
    ``state`` is ``(h, c)`` each ``(B, bins, F)``; zeros when omitted.
    """
    x, wx, wh, b = (as_tensor(t) for t in (x, wx, wh, b))
    batch, steps, bins, _ = x.shape
    F = wh.shape[1]
    if wh.shape[2] != 4 * F or wx.shape[2] != 4 * F or b.shape != (4 * F,) or wx.shape[0] != wh.shape[0]:
        raise ValueError(f"ConvLSTM parameter shapes {wx.shape}, {wh.shape}, {b.shape} are inconsistent")
    if state is None:
        h = np.zeros((batch, bins, F))
        c = np.zeros((batch, bins, F))
    else:
        h, c = (np.array(s, dtype=float) for s in state)

    xa = conv_forward(x.data, wx.data) + b.data
    shape = (steps, batch, bins, F)
    hs, hprev, cprev, cs, gi, gf, gg, go = (np.empty(shape) for _ in range(8))
    for t in range(steps):
        a = xa[:, t] + conv_forward(h, wh.data)
        i = _sigmoid(a[..., :F])
        f = _sigmoid(a[..., F : 2 * F])
        g = np.tanh(a[..., 2 * F : 3 * F])
        o = _sigmoid(a[..., 3 * F :])
        hprev[t], cprev[t] = h, c
        c = f * c + i * g
        h = o * np.tanh(c)
        if not np.all(np.isfinite(h)):
            raise NonFiniteError(f"ConvLSTM state became non-finite at step {t}")
        hs[t], cs[t], gi[t], gf[t], gg[t], go[t] = h, c, i, f, g, o

    def back(grad):
        dxa = np.empty(xa.shape)
        dwh = np.zeros_like(wh.data)
        dh = np.zeros((batch, bins, F))
        dc = np.zeros((batch, bins, F))
        for t in range(steps - 1, -1, -1):
            dh = dh + grad[:, t]
            tc = np.tanh(cs[t])
            i, f, g, o = gi[t], gf[t], gg[t], go[t]
            dc = dc + dh * o * (1.0 - tc**2)
            da = np.concatenate(
                [
                    dc * g * i * (1.0 - i),
                    dc * cprev[t] * f * (1.0 - f),
                    dc * i * (1.0 - g**2),
                    dh * tc * o * (1.0 - o),
                ],
                axis=-1,
            )
            dxa[:, t] = da
            dh, dwh_t = conv_backward(hprev[t], wh.data, da)
            dwh += dwh_t
            dc = dc * f
        dx, dwx = conv_backward(x.data, wx.data, dxa)
        return [dx, dwx, dwh, dxa.reshape(-1, 4 * F).sum(axis=0)]

    out = make(hs.transpose(1, 0, 2, 3), [x, wx, wh, b], back)
    return out, (h.copy(), c.copy())
