"""Recurrent policy with a bounded output head.

Each cycle re-feeds the initial state ``x0`` together with the next reference
element ``r_c``; the output after ``c`` cycles approximates the first control
of the ``c``-step MPC problem. All evaluation is batched over rows and
parameters live in one flat float64 vector so optimizers can treat them as a
single array.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

CELLS = ("gru", "elman")


@dataclass(frozen=True)
class PolicyArchitecture:
    hidden: int = 64
    depth: int = 2
    cell: str = "gru"
    output_scale: tuple = (0.2,)

    def __post_init__(self):
        if self.hidden < 1 or self.depth < 1:
            raise ValueError("hidden width and depth must be >= 1")
        if self.cell not in CELLS:
            raise ValueError(f"cell must be one of {CELLS}, got {self.cell!r}")
        if any(s <= 0 for s in self.output_scale):
            raise ValueError("output_scale entries must be positive")


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass
class Trace:
    """Everything ``Policy.backward`` needs from one ``forward`` call."""

    x0n: np.ndarray
    refs: np.ndarray
    caches: list = field(default_factory=list)  # per cycle: list of per-layer tuples
    h_top: np.ndarray | None = None
    y: np.ndarray | None = None
    u: np.ndarray | None = None

    @property
    def cycles(self) -> int:
        return len(self.caches)


class Policy:
    """Structure of the recurrent policy; parameters are passed explicitly.

    ``state_dim`` and ``ref_dim`` fix the per-cycle input ``[x0, r_c]``,
    which is normalised as ``(input - shift) / scale`` before entering the
    first layer.
    """

    def __init__(self, arch: PolicyArchitecture, state_dim: int, ref_dim: int = 1, out_dim: int = 1,
                 in_shift=None, in_scale=None):
        if state_dim < 1 or ref_dim < 1 or out_dim < 1:
            raise ValueError("dimensions must be >= 1")
        if len(arch.output_scale) not in (1, out_dim):
            raise ValueError("output_scale length must be 1 or out_dim")
        self.arch = arch
        self.state_dim = state_dim
        self.ref_dim = ref_dim
        self.out_dim = out_dim
        d = state_dim + ref_dim
        self.in_shift = np.zeros(d) if in_shift is None else np.asarray(in_shift, dtype=np.float64).copy()
        self.in_scale = np.ones(d) if in_scale is None else np.asarray(in_scale, dtype=np.float64).copy()
        if self.in_shift.shape != (d,) or self.in_scale.shape != (d,) or np.any(self.in_scale <= 0):
            raise ValueError("normalisation vectors must have length state_dim + ref_dim, scale > 0")
        self.out_scale = np.broadcast_to(np.asarray(arch.output_scale, dtype=np.float64), (out_dim,)).copy()
        self.layout = self._layout()
        self.n_params = sum(int(np.prod(s)) for _, s in self.layout)

    def _layout(self):
        q = self.arch.hidden
        g = 3 * q if self.arch.cell == "gru" else q
        blocks = []
        for layer in range(self.arch.depth):
            d_in = self.state_dim + self.ref_dim if layer == 0 else q
            blocks += [(f"W{layer}", (d_in, g)), (f"U{layer}", (q, g)), (f"b{layer}", (g,))]
        blocks += [("Wy", (q, self.out_dim)), ("by", (self.out_dim,))]
        return blocks

    # -- parameters -------------------------------------------------------

    def unflatten(self, theta: np.ndarray) -> dict:
        """Views into ``theta`` keyed by block name (writes go through)."""
        if theta.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got shape {theta.shape}")
        out, k = {}, 0
        for name, shape in self.layout:
            size = int(np.prod(shape))
            out[name] = theta[k : k + size].reshape(shape)
            k += size
        return out

    def flatten(self, blocks: dict) -> np.ndarray:
        return np.concatenate([np.asarray(blocks[name], dtype=np.float64).ravel() for name, _ in self.layout])

    def init(self, seed: int, scale: float = 1.0) -> np.ndarray:
        """Uniform(+-1/sqrt(fan_in)) weights and zero biases."""
        rng = np.random.default_rng(seed)
        theta = np.zeros(self.n_params)
        for name, view in self.unflatten(theta).items():
            if name.startswith("b"):
                continue
            bound = scale / np.sqrt(view.shape[0])
            view[...] = rng.uniform(-bound, bound, size=view.shape)
        return theta

    # -- evaluation -------------------------------------------------------

    def zero_hidden(self, batch: int) -> list:
        return [np.zeros((batch, self.arch.hidden)) for _ in range(self.arch.depth)]

    def _cell(self, P, layer, gx, h):
        """One layer update given the input projection ``gx`` (bias included)."""
        U = P[f"U{layer}"]
        if self.arch.cell == "elman":
            pre = gx + h @ U
            h_new = np.maximum(pre, 0.0)
            return h_new, (h, pre > 0.0)
        q = self.arch.hidden
        zr = _sigmoid(gx[:, : 2 * q] + h @ U[:, : 2 * q])
        z, r = zr[:, :q], zr[:, q:]
        rh = r * h
        n = np.tanh(gx[:, 2 * q :] + rh @ U[:, 2 * q :])
        h_new = n + z * (h - n)
        return h_new, (h, z, r, rh, n)

    def _head(self, P, h_top):
        y = h_top @ P["Wy"] + P["by"]
        return y, self.out_scale * np.tanh(y)

    def _prepare(self, P, x0):
        x0 = np.atleast_2d(np.asarray(x0, dtype=np.float64))
        x0n = (x0 - self.in_shift[: self.state_dim]) / self.in_scale[: self.state_dim]
        gx0 = x0n @ P["W0"][: self.state_dim] + P["b0"]
        return x0n, gx0

    def _advance(self, P, gx0, rn, hidden):
        """Run one cycle; returns new hidden list and per-layer caches."""
        new_hidden, caches = [], []
        gx = gx0 + rn @ P["W0"][self.state_dim :]
        a = None
        for layer in range(self.arch.depth):
            if layer > 0:
                a = new_hidden[-1]
                gx = a @ P[f"W{layer}"] + P[f"b{layer}"]
            h_new, cache = self._cell(P, layer, gx, hidden[layer])
            new_hidden.append(h_new)
            caches.append((a, cache))
        return new_hidden, caches

    def cycle(self, theta, x0, r_c, hidden=None):
        """One recurrent cycle. Returns ``(hidden_new, u)``; ``hidden=None`` means h_0 = 0."""
        P = self.unflatten(theta)
        _, gx0 = self._prepare(P, x0)
        rn = (np.atleast_2d(np.asarray(r_c, dtype=np.float64)) - self.in_shift[self.state_dim :]) \
            / self.in_scale[self.state_dim :]
        if hidden is None:
            hidden = self.zero_hidden(gx0.shape[0])
        hidden, _ = self._advance(P, gx0, rn, hidden)
        return hidden, self._head(P, hidden[-1])[1]

    def forward(self, theta, x0, refs, return_all=False):
        """Output after ``c = refs.shape[1]`` cycles from h_0 = 0.

        ``x0``: (B, n); ``refs``: (B, c, p). With ``return_all`` the per-cycle
        outputs ``(B, c, m)`` are returned instead of a trace.
        """
        P = self.unflatten(theta)
        x0n, gx0 = self._prepare(P, x0)
        refs = np.asarray(refs, dtype=np.float64)
        if refs.ndim == 2 and self.ref_dim == 1:
            refs = refs[..., None]
        if refs.ndim != 3 or refs.shape[0] != x0n.shape[0] or refs.shape[2] != self.ref_dim:
            raise ValueError(f"refs must have shape (B, c, {self.ref_dim}), got {refs.shape}")
        if refs.shape[1] < 1:
            raise ValueError("need at least one cycle")
        rn_all = (refs - self.in_shift[self.state_dim :]) / self.in_scale[self.state_dim :]
        hidden = self.zero_hidden(x0n.shape[0])
        trace = Trace(x0n=x0n, refs=rn_all)
        outs = []
        for c in range(refs.shape[1]):
            hidden, caches = self._advance(P, gx0, rn_all[:, c], hidden)
            trace.caches.append(caches)
            if return_all:
                outs.append(self._head(P, hidden[-1])[1])
        if return_all:
            return np.stack(outs, axis=1)
        trace.h_top = hidden[-1]
        trace.y, trace.u = self._head(P, hidden[-1])
        return trace.u, trace

    def act(self, theta, x0, refs):
        """Single-sample convenience: ``x0: (n,)``, ``refs: (c, p)`` or ``(c,)`` -> ``u: (m,)``."""
        refs = np.asarray(refs, dtype=np.float64).reshape(1, -1, self.ref_dim)
        u, _ = self.forward(theta, np.asarray(x0, dtype=np.float64)[None], refs)
        return u[0]

    # -- reverse mode -----------------------------------------------------

    def backward(self, theta, trace: Trace, g_u):
        """Backprop through all cycles of ``trace``.

        ``g_u``: (B, m) upstream dL/du. Returns ``(grad_theta, grad_x0)`` where
        ``grad_theta`` is summed over the batch and ``grad_x0`` is (B, n).
        """
        P = self.unflatten(theta)
        grad = np.zeros(self.n_params)
        G = self.unflatten(grad)
        q, depth, n = self.arch.hidden, self.arch.depth, self.state_dim
        g_u = np.atleast_2d(np.asarray(g_u, dtype=np.float64))
        h_top = trace.h_top
        dy = g_u * self.out_scale * (1.0 - np.tanh(trace.y) ** 2)
        G["Wy"] += h_top.T @ dy
        G["by"] += dy.sum(axis=0)
        dh = [np.zeros((g_u.shape[0], q)) for _ in range(depth)]
        dh[-1] = dy @ P["Wy"].T
        dgx0_sum = None
        for c in range(trace.cycles - 1, -1, -1):
            caches = trace.caches[c]
            d_above = None  # gradient reaching layer l's output from layer l+1's input
            for layer in range(depth - 1, -1, -1):
                dh_new = dh[layer] if d_above is None else dh[layer] + d_above
                a_in, cache = caches[layer]
                dgx, dh_prev = self._cell_backward(P, G, layer, cache, dh_new)
                dh[layer] = dh_prev
                if layer > 0:
                    G[f"W{layer}"] += a_in.T @ dgx
                    G[f"b{layer}"] += dgx.sum(axis=0)
                    d_above = dgx @ P[f"W{layer}"].T
                else:
                    G["W0"][n:] += trace.refs[:, c].T @ dgx
                    dgx0_sum = dgx if dgx0_sum is None else dgx0_sum + dgx
        G["W0"][:n] += trace.x0n.T @ dgx0_sum
        G["b0"] += dgx0_sum.sum(axis=0)
        grad_x0 = (dgx0_sum @ P["W0"][:n].T) / self.in_scale[:n]
        return grad, grad_x0

    def _cell_backward(self, P, G, layer, cache, dh_new):
        """Returns (d gx incl. bias, d h_prev); accumulates U gradient."""
        U = P[f"U{layer}"]
        if self.arch.cell == "elman":
            h, mask = cache
            dpre = dh_new * mask
            G[f"U{layer}"] += h.T @ dpre
            return dpre, dpre @ U.T
        q = self.arch.hidden
        h, z, r, rh, n = cache
        dn = dh_new * (1.0 - z)
        dz = dh_new * (h - n)
        dh = dh_new * z
        dn_pre = dn * (1.0 - n * n)
        Un = U[:, 2 * q :]
        G[f"U{layer}"][:, 2 * q :] += rh.T @ dn_pre
        drh = dn_pre @ Un.T
        dr = drh * h
        dh += drh * r
        dzr_pre = np.concatenate([dz * z * (1.0 - z), dr * r * (1.0 - r)], axis=1)
        G[f"U{layer}"][:, : 2 * q] += h.T @ dzr_pre
        dh += dzr_pre @ U[:, : 2 * q].T
        return np.concatenate([dzr_pre, dn_pre], axis=1), dh
