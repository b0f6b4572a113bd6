"""Independent brute-force references: explicit Python loops, no shared helpers."""
import math

import numpy as np


def ln_row(x, g, b, eps=1e-5):
    mu = sum(x) / len(x)
    var = sum((v - mu) ** 2 for v in x) / len(x)
    return [(v - mu) / math.sqrt(var + eps) * gi + bi for v, gi, bi in zip(x, g, b)]


def vec_mat(v, W):
    return [sum(v[i] * W[i][j] for i in range(len(v))) for j in range(len(W[0]))]


def attend(q, keys, values, allowed):
    """One query over keys/values; disallowed keys get no weight."""
    dh = len(q)
    scores = [sum(a * b for a, b in zip(q, k)) / math.sqrt(dh) if ok else None
              for k, ok in zip(keys, allowed)]
    top = max(s for s in scores if s is not None)
    ex = [math.exp(s - top) if s is not None else 0.0 for s in scores]
    tot = sum(ex)
    w = [e / tot for e in ex]
    return [sum(w[j] * values[j][c] for j in range(len(values))) for c in range(len(values[0]))], w


def cross_attention_oracle(z, conds, params, heads, prefix="block0."):
    """z: (B, L, P, d) array. Returns the residual output as an array."""
    P_ = {k: v.data.tolist() if hasattr(v, "data") else v for k, v in params.items()}
    B, L, P, d = z.shape
    dh = d // heads
    out = np.zeros_like(z)
    for b in range(B):
        for f in range(L):
            emb = conds[b].per_frame[f]
            toks = emb.tokens.data.tolist()
            allowed = [bool(m) for m in emb.mask]
            K = [vec_mat(t, P_[prefix + "ca.wk"]) for t in toks]
            V = [vec_mat(t, P_[prefix + "ca.wv"]) for t in toks]
            for p in range(P):
                h = ln_row(z[b, f, p].tolist(), P_[prefix + "ca.ln_g"], P_[prefix + "ca.ln_b"])
                q = vec_mat(h, P_[prefix + "ca.wq"])
                cat = []
                for hh in range(heads):
                    sl = slice(hh * dh, (hh + 1) * dh)
                    o, _ = attend(q[sl], [k[sl] for k in K], [v[sl] for v in V], allowed)
                    cat += o
                proj = vec_mat(cat, P_[prefix + "ca.wo"])
                out[b, f, p] = [z[b, f, p, c] + proj[c] + P_[prefix + "ca.bo"][c] for c in range(d)]
    return out


def temporal_attention_oracle(z, params, heads, prefix="block0."):
    P_ = {k: v.data.tolist() if hasattr(v, "data") else v for k, v in params.items()}
    B, L, P, d = z.shape
    dh = d // heads
    out = np.zeros_like(z)
    for b in range(B):
        for p in range(P):
            hs = [ln_row(z[b, f, p].tolist(), P_[prefix + "ta.ln_g"], P_[prefix + "ta.ln_b"]) for f in range(L)]
            Q = [vec_mat(h, P_[prefix + "ta.wq"]) for h in hs]
            K = [vec_mat(h, P_[prefix + "ta.wk"]) for h in hs]
            V = [vec_mat(h, P_[prefix + "ta.wv"]) for h in hs]
            for f in range(L):
                cat = []
                for hh in range(heads):
                    sl = slice(hh * dh, (hh + 1) * dh)
                    o, _ = attend(Q[f][sl], [k[sl] for k in K], [v[sl] for v in V], [True] * L)
                    cat += o
                proj = vec_mat(cat, P_[prefix + "ta.wo"])
                out[b, f, p] = [z[b, f, p, c] + proj[c] + P_[prefix + "ta.bo"][c] for c in range(d)]
    return out


def guided_eps_oracle(eps_cond, eps_null, w):
    return eps_null + w * (eps_cond - eps_null)
