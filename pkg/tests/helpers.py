import numpy as np

from mptpar.numerics import ParamStore, Tensor


def leaf_store(**arrays):
    """A ParamStore whose parameters are the given arrays (for op-level grad checks)."""
    store = ParamStore()
    for name, arr in arrays.items():
        store.add(name, arr)
    return store


def np_layer_norm(x, g, b, eps=1e-5):
    mu = x.mean(-1, keepdims=True)
    var = ((x - mu) ** 2).mean(-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * g + b


def np_gelu(x):
    return 0.5 * x * (1 + np.tanh(np.sqrt(2 / np.pi) * (x + 0.044715 * x ** 3)))


def loop_attention(q_src, kv_src, store, prefix, heads):
    """Naive nested-loop multi-head attention, used as an oracle."""
    p = {k: store[f"{prefix}.{k}"].data for k in ("q.w", "q.b", "k.w", "k.b", "v.w", "v.b", "o.w", "o.b")}
    B, Lq, D = q_src.shape
    Lk = kv_src.shape[1]
    dh = D // heads
    out = np.zeros((B, Lq, D))
    for b in range(B):
        Q = q_src[b] @ p["q.w"] + p["q.b"]
        K = kv_src[b] @ p["k.w"] + p["k.b"]
        V = kv_src[b] @ p["v.w"] + p["v.b"]
        ctx = np.zeros((Lq, D))
        for h in range(heads):
            sl = slice(h * dh, (h + 1) * dh)
            for i in range(Lq):
                s = np.array([sum(Q[i, sl][c] * K[j, sl][c] for c in range(dh)) for j in range(Lk)])
                s = s / np.sqrt(dh)
                w = np.exp(s - s.max())
                w /= w.sum()
                for j in range(Lk):
                    ctx[i, sl] += w[j] * V[j, sl]
        out[b] = ctx @ p["o.w"] + p["o.b"]
    return out


def np_encoder_layer(x, store, prefix, heads):
    s = lambda k: store[f"{prefix}.{k}"].data  # noqa: E731
    h = np_layer_norm(x, s("ln1.g"), s("ln1.b"))
    h = x + loop_attention(h, h, store, f"{prefix}.attn", heads)
    z = np_layer_norm(h, s("ln2.g"), s("ln2.b"))
    return h + np_gelu(z @ s("ffn1.w") + s("ffn1.b")) @ s("ffn2.w") + s("ffn2.b")


def np_cross_layer(q, kv, store, prefix, heads):
    s = lambda k: store[f"{prefix}.{k}"].data  # noqa: E731
    qn = np_layer_norm(q, s("ln1.g"), s("ln1.b"))
    kvn = np_layer_norm(kv, s("ln_kv.g"), s("ln_kv.b"))
    h = q + loop_attention(qn, kvn, store, f"{prefix}.attn", heads)
    z = np_layer_norm(h, s("ln2.g"), s("ln2.b"))
    return h + np_gelu(z @ s("ffn1.w") + s("ffn1.b")) @ s("ffn2.w") + s("ffn2.b")


def np_encoder(x, store, prefix, layers, heads):
    for i in range(layers):
        x = np_encoder_layer(x, store, f"{prefix}.{i}", heads)
    return x


def randomize(store, rng, scale=0.3, prefix=""):
    """Replace every parameter under ``prefix`` with random values so tests exercise non-trivial weights."""
    for name, t in store.items():
        if name.startswith(prefix):
            t.data[...] = rng.normal(0.0, scale, size=t.shape)
            if name.endswith(".g"):
                t.data[...] += 1.0


def const(a):
    return Tensor(np.asarray(a, dtype=float))


# ---------------------------------------------------------------- shared model fixtures

def tiny_config(**changes):
    """D=16, C=4, K=2, two heads everywhere, 16x16 frames."""
    from mptpar.pipeline import ModelConfig

    base = dict(dim=16, channels=4, scene_tokens=2, stre_heads=2, agg_heads=2, fuse_heads=2, relation_hidden=8,
                height=16, width=16, nmax=8)
    base.update(changes)
    return ModelConfig(**base)


def tiny_spec(n=3, frames=2, groups=(2, 2), **changes):
    from mptpar.synthgen import GenSpec

    base = dict(n_min=n, n_max=n, frames=frames, height=16, width=16, groups_min=groups[0], groups_max=groups[1],
                box_half=2.0, sigma=1.0, motion=1.0)
    base.update(changes)
    return GenSpec(**base)


def overfit_setup():
    """Four clips with N in [4, 6], T=3, and a D=64 model (eight aggregation heads)."""
    from mptpar.pipeline import ModelConfig
    from mptpar.synthgen import GenSpec, generate_dataset

    clips = generate_dataset(GenSpec(n_min=4, n_max=6, frames=3), count=4, seed=0)
    return clips, ModelConfig(dim=64, agg_heads=8)


def op_cases():
    """Small scalar functions covering every differentiable primitive, keyed by name."""
    from mptpar.numerics import bce_with_logits, layer_norm, softmax_lastdim
    from mptpar.numerics import tensor as T

    rng = np.random.default_rng(7)
    a = rng.normal(size=(2, 3, 4))
    w6 = T.Tensor(rng.normal(size=(6, 2)))
    wa = T.Tensor(rng.normal(size=a.shape))
    return {
        "add_broadcast": (lambda s: ((s["x"] + s["y"]) * wa).sum(), dict(x=a, y=rng.normal(size=(1, 4)))),
        "mul_div": (lambda s: ((s["x"] * s["y"]) / (s["y"] * s["y"] + 2.0)).sum(),
                    dict(x=a, y=rng.normal(size=(3, 1)))),
        "matmul_batched": (lambda s: T.tanh(s["x"] @ s["y"]).sum(), dict(x=a, y=rng.normal(size=(4, 5)))),
        "transpose_reshape": (lambda s: T.tanh(T.transpose(s["x"], (2, 0, 1)).reshape(4, 6) @ w6).sum(), dict(x=a)),
        "getitem_concat": (lambda s: (T.concat([s["x"][:, 1:], s["x"][:, :1] * 2.0], axis=1)[0, [0, 2, 2]]
                                      * s["x"][1]).sum(), dict(x=a)),
        "exp_log_sigmoid": (lambda s: T.log(T.sigmoid(s["x"]) + T.exp(s["x"] * 0.1)).mean(), dict(x=a)),
        "gelu": (lambda s: (T.gelu(s["x"]) * T.gelu(s["x"])).sum(), dict(x=a * 2)),
        "max_axis": (lambda s: (T.tmax(s["x"], axis=1) * s["x"][:, 0]).sum(), dict(x=a)),
        "mean_keepdims": (lambda s: (T.mean(s["x"], axis=(0, 2), keepdims=True) * s["x"]).sum(), dict(x=a)),
        "softmax": (lambda s: (softmax_lastdim(s["x"]) * wa).sum(), dict(x=a)),
        "layer_norm": (lambda s: (layer_norm(s["x"], s["g"], s["b"]) * wa).sum(),
                       dict(x=a, g=rng.normal(size=4), b=rng.normal(size=4))),
        "bce": (lambda s: bce_with_logits(s["x"], (a > 0).astype(float)), dict(x=a * 3)),
        "stack_broadcast": (lambda s: (T.stack([s["x"], s["x"] * s["x"]], 0)
                                       * T.broadcast_to(s["y"], (2, 2, 3, 4))).sum(),
                            dict(x=a, y=rng.normal(size=(1, 1, 1, 4)))),
    }


def planted_affinity(sizes, rng, within=0.9, across=0.05, noise=0.05):
    """Block affinity with shuffled members and symmetric uniform noise; returns (A, planted partition)."""
    from mptpar.grouping import canonical

    n = sum(sizes)
    labels = np.repeat(np.arange(len(sizes)), sizes)
    perm = rng.permutation(n)
    labels = labels[perm]
    base = np.where(labels[:, None] == labels[None, :], within, across)
    e = rng.uniform(-noise, noise, size=(n, n))
    a = np.clip(base + np.triu(e, 1) + np.triu(e, 1).T, 0.0, 1.0)
    np.fill_diagonal(a, 1.0)
    truth = canonical([np.where(labels == j)[0].tolist() for j in range(len(sizes))])
    return a, truth


def bilinear_oracle(img, y, x):
    """Textbook bilinear read of ``img`` at continuous (y, x), clamped to the border."""
    h, w = img.shape
    y = min(max(y, 0), h - 1)
    x = min(max(x, 0), w - 1)
    y0, x0 = int(np.floor(y)), int(np.floor(x))
    y1, x1 = min(y0 + 1, h - 1), min(x0 + 1, w - 1)
    dy, dx = y - y0, x - x0
    return (img[y0, x0] * (1 - dy) * (1 - dx) + img[y0, x1] * (1 - dy) * dx
            + img[y1, x0] * dy * (1 - dx) + img[y1, x1] * dy * dx)


# PASS/FAIL lines collected by the acceptance suite, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []
