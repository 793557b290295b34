"""Toy-scale trainable adapter stack on a minimal transformer block.

The block hosts four mechanisms: a timestep/layer conditioner emitting
six modulation scalars, a gated low-rank residual on the attention value
projection, FiLM modulation of the MLP-branch input driven by perceptual
embeddings, and an additive residual coupler. Backbone weights stay
frozen; all adapter gradients are hand-derived reverse accumulation
through this fixed graph, verified against the central-difference oracle.
"""

import math
from dataclasses import dataclass, fields

import numpy as np

from . import features as ft
from . import tensorcore as tc
from .errors import ConfigError, DimensionError, DomainError

LN_EPS = 1e-6


def _silu(x):
    return x / (1.0 + np.exp(-x))


def _silu_prime(x):
    s = 1.0 / (1.0 + np.exp(-x))
    return s * (1.0 + x * (1.0 - s))


def _softplus(x):
    return np.logaddexp(0.0, x)


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


@dataclass(frozen=True)
class ToyBlockConfig:
    d: int = 64
    n_tokens: int = 64
    heads: int = 4
    layers: int = 2
    rank: int = 8
    d_p: int = 32
    c_phys: int = 8
    d_g: int = 4
    k_bands: int = 8
    n_sin: int = 8
    psi_hidden: int = 16

    def __post_init__(self):
        if self.d % self.heads != 0:
            raise ConfigError("token width must divide evenly into heads")
        if self.n_sin % 2 != 0:
            raise ConfigError("n_sin must be even")


@dataclass
class ModulationParams:
    alpha_pga: float
    beta_pga: float
    alpha_pcm: float
    beta_pcm: float
    n_spec: float
    lam: float


@dataclass
class BackboneWeights:
    """Frozen host block: attention projections and a two-layer MLP."""

    wq: np.ndarray
    wk: np.ndarray
    wv0: np.ndarray
    wo: np.ndarray
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    @classmethod
    def seeded(cls, cfg, seed=0):
        rng = np.random.default_rng(seed)
        d = cfg.d
        h = 4 * d
        s = 1.0 / math.sqrt(d)
        return cls(
            wq=rng.normal(0.0, s, (d, d)),
            wk=rng.normal(0.0, s, (d, d)),
            wv0=rng.normal(0.0, s, (d, d)),
            wo=rng.normal(0.0, s, (d, d)),
            w1=rng.normal(0.0, s, (d, h)),
            b1=np.zeros(h),
            w2=rng.normal(0.0, 1.0 / math.sqrt(h), (h, d)),
            b2=np.zeros(d),
        )


@dataclass
class AdapterState:
    """All trainable matrices; zeros mean every mechanism is off."""

    a_v: np.ndarray  # d x r
    b_v: np.ndarray  # r x d
    p_v: np.ndarray  # d x (c_phys + d_g)
    b_pv: np.ndarray  # d
    w_r: np.ndarray  # heads x k_bands
    w_cperc: np.ndarray  # d_p x d, perceptual connector
    b_cperc: np.ndarray  # d
    w_film: np.ndarray  # d x 2d
    b_film: np.ndarray  # 2d
    w_p: np.ndarray  # c_phys x d
    w_c: np.ndarray  # d x d
    psi_w_t: np.ndarray  # hidden x n_sin
    psi_b_t: np.ndarray  # hidden
    psi_emb: np.ndarray  # layers x hidden
    psi_w_head: np.ndarray  # 6 x hidden
    psi_b_head: np.ndarray  # 6

    @classmethod
    def null(cls, cfg):
        return cls(
            a_v=np.zeros((cfg.d, cfg.rank)),
            b_v=np.zeros((cfg.rank, cfg.d)),
            p_v=np.zeros((cfg.d, cfg.c_phys + cfg.d_g)),
            b_pv=np.zeros(cfg.d),
            w_r=np.zeros((cfg.heads, cfg.k_bands)),
            w_cperc=np.zeros((cfg.d_p, cfg.d)),
            b_cperc=np.zeros(cfg.d),
            w_film=np.zeros((cfg.d, 2 * cfg.d)),
            b_film=np.zeros(2 * cfg.d),
            w_p=np.zeros((cfg.c_phys, cfg.d)),
            w_c=np.zeros((cfg.d, cfg.d)),
            psi_w_t=np.zeros((cfg.psi_hidden, cfg.n_sin)),
            psi_b_t=np.zeros(cfg.psi_hidden),
            psi_emb=np.zeros((cfg.layers, cfg.psi_hidden)),
            psi_w_head=np.zeros((6, cfg.psi_hidden)),
            psi_b_head=np.zeros(6),
        )

    @classmethod
    def seeded(cls, cfg, seed=0, scale=0.1):
        state = cls.null(cfg)
        rng = np.random.default_rng(seed)
        for f in fields(state):
            arr = getattr(state, f.name)
            setattr(state, f.name, rng.normal(0.0, scale, arr.shape))
        return state

    def zeros_like(self):
        out = AdapterState(**{f.name: np.zeros_like(getattr(self, f.name)) for f in fields(self)})
        return out


def sinusoid_features(t, n_sin):
    freqs = 2.0 ** np.arange(n_sin // 2)
    phase = 2.0 * np.pi * freqs * t
    return np.concatenate([np.sin(phase), np.cos(phase)])


def psi(t, layer, state, cfg):
    """Timestep/layer conditioner: six affine heads on a SiLU-fused embedding."""
    if not 0.0 <= t <= 1.0:
        raise DomainError("t must lie in [0, 1]")
    if not 0 <= layer < cfg.layers:
        raise IndexError(f"layer {layer} out of range for {cfg.layers} layers")
    sf = sinusoid_features(t, cfg.n_sin)
    feat = state.psi_w_t @ sf + state.psi_b_t + state.psi_emb[layer]
    hv = _silu(feat)
    raw = state.psi_w_head @ hv + state.psi_b_head
    mod = ModulationParams(
        alpha_pga=float(raw[0]),
        beta_pga=float(raw[1]),
        alpha_pcm=float(raw[2]),
        beta_pcm=float(raw[3]),
        n_spec=float(_softplus(raw[4])),
        lam=float(_softplus(raw[5])),
    )
    cache = {"sf": sf, "feat": feat, "hv": hv, "raw": raw, "layer": layer}
    return mod, cache


def psi_backward(cache, state, grads, d_mod):
    """d_mod: gradient wrt the six emitted scalars (post softplus)."""
    raw = cache["raw"]
    dr = np.array(d_mod, dtype=np.float64)
    dr[4] *= _sigmoid(raw[4])
    dr[5] *= _sigmoid(raw[5])
    grads.psi_w_head += np.outer(dr, cache["hv"])
    grads.psi_b_head += dr
    dhv = state.psi_w_head.T @ dr
    dfeat = dhv * _silu_prime(cache["feat"])
    grads.psi_w_t += np.outer(dfeat, cache["sf"])
    grads.psi_b_t += dfeat
    grads.psi_emb[cache["layer"]] += dfeat


def pga_residual(state, phys_vec, r_spec, mod, cfg):
    """Gated low-rank residual for the attention value projection."""
    if phys_vec.shape != (cfg.c_phys + cfg.d_g,):
        raise DimensionError("phys_vec must have c_phys + d_g entries")
    if r_spec.shape != (cfg.k_bands,):
        raise DimensionError("r_spec must have k_bands entries")
    u_gate = state.p_v @ phys_vec + state.b_pv
    gate = _sigmoid(u_gate)
    u_spec = state.w_r @ r_spec
    sg = _softplus(u_spec)
    gvec = np.repeat(sg, cfg.d // cfg.heads)
    cs = gate * (1.0 + mod.n_spec * gvec)
    ab = state.a_v @ state.b_v
    m = mod.alpha_pga * ab + mod.beta_pga * np.eye(cfg.d)
    r_mat = m * cs[None, :]
    cache = {
        "phys_vec": phys_vec, "r_spec": r_spec, "u_gate": u_gate, "gate": gate,
        "u_spec": u_spec, "sg": sg, "gvec": gvec, "cs": cs, "ab": ab, "m": m,
        "mod": mod,
    }
    return r_mat, cache


def pga_backward(cache, state, grads, d_r, cfg):
    """Returns gradients wrt (alpha_pga, beta_pga, n_spec)."""
    mod = cache["mod"]
    dm = d_r * cache["cs"][None, :]
    dcs = np.sum(d_r * cache["m"], axis=0)
    d_alpha = float(np.sum(dm * cache["ab"]))
    grads.a_v += mod.alpha_pga * (dm @ state.b_v.T)
    grads.b_v += mod.alpha_pga * (state.a_v.T @ dm)
    d_beta = float(np.trace(dm))
    dgate = dcs * (1.0 + mod.n_spec * cache["gvec"])
    d_nspec = float(np.sum(dcs * cache["gate"] * cache["gvec"]))
    dgvec = dcs * cache["gate"] * mod.n_spec
    du_gate = dgate * cache["gate"] * (1.0 - cache["gate"])
    grads.p_v += np.outer(du_gate, cache["phys_vec"])
    grads.b_pv += du_gate
    dsg = dgvec.reshape(cfg.heads, cfg.d // cfg.heads).sum(axis=1)
    du_spec = dsg * _sigmoid(cache["u_spec"])
    grads.w_r += np.outer(du_spec, cache["r_spec"])
    return d_alpha, d_beta, d_nspec


def pcm_film(h, t_perc, state, mod):
    """FiLM on normalized activations, identity when all adapters are zero."""
    if t_perc.shape[0] != h.shape[0]:
        raise DimensionError("perceptual tokens must match the latent token count")
    conn = t_perc @ state.w_cperc + state.b_cperc
    fm = conn @ state.w_film + state.b_film
    d = h.shape[1]
    gamma = mod.alpha_pcm * fm[:, :d] + mod.beta_pcm
    zeta = mod.alpha_pcm * fm[:, d:] + mod.beta_pcm
    xl = tc.layer_norm(h, LN_EPS)
    out = (1.0 + gamma) * xl + zeta
    cache = {"t_perc": t_perc, "conn": conn, "fm": fm, "gamma": gamma, "xl": xl, "mod": mod, "d": d}
    return out, cache


def pcm_backward(cache, state, grads, d_out):
    """Returns (d_conn, d_xl, d_alpha_pcm, d_beta_pcm); connector grads deferred."""
    mod = cache["mod"]
    d = cache["d"]
    fm = cache["fm"]
    d_gamma = d_out * cache["xl"]
    d_zeta = d_out
    d_xl = d_out * (1.0 + cache["gamma"])
    d_alpha = float(np.sum(d_gamma * fm[:, :d]) + np.sum(d_zeta * fm[:, d:]))
    d_beta = float(np.sum(d_gamma) + np.sum(d_zeta))
    d_fm = mod.alpha_pcm * np.concatenate([d_gamma, d_zeta], axis=1)
    grads.w_film += cache["conn"].T @ d_fm
    grads.b_film += d_fm.sum(axis=0)
    d_conn = d_fm @ state.w_film.T
    return d_conn, d_xl, d_alpha, d_beta


def coupler(z_res, t_phys_tokens, conn, state, mod):
    """Additive time/layer-gated fusion of physical and perceptual tracks."""
    base = t_phys_tokens @ state.w_p + conn @ state.w_c
    return z_res + mod.lam * base, base


def block_forward(z, t_phys_tokens, phys_vec, r_spec, t_perc, backbone, state, cfg,
                  t=0.5, layer=0, mod_override=None):
    """One adapted transformer block; returns (output, cache)."""
    n, d = z.shape
    if d != cfg.d or n != cfg.n_tokens:
        raise DimensionError(f"latent must be {cfg.n_tokens}x{cfg.d}")
    if mod_override is None:
        mod, psi_cache = psi(t, layer, state, cfg)
    else:
        mod, psi_cache = mod_override, None

    r_mat, pga_cache = pga_residual(state, phys_vec, r_spec, mod, cfg)

    x1 = tc.layer_norm(z, LN_EPS)
    q = x1 @ backbone.wq
    k = x1 @ backbone.wk
    v = x1 @ (backbone.wv0 + r_mat)
    dk = d // cfg.heads
    qh = q.reshape(n, cfg.heads, dk).transpose(1, 0, 2)
    kh = k.reshape(n, cfg.heads, dk).transpose(1, 0, 2)
    vh = v.reshape(n, cfg.heads, dk).transpose(1, 0, 2)
    scores = qh @ kh.transpose(0, 2, 1) / math.sqrt(dk)
    attn_w = tc.softmax_rows(scores)
    oh = attn_w @ vh
    o = oh.transpose(1, 0, 2).reshape(n, d)
    attn_out = o @ backbone.wo

    film_out, film_cache = pcm_film(z, t_perc, state, mod)
    u1 = film_out @ backbone.w1 + backbone.b1
    a1 = _silu(u1)
    mlp_out = a1 @ backbone.w2 + backbone.b2

    z_res = z + attn_out + mlp_out
    out, base = coupler(z_res, t_phys_tokens, film_cache["conn"], state, mod)

    cache = {
        "mod": mod, "psi_cache": psi_cache, "pga_cache": pga_cache,
        "x1": x1, "attn_w": attn_w, "vh": vh, "u1": u1, "a1": a1,
        "film_cache": film_cache, "base": base, "conn": film_cache["conn"],
        "t_phys_tokens": t_phys_tokens, "t_perc": t_perc,
        "n": n, "d": d, "dk": dk,
    }
    return out, cache


def block_backward(cache, backbone, state, cfg, d_out):
    """Reverse accumulation of adapter gradients; backbone stays frozen."""
    grads = state.zeros_like()
    mod = cache["mod"]
    n, d, dk = cache["n"], cache["d"], cache["dk"]

    # coupler
    d_zres = d_out
    d_lam = float(np.sum(d_out * cache["base"]))
    grads.w_p += mod.lam * (cache["t_phys_tokens"].T @ d_out)
    grads.w_c += mod.lam * (cache["conn"].T @ d_out)
    d_conn = mod.lam * (d_out @ state.w_c.T)

    # MLP branch
    d_mlp = d_zres
    d_a1 = d_mlp @ backbone.w2.T
    d_u1 = d_a1 * _silu_prime(cache["u1"])
    d_film_out = d_u1 @ backbone.w1.T
    d_conn_film, _, d_alpha_pcm, d_beta_pcm = pcm_backward(
        cache["film_cache"], state, grads, d_film_out
    )
    d_conn = d_conn + d_conn_film
    grads.w_cperc += cache["t_perc"].T @ d_conn
    grads.b_cperc += d_conn.sum(axis=0)

    # attention branch (only the value path carries adapter parameters)
    d_attn = d_zres
    d_o = d_attn @ backbone.wo.T
    d_oh = d_o.reshape(n, cfg.heads, dk).transpose(1, 0, 2)
    d_vh = cache["attn_w"].transpose(0, 2, 1) @ d_oh
    d_v = d_vh.transpose(1, 0, 2).reshape(n, d)
    d_r = cache["x1"].T @ d_v
    d_alpha_pga, d_beta_pga, d_nspec = pga_backward(cache["pga_cache"], state, grads, d_r, cfg)

    if cache["psi_cache"] is not None:
        psi_backward(
            cache["psi_cache"], state, grads,
            [d_alpha_pga, d_beta_pga, d_alpha_pcm, d_beta_pcm, d_nspec, d_lam],
        )
    return grads


def vanilla_block_forward(z, backbone, heads):
    """The unadapted host block, for backbone-preservation checks."""
    n, d = z.shape
    dk = d // heads
    x1 = tc.layer_norm(z, LN_EPS)
    q = x1 @ backbone.wq
    k = x1 @ backbone.wk
    v = x1 @ backbone.wv0
    qh = q.reshape(n, heads, dk).transpose(1, 0, 2)
    kh = k.reshape(n, heads, dk).transpose(1, 0, 2)
    vh = v.reshape(n, heads, dk).transpose(1, 0, 2)
    attn_w = tc.softmax_rows(qh @ kh.transpose(0, 2, 1) / math.sqrt(dk))
    o = (attn_w @ vh).transpose(1, 0, 2).reshape(n, d)
    attn_out = o @ backbone.wo
    mlp_out = _silu(x1 @ backbone.w1 + backbone.b1) @ backbone.w2 + backbone.b2
    return z + attn_out + mlp_out


def perceptual_stub(sdr, d_p, seed=0, patch=16):
    """Deterministic stand-in for a frozen perceptual encoder.

    One token per 16x16 patch: mean color plus four radial band energies
    of the patch luma, projected by a seeded fixed random matrix.
    """
    if d_p < 4:
        raise ConfigError("d_p must be at least 4")
    h, w = sdr.height, sdr.width
    if h < patch or w < patch:
        raise ConfigError("image smaller than one patch")
    rows = h // patch
    cols = w // patch
    feats = []
    for i in range(rows):
        for j in range(cols):
            tile = sdr.pixels[i * patch : (i + 1) * patch, j * patch : (j + 1) * patch, :]
            mean_rgb = tile.mean(axis=(0, 1))
            luma = tile.mean(axis=2)
            bands = ft.spectral_descriptor(luma, 4).r
            feats.append(np.concatenate([mean_rgb, bands]))
    feats = np.array(feats)
    rng = np.random.default_rng(seed)
    proj = rng.normal(0.0, 1.0 / math.sqrt(feats.shape[1]), (feats.shape[1], d_p))
    return feats @ proj


GRAD_GROUPS = {
    "a_v": ["a_v"],
    "b_v": ["b_v"],
    "p_v": ["p_v", "b_pv"],
    "w_r": ["w_r"],
    "film": ["w_cperc", "b_cperc", "w_film", "b_film"],
    "w_p": ["w_p"],
    "w_c": ["w_c"],
    "psi": ["psi_w_t", "psi_b_t", "psi_emb", "psi_w_head", "psi_b_head"],
}


def demo_inputs(cfg, seed=0):
    """Fixed random inputs exercising every block pathway."""
    rng = np.random.default_rng(seed)
    z = rng.normal(0.0, 1.0, (cfg.n_tokens, cfg.d))
    t_phys_tokens = rng.normal(0.0, 1.0, (cfg.n_tokens, cfg.c_phys))
    phys_vec = rng.normal(0.0, 1.0, cfg.c_phys + cfg.d_g)
    r_spec = np.abs(rng.normal(0.0, 1.0, cfg.k_bands))
    t_perc = rng.normal(0.0, 1.0, (cfg.n_tokens, cfg.d_p))
    return z, t_phys_tokens, phys_vec, r_spec, t_perc


def grad_check_adapters(backbone, state, cfg, inputs=None, t=0.37, layer=0,
                        h=1e-6, tol=1e-4):
    """Compare analytic adapter gradients against central differences.

    Probe loss is 0.5 * sum(out^2). Reports max relative error per group.
    """
    if inputs is None:
        inputs = demo_inputs(cfg)
    z, tpt, pv, rs, tp = inputs

    def forward_loss():
        out, _ = block_forward(z, tpt, pv, rs, tp, backbone, state, cfg, t=t, layer=layer)
        return 0.5 * float(np.sum(out * out))

    out, cache = block_forward(z, tpt, pv, rs, tp, backbone, state, cfg, t=t, layer=layer)
    grads = block_backward(cache, backbone, state, cfg, out)

    report = {"tolerance": tol, "groups": {}, "passed": True}
    for group, names in GRAD_GROUPS.items():
        worst = 0.0
        for name in names:
            arr = getattr(state, name)
            ana = getattr(grads, name)
            flat = arr.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                fp = forward_loss()
                flat[i] = orig - h
                fm = forward_loss()
                flat[i] = orig
                fd = (fp - fm) / (2.0 * h)
                a = ana.reshape(-1)[i]
                rel = abs(a - fd) / max(abs(a) + abs(fd), 1e-6)
                worst = max(worst, rel)
        ok = bool(worst <= tol)
        report["groups"][group] = {"max_rel_error": float(worst), "pass": ok}
        report["passed"] = report["passed"] and ok
    return report


def low_rank_svd_tail(state, cfg):
    """Largest singular value of a_v @ b_v beyond index rank."""
    sv = np.linalg.svd(state.a_v @ state.b_v, compute_uv=False)
    return float(sv[cfg.rank]) if sv.size > cfg.rank else 0.0


def pool_phys_tokens(feats, cfg, conv_channels=None):
    """Patch-pool a physical descriptor map into n_tokens tokens.

    The grid is assumed square (n_tokens a perfect square) and the map is
    split into equal tiles averaged per channel.
    """
    t_phys = feats.t_phys
    side = int(round(math.sqrt(cfg.n_tokens)))
    if side * side != cfg.n_tokens:
        raise ConfigError("n_tokens must be a perfect square for pooling")
    h, w, c = t_phys.shape
    th, twd = h // side, w // side
    if th == 0 or twd == 0:
        raise ConfigError("feature map smaller than the token grid")
    tokens = np.zeros((cfg.n_tokens, c))
    for i in range(side):
        for j in range(side):
            tile = t_phys[i * th : (i + 1) * th, j * twd : (j + 1) * twd, :]
            tokens[i * side + j] = tile.mean(axis=(0, 1))
    return tokens


def toy_block_forward(z, feats, spec_desc, t_perc, backbone, state, cfg, t=0.5, layer=0):
    """Block forward fed from extracted image features (pipeline wrapper)."""
    tokens = pool_phys_tokens(feats, cfg)
    if tokens.shape[1] != cfg.c_phys:
        raise DimensionError("conv channel count must equal c_phys")
    g = np.asarray(feats.g, dtype=np.float64)[: cfg.d_g]
    if g.size < cfg.d_g:
        g = np.pad(g, (0, cfg.d_g - g.size))
    phys_vec = np.concatenate([tokens.mean(axis=0), g])
    r_spec = np.asarray(spec_desc.r, dtype=np.float64)[: cfg.k_bands]
    out, _ = block_forward(z, tokens, phys_vec, r_spec, t_perc, backbone, state, cfg, t=t, layer=layer)
    return out
