"""Sequential classifier with hand-written backpropagation.

Network layout (shared embedder applied to each modality):

    log-mel patch -> conv3x3(1->c1) -> relu -> maxpool2
                  -> conv3x3(c1->c2) -> relu -> maxpool2 -> dense(embed_dim)
    recording embedding = mean over the recording's patches
    day vector = concat(breath, cough, voice) embeddings
    GRU over the day vectors of a window
      -> disease head (dense -> logistic) at every step
      -> gradient reversal -> language head (dense -> softmax) on the last step

Parameters live in a plain ``dict[str, np.ndarray]``; their compute dtype
follows the arrays (float64 for gradient checks, float32 for fast training).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionMismatch, TraceMismatch

Params = dict[str, np.ndarray]

MODALITIES = ("breath", "cough", "voice")


@dataclass(frozen=True)
class ModelConfig:
    patch_frames: int = 96
    n_mels: int = 64
    conv1: int = 8
    conv2: int = 16
    embed_dim: int = 128
    hidden: int = 64
    n_languages: int = 8
    language_head: bool = True

    @property
    def pooled_shape(self) -> tuple[int, int, int]:
        return (self.patch_frames // 2 // 2, self.n_mels // 2 // 2, self.conv2)

    @property
    def flat_dim(self) -> int:
        a, b, c = self.pooled_shape
        return a * b * c

    @property
    def input_dim(self) -> int:
        return len(MODALITIES) * self.embed_dim

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        """Parameter names and shapes in their fixed serialization order."""
        H, D = self.hidden, self.input_dim
        shapes = {
            "conv1_w": (self.conv1, 1, 3, 3),
            "conv1_b": (self.conv1,),
            "conv2_w": (self.conv2, self.conv1, 3, 3),
            "conv2_b": (self.conv2,),
            "proj_w": (self.embed_dim, self.flat_dim),
            "proj_b": (self.embed_dim,),
        }
        for g in ("z", "r", "h"):
            shapes[f"W_{g}"] = (H, D)
            shapes[f"U_{g}"] = (H, H)
            shapes[f"b_{g}"] = (H,)
        shapes["disease_w"] = (H,)
        shapes["disease_b"] = (1,)
        if self.language_head:
            shapes["lang_w"] = (self.n_languages, H)
            shapes["lang_b"] = (self.n_languages,)
        return shapes


def _fans(name: str, shape: tuple[int, ...]) -> tuple[int, int]:
    if name.startswith("conv"):
        receptive = shape[2] * shape[3]
        return shape[1] * receptive, shape[0] * receptive
    if len(shape) == 2:
        return shape[1], shape[0]
    return shape[0], 1  # disease_w: H -> 1


def init_params(config: ModelConfig, seed: int = 0, dtype=np.float64) -> Params:
    """Glorot-uniform weights, zero biases, deterministic from ``seed``."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in config.param_shapes().items():
        if name.endswith("_b") or name.startswith("b_"):
            params[name] = np.zeros(shape, dtype=dtype)
        else:
            fan_in, fan_out = _fans(name, shape)
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            params[name] = rng.uniform(-limit, limit, size=shape).astype(dtype)
    return params


def sigmoid(x):
    # split by sign so neither branch overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


# -- convolutional embedder ----------------------------------------------------

def _conv3x3(x, w, b):
    """Same-padded 3x3 convolution on channels-last ``(B, H, W, Cin)``."""
    B, H, W, C = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    cols = sliding_window_view(xp, (3, 3), axis=(1, 2)).reshape(B * H * W, C * 9)
    wmat = w.reshape(w.shape[0], C * 9)
    out = (cols @ wmat.T + b).reshape(B, H, W, w.shape[0])
    return out, cols


def _conv3x3_backward(dout, cols, w, x_shape, need_input_grad):
    B, H, W, C = x_shape
    Co = w.shape[0]
    d2 = dout.reshape(B * H * W, Co)
    dw = (d2.T @ cols).reshape(w.shape)
    db = d2.sum(axis=0)
    if not need_input_grad:
        return dw, db, None
    dcols = (d2 @ w.reshape(Co, C * 9)).reshape(B, H, W, C, 3, 3)
    dxp = np.zeros((B, H + 2, W + 2, C), dtype=dout.dtype)
    for i in range(3):
        for j in range(3):
            dxp[:, i:i + H, j:j + W, :] += dcols[..., i, j]
    return dw, db, dxp[:, 1:-1, 1:-1, :]


def _relu_maxpool2(z):
    """relu(maxpool2(z)); equal to maxpool2(relu(z)) since relu is monotone."""
    H2, W2 = z.shape[1] // 2, z.shape[2] // 2
    pooled = np.maximum(
        np.maximum(z[:, 0:H2 * 2:2, 0:W2 * 2:2], z[:, 0:H2 * 2:2, 1:W2 * 2:2]),
        np.maximum(z[:, 1:H2 * 2:2, 0:W2 * 2:2], z[:, 1:H2 * 2:2, 1:W2 * 2:2]))
    return np.maximum(pooled, 0), pooled


def _relu_maxpool2_backward(dout, z, pooled):
    """Route gradient to the window maxima; exact ties share it (measure zero)."""
    H2, W2 = pooled.shape[1], pooled.shape[2]
    g = dout * (pooled > 0)
    dz = np.zeros_like(z)
    for i in (0, 1):
        for j in (0, 1):
            view = z[:, i:H2 * 2:2, j:W2 * 2:2]
            dz[:, i:H2 * 2:2, j:W2 * 2:2] = g * (view == pooled)
    return dz


@dataclass
class EmbedCache:
    x_shape: tuple
    cols1: np.ndarray
    z1: np.ndarray
    pool1: np.ndarray
    a1_shape: tuple
    cols2: np.ndarray
    z2: np.ndarray
    pool2: np.ndarray
    flat: np.ndarray


# fixed input scale: log-mel values span roughly [-14, 7] with the 1e-6 floor.
# No offset, so zero patches still embed to the bias.
LOGMEL_SCALE = 6.0


def embed_patches(patches: np.ndarray, params: Params) -> tuple[np.ndarray, EmbedCache]:
    """Per-patch embeddings ``(B, embed_dim)`` for patches ``(B, frames, mels)``."""
    dtype = params["proj_w"].dtype
    x = (np.asarray(patches, dtype=dtype) / LOGMEL_SCALE)[..., None]
    z1, cols1 = _conv3x3(x, params["conv1_w"], params["conv1_b"])
    a1, pool1 = _relu_maxpool2(z1)
    z2, cols2 = _conv3x3(a1, params["conv2_w"], params["conv2_b"])
    a2, pool2 = _relu_maxpool2(z2)
    flat = a2.reshape(a2.shape[0], -1)
    emb = flat @ params["proj_w"].T + params["proj_b"]
    return emb, EmbedCache(x.shape, cols1, z1, pool1, a1.shape, cols2, z2, pool2, flat)


def embed_patches_backward(demb: np.ndarray, cache: EmbedCache, params: Params) -> Params:
    grads = {"proj_w": demb.T @ cache.flat, "proj_b": demb.sum(axis=0)}
    dflat = demb @ params["proj_w"]
    dz2 = _relu_maxpool2_backward(dflat.reshape(cache.pool2.shape), cache.z2, cache.pool2)
    grads["conv2_w"], grads["conv2_b"], da1 = _conv3x3_backward(
        dz2, cache.cols2, params["conv2_w"], cache.a1_shape, True)
    dz1 = _relu_maxpool2_backward(da1, cache.z1, cache.pool1)
    grads["conv1_w"], grads["conv1_b"], _ = _conv3x3_backward(
        dz1, cache.cols1, params["conv1_w"], cache.x_shape, False)
    return grads


def embed_recording(patches: np.ndarray, params: Params) -> np.ndarray:
    """Embedding of one recording: mean of its per-patch embeddings."""
    patches = np.asarray(patches)
    if patches.ndim == 2:
        patches = patches[None]
    if patches.shape[0] < 1:
        raise ValueError("need at least one patch")
    emb, _ = embed_patches(patches, params)
    return emb.mean(axis=0)


def fuse_modalities(e_breath, e_cough, e_voice, embed_dim: int | None = None) -> np.ndarray:
    """Concatenate per-modality embeddings in (breath, cough, voice) order."""
    parts = [np.asarray(e) for e in (e_breath, e_cough, e_voice)]
    dim = embed_dim if embed_dim is not None else parts[0].shape[-1]
    for name, e in zip(MODALITIES, parts):
        if e.shape[-1] != dim:
            raise DimensionMismatch(f"{name} embedding has length {e.shape[-1]}, expected {dim}")
    return np.concatenate(parts, axis=-1)


# -- recurrent part ------------------------------------------------------------

def gru_step(x, h_prev, params: Params):
    """One GRU update; works on single vectors or row-batched inputs."""
    z = sigmoid(x @ params["W_z"].T + h_prev @ params["U_z"].T + params["b_z"])
    r = sigmoid(x @ params["W_r"].T + h_prev @ params["U_r"].T + params["b_r"])
    h_cand = np.tanh(x @ params["W_h"].T + (r * h_prev) @ params["U_h"].T + params["b_h"])
    return (1.0 - z) * h_prev + z * h_cand, (z, r, h_cand)


def grad_reverse(upstream_grad, lam: float):
    """Backward rule of the gradient-reversal layer (its forward is identity)."""
    if lam < 0:
        raise ValueError("reversal coefficient must be >= 0")
    return -lam * upstream_grad


@dataclass
class ForwardTrace:
    """Activations cached by :func:`forward_window` for exact backprop.

    Arrays are batched over windows: ``x`` is ``(N, T, D)``, per-step lists
    hold ``(N, H)`` arrays.
    """

    x: np.ndarray
    h: list  # T + 1 entries, h[0] is the initial state
    z: list
    r: list
    h_cand: list
    disease_logits: np.ndarray  # (N, T)
    lang_logits: np.ndarray | None
    reverse_coeff: float
    shapes: dict = field(default_factory=dict)

    @property
    def steps(self) -> int:
        return self.x.shape[1]


@dataclass
class WindowOutput:
    probs: np.ndarray  # (N, T)
    lang_logits: np.ndarray | None  # (N, n_languages)
    trace: ForwardTrace


def _shape_signature(params: Params) -> dict:
    return {k: v.shape for k, v in params.items() if not k.startswith(("conv", "proj"))}


def forward_window(x, params: Params, reverse_coeff: float = 1.0, h0=None) -> WindowOutput:
    """Run the GRU and heads over fused day vectors.

    ``x`` is ``(T, D)`` for one window or ``(N, T, D)`` for a batch.  The
    reversal layer is the identity here; ``reverse_coeff`` is recorded for the
    backward pass.
    """
    x = np.asarray(x, dtype=params["W_z"].dtype)
    if x.ndim == 2:
        x = x[None]
    if x.shape[-1] != params["W_z"].shape[1]:
        raise DimensionMismatch(f"input dim {x.shape[-1]} != {params['W_z'].shape[1]}")
    N, T, _ = x.shape
    H = params["U_z"].shape[0]
    h = np.zeros((N, H), dtype=x.dtype) if h0 is None else h0
    hs, zs, rs, cands = [h], [], [], []
    for t in range(T):
        h, (z, r, cand) = gru_step(x[:, t], h, params)
        hs.append(h)
        zs.append(z)
        rs.append(r)
        cands.append(cand)
    hidden = np.stack(hs[1:], axis=1)
    disease_logits = hidden @ params["disease_w"] + params["disease_b"][0]
    lang_logits = None
    if "lang_w" in params:
        lang_logits = hs[-1] @ params["lang_w"].T + params["lang_b"]
    trace = ForwardTrace(x, hs, zs, rs, cands, disease_logits, lang_logits,
                         reverse_coeff, _shape_signature(params))
    return WindowOutput(sigmoid(disease_logits), lang_logits, trace)


def replay(trace: ForwardTrace, params: Params) -> np.ndarray:
    """Recompute step probabilities from the cached hidden states."""
    hidden = np.stack(trace.h[1:], axis=1)
    return sigmoid(hidden @ params["disease_w"] + params["disease_b"][0])


@dataclass
class LossResult:
    value: float
    bce: float
    lang_ce: float
    d_probs: np.ndarray  # dL/dp, (N, T)
    d_lang_logits: np.ndarray | None


_CLAMP = 1e-12


def loss(probs, labels, lang_logits=None, lang_labels=None, w_lang: float = 0.1) -> LossResult:
    """Mean per-step BCE plus weighted language cross-entropy, batch-averaged.

    ``probs``/``labels`` are ``(N, T)`` (or ``(T,)``); ``lang_labels`` holds
    integer class indices.
    """
    p = np.atleast_2d(np.asarray(probs))
    y = np.atleast_2d(np.asarray(labels, dtype=p.dtype))
    N, T = p.shape
    pc = np.clip(p, _CLAMP, 1.0 - _CLAMP)
    bce = -(y * np.log(pc) + (1 - y) * np.log(1 - pc))
    bce_value = float(bce.mean())
    d_probs = (pc - y) / (pc * (1 - pc)) / (N * T)
    d_probs = np.where((p == pc), d_probs, 0.0)
    ce_value = 0.0
    d_lang = None
    if lang_logits is not None and lang_labels is not None:
        logits = np.atleast_2d(lang_logits)
        idx = np.atleast_1d(np.asarray(lang_labels, dtype=int))
        shifted = logits - logits.max(axis=1, keepdims=True)
        log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        ce_value = float(-log_probs[np.arange(N), idx].mean())
        d_lang = np.exp(log_probs)
        d_lang[np.arange(N), idx] -= 1.0
        d_lang *= w_lang / N
    return LossResult(bce_value + w_lang * ce_value, bce_value, ce_value, d_probs, d_lang)


def backward(trace: ForwardTrace, d_probs, d_lang_logits, params: Params) -> Params:
    """Exact gradients of the GRU and heads; ``grads['x']`` holds dL/dinput."""
    if trace.shapes != _shape_signature(params):
        raise TraceMismatch("trace was produced with differently shaped parameters")
    d_probs = np.atleast_2d(d_probs)
    if d_probs.shape != trace.disease_logits.shape:
        raise TraceMismatch(f"output gradient shape {d_probs.shape} != {trace.disease_logits.shape}")
    T = trace.steps
    probs = sigmoid(trace.disease_logits)
    d_logit = d_probs * probs * (1 - probs)  # (N, T)
    hidden = np.stack(trace.h[1:], axis=1)
    grads = {k: np.zeros_like(v) for k, v in params.items()
             if not k.startswith(("conv", "proj"))}
    grads["disease_w"] = np.einsum("nt,nth->h", d_logit, hidden)
    grads["disease_b"] = np.array([d_logit.sum()], dtype=hidden.dtype)
    dh_out = d_logit[..., None] * params["disease_w"]  # (N, T, H)

    dh = dh_out[:, -1].copy()
    if "lang_w" in params and d_lang_logits is not None:
        h_last = trace.h[-1]
        grads["lang_w"] = d_lang_logits.T @ h_last
        grads["lang_b"] = d_lang_logits.sum(axis=0)
        dh += grad_reverse(d_lang_logits @ params["lang_w"], trace.reverse_coeff)

    dx = np.zeros_like(trace.x)
    for t in range(T - 1, -1, -1):
        x_t, h_prev = trace.x[:, t], trace.h[t]
        z, r, cand = trace.z[t], trace.r[t], trace.h_cand[t]
        d_cand = dh * z
        d_z = dh * (cand - h_prev)
        dh_prev = dh * (1 - z)
        d_a_h = d_cand * (1 - cand**2)
        d_a_z = d_z * z * (1 - z)
        rh = r * h_prev
        d_rh = d_a_h @ params["U_h"]
        d_r = d_rh * h_prev
        d_a_r = d_r * r * (1 - r)
        dh_prev += d_rh * r
        grads["W_h"] += d_a_h.T @ x_t
        grads["U_h"] += d_a_h.T @ rh
        grads["b_h"] += d_a_h.sum(axis=0)
        grads["W_z"] += d_a_z.T @ x_t
        grads["U_z"] += d_a_z.T @ h_prev
        grads["b_z"] += d_a_z.sum(axis=0)
        grads["W_r"] += d_a_r.T @ x_t
        grads["U_r"] += d_a_r.T @ h_prev
        grads["b_r"] += d_a_r.sum(axis=0)
        dh_prev += d_a_z @ params["U_z"] + d_a_r @ params["U_r"]
        dx[:, t] = d_a_h @ params["W_h"] + d_a_z @ params["W_z"] + d_a_r @ params["W_r"]
        dh = dh_prev
        if t > 0:
            dh = dh + dh_out[:, t - 1]
    grads["x"] = dx
    return grads


# -- full model over raw patches -------------------------------------------------

@dataclass
class BatchInputs:
    """Deduplicated recordings referenced by a batch of windows.

    ``patches``: all patches of all distinct recordings, stacked.
    ``patch_owner``: recording index of each patch.
    ``day_recordings``: ``(N, T, 3)`` recording indices per window day and modality.
    """

    patches: np.ndarray
    patch_owner: np.ndarray
    n_recordings: int
    day_recordings: np.ndarray


def _patch_mean_matrix(owner: np.ndarray, n_rec: int, dtype) -> np.ndarray:
    m = np.zeros((n_rec, owner.shape[0]), dtype=dtype)
    m[owner, np.arange(owner.shape[0])] = 1.0
    return m / m.sum(axis=1, keepdims=True)


@dataclass
class ModelTrace:
    embed_cache: EmbedCache
    mean_matrix: np.ndarray
    day_recordings: np.ndarray
    window: ForwardTrace
    n_recordings: int


def embed_batch(inputs: BatchInputs, params: Params):
    patch_emb, cache = embed_patches(inputs.patches, params)
    mean = _patch_mean_matrix(inputs.patch_owner, inputs.n_recordings, patch_emb.dtype)
    return mean @ patch_emb, cache, mean


def forward_model(inputs: BatchInputs, params: Params, reverse_coeff: float = 1.0):
    """Embed every recording once, fuse per day, run the GRU window model."""
    rec_emb, cache, mean = embed_batch(inputs, params)
    N, T, M = inputs.day_recordings.shape
    x = rec_emb[inputs.day_recordings].reshape(N, T, M * rec_emb.shape[1])
    out = forward_window(x, params, reverse_coeff)
    return out, ModelTrace(cache, mean, inputs.day_recordings, out.trace, inputs.n_recordings)


def backward_model(trace: ModelTrace, d_probs, d_lang_logits, params: Params) -> Params:
    grads = backward(trace.window, d_probs, d_lang_logits, params)
    dx = grads.pop("x")
    N, T, M = trace.day_recordings.shape
    E = params["proj_b"].shape[0]
    d_rec = np.zeros((trace.n_recordings, E), dtype=dx.dtype)
    np.add.at(d_rec, trace.day_recordings.reshape(-1), dx.reshape(N * T * M, E))
    grads.update(embed_patches_backward(trace.mean_matrix.T @ d_rec, trace.embed_cache, params))
    return grads


# -- optimizer -------------------------------------------------------------------

@dataclass
class AdamState:
    m: Params
    v: Params
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: Params, **hyper) -> "AdamState":
        return cls({k: np.zeros_like(p) for k, p in params.items()},
                   {k: np.zeros_like(p) for k, p in params.items()}, **hyper)


def adam_update(params: Params, grads: Params, state: AdamState) -> Params:
    """One bias-corrected Adam step; advances ``state`` in place."""
    state.step += 1
    c1 = 1.0 - state.beta1**state.step
    c2 = 1.0 - state.beta2**state.step
    new = {}
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        if g.shape != p.shape:
            raise DimensionMismatch(f"gradient for {name} has shape {g.shape}, expected {p.shape}")
        m = state.m[name] = state.beta1 * state.m[name] + (1 - state.beta1) * g
        v = state.v[name] = state.beta2 * state.v[name] + (1 - state.beta2) * g * g
        step = state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        new[name] = (p - step).astype(p.dtype, copy=False)
    return new
