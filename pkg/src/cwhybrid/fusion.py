"""The fusion classifier: sentence embedding + pooled triple-part encodings.

Shapes (defaults): part vectors P=300, sentence vectors S=768, K=4 triple
slots, hidden width H=256.

    h[k, c]  = relu(W_part @ v[k, c] + b_part)        c in (subject, predicate, object)
    m[c]     = mean of h[k, c] over valid slots k        (zero if no slot is valid)
    z        = W_proj @ [m_s; m_r; m_o] + b_proj         (S,)
    u        = relu(W_hid @ [sentence; z] + b_hid)       (H,)
    p        = sigmoid(w_out @ u + b_out)

All arithmetic is float64.  Everything is written over a leading batch axis;
the single-bundle entry points wrap a batch of one.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .embedding import N_PARTS, PART_DIM, SENTENCE_DIM, EmbeddingBundle
from .errors import ConfigurationError, ModelFormatError, NumericError
from .extraction import MAX_TRIPLES

PARAM_NAMES = ("w_part", "b_part", "w_proj", "b_proj", "w_hid", "b_hid", "w_out", "b_out")
LOSS_EPS = 1e-12
MEAN_MODES = ("valid", "padded")


@dataclass(eq=False)
class FusionModel:
    w_part: np.ndarray  # (P, P), shared by subjects, predicates and objects
    b_part: np.ndarray  # (P,)
    w_proj: np.ndarray  # (S, 3P)
    b_proj: np.ndarray  # (S,)
    w_hid: np.ndarray  # (H, 2S)
    b_hid: np.ndarray  # (H,)
    w_out: np.ndarray  # (H,)
    b_out: float
    init_seed: int = 0
    init_scale: float = 1.0
    mean_mode: str = "valid"

    def __post_init__(self):
        self.b_out = float(self.b_out)
        p = self.w_part.shape[0]
        s = self.w_proj.shape[0]
        h = self.w_hid.shape[0]
        expected = {
            "w_part": (p, p), "b_part": (p,), "w_proj": (s, N_PARTS * p), "b_proj": (s,),
            "w_hid": (h, 2 * s), "b_hid": (h,), "w_out": (h,),
        }
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise ConfigurationError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")
        if self.mean_mode not in MEAN_MODES:
            raise ConfigurationError(f"unknown mean mode {self.mean_mode!r}")
        for name in PARAM_NAMES:
            if not np.all(np.isfinite(getattr(self, name))):
                raise NumericError(f"parameter {name} is not finite")

    @property
    def part_dim(self) -> int:
        return self.w_part.shape[0]

    @property
    def sentence_dim(self) -> int:
        return self.w_proj.shape[0]

    @property
    def hidden(self) -> int:
        return self.w_hid.shape[0]

    def params(self) -> dict[str, np.ndarray | float]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def with_params(self, **params) -> "FusionModel":
        return replace(self, **params)

    def n_params(self) -> int:
        return sum(np.size(v) for v in self.params().values())


def init(
    seed: int,
    h: int = 256,
    part_dim: int = PART_DIM,
    sentence_dim: int = SENTENCE_DIM,
    scale: float = 1.0,
    mean_mode: str = "valid",
) -> FusionModel:
    """Glorot-uniform weights, zero biases, fully determined by ``seed``."""
    if h < 1:
        raise ConfigurationError("hidden size must be at least 1")
    rng = np.random.default_rng(seed)

    def glorot(fan_out, fan_in):
        a = scale * np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-a, a, size=(fan_out, fan_in))

    return FusionModel(
        w_part=glorot(part_dim, part_dim),
        b_part=np.zeros(part_dim),
        w_proj=glorot(sentence_dim, N_PARTS * part_dim),
        b_proj=np.zeros(sentence_dim),
        w_hid=glorot(h, 2 * sentence_dim),
        b_hid=np.zeros(h),
        w_out=glorot(1, h)[0],
        b_out=0.0,
        init_seed=seed,
        init_scale=scale,
        mean_mode=mean_mode,
    )


# ---------------------------------------------------------------------------
# Forward / backward over batches
# ---------------------------------------------------------------------------

def _act(x, linear):
    return x if linear else np.maximum(x, 0.0)


def _act_grad(pre, linear):
    return np.ones_like(pre) if linear else (pre > 0).astype(np.float64)


def slot_weights(m: FusionModel, mask: np.ndarray) -> np.ndarray:
    """Per-slot averaging weights, shape (B, K)."""
    mask = mask.astype(np.float64)
    if m.mean_mode == "padded":
        return np.full_like(mask, 1.0 / mask.shape[1])
    return mask / np.maximum(mask.sum(axis=1, keepdims=True), 1.0)


def _check_inputs(m: FusionModel, sent, parts, mask):
    b = sent.shape[0]
    if sent.shape != (b, m.sentence_dim) or parts.shape != (b, MAX_TRIPLES, N_PARTS, m.part_dim) or mask.shape != (b, MAX_TRIPLES):
        raise ConfigurationError(
            f"inputs {sent.shape}/{parts.shape}/{mask.shape} do not match model "
            f"(sentence_dim={m.sentence_dim}, part_dim={m.part_dim})"
        )


def forward_arrays(m: FusionModel, sent, parts, mask, linear: bool = False) -> dict[str, np.ndarray]:
    """Batched forward pass returning every intermediate activation.

    ``linear=True`` replaces both ReLUs by the identity (test surrogate).
    """
    _check_inputs(m, sent, parts, mask)
    pre_part = parts @ m.w_part.T + m.b_part
    h_part = _act(pre_part, linear)
    weights = slot_weights(m, mask)
    means = np.einsum("bk,bkcp->bcp", weights, h_part)
    cat = means.reshape(means.shape[0], -1)
    z = cat @ m.w_proj.T + m.b_proj
    u_in = np.concatenate([sent, z], axis=1)
    pre_hid = u_in @ m.w_hid.T + m.b_hid
    u = _act(pre_hid, linear)
    logit = u @ m.w_out + m.b_out
    prob = 1.0 / (1.0 + np.exp(-logit))
    for stage, value in (("part", h_part), ("projection", z), ("hidden", u), ("logit", logit)):
        if not np.all(np.isfinite(value)):
            raise NumericError(f"non-finite activation at stage {stage!r}")
    return dict(
        pre_part=pre_part, h_part=h_part, weights=weights, means=means, cat=cat, z=z,
        u_in=u_in, pre_hid=pre_hid, u=u, logit=logit, prob=prob,
    )


def backward_arrays(m: FusionModel, sent, parts, mask, act: dict, d_logit: np.ndarray, linear: bool = False):
    """Back-propagate ``d_logit`` (B,) through a cached forward pass.

    Returns ``(param_grads, d_sent, d_parts)``; parameter gradients are summed
    over the batch, input gradients are per example.
    """
    g = {}
    u = act["u"]
    g["w_out"] = u.T @ d_logit
    g["b_out"] = float(d_logit.sum())
    d_pre_hid = np.outer(d_logit, m.w_out) * _act_grad(act["pre_hid"], linear)
    g["w_hid"] = d_pre_hid.T @ act["u_in"]
    g["b_hid"] = d_pre_hid.sum(axis=0)
    d_u_in = d_pre_hid @ m.w_hid
    s = m.sentence_dim
    d_sent = d_u_in[:, :s]
    d_z = d_u_in[:, s:]
    g["w_proj"] = d_z.T @ act["cat"]
    g["b_proj"] = d_z.sum(axis=0)
    d_means = (d_z @ m.w_proj).reshape(act["means"].shape)
    d_h = act["weights"][:, :, None, None] * d_means[:, None, :, :]
    d_pre_part = d_h * _act_grad(act["pre_part"], linear)
    flat = d_pre_part.reshape(-1, m.part_dim)
    g["w_part"] = flat.T @ parts.reshape(-1, m.part_dim)
    g["b_part"] = flat.sum(axis=0)
    # padding slots are constants, not inputs
    d_parts = (d_pre_part @ m.w_part) * mask[:, :, None, None]
    return g, d_sent, d_parts


def bce(prob: np.ndarray, y: np.ndarray) -> np.ndarray:
    p = np.clip(prob, LOSS_EPS, 1.0 - LOSS_EPS)
    return -(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))


def bce_grad_logit(prob: np.ndarray, y: np.ndarray) -> np.ndarray:
    """d bce / d logit, zero where the probability is clamped."""
    inside = (prob > LOSS_EPS) & (prob < 1.0 - LOSS_EPS)
    return np.where(inside, prob - y, 0.0)


def loss_and_grads(m: FusionModel, sent, parts, mask, y):
    """Mean BCE over the batch and its parameter gradients."""
    y = np.asarray(y, dtype=np.float64)
    act = forward_arrays(m, sent, parts, mask)
    losses = bce(act["prob"], y)
    d_logit = bce_grad_logit(act["prob"], y) / len(y)
    grads, _, _ = backward_arrays(m, sent, parts, mask, act, d_logit)
    return float(losses.mean()), grads


def _batch1(b: EmbeddingBundle):
    return b.sentence_vec[None], b.triple_parts[None], b.mask[None]


# ---------------------------------------------------------------------------
# Single-bundle API
# ---------------------------------------------------------------------------

@dataclass
class ForwardTrace:
    part_activations: np.ndarray  # (K, 3, P); padding rows are excluded from the means
    means: np.ndarray  # (3, P)
    z: np.ndarray  # (S,)
    u_in: np.ndarray  # (2S,)
    u: np.ndarray  # (H,)
    logit: float
    prob: float

    @property
    def m_s(self):
        return self.means[0]

    @property
    def m_r(self):
        return self.means[1]

    @property
    def m_o(self):
        return self.means[2]


def forward(m: FusionModel, b: EmbeddingBundle, linear: bool = False) -> ForwardTrace:
    act = forward_arrays(m, *_batch1(b), linear=linear)
    return ForwardTrace(
        part_activations=act["h_part"][0],
        means=act["means"][0],
        z=act["z"][0],
        u_in=act["u_in"][0],
        u=act["u"][0],
        logit=float(act["logit"][0]),
        prob=float(act["prob"][0]),
    )


def loss(m: FusionModel, b: EmbeddingBundle | list, y) -> float:
    """Binary cross-entropy; with a list of bundles, the batch mean."""
    bundles = b if isinstance(b, (list, tuple)) else [b]
    ys = np.atleast_1d(np.asarray(y, dtype=np.float64))
    probs = np.array([forward(m, bb).prob for bb in bundles])
    return float(bce(probs, ys).mean())


@dataclass
class Gradients:
    params: dict[str, np.ndarray | float]
    sentence_vec: np.ndarray
    triple_parts: np.ndarray


def backward(m: FusionModel, b: EmbeddingBundle, y: int) -> Gradients:
    sent, parts, mask = _batch1(b)
    act = forward_arrays(m, sent, parts, mask)
    d_logit = bce_grad_logit(act["prob"], np.array([float(y)]))
    g, d_sent, d_parts = backward_arrays(m, sent, parts, mask, act, d_logit)
    return Gradients(g, d_sent[0], d_parts[0])


def logit_input_gradient(m: FusionModel, sent, parts, mask, linear: bool = False):
    """Gradient of the logit with respect to the inputs, per batch row."""
    act = forward_arrays(m, sent, parts, mask, linear=linear)
    _, d_sent, d_parts = backward_arrays(m, sent, parts, mask, act, np.ones(sent.shape[0]), linear=linear)
    return act["logit"], d_sent, d_parts


# ---------------------------------------------------------------------------
# Integrated gradients
# ---------------------------------------------------------------------------

@dataclass
class Attribution:
    sentence_vec: np.ndarray  # (S,)
    triple_parts: np.ndarray  # (K, 3, P)
    triple_scores: np.ndarray  # (n_valid,) sum over each triple's 3xP block
    logit: float
    baseline_logit: float

    @property
    def total(self) -> float:
        return float(self.sentence_vec.sum() + self.triple_parts.sum())

    @property
    def sentence_score(self) -> float:
        return float(self.sentence_vec.sum())

    @property
    def completeness_residual(self) -> float:
        return self.total - (self.logit - self.baseline_logit)


def zero_baseline(b: EmbeddingBundle) -> EmbeddingBundle:
    """All-zero inputs under the same triple mask as ``b``."""
    return EmbeddingBundle(b.source_id, np.zeros_like(b.sentence_vec), np.zeros_like(b.triple_parts), b.mask.copy())


def integrated_gradients(
    m: FusionModel,
    b: EmbeddingBundle,
    baseline: EmbeddingBundle | None = None,
    steps: int = 64,
    linear: bool = False,
    chunk: int = 128,
) -> Attribution:
    """Midpoint-rule integrated gradients of the logit along the straight path.

    The path keeps the triple mask of ``b`` fixed; the baseline must share it.
    """
    if steps < 1:
        raise ConfigurationError("steps must be at least 1")
    if baseline is None:
        baseline = zero_baseline(b)
    if baseline.sentence_vec.shape != b.sentence_vec.shape or baseline.triple_parts.shape != b.triple_parts.shape:
        raise ConfigurationError("baseline shape differs from the bundle")
    if not np.array_equal(baseline.mask, b.mask):
        raise ConfigurationError("baseline triple mask differs from the bundle")
    ds = b.sentence_vec - baseline.sentence_vec
    dp = b.triple_parts - baseline.triple_parts
    grad_s = np.zeros_like(ds)
    grad_p = np.zeros_like(dp)
    alphas = (np.arange(steps) + 0.5) / steps
    for start in range(0, steps, chunk):
        a = alphas[start: start + chunk]
        sent = baseline.sentence_vec[None] + a[:, None] * ds[None]
        parts = baseline.triple_parts[None] + a[:, None, None, None] * dp[None]
        mask = np.broadcast_to(b.mask, (len(a), MAX_TRIPLES))
        _, gs, gp = logit_input_gradient(m, sent, parts, mask, linear=linear)
        grad_s += gs.sum(axis=0)
        grad_p += gp.sum(axis=0)
    attr_s = ds * grad_s / steps
    attr_p = dp * grad_p / steps
    logit = forward(m, b, linear=linear).logit
    base_logit = forward(m, baseline, linear=linear).logit
    scores = attr_p.sum(axis=(1, 2))[b.mask]
    return Attribution(attr_s, attr_p, scores, logit, base_logit)


# ---------------------------------------------------------------------------
# Model file ("CWFM")
#
# magic, u8 version, u32 x5 dims (P, 3P, S, 2S, H), i64 init_seed,
# f64 init_scale, u8 mean mode, f64 parameter blocks in PARAM_NAMES order,
# u32 crc32 of everything before it.  All little-endian.
# ---------------------------------------------------------------------------

MODEL_MAGIC = b"CWFM"
MODEL_VERSION = 1
_MODEL_HEADER = struct.Struct("<4sBIIIIIqdB")


def model_to_bytes(m: FusionModel) -> bytes:
    p, s, h = m.part_dim, m.sentence_dim, m.hidden
    header = _MODEL_HEADER.pack(
        MODEL_MAGIC, MODEL_VERSION, p, N_PARTS * p, s, 2 * s, h,
        int(m.init_seed), float(m.init_scale), MEAN_MODES.index(m.mean_mode),
    )
    blocks = [np.asarray(getattr(m, n), dtype="<f8").tobytes() for n in PARAM_NAMES]
    payload = header + b"".join(blocks)
    return payload + struct.pack("<I", zlib.crc32(payload))


def model_from_bytes(data: bytes) -> FusionModel:
    if len(data) < _MODEL_HEADER.size + 4:
        raise ModelFormatError("model file is truncated")
    magic, version, p, p3, s, s2, h, seed, scale, mode = _MODEL_HEADER.unpack_from(data, 0)
    if magic != MODEL_MAGIC:
        raise ModelFormatError(f"bad magic {magic!r}")
    if version != MODEL_VERSION:
        raise ModelFormatError(f"unsupported model version {version}")
    if p3 != N_PARTS * p or s2 != 2 * s or h < 1 or mode >= len(MEAN_MODES):
        raise ModelFormatError(f"inconsistent dimension header {(p, p3, s, s2, h)}")
    shapes = [(p, p), (p,), (s, p3), (s,), (h, s2), (h,), (h,), ()]
    sizes = [int(np.prod(shape)) for shape in shapes]
    expected = _MODEL_HEADER.size + 8 * sum(sizes) + 4
    if len(data) != expected:
        raise ModelFormatError(f"model file has {len(data)} bytes, expected {expected}")
    (crc,) = struct.unpack_from("<I", data, expected - 4)
    if crc != zlib.crc32(data[: expected - 4]):
        raise ModelFormatError("model checksum mismatch")
    params, off = {}, _MODEL_HEADER.size
    for name, shape, size in zip(PARAM_NAMES, shapes, sizes):
        arr = np.frombuffer(data, "<f8", size, off).astype(np.float64).reshape(shape)
        params[name] = arr
        off += 8 * size
    params["b_out"] = float(params["b_out"])
    return FusionModel(**params, init_seed=seed, init_scale=scale, mean_mode=MEAN_MODES[mode])


def save_model(m: FusionModel, path: str | Path) -> None:
    Path(path).write_bytes(model_to_bytes(m))


def load_model(path: str | Path) -> FusionModel:
    return model_from_bytes(Path(path).read_bytes())
