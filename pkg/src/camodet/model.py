"""Toy three-stage detector with a restricted backward pass.

The model is deliberately small: backbone and neck are affine+tanh layers,
the head emits a sigmoid box in (cx, cy, w, h) form, class logits, and a
region embedding matched against a learned per-class embedding table. The
loss combines a GIoU box term, a temperature-scaled cosine contrastive term,
and focal classification. Gradients are computed analytically in
reverse-mode; backpropagation across stage boundaries can be damped by
restriction factors, either at the head/neck and neck/backbone boundaries or
uniformly per parameter block.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from camodet.errors import ConfigError
from camodet.geometry import Box, giou

EPS_NORM = 1e-12
EPS_LOG = 1e-12

PARAM_FIELDS = (
    "backbone_w",
    "backbone_b",
    "neck_w",
    "neck_b",
    "head_box_w",
    "head_box_b",
    "head_cls_w",
    "head_cls_b",
    "head_emb_w",
    "class_embed",
)

STAGE_FIELDS = {
    "backbone": ("backbone_w", "backbone_b"),
    "neck": ("neck_w", "neck_b"),
    "head": ("head_box_w", "head_box_b", "head_cls_w", "head_cls_b", "head_emb_w", "class_embed"),
}


@dataclass(frozen=True)
class ModelConfig:
    feature_dim: int = 256
    hidden1: int = 64
    hidden2: int = 32
    embed_dim: int = 32
    num_classes: int = 3

    def __post_init__(self) -> None:
        for name in ("feature_dim", "hidden1", "hidden2", "embed_dim", "num_classes"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")


@dataclass(frozen=True)
class RestrictionConfig:
    """How strongly gradients pass stage boundaries on the way back.

    boundary mode: the signal entering the neck is scaled by lambda_hn and
    additionally by lambda_nb before reaching the backbone; head gradients
    stay unscaled. update mode: every stage's gradient block is multiplied by
    the single uniform lambda.
    """

    mode: str = "boundary"
    lambda_hn: float = 0.08
    lambda_nb: float = 0.08
    lambda_uniform: float = 0.08

    def __post_init__(self) -> None:
        if self.mode not in ("boundary", "update"):
            raise ConfigError(f"restriction mode must be 'boundary' or 'update', got {self.mode!r}")
        for name in ("lambda_hn", "lambda_nb", "lambda_uniform"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1], got {value}")


UNRESTRICTED = RestrictionConfig(mode="boundary", lambda_hn=1.0, lambda_nb=1.0, lambda_uniform=1.0)


@dataclass(frozen=True)
class LossConfig:
    focal_gamma: float = 2.0
    focal_alpha: float = 0.25
    temperature: float = 0.07
    w_bbox: float = 1.0
    w_contrastive: float = 1.0
    w_cls: float = 1.0

    def __post_init__(self) -> None:
        if self.focal_gamma < 0:
            raise ConfigError(f"focal_gamma must be >= 0, got {self.focal_gamma}")
        if not 0.0 < self.focal_alpha <= 1.0:
            raise ConfigError(f"focal_alpha must be in (0, 1], got {self.focal_alpha}")
        if self.temperature <= 0:
            raise ConfigError(f"temperature must be > 0, got {self.temperature}")
        for name in ("w_bbox", "w_contrastive", "w_cls"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0, got {getattr(self, name)}")


@dataclass(eq=False)
class RegionInput:
    """One training region: feature vector, normalized target box, class index."""

    features: np.ndarray
    box: Box
    category_index: int


@dataclass(eq=False)
class StagedParams:
    """All parameter blocks, grouped backbone / neck / head."""

    backbone_w: np.ndarray
    backbone_b: np.ndarray
    neck_w: np.ndarray
    neck_b: np.ndarray
    head_box_w: np.ndarray
    head_box_b: np.ndarray
    head_cls_w: np.ndarray
    head_cls_b: np.ndarray
    head_emb_w: np.ndarray
    class_embed: np.ndarray

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_FIELDS}

    def copy(self) -> "StagedParams":
        return StagedParams(**{name: arr.copy() for name, arr in self.arrays().items()})

    def flatten(self) -> np.ndarray:
        return np.concatenate([getattr(self, name).ravel() for name in PARAM_FIELDS])

    def with_flat(self, flat: np.ndarray) -> "StagedParams":
        """New params with the same shapes, values taken from a flat vector."""
        total = sum(getattr(self, name).size for name in PARAM_FIELDS)
        if flat.size != total:
            raise ConfigError(f"flat vector has {flat.size} entries, expected {total}")
        out = {}
        offset = 0
        for name in PARAM_FIELDS:
            arr = getattr(self, name)
            out[name] = flat[offset : offset + arr.size].reshape(arr.shape).copy()
            offset += arr.size
        return StagedParams(**out)

    def scale_stage(self, stage: str, factor: float) -> None:
        for name in STAGE_FIELDS[stage]:
            setattr(self, name, factor * getattr(self, name))

    @property
    def config(self) -> ModelConfig:
        return ModelConfig(
            feature_dim=self.backbone_w.shape[0],
            hidden1=self.backbone_w.shape[1],
            hidden2=self.neck_w.shape[1],
            embed_dim=self.head_emb_w.shape[1],
            num_classes=self.head_cls_w.shape[1],
        )


def params_zeros(config: ModelConfig) -> StagedParams:
    d, h1, h2 = config.feature_dim, config.hidden1, config.hidden2
    e, c = config.embed_dim, config.num_classes
    return StagedParams(
        backbone_w=np.zeros((d, h1)),
        backbone_b=np.zeros(h1),
        neck_w=np.zeros((h1, h2)),
        neck_b=np.zeros(h2),
        head_box_w=np.zeros((h2, 4)),
        head_box_b=np.zeros(4),
        head_cls_w=np.zeros((h2, c)),
        head_cls_b=np.zeros(c),
        head_emb_w=np.zeros((h2, e)),
        class_embed=np.zeros((c, e)),
    )


def params_init(config: ModelConfig, rng: np.random.Generator) -> StagedParams:
    """Gaussian weights scaled by 1/sqrt(fan_in); zero biases; unit-scale class embeddings."""
    d, h1, h2 = config.feature_dim, config.hidden1, config.hidden2
    e, c = config.embed_dim, config.num_classes
    return StagedParams(
        backbone_w=rng.normal(0.0, 1.0 / np.sqrt(d), (d, h1)),
        backbone_b=np.zeros(h1),
        neck_w=rng.normal(0.0, 1.0 / np.sqrt(h1), (h1, h2)),
        neck_b=np.zeros(h2),
        head_box_w=rng.normal(0.0, 1.0 / np.sqrt(h2), (h2, 4)),
        head_box_b=np.zeros(4),
        head_cls_w=rng.normal(0.0, 1.0 / np.sqrt(h2), (h2, c)),
        head_cls_b=np.zeros(c),
        head_emb_w=rng.normal(0.0, 1.0 / np.sqrt(h2), (h2, e)),
        class_embed=rng.normal(0.0, 1.0, (c, e)),
    )


def save_params(path, params: StagedParams) -> None:
    """Checkpoint all blocks as npz, written atomically; round-trips exactly."""
    import io

    from camodet.ioutils import atomic_write_bytes

    buf = io.BytesIO()
    np.savez(buf, **params.arrays())
    atomic_write_bytes(path, buf.getvalue())


def load_params(path) -> StagedParams:
    with np.load(path) as data:
        return StagedParams(**{name: data[name] for name in PARAM_FIELDS})


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=-1, keepdims=True)
    ez = np.exp(shifted)
    return ez / ez.sum(axis=-1, keepdims=True)


@dataclass(eq=False)
class ForwardState:
    """Cached activations for one batch, reused by the backward pass."""

    features: np.ndarray   # (N, D)
    h1: np.ndarray         # (N, H1) tanh
    h2: np.ndarray         # (N, H2) tanh
    box_sigmoid: np.ndarray  # (N, 4) as (cx, cy, w, h)
    corners: np.ndarray    # (N, 4) as (x_min, y_min, x_max, y_max)
    logits: np.ndarray     # (N, C)
    embeddings: np.ndarray  # (N, E)


def forward_batch(params: StagedParams, features: np.ndarray) -> ForwardState:
    features = np.asarray(features, dtype=np.float64)
    if features.ndim == 1:
        features = features[None, :]
    h1 = np.tanh(features @ params.backbone_w + params.backbone_b)
    h2 = np.tanh(h1 @ params.neck_w + params.neck_b)
    box = _sigmoid(h2 @ params.head_box_w + params.head_box_b)
    cx, cy, w, h = box[:, 0], box[:, 1], box[:, 2], box[:, 3]
    corners = np.stack([cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2], axis=1)
    logits = h2 @ params.head_cls_w + params.head_cls_b
    embeddings = h2 @ params.head_emb_w
    return ForwardState(
        features=features,
        h1=h1,
        h2=h2,
        box_sigmoid=box,
        corners=corners,
        logits=logits,
        embeddings=embeddings,
    )


def forward_staged(params: StagedParams, region: RegionInput):
    """Predicted box (normalized corners), class logits, and region embedding."""
    state = forward_batch(params, region.features)
    x0, y0, x1, y1 = state.corners[0]
    return Box(x0, y0, x1, y1), state.logits[0], state.embeddings[0]


def focal_loss(
    class_logits: np.ndarray, target_category: int, gamma: float = 2.0, alpha: float = 0.25
) -> float:
    """Focal classification loss -alpha * (1 - p_t)^gamma * log(p_t)."""
    p = _softmax(np.asarray(class_logits, dtype=np.float64))
    p_t = max(float(p[target_category]), EPS_LOG)
    return float(-alpha * (1.0 - p_t) ** gamma * np.log(p_t))


def giou_loss(pred: Box, target: Box) -> float:
    """1 - GIoU; 0 for identical boxes, approaching 2 for distant ones."""
    return 1.0 - giou(pred, target)


def contrastive_loss(
    region_embedding: np.ndarray,
    class_embeddings: np.ndarray,
    target_category: int,
    temperature: float = 0.07,
) -> float:
    """Cross-entropy over temperature-scaled cosine similarities to each class."""
    r = np.asarray(region_embedding, dtype=np.float64)
    e = np.asarray(class_embeddings, dtype=np.float64)
    n_r = max(float(np.linalg.norm(r)), EPS_NORM)
    n_e = np.maximum(np.linalg.norm(e, axis=1), EPS_NORM)
    sims = (e @ r) / (n_r * n_e * temperature)
    q = _softmax(sims)
    return float(-np.log(max(float(q[target_category]), EPS_LOG)))


def _giou_array(pred: np.ndarray, target: np.ndarray):
    """Vectorized GIoU over (N, 4) corner arrays, plus the pieces the backward needs."""
    px0, py0, px1, py1 = pred[:, 0], pred[:, 1], pred[:, 2], pred[:, 3]
    qx0, qy0, qx1, qy1 = target[:, 0], target[:, 1], target[:, 2], target[:, 3]
    iw = np.minimum(px1, qx1) - np.maximum(px0, qx0)
    ih = np.minimum(py1, qy1) - np.maximum(py0, qy0)
    inter = np.where((iw > 0) & (ih > 0), iw * ih, 0.0)
    area_p = (px1 - px0) * (py1 - py0)
    area_q = (qx1 - qx0) * (qy1 - qy0)
    union = area_p + area_q - inter
    cw = np.maximum(px1, qx1) - np.minimum(px0, qx0)
    ch = np.maximum(py1, qy1) - np.minimum(py0, qy0)
    enclose = cw * ch
    giou = inter / union - (enclose - union) / enclose
    return giou, (iw, ih, inter, union, cw, ch, enclose)


def _giou_grad(pred: np.ndarray, target: np.ndarray, pieces) -> np.ndarray:
    """d(1 - GIoU)/d corners; subgradient conventions at ties favor the prediction."""
    px0, py0, px1, py1 = pred[:, 0], pred[:, 1], pred[:, 2], pred[:, 3]
    qx0, qy0, qx1, qy1 = target[:, 0], target[:, 1], target[:, 2], target[:, 3]
    iw, ih, inter, union, cw, ch, enclose = pieces
    overlap = (iw > 0) & (ih > 0)

    # dI/d corner: active only while the boxes overlap and the pred edge is inner.
    di = np.zeros_like(pred)
    di[:, 0] = np.where(overlap & (px0 >= qx0), -ih, 0.0)
    di[:, 1] = np.where(overlap & (py0 >= qy0), -iw, 0.0)
    di[:, 2] = np.where(overlap & (px1 <= qx1), ih, 0.0)
    di[:, 3] = np.where(overlap & (py1 <= qy1), iw, 0.0)

    w_p = px1 - px0
    h_p = py1 - py0
    da = np.stack([-h_p, -w_p, h_p, w_p], axis=1)
    du = da - di

    dc = np.zeros_like(pred)
    dc[:, 0] = np.where(px0 <= qx0, -ch, 0.0)
    dc[:, 1] = np.where(py0 <= qy0, -cw, 0.0)
    dc[:, 2] = np.where(px1 >= qx1, ch, 0.0)
    dc[:, 3] = np.where(py1 >= qy1, cw, 0.0)

    union_c = union[:, None]
    enclose_c = enclose[:, None]
    inter_c = inter[:, None]
    # giou = I/U + U/C - 1, so d(1-giou) = -(I'U - IU')/U^2 - (U'C - UC')/C^2.
    d_giou = (di * union_c - inter_c * du) / union_c**2
    d_giou += (du * enclose_c - union_c * dc) / enclose_c**2
    return -d_giou


def _stack_batch(batch: Sequence[RegionInput]):
    features = np.stack([np.asarray(r.features, dtype=np.float64) for r in batch])
    targets = np.array([[r.box.x_min, r.box.y_min, r.box.x_max, r.box.y_max] for r in batch])
    labels = np.array([r.category_index for r in batch], dtype=np.int64)
    return features, targets, labels


def _batch_terms(params: StagedParams, batch: Sequence[RegionInput], cfg: LossConfig):
    """Forward pass plus per-region loss terms; shared by loss and backward."""
    features, targets, labels = _stack_batch(batch)
    state = forward_batch(params, features)
    n = len(batch)
    idx = np.arange(n)

    giou_vals, giou_pieces = _giou_array(state.corners, targets)
    loss_box = 1.0 - giou_vals

    probs = _softmax(state.logits)
    p_t = np.maximum(probs[idx, labels], EPS_LOG)
    loss_focal = -cfg.focal_alpha * (1.0 - p_t) ** cfg.focal_gamma * np.log(p_t)

    norms_r = np.maximum(np.linalg.norm(state.embeddings, axis=1), EPS_NORM)
    norms_e = np.maximum(np.linalg.norm(params.class_embed, axis=1), EPS_NORM)
    cos_num = state.embeddings @ params.class_embed.T
    sims = cos_num / (norms_r[:, None] * norms_e[None, :] * cfg.temperature)
    q = _softmax(sims)
    loss_con = -np.log(np.maximum(q[idx, labels], EPS_LOG))

    caches = {
        "state": state,
        "targets": targets,
        "labels": labels,
        "giou_pieces": giou_pieces,
        "probs": probs,
        "p_t": p_t,
        "norms_r": norms_r,
        "norms_e": norms_e,
        "cos_num": cos_num,
        "q": q,
    }
    return loss_box, loss_con, loss_focal, caches


def detection_loss_terms(
    params: StagedParams, batch: Sequence[RegionInput], cfg: LossConfig
) -> dict[str, float]:
    """Mean loss and its per-term means over the batch."""
    if not batch:
        raise ConfigError("batch must contain at least one region")
    loss_box, loss_con, loss_focal, _ = _batch_terms(params, batch, cfg)
    box = float(np.mean(loss_box))
    con = float(np.mean(loss_con))
    focal = float(np.mean(loss_focal))
    total = cfg.w_bbox * box + cfg.w_contrastive * con + cfg.w_cls * focal
    return {"loss": total, "loss_bbox": box, "loss_contrastive": con, "loss_focal": focal}


def detection_loss(params: StagedParams, batch: Sequence[RegionInput], cfg: LossConfig) -> float:
    return detection_loss_terms(params, batch, cfg)["loss"]


def backward_restricted(
    params: StagedParams,
    batch: Sequence[RegionInput],
    cfg: RestrictionConfig,
    loss_cfg: LossConfig,
) -> StagedParams:
    """Reverse-mode gradient of detection_loss with restricted stage boundaries.

    Restriction is applied as exact post-hoc block scaling, which equals
    scaling the boundary signal because every backward map is linear in the
    incoming cotangent; this makes grad(lambda) = lambda * grad(1) hold
    bitwise, and lambda_hn = 0 zeroes the neck and backbone blocks exactly.
    """
    if not batch:
        raise ConfigError("batch must contain at least one region")
    _, _, _, caches = _batch_terms(params, batch, loss_cfg)
    state: ForwardState = caches["state"]
    targets = caches["targets"]
    labels = caches["labels"]
    n = len(batch)
    idx = np.arange(n)

    # Box term: d(1-giou)/dcorners -> (cx, cy, w, h) -> sigmoid pre-activation.
    d_corners = _giou_grad(state.corners, targets, caches["giou_pieces"])
    d_corners *= loss_cfg.w_bbox / n
    d_box = np.empty_like(d_corners)
    d_box[:, 0] = d_corners[:, 0] + d_corners[:, 2]
    d_box[:, 1] = d_corners[:, 1] + d_corners[:, 3]
    d_box[:, 2] = (d_corners[:, 2] - d_corners[:, 0]) / 2.0
    d_box[:, 3] = (d_corners[:, 3] - d_corners[:, 1]) / 2.0
    s = state.box_sigmoid
    dz_box = d_box * s * (1.0 - s)

    # Focal term.
    probs = caches["probs"]
    p_t = caches["p_t"]
    one_minus = 1.0 - p_t
    log_pt = np.log(p_t)
    gamma = loss_cfg.focal_gamma
    alpha = loss_cfg.focal_alpha
    if gamma == 0.0:
        dl_dpt = -alpha / p_t
    else:
        pow_gm1 = np.where(one_minus > 0.0, one_minus ** (gamma - 1.0), 0.0)
        dl_dpt = alpha * gamma * pow_gm1 * log_pt - alpha * one_minus**gamma / p_t
    onehot = np.zeros_like(probs)
    onehot[idx, labels] = 1.0
    dz_cls = (dl_dpt * p_t)[:, None] * (onehot - probs)
    dz_cls *= loss_cfg.w_cls / n

    # Contrastive term: gradients for region embeddings and the class table.
    q = caches["q"]
    norms_r = caches["norms_r"]
    norms_e = caches["norms_e"]
    cos_num = caches["cos_num"]
    class_onehot = np.zeros_like(q)
    class_onehot[idx, labels] = 1.0
    d_sims = (q - class_onehot) * (loss_cfg.w_contrastive / n)
    m = d_sims / norms_r[:, None]
    inv_tau = 1.0 / loss_cfg.temperature
    d_emb = inv_tau * (
        (m / norms_e[None, :]) @ params.class_embed
        - ((m * cos_num / norms_e[None, :]).sum(axis=1) / norms_r**2)[:, None] * state.embeddings
    )
    d_class_embed = inv_tau * (
        m.T @ state.embeddings / norms_e[:, None]
        - ((m * cos_num).sum(axis=0) / norms_e**3)[:, None] * params.class_embed
    )

    # Head parameter gradients and the signal entering the neck.
    h2 = state.h2
    g_head_box_w = h2.T @ dz_box
    g_head_box_b = dz_box.sum(axis=0)
    g_head_cls_w = h2.T @ dz_cls
    g_head_cls_b = dz_cls.sum(axis=0)
    g_head_emb_w = h2.T @ d_emb
    d_h2 = dz_box @ params.head_box_w.T + dz_cls @ params.head_cls_w.T + d_emb @ params.head_emb_w.T

    dz2 = d_h2 * (1.0 - h2**2)
    g_neck_w = state.h1.T @ dz2
    g_neck_b = dz2.sum(axis=0)
    d_h1 = dz2 @ params.neck_w.T

    dz1 = d_h1 * (1.0 - state.h1**2)
    g_backbone_w = state.features.T @ dz1
    g_backbone_b = dz1.sum(axis=0)

    grads = StagedParams(
        backbone_w=g_backbone_w,
        backbone_b=g_backbone_b,
        neck_w=g_neck_w,
        neck_b=g_neck_b,
        head_box_w=g_head_box_w,
        head_box_b=g_head_box_b,
        head_cls_w=g_head_cls_w,
        head_cls_b=g_head_cls_b,
        head_emb_w=g_head_emb_w,
        class_embed=d_class_embed,
    )
    if cfg.mode == "boundary":
        grads.scale_stage("neck", cfg.lambda_hn)
        grads.scale_stage("backbone", cfg.lambda_hn)
        grads.scale_stage("backbone", cfg.lambda_nb)
    else:
        for stage in STAGE_FIELDS:
            grads.scale_stage(stage, cfg.lambda_uniform)
    return grads


def gradient_check(
    params: StagedParams,
    batch: Sequence[RegionInput],
    loss_cfg: LossConfig,
    step: float = 1e-5,
) -> float:
    """Max relative error between analytic and central finite-difference gradients.

    The denominator is floored at 1e-4 so near-zero entries compare on an
    absolute scale instead of blowing up the ratio.
    """
    analytic = backward_restricted(params, batch, UNRESTRICTED, loss_cfg).flatten()
    flat = params.flatten()
    numeric = np.empty_like(flat)
    for i in range(flat.size):
        plus = flat.copy()
        plus[i] += step
        minus = flat.copy()
        minus[i] -= step
        loss_plus = detection_loss(params.with_flat(plus), batch, loss_cfg)
        loss_minus = detection_loss(params.with_flat(minus), batch, loss_cfg)
        numeric[i] = (loss_plus - loss_minus) / (2.0 * step)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-4)
    return float(np.max(np.abs(analytic - numeric) / denom))
