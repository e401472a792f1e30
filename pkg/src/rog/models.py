"""The motion generation model and the relation model.

Both are conditional denoisers trained to predict the clean sample. The
generation model is a transformer encoder over per-frame motion tokens with
four prepended context tokens (step, action embedding, rest-pose joints,
canonical object keypoints). The relation model runs factorized spatial and
temporal self-attention over a 4 x 4 token grid obtained by linearly
downsampling each frame's 24 x 24 distance field, with the condition
injected as an extra token along the temporal axis.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import diffusion, idf, motion, nn
from .autodiff import Tensor

TEXT_EMBED_DIM = 512
PATCH_GRID = 4          # 24 x 24 fields downsample to a 4 x 4 token grid
PATCH_SIZE = 6
PATCH_VALUES = PATCH_SIZE * PATCH_SIZE


@dataclass
class Condition:
    """Conditioning bundle: action label, rest-pose joints Q, canonical keypoints P."""

    action_label: int
    rest_joints: np.ndarray
    canonical_keypoints: np.ndarray

    def __post_init__(self):
        self.rest_joints = np.asarray(self.rest_joints, dtype=np.float64)
        self.canonical_keypoints = np.asarray(self.canonical_keypoints, dtype=np.float64)
        if self.rest_joints.shape != (24, 3) or self.canonical_keypoints.shape != (24, 3):
            raise ValueError("condition needs (24, 3) rest joints and canonical keypoints")


@dataclass
class TrainingItem:
    """One dataset element: frames plus its conditioning inputs."""

    frames: np.ndarray
    label: int
    canonical_keypoints: np.ndarray
    _idf_cache: np.ndarray | None = field(default=None, repr=False)

    def condition(self) -> Condition:
        return Condition(self.label, motion.REST_JOINTS, self.canonical_keypoints)

    def ground_truth_idf(self, metric: str = "squared") -> np.ndarray:
        if self._idf_cache is None:
            self._idf_cache = idf.compute_idf(
                motion.joints_of(self.frames), motion.object_keypoints_of(self.frames), metric
            )
        return self._idf_cache


class MotionGenModel:
    """Transformer denoiser over (N, 288) motion sequences."""

    def __init__(self, vocab: int = 5, width: int = 128, layers: int = 4, heads: int = 4,
                 seed: int = 0, dtype=np.float32):
        self.vocab = vocab
        self.width = width
        self.layers = layers
        self.heads = heads
        self.dtype = dtype
        self.store = nn.ParamStore()
        rng = np.random.default_rng(seed)
        d = width
        self.label_table = self.store.add(
            "label_table", nn.uniform_init(rng, TEXT_EMBED_DIM, (vocab, TEXT_EMBED_DIM), dtype)
        )
        self.in_proj = nn.Linear(self.store, "in_proj", motion.FRAME_DIM, d, rng, dtype)
        self.t_proj = nn.Linear(self.store, "t_proj", d, d, rng, dtype)
        self.text_proj = nn.Linear(self.store, "text_proj", TEXT_EMBED_DIM, d, rng, dtype)
        self.q_proj = nn.Linear(self.store, "q_proj", 72, d, rng, dtype)
        self.p_proj = nn.Linear(self.store, "p_proj", 72, d, rng, dtype)
        self.blocks = [
            nn.TransformerBlock(self.store, f"block{i}", d, heads, rng, dtype)
            for i in range(layers)
        ]
        self.out_norm = nn.LayerNorm(self.store, "out_norm", d, dtype)
        self.out_proj = nn.Linear(self.store, "out_proj", d, motion.FRAME_DIM, rng, dtype)

    def config_dict(self) -> dict:
        return {
            "vocab": self.vocab, "width": self.width,
            "layers": self.layers, "heads": self.heads,
        }

    def text_embedding(self, label: int) -> Tensor:
        if not 0 <= label < self.vocab:
            raise ValueError(f"unknown action label {label} (vocabulary size {self.vocab})")
        return self.label_table[int(label)]

    def embed_condition(self, label: int, rest_joints, canonical_keypoints) -> Tensor:
        """The three condition tokens (action text, Q, P), shape (3, width)."""
        text_tok = self.text_proj(ad.reshape(self.text_embedding(label), (1, TEXT_EMBED_DIM)))
        q_tok = self.q_proj(Tensor(np.asarray(rest_joints, self.dtype).reshape(1, 72)))
        p_tok = self.p_proj(Tensor(np.asarray(canonical_keypoints, self.dtype).reshape(1, 72)))
        return ad.concat([text_tok, q_tok, p_tok], axis=0)

    def forward(self, m_t, t: int, cond: Condition) -> Tensor:
        """Predict the clean sequence from a noisy one; shape is preserved."""
        x = m_t.data if isinstance(m_t, Tensor) else np.asarray(m_t)
        if x.ndim != 2 or x.shape[1] != motion.FRAME_DIM:
            raise ValueError(f"expected (N, {motion.FRAME_DIM}) input, got {x.shape}")
        n = x.shape[0]
        tokens = self.in_proj(Tensor(x.astype(self.dtype)))
        tokens = tokens + Tensor(nn.positional_encoding(n, self.width).astype(self.dtype))
        t_tok = self.t_proj(Tensor(nn.sinusoidal_embed(t, self.width).astype(self.dtype).reshape(1, -1)))
        ctx = self.embed_condition(cond.action_label, cond.rest_joints, cond.canonical_keypoints)
        seq = ad.concat([t_tok, ctx, tokens], axis=0)
        seq = ad.reshape(seq, (1, n + 4, self.width))
        for block in self.blocks:
            seq = block(seq)
        seq = self.out_norm(seq)
        out = self.out_proj(ad.take(seq, (0, slice(4, None))))
        return out

    def predict(self, m_t, t: int, cond: Condition) -> np.ndarray:
        return self.forward(m_t, t, cond).data.astype(np.float32)


def gen_loss(m0, m0_pred: Tensor, canonical_keypoints, gt_idf, lambda_idf: float = 5.0,
             metric: str = "squared"):
    """Training loss: reconstruction MSE plus the weighted distance-field term.

    The predicted field is built from predicted joints and keypoints
    reconstructed through the predicted object transform (raw predicted
    rotation block, no orthonormalization), so its gradient reaches the
    transform slots rather than the free keypoint slots.
    """
    m0 = np.asarray(m0)
    if m0.shape != m0_pred.shape:
        raise ValueError(f"shape mismatch: {m0.shape} vs {m0_pred.shape}")
    n = m0.shape[0]
    rec = ((m0_pred - Tensor(m0.astype(m0_pred.data.dtype))) ** 2).mean()
    if lambda_idf == 0.0:
        return rec, float(rec.data), 0.0

    joints = ad.reshape(ad.take(m0_pred, (slice(None), motion.JOINTS)), (n, 24, 3))
    trans = ad.take(m0_pred, (slice(None), motion.OBJECT_T))
    rotm = ad.reshape(ad.take(m0_pred, (slice(None), motion.OBJECT_R)), (n, 3, 3))
    canon = Tensor(np.asarray(canonical_keypoints, dtype=m0_pred.data.dtype))
    kp_world = canon @ ad.transpose(rotm, (0, 2, 1)) + ad.reshape(trans, (n, 1, 3))
    diff = ad.reshape(joints, (n, 24, 1, 3)) - ad.reshape(kp_world, (n, 1, 24, 3))
    sq = (diff * diff).sum(axis=-1)
    pred_field = sq if metric == "squared" else ad.sqrt(sq + 1e-12)
    gt = np.asarray(gt_idf).transpose(2, 0, 1).astype(m0_pred.data.dtype)
    idf_term = ((pred_field - Tensor(gt)) ** 2).mean()
    total = rec + float(lambda_idf) * idf_term
    return total, float(rec.data), float(idf_term.data)


class RelationBlock:
    """Spatial attention over the token grid, temporal attention over frames, FFN."""

    def __init__(self, store, name, dim, heads, rng, dtype):
        self.norm_s = nn.LayerNorm(store, f"{name}.norm_s", dim, dtype)
        self.attn_s = nn.MultiHeadSelfAttention(store, f"{name}.attn_s", dim, heads, rng, dtype)
        self.norm_t = nn.LayerNorm(store, f"{name}.norm_t", dim, dtype)
        self.attn_t = nn.MultiHeadSelfAttention(store, f"{name}.attn_t", dim, heads, rng, dtype)
        self.norm_f = nn.LayerNorm(store, f"{name}.norm_f", dim, dtype)
        self.ffn = nn.FeedForward(store, f"{name}.ffn", dim, rng, dtype)

    def __call__(self, x: Tensor) -> Tensor:
        # x: (frames, tokens, dim)
        x = x + self.attn_s(self.norm_s(x))
        xt = ad.transpose(x, (1, 0, 2))
        xt = xt + self.attn_t(self.norm_t(xt))
        x = ad.transpose(xt, (1, 0, 2))
        return x + self.ffn(self.norm_f(x))


class RelationModel:
    """Denoiser over 24 x 24 x N distance fields with factorized attention."""

    def __init__(self, vocab: int = 5, width: int = 128, blocks: int = 4, heads: int = 4,
                 seed: int = 0, temporal_pos: bool = True, dtype=np.float32):
        self.vocab = vocab
        self.width = width
        self.block_count = blocks
        self.heads = heads
        self.temporal_pos = temporal_pos
        self.dtype = dtype
        self.store = nn.ParamStore()
        rng = np.random.default_rng(seed)
        d = width
        self.label_table = self.store.add(
            "label_table", nn.uniform_init(rng, TEXT_EMBED_DIM, (vocab, TEXT_EMBED_DIM), dtype)
        )
        self.patch_embed = nn.Linear(self.store, "patch_embed", PATCH_VALUES, d, rng, dtype)
        self.t_proj = nn.Linear(self.store, "t_proj", d, d, rng, dtype)
        self.text_proj = nn.Linear(self.store, "text_proj", TEXT_EMBED_DIM, d, rng, dtype)
        self.q_proj = nn.Linear(self.store, "q_proj", 72, d, rng, dtype)
        self.p_proj = nn.Linear(self.store, "p_proj", 72, d, rng, dtype)
        self.blocks = [
            RelationBlock(self.store, f"block{i}", d, heads, rng, dtype) for i in range(blocks)
        ]
        self.out_norm = nn.LayerNorm(self.store, "out_norm", d, dtype)
        self.out_proj = nn.Linear(self.store, "out_proj", d, PATCH_VALUES, rng, dtype)
        self.spatial_pos = nn.positional_encoding(PATCH_GRID * PATCH_GRID, d).astype(dtype)

    def config_dict(self) -> dict:
        return {
            "vocab": self.vocab, "width": self.width,
            "blocks": self.block_count, "heads": self.heads,
        }

    def _condition_vector(self, t: int, cond: Condition) -> Tensor:
        if not 0 <= cond.action_label < self.vocab:
            raise ValueError(f"unknown action label {cond.action_label} (vocabulary size {self.vocab})")
        t_tok = self.t_proj(Tensor(nn.sinusoidal_embed(t, self.width).astype(self.dtype).reshape(1, -1)))
        text = self.text_proj(ad.reshape(self.label_table[int(cond.action_label)], (1, TEXT_EMBED_DIM)))
        q_tok = self.q_proj(Tensor(np.asarray(cond.rest_joints, self.dtype).reshape(1, 72)))
        p_tok = self.p_proj(Tensor(np.asarray(cond.canonical_keypoints, self.dtype).reshape(1, 72)))
        return t_tok + text + q_tok + p_tok  # (1, d)

    def forward(self, d_t, t: int, cond: Condition) -> Tensor:
        """Denoise a (24, 24, N) field; the output keeps that shape."""
        x = d_t.data if isinstance(d_t, Tensor) else np.asarray(d_t)
        if x.ndim != 3 or x.shape[0] != 24 or x.shape[1] != 24:
            raise ValueError(f"expected a (24, 24, N) field, got {x.shape}")
        n = x.shape[2]
        frames = x.transpose(2, 0, 1).astype(self.dtype)  # (N, 24, 24)
        patches = (
            frames.reshape(n, PATCH_GRID, PATCH_SIZE, PATCH_GRID, PATCH_SIZE)
            .transpose(0, 1, 3, 2, 4)
            .reshape(n, PATCH_GRID * PATCH_GRID, PATCH_VALUES)
        )
        tok = self.patch_embed(Tensor(patches))  # (N, 16, d)
        cond_vec = self._condition_vector(t, cond)
        cond_frame = ad.reshape(cond_vec, (1, 1, self.width)) + Tensor(
            np.zeros((1, PATCH_GRID * PATCH_GRID, self.width), dtype=self.dtype)
        )
        seq = ad.concat([cond_frame, tok], axis=0)  # (N + 1, 16, d)
        seq = seq + Tensor(self.spatial_pos.reshape(1, -1, self.width))
        if self.temporal_pos:
            tpe = nn.positional_encoding(n + 1, self.width).astype(self.dtype)
            seq = seq + Tensor(tpe.reshape(n + 1, 1, self.width))
        for block in self.blocks:
            seq = block(seq)
        seq = self.out_norm(seq)
        out_patches = self.out_proj(ad.take(seq, (slice(1, None),)))  # (N, 16, 36)
        out = ad.reshape(out_patches, (n, PATCH_GRID, PATCH_GRID, PATCH_SIZE, PATCH_SIZE))
        out = ad.transpose(out, (0, 1, 3, 2, 4))
        out = ad.reshape(out, (n, 24, 24))
        return ad.transpose(out, (1, 2, 0))

    def predict(self, d_t, t: int, cond: Condition) -> np.ndarray:
        return self.forward(d_t, t, cond).data.astype(np.float64)


def rel_loss(d0, d0_pred: Tensor):
    """Mean squared error between a field and its reconstruction."""
    d0 = np.asarray(d0)
    if d0.shape != d0_pred.shape:
        raise ValueError(f"shape mismatch: {d0.shape} vs {d0_pred.shape}")
    return ((d0_pred - Tensor(d0.astype(d0_pred.data.dtype))) ** 2).mean()


def _check_finite(value: float, step: int, kind: str) -> None:
    if not np.isfinite(value):
        raise RuntimeError(f"{kind} training diverged: non-finite loss at step {step}")


def train_generation(dataset, sched: diffusion.NoiseSchedule, model: MotionGenModel,
                     steps: int, lr: float = 1e-4, lambda_idf: float = 5.0,
                     weight_decay: float = 0.01, seed: int = 0, idf_metric: str = "squared"):
    """Denoising-score training for the generation model; returns per-step losses."""
    if not dataset:
        raise ValueError("dataset is empty")
    rng = np.random.default_rng(seed)
    losses = np.zeros(steps)
    for step in range(steps):
        item = dataset[int(rng.integers(len(dataset)))]
        t = int(rng.integers(1, sched.steps + 1))
        noise = rng.standard_normal(item.frames.shape).astype(np.float32)
        m_t = q_sample_f32(item.frames, t, noise, sched)
        model.store.zero_grad()
        pred = model.forward(m_t, t, item.condition())
        total, _, _ = gen_loss(
            item.frames, pred, item.canonical_keypoints,
            item.ground_truth_idf(idf_metric), lambda_idf, idf_metric,
        )
        _check_finite(float(total.data), step, "generation")
        ad.backward(total)
        nn.adamw_step(model.store, lr=lr, weight_decay=weight_decay)
        losses[step] = float(total.data)
    return losses


def train_relation(dataset, sched: diffusion.NoiseSchedule, model: RelationModel,
                   steps: int, lr: float = 1e-4, weight_decay: float = 0.01,
                   seed: int = 0, idf_metric: str = "squared"):
    """Denoising training for the relation model on per-item distance fields."""
    if not dataset:
        raise ValueError("dataset is empty")
    rng = np.random.default_rng(seed)
    losses = np.zeros(steps)
    for step in range(steps):
        item = dataset[int(rng.integers(len(dataset)))]
        d0 = item.ground_truth_idf(idf_metric).astype(np.float32)
        t = int(rng.integers(1, sched.steps + 1))
        noise = rng.standard_normal(d0.shape).astype(np.float32)
        d_t = q_sample_f32(d0, t, noise, sched)
        model.store.zero_grad()
        pred = model.forward(d_t, t, item.condition())
        loss = rel_loss(d0, pred)
        _check_finite(float(loss.data), step, "relation")
        ad.backward(loss)
        nn.adamw_step(model.store, lr=lr, weight_decay=weight_decay)
        losses[step] = float(loss.data)
    return losses


def q_sample_f32(x0, t, noise, sched) -> np.ndarray:
    return diffusion.q_sample(np.asarray(x0, np.float32), t, noise, sched).astype(np.float32)
