"""Holistic order head: from mask embeddings and per-pixel features to full
occlusion/depth order matrices in one forward pass.

Pipeline per image: select confident (or matched) query tokens, mask the
per-pixel embedding per instance, build one global descriptor per instance
with masked self-attention + max-pooling, run an interaction decoder over
the concatenated descriptor/query tokens, and read every pairwise relation
off a compatibility product followed by small task MLPs.

The descriptor encoder gathers only in-mask tokens per instance (padded
across instances). This is exactly equivalent to running all positions
with a -inf additive key mask, because masked-out positions receive zero
attention weight and the pooling reads masked-in positions only; the test
suite asserts the equivalence against the literal full-grid computation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .autograd import NEG_INF, Tensor
from .layers import ConfigError, Mlp, Module, TransformerLayer
from .matching import Assignment

TASKS = ("occlusion", "depth")
MODALITIES = ("queries_descriptors", "queries_queries", "descriptors_descriptors")


class NothingToOrder(Exception):
    """Fewer than two instances survived selection; relations are undefined."""

    def __init__(self, count: int):
        super().__init__(f"only {count} instance(s) selected; need at least 2")
        self.count = count


@dataclass
class HeadConfig:
    channels: int = 64
    heads: int = 4
    d_ffn: int = 256
    encoder_layers: int = 1
    decoder_layers: int = 3
    input_modality: str = "queries_descriptors"
    aux_loss: bool = True
    tasks: tuple = ("occlusion", "depth")
    task_mlp_hidden: int = 64
    conf_threshold: float = 0.8

    @staticmethod
    def paper_scale() -> "HeadConfig":
        return HeadConfig(channels=512, heads=8, d_ffn=2048, encoder_layers=1, decoder_layers=8)

    def validate(self) -> None:
        if self.encoder_layers < 0:
            raise ConfigError("encoder_layers must be >= 0")
        if self.decoder_layers < 1:
            raise ConfigError("decoder_layers must be >= 1")
        if self.input_modality not in MODALITIES:
            raise ConfigError(f"input_modality must be one of {MODALITIES}")
        if not self.tasks or any(t not in TASKS for t in self.tasks):
            raise ConfigError(f"tasks must be a nonempty subset of {TASKS}")
        if self.channels % self.heads:
            raise ConfigError("channels must be divisible by heads")


@dataclass
class HeadOutput:
    occ_logits: Tensor | None
    depth_logits: Tensor | None
    selected_ids: np.ndarray
    aux: list = field(default_factory=list)

    def occlusion_matrix(self):
        from .orders import OcclusionMatrix

        n = len(self.selected_ids)
        mat = OcclusionMatrix.empty(n)
        if self.occ_logits is None:
            raise ConfigError("occlusion head was not initialized")
        pred = (_sigmoid_np(self.occ_logits.data) > 0.5).astype(np.int64)
        off = ~np.eye(n, dtype=bool)
        mat.entries[off] = pred[off]
        return mat

    def depth_matrix(self, coherence: bool = False):
        """Depth predictions; raw per-entry argmax by default.

        Raw decode can emit incoherent pairs (mutual fronts, one-sided
        overlaps); ``coherence=True`` instead scores each unordered pair
        jointly over {i front, j front, overlap} by summed logits, which
        always yields a valid matrix.
        """
        from .orders import DepthMatrix

        n = len(self.selected_ids)
        mat = DepthMatrix.empty(n)
        if self.depth_logits is None:
            raise ConfigError("depth head was not initialized")
        logits = self.depth_logits.data
        if coherence:
            for i in range(n):
                for j in range(i + 1, n):
                    scores = (
                        logits[i, j, 1] + logits[j, i, 0],  # i in front
                        logits[i, j, 0] + logits[j, i, 1],  # j in front
                        logits[i, j, 2] + logits[j, i, 2],  # overlapping ranges
                    )
                    k = int(np.argmax(scores))
                    if k == 0:
                        mat.entries[i, j], mat.entries[j, i] = 1, 0
                    elif k == 1:
                        mat.entries[i, j], mat.entries[j, i] = 0, 1
                    else:
                        mat.entries[i, j] = mat.entries[j, i] = 2
        else:
            pred = np.argmax(logits, axis=-1)
            off = ~np.eye(n, dtype=bool)
            mat.entries[off] = pred[off]
        return mat


def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    return np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))


# ---- selection ----------------------------------------------------------------


def select_tokens(Q: Tensor, masks: np.ndarray, confidences, assignment: Assignment | None = None, threshold: float | None = None):
    """Pick the query rows (and their masks) that correspond to instances.

    Training mode passes an Assignment and yields rows in ground-truth
    order; inference mode keeps rows whose confidence is strictly above
    the threshold. Returns (Q_n, masks_n, ids).
    """
    if assignment is not None:
        by_gt = sorted(assignment.pairs, key=lambda rc: rc[1])
        ids = np.array([pred for pred, _ in by_gt], dtype=np.int64)
    else:
        if threshold is None:
            raise ConfigError("inference selection needs a confidence threshold")
        conf = np.asarray(confidences, dtype=np.float64)
        ids = np.nonzero(conf > threshold)[0]
    if len(ids) < 2:
        raise NothingToOrder(len(ids))
    return ag.take_rows(Q, ids), masks[ids], ids


def mask_pixel_embedding(P: Tensor, masks_n: np.ndarray):
    """Per-instance copies of P with channels zeroed outside each mask.

    Returns (P_masked [n,C,h,w], empty_flags [n]).
    """
    n = masks_n.shape[0]
    c, h, w = P.shape
    if masks_n.shape[1:] != (h, w):
        raise ConfigError(f"mask resolution {masks_n.shape[1:]} does not match P {P.shape[1:]}")
    broadcast = masks_n.reshape(n, 1, h, w).astype(np.float64)
    p_masked = P.reshape(1, c, h, w) * broadcast
    empty = masks_n.reshape(n, -1).sum(axis=1) == 0
    return p_masked, empty


# ---- descriptor encoder ---------------------------------------------------------


def _gather_instance_tokens(p: Tensor, masks_n: np.ndarray):
    """In-mask spatial positions as padded token batches.

    ``p`` is either the shared per-pixel embedding (C,h,w) or the
    per-instance masked copies (n,C,h,w); in-mask values are identical in
    both, so gathering from the shared P avoids materializing the copies.
    Returns (tokens [n, t_max, C], valid [n, t_max] bool).
    """
    per_instance = p.ndim == 4
    n = masks_n.shape[0]
    c = p.shape[1] if per_instance else p.shape[0]
    h, w = p.shape[-2:]
    hw = h * w
    flat_masks = masks_n.reshape(n, hw).astype(bool)
    counts = flat_masks.sum(axis=1)
    t_max = max(1, int(counts.max()))
    idx = np.zeros((n, t_max), dtype=np.int64)
    valid = np.zeros((n, t_max), dtype=bool)
    for i in range(n):
        pos = np.nonzero(flat_masks[i])[0]
        idx[i, : pos.size] = pos
        valid[i, : pos.size] = True
    chan = (np.arange(c) * hw)[None, None, :]
    flat_idx = chan + idx[:, :, None]
    if per_instance:
        flat_idx = flat_idx + (np.arange(n) * c * hw)[:, None, None]
    tokens = ag.gather_flat(p, flat_idx, (n, t_max, c))
    return tokens, valid


def _encode_batch(p: Tensor, masks_n: np.ndarray, layers: list[TransformerLayer]) -> Tensor:
    tokens, valid = _gather_instance_tokens(p, masks_n)
    if layers:
        key_mask = np.where(valid, 0.0, NEG_INF)[:, None, None, :]  # over (n, heads, t_q, t_kv)
        for layer in layers:
            tokens = layer(tokens, addmask=key_mask)
    pool_mask = np.where(valid, 0.0, NEG_INF)[:, :, None]
    pooled = ag.max_(tokens + pool_mask, axis=1)
    nonempty = (valid.any(axis=1)).astype(np.float64)[:, None]
    return pooled * nonempty


def descriptor_encoder(p: Tensor, masks_n: np.ndarray, layers: list[TransformerLayer]) -> Tensor:
    """Masked self-attention (0+ layers) then max-pool over in-mask positions.

    Accepts the shared P (C,h,w) or per-instance masked copies (n,C,h,w);
    instances with empty masks get an all-zero descriptor and skip attention.
    Instances are independent here, so they are bucketed by mask size to
    limit padding waste; results are identical to one padded batch.
    """
    if p.ndim == 4 or masks_n.shape[0] <= 2:
        return _encode_batch(p, masks_n, layers)
    counts = masks_n.reshape(masks_n.shape[0], -1).sum(axis=1)
    t_max = counts.max()
    small = np.nonzero(counts <= t_max / 2)[0]
    if small.size == 0 or small.size == counts.size:
        return _encode_batch(p, masks_n, layers)
    large = np.nonzero(counts > t_max / 2)[0]
    pooled_small = _encode_batch(p, masks_n[small], layers)
    pooled_large = _encode_batch(p, masks_n[large], layers)
    stacked = ag.concat([pooled_small, pooled_large], axis=0)
    order = np.argsort(np.concatenate([small, large]))
    return ag.take_rows(stacked, order)


# ---- interaction decoder ---------------------------------------------------------


class OrderHead(Module):
    def __init__(self, rng: np.random.Generator, config: HeadConfig):
        config.validate()
        self.config = config
        c = config.channels
        self.encoder = [
            TransformerLayer(rng, c, config.heads, config.d_ffn) for _ in range(config.encoder_layers)
        ]
        self.decoder = [
            TransformerLayer(rng, c, config.heads, config.d_ffn) for _ in range(config.decoder_layers)
        ]
        self.mlp_queries = Mlp(rng, c, c, c)
        self.mlp_descriptors = Mlp(rng, c, c, c)
        self.occ_mlp = Mlp(rng, 1, config.task_mlp_hidden, 1) if "occlusion" in config.tasks else None
        self.depth_mlp = Mlp(rng, 1, config.task_mlp_hidden, 3) if "depth" in config.tasks else None
        self.forward_count = 0

    # -- stages --

    def interaction_decoder(self, q_n: Tensor, descriptors: Tensor):
        """L decoder layers over the 2n concatenated tokens.

        Returns [(Q*_l, D*_l) per layer], last entry = final output.
        """
        modality = self.config.input_modality
        if modality == "queries_descriptors":
            first, second = descriptors, q_n
        elif modality == "queries_queries":
            first, second = q_n, q_n
        else:
            first, second = descriptors, descriptors
        tokens = ag.concat([first, second], axis=0)
        n = q_n.shape[0]
        outputs = []
        for layer in self.decoder:
            tokens = layer(tokens)
            d_l, q_l = tokens[:n], tokens[n:]
            outputs.append((self.mlp_queries(q_l), self.mlp_descriptors(d_l)))
        return outputs

    @staticmethod
    def compatibility(q_star: Tensor, d_star: Tensor) -> Tensor:
        return ag.matmul(q_star, ag.swapaxes(d_star, 0, 1))

    def order_heads(self, compat: Tensor, ids: np.ndarray) -> HeadOutput:
        n = compat.shape[0]
        feats = compat.reshape(n, n, 1)
        occ = depth = None
        if "occlusion" in self.config.tasks:
            if self.occ_mlp is None:
                raise ConfigError("occlusion head requested but not initialized")
            occ = self.occ_mlp(feats).reshape(n, n)
        if "depth" in self.config.tasks:
            if self.depth_mlp is None:
                raise ConfigError("depth head requested but not initialized")
            depth = self.depth_mlp(feats)
        return HeadOutput(occ, depth, ids)

    def run(self, q_n: Tensor, masks_n: np.ndarray, p: Tensor, ids: np.ndarray) -> HeadOutput:
        """One holistic pass over already-selected tokens.

        The descriptor encoder reads P through the instance masks directly;
        in-mask tokens equal those of mask_pixel_embedding's per-instance
        copies, without materializing n copies of P.
        """
        self.forward_count += 1
        descriptors = descriptor_encoder(p, masks_n, self.encoder)
        per_layer = self.interaction_decoder(q_n, descriptors)
        main = self.order_heads(self.compatibility(*per_layer[-1]), ids)
        if self.config.aux_loss and len(per_layer) > 1:
            main.aux = [self.order_heads(self.compatibility(q_l, d_l), ids) for q_l, d_l in per_layer[:-1]]
        return main

    def forward(self, backbone_out, masks: np.ndarray, assignment: Assignment | None = None) -> HeadOutput:
        """Select tokens (assignment in training, confidence at inference) and run."""
        q_n, masks_n, ids = select_tokens(
            backbone_out.Q,
            masks,
            backbone_out.confidences,
            assignment=assignment,
            threshold=None if assignment is not None else self.config.conf_threshold,
        )
        return self.run(q_n, masks_n, backbone_out.P, ids)
