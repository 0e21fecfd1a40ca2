"""The eight model wirings that combine face and pose feature streams.

Six fused topologies plus the two single-modality ablations:

* ``one_stream``      per-stream projections concatenated per frame, one
                      transformer layer, mean-pool, linear head.
* ``one_to_one``      one_stream body with a second transformer layer stacked
                      on the first layer's output sequence.
* ``one_to_two``      fused first layer, split back into face/pose channels,
                      one transformer layer per channel, pooled features
                      joined by a small feed-forward head.
* ``two_to_one``      independent per-stream transformer layers, outputs
                      concatenated per frame, one fusing transformer layer.
* ``cross_attention`` two parallel streams where each layer's queries come
                      from the other stream's embedded sequence.
* ``cross_to_one``    cross_attention streams concatenated per frame and fed
                      through an additional fusing transformer layer.
* ``face_only`` / ``pose_only``   single-modality single-layer baselines.

Multi-layer topologies expose intermediate predictions (one small pooled
linear head per supervised layer) alongside the final prediction so the
training loss can supervise every layer.  Detection heads end in a sigmoid;
agreement (regression) heads are linear.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterator, Optional

import numpy as np

from . import tensor as T
from .config import ConfigError, ModelConfig
from .layers import (Linear, TransformerLayer, add_positional_encoding, mean_pool)
from .tensor import ShapeError, Tensor

CHECKPOINT_FORMAT = "bcfusion-checkpoint"
CHECKPOINT_VERSION = 1


class FusionTopology(str, Enum):
    ONE_STREAM = "one_stream"
    ONE_TO_ONE = "one_to_one"
    ONE_TO_TWO = "one_to_two"
    TWO_TO_ONE = "two_to_one"
    CROSS_ATTENTION = "cross_attention"
    CROSS_TO_ONE = "cross_to_one"
    FACE_ONLY = "face_only"
    POSE_ONLY = "pose_only"


ALL_TOPOLOGIES = tuple(FusionTopology)


@dataclass
class ForwardOutput:
    """Final prediction plus per-supervised-layer intermediate predictions.

    Each entry is (layer tag, size-1 tensor); for detection every prediction
    is a probability in (0, 1).
    """

    final: Tensor
    intermediates: list[tuple[str, Tensor]]


def split_streams(x: Tensor, d_a: int) -> tuple[Tensor, Tensor]:
    """Split (T, d_a + d_b) at feature index d_a; exact inverse of concat."""
    if x.data.ndim != 2:
        raise ShapeError(f"split_streams expects a 2-D tensor, got {x.shape}")
    width = x.shape[1]
    if not 0 < d_a < width:
        raise ShapeError(f"split index {d_a} out of range for width {width}")
    return T.slice_cols(x, 0, d_a), T.slice_cols(x, d_a, width)


class PredictionHead:
    """Linear map from a pooled feature vector to one output; squashed for detection."""

    def __init__(self, d_in: int, rng: np.random.Generator, sigmoid_output: bool):
        self.fc = Linear(d_in, 1, rng)
        self.sigmoid_output = sigmoid_output

    def __call__(self, features: Tensor) -> Tensor:
        out = self.fc(features)
        return T.sigmoid(out) if self.sigmoid_output else out

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        yield from self.fc.named_parameters(prefix)


class FeedForwardHead:
    """Two-layer perceptron head used where a single linear map is not enough."""

    def __init__(self, d_in: int, hidden: int, rng: np.random.Generator, sigmoid_output: bool):
        self.fc1 = Linear(d_in, hidden, rng)
        self.fc2 = Linear(hidden, 1, rng)
        self.sigmoid_output = sigmoid_output

    def __call__(self, features: Tensor) -> Tensor:
        out = self.fc2(T.relu(self.fc1(features)))
        return T.sigmoid(out) if self.sigmoid_output else out

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        yield from self.fc1.named_parameters(f"{prefix}fc1.")
        yield from self.fc2.named_parameters(f"{prefix}fc2.")


class FusionModel:
    """A built topology: input projections, transformer layers, prediction heads.

    Instances are constructed through :func:`build_model`.  A model is
    single-writer during training; concurrent read-only inference is safe.
    """

    def __init__(self, topology: FusionTopology, task: str, config: ModelConfig,
                 rng: np.random.Generator):
        config.validate()
        if task not in ("detection", "agreement"):
            raise ConfigError(f"task must be 'detection' or 'agreement', got {task!r}")
        self.topology = topology
        self.task = task
        self.config = config
        sig = task == "detection"
        c = config

        def layer(d_model: int, n_heads: int) -> TransformerLayer:
            return TransformerLayer(d_model, n_heads, rng, d_ff=c.ffn_mult * d_model,
                                    dropout_rate=c.dropout, pre_norm=c.pre_norm)

        self._components: dict[str, object] = {}
        comp = self._components
        if topology in (FusionTopology.ONE_STREAM, FusionTopology.ONE_TO_ONE,
                        FusionTopology.ONE_TO_TWO):
            comp["face_proj"] = Linear(c.face_dim, c.d_fused_face, rng)
            comp["pose_proj"] = Linear(c.pose_dim, c.d_fused_pose, rng)
            comp["tf1"] = layer(c.d_fused, c.fused_heads)
            if topology is FusionTopology.ONE_STREAM:
                comp["final"] = PredictionHead(c.d_fused, rng, sig)
            elif topology is FusionTopology.ONE_TO_ONE:
                comp["tf2"] = layer(c.d_fused, c.fused_heads)
                comp["head_tf1"] = PredictionHead(c.d_fused, rng, sig)
                comp["head_tf2"] = PredictionHead(c.d_fused, rng, sig)
                comp["final"] = PredictionHead(c.d_fused, rng, sig)
            else:
                comp["tf2"] = layer(c.d_fused_face, c.face_heads)
                comp["tf3"] = layer(c.d_fused_pose, c.pose_heads)
                comp["head_tf1"] = PredictionHead(c.d_fused, rng, sig)
                comp["head_tf2"] = PredictionHead(c.d_fused_face, rng, sig)
                comp["head_tf3"] = PredictionHead(c.d_fused_pose, rng, sig)
                comp["final"] = FeedForwardHead(c.d_fused, c.ff_hidden, rng, sig)
        elif topology is FusionTopology.TWO_TO_ONE:
            comp["face_proj"] = Linear(c.face_dim, c.d_face, rng)
            comp["pose_proj"] = Linear(c.pose_dim, c.d_pose, rng)
            comp["tf1"] = layer(c.d_face, c.face_heads)
            comp["tf2"] = layer(c.d_pose, c.pose_heads)
            comp["tf3"] = layer(c.d_face + c.d_pose, c.late_heads)
            comp["head_tf1"] = PredictionHead(c.d_face, rng, sig)
            comp["head_tf2"] = PredictionHead(c.d_pose, rng, sig)
            comp["head_tf3"] = PredictionHead(c.d_face + c.d_pose, rng, sig)
            comp["final"] = PredictionHead(c.d_face + c.d_pose, rng, sig)
        elif topology in (FusionTopology.CROSS_ATTENTION, FusionTopology.CROSS_TO_ONE):
            comp["face_proj"] = Linear(c.face_dim, c.d_cross, rng)
            comp["pose_proj"] = Linear(c.pose_dim, c.d_cross, rng)
            comp["tf1x"] = layer(c.d_cross, c.face_heads)
            comp["tf2x"] = layer(c.d_cross, c.pose_heads)
            if topology is FusionTopology.CROSS_ATTENTION:
                comp["final"] = PredictionHead(2 * c.d_cross, rng, sig)
            else:
                comp["tf3"] = layer(2 * c.d_cross, c.late_heads)
                comp["head_tf1x"] = PredictionHead(c.d_cross, rng, sig)
                comp["head_tf2x"] = PredictionHead(c.d_cross, rng, sig)
                comp["head_tf3"] = PredictionHead(2 * c.d_cross, rng, sig)
                comp["final"] = PredictionHead(2 * c.d_cross, rng, sig)
        elif topology is FusionTopology.FACE_ONLY:
            comp["face_proj"] = Linear(c.face_dim, c.d_face, rng)
            comp["tf1"] = layer(c.d_face, c.face_heads)
            comp["final"] = PredictionHead(c.d_face, rng, sig)
        elif topology is FusionTopology.POSE_ONLY:
            comp["pose_proj"] = Linear(c.pose_dim, c.d_pose, rng)
            comp["tf1"] = layer(c.d_pose, c.pose_heads)
            comp["final"] = PredictionHead(c.d_pose, rng, sig)
        else:  # pragma: no cover
            raise ConfigError(f"unknown topology {topology}")

    # -- forward ------------------------------------------------------------

    def _check_inputs(self, face_seq: Tensor, pose_seq: Tensor) -> None:
        c = self.config
        need_face = self.topology is not FusionTopology.POSE_ONLY
        need_pose = self.topology is not FusionTopology.FACE_ONLY
        if face_seq.data.ndim != 2 or pose_seq.data.ndim != 2:
            raise ShapeError("inputs must be (T, features) sequences")
        if face_seq.shape[0] != pose_seq.shape[0]:
            raise ShapeError(
                f"modalities are not frame-aligned: face T={face_seq.shape[0]}, "
                f"pose T={pose_seq.shape[0]}")
        if face_seq.shape[0] < 1:
            raise ValueError("empty sequence: at least one time step required")
        if need_face and face_seq.shape[1] != c.face_dim:
            raise ShapeError(f"face width {face_seq.shape[1]} != configured {c.face_dim}")
        if need_pose and pose_seq.shape[1] != c.pose_dim:
            raise ShapeError(f"pose width {pose_seq.shape[1]} != configured {c.pose_dim}")

    def _pe(self, x: Tensor) -> Tensor:
        return add_positional_encoding(x) if self.config.use_positional_encoding else x

    def forward(self, face_seq: Tensor, pose_seq: Tensor, training: bool = False,
                rng: Optional[np.random.Generator] = None) -> ForwardOutput:
        """Run the topology's wiring; positional encoding enters first-layer inputs only."""
        face_seq, pose_seq = T.as_tensor(face_seq), T.as_tensor(pose_seq)
        self._check_inputs(face_seq, pose_seq)
        comp = self._components
        topo = self.topology
        kw = {"training": training, "rng": rng}
        intermediates: list[tuple[str, Tensor]] = []

        if topo in (FusionTopology.ONE_STREAM, FusionTopology.ONE_TO_ONE,
                    FusionTopology.ONE_TO_TWO):
            fused = T.concat([comp["face_proj"](face_seq), comp["pose_proj"](pose_seq)], axis=1)
            seq1 = comp["tf1"].forward(self._pe(fused), **kw)
            if topo is FusionTopology.ONE_STREAM:
                final = comp["final"](mean_pool(seq1))
            elif topo is FusionTopology.ONE_TO_ONE:
                seq2 = comp["tf2"].forward(seq1, **kw)
                intermediates = [("tf1", comp["head_tf1"](mean_pool(seq1))),
                                 ("tf2", comp["head_tf2"](mean_pool(seq2)))]
                final = comp["final"](mean_pool(seq2))
            else:
                face_ch, pose_ch = split_streams(seq1, self.config.d_fused_face)
                seq2 = comp["tf2"].forward(face_ch, **kw)
                seq3 = comp["tf3"].forward(pose_ch, **kw)
                intermediates = [("tf1", comp["head_tf1"](mean_pool(seq1))),
                                 ("tf2", comp["head_tf2"](mean_pool(seq2))),
                                 ("tf3", comp["head_tf3"](mean_pool(seq3)))]
                final = comp["final"](_concat_vectors(mean_pool(seq2), mean_pool(seq3)))
        elif topo is FusionTopology.TWO_TO_ONE:
            seq1 = comp["tf1"].forward(self._pe(comp["face_proj"](face_seq)), **kw)
            seq2 = comp["tf2"].forward(self._pe(comp["pose_proj"](pose_seq)), **kw)
            seq3 = comp["tf3"].forward(T.concat([seq1, seq2], axis=1), **kw)
            intermediates = [("tf1", comp["head_tf1"](mean_pool(seq1))),
                             ("tf2", comp["head_tf2"](mean_pool(seq2))),
                             ("tf3", comp["head_tf3"](mean_pool(seq3)))]
            final = comp["final"](mean_pool(seq3))
        elif topo in (FusionTopology.CROSS_ATTENTION, FusionTopology.CROSS_TO_ONE):
            face_emb = self._pe(comp["face_proj"](face_seq))
            pose_emb = self._pe(comp["pose_proj"](pose_seq))
            seq1 = comp["tf1x"].forward(face_emb, x_q=pose_emb, **kw)
            seq2 = comp["tf2x"].forward(pose_emb, x_q=face_emb, **kw)
            if topo is FusionTopology.CROSS_ATTENTION:
                final = comp["final"](_concat_vectors(mean_pool(seq1), mean_pool(seq2)))
            else:
                seq3 = comp["tf3"].forward(T.concat([seq1, seq2], axis=1), **kw)
                intermediates = [("tf1x", comp["head_tf1x"](mean_pool(seq1))),
                                 ("tf2x", comp["head_tf2x"](mean_pool(seq2))),
                                 ("tf3", comp["head_tf3"](mean_pool(seq3)))]
                final = comp["final"](mean_pool(seq3))
        elif topo is FusionTopology.FACE_ONLY:
            seq1 = comp["tf1"].forward(self._pe(comp["face_proj"](face_seq)), **kw)
            final = comp["final"](mean_pool(seq1))
        else:
            seq1 = comp["tf1"].forward(self._pe(comp["pose_proj"](pose_seq)), **kw)
            final = comp["final"](mean_pool(seq1))
        return ForwardOutput(final=final, intermediates=intermediates)

    __call__ = forward

    # -- parameters -----------------------------------------------------------

    def named_parameters(self) -> Iterator[tuple[str, Tensor]]:
        for name, component in self._components.items():
            yield from component.named_parameters(f"{name}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]


def _concat_vectors(a: Tensor, b: Tensor) -> Tensor:
    """Join two pooled (d,) feature vectors into one (d_a + d_b,) vector."""
    return T.concat([a, b], axis=0)


def build_model(topology: FusionTopology | str, task: str, config: ModelConfig,
                rng_seed: int = 0) -> FusionModel:
    """Construct a topology with seeded, deterministic weight initialization."""
    topology = FusionTopology(topology)
    rng = np.random.default_rng(rng_seed)
    return FusionModel(topology, task, config, rng)


def parameter_count(model: FusionModel) -> int:
    """Total scalar parameter count across all registered tensors."""
    return sum(p.size for _, p in model.named_parameters())


def parameter_breakdown(model: FusionModel) -> dict[str, int]:
    """Scalar parameter count per top-level sub-component."""
    out: dict[str, int] = {}
    for name, p in model.named_parameters():
        top = name.split(".", 1)[0]
        out[top] = out.get(top, 0) + p.size
    return out


# -- checkpoints --------------------------------------------------------------

def save_checkpoint(model: FusionModel, path: str | Path,
                    extra_meta: Optional[dict] = None) -> None:
    """Write a versioned npz container with topology, config, and all parameters."""
    from dataclasses import asdict
    meta = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "topology": model.topology.value,
        "task": model.task,
        "model_config": asdict(model.config),
    }
    if extra_meta:
        meta.update(extra_meta)
    arrays = {f"param:{name}": p.data for name, p in model.named_parameters()}
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with io.BytesIO() as buf:
        np.savez(buf, __meta__=np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8),
                 **arrays)
        path.write_bytes(buf.getvalue())


def load_checkpoint(path: str | Path) -> tuple[FusionModel, dict]:
    """Rebuild a model from a checkpoint; forward outputs reproduce bitwise."""
    path = Path(path)
    with np.load(path) as z:
        if "__meta__" not in z:
            raise ValueError(f"{path}: not a {CHECKPOINT_FORMAT} file")
        meta = json.loads(bytes(z["__meta__"]).decode("utf-8"))
        if meta.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"{path}: unexpected format {meta.get('format')!r}")
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported version {meta.get('version')!r}")
        arrays = {k[len("param:"):]: z[k] for k in z.files if k.startswith("param:")}
    config = ModelConfig(**meta["model_config"])
    model = build_model(meta["topology"], meta["task"], config, rng_seed=0)
    names = dict(model.named_parameters())
    if set(names) != set(arrays):
        missing = set(names) ^ set(arrays)
        raise ValueError(f"{path}: parameter set mismatch: {sorted(missing)[:5]}")
    for name, p in names.items():
        stored = arrays[name]
        if stored.shape != p.data.shape:
            raise ValueError(f"{path}: shape mismatch for {name}")
        p.data = stored
    return model, meta
