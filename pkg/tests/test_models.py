"""Topology wiring, determinism, parameter accounting, and checkpoint round-trips."""

import numpy as np
import pytest

from bcfusion.config import ConfigError, ModelConfig, toy_model_config
from bcfusion.models import (ALL_TOPOLOGIES, FusionTopology, build_model, load_checkpoint,
                             parameter_breakdown, parameter_count, save_checkpoint,
                             split_streams)
from bcfusion.tensor import ShapeError, Tensor

TOY = toy_model_config()

N_INTERMEDIATES = {
    FusionTopology.ONE_STREAM: 0,
    FusionTopology.ONE_TO_ONE: 2,
    FusionTopology.ONE_TO_TWO: 3,
    FusionTopology.TWO_TO_ONE: 3,
    FusionTopology.CROSS_ATTENTION: 0,
    FusionTopology.CROSS_TO_ONE: 3,
    FusionTopology.FACE_ONLY: 0,
    FusionTopology.POSE_ONLY: 0,
}


def toy_inputs(seed=0, t=8):
    rng = np.random.default_rng(seed)
    return (Tensor(rng.normal(size=(t, TOY.face_dim))),
            Tensor(rng.normal(size=(t, TOY.pose_dim))))


class TestBuildModel:
    def test_seeded_build_is_deterministic(self):
        a = build_model("one_stream", "detection", TOY, rng_seed=0)
        b = build_model("one_stream", "detection", TOY, rng_seed=0)
        for (name_a, pa), (name_b, pb) in zip(a.named_parameters(), b.named_parameters()):
            assert name_a == name_b
            np.testing.assert_array_equal(pa.data, pb.data)

    def test_different_seeds_differ(self):
        a = build_model("one_stream", "detection", TOY, rng_seed=0)
        b = build_model("one_stream", "detection", TOY, rng_seed=1)
        assert any(not np.array_equal(pa.data, pb.data)
                   for (_, pa), (_, pb) in zip(a.named_parameters(), b.named_parameters()))

    def test_stacked_topology_has_strictly_more_parameters(self):
        one = parameter_count(build_model("one_stream", "detection", TOY, 0))
        two = parameter_count(build_model("one_to_one", "detection", TOY, 0))
        assert two > one

    def test_cross_streams_share_common_width(self):
        model = build_model("cross_attention", "detection", TOY, 0)
        comp = model._components
        assert comp["face_proj"].d_out == comp["pose_proj"].d_out == TOY.d_cross
        assert comp["tf1x"].d_model == comp["tf2x"].d_model == TOY.d_cross

    def test_head_divisibility_is_enforced(self):
        bad = toy_model_config()
        bad.d_face = 9  # not a multiple of the 4 face heads
        with pytest.raises(ConfigError):
            build_model("face_only", "detection", bad, 0)

    def test_default_config_is_valid(self):
        ModelConfig().validate()

    def test_unknown_task_rejected(self):
        with pytest.raises(ConfigError):
            build_model("one_stream", "ranking", TOY, 0)


class TestForward:
    @pytest.mark.parametrize("topology", ALL_TOPOLOGIES)
    def test_detection_output_in_unit_interval(self, topology):
        model = build_model(topology, "detection", TOY, rng_seed=0)
        face, pose = toy_inputs()
        out = model.forward(face, pose)
        assert 0.0 < out.final.data.item() < 1.0
        for _, p in out.intermediates:
            assert 0.0 < p.data.item() < 1.0

    @pytest.mark.parametrize("topology", ALL_TOPOLOGIES)
    def test_intermediate_count_matches_supervision_table(self, topology):
        model = build_model(topology, "detection", TOY, rng_seed=0)
        out = model.forward(*toy_inputs())
        assert len(out.intermediates) == N_INTERMEDIATES[topology]

    @pytest.mark.parametrize("topology", ALL_TOPOLOGIES)
    def test_forward_is_bitwise_deterministic(self, topology):
        model = build_model(topology, "detection", TOY, rng_seed=0)
        face, pose = toy_inputs()
        a = model.forward(face, pose, training=False)
        b = model.forward(face, pose, training=False)
        assert a.final.data.item() == b.final.data.item()
        for (tag_a, pa), (tag_b, pb) in zip(a.intermediates, b.intermediates):
            assert tag_a == tag_b and pa.data.item() == pb.data.item()

    @pytest.mark.parametrize("topology", ALL_TOPOLOGIES)
    def test_outputs_finite(self, topology):
        model = build_model(topology, "agreement", TOY, rng_seed=1)
        out = model.forward(*toy_inputs(seed=3))
        assert np.isfinite(out.final.data.item())

    def test_default_dims_full_window_forward(self):
        # the flagship configuration: 3 s at 30 fps -> 89 steps of 675/77-wide input
        cfg = ModelConfig()
        rng = np.random.default_rng(2)
        face = Tensor(rng.normal(size=(89, cfg.face_dim)))
        pose = Tensor(rng.normal(size=(89, cfg.pose_dim)))
        model = build_model("one_stream", "detection", cfg, rng_seed=0)
        rebuilt = build_model("one_stream", "detection", cfg, rng_seed=0)
        for (_, pa), (_, pb) in zip(model.named_parameters(), rebuilt.named_parameters()):
            np.testing.assert_array_equal(pa.data, pb.data)
        out = model.forward(face, pose)
        assert 0.0 < out.final.data.item() < 1.0

    def test_misaligned_modalities_rejected(self):
        model = build_model("one_stream", "detection", TOY, 0)
        rng = np.random.default_rng(0)
        with pytest.raises(ShapeError, match="frame-aligned"):
            model.forward(Tensor(rng.normal(size=(8, TOY.face_dim))),
                          Tensor(rng.normal(size=(7, TOY.pose_dim))))

    def test_empty_sequence_rejected(self):
        model = build_model("one_stream", "detection", TOY, 0)
        with pytest.raises(ValueError, match="empty"):
            model.forward(Tensor(np.zeros((0, TOY.face_dim))),
                          Tensor(np.zeros((0, TOY.pose_dim))))

    def test_wrong_width_rejected(self):
        model = build_model("one_stream", "detection", TOY, 0)
        with pytest.raises(ShapeError):
            model.forward(Tensor(np.zeros((4, TOY.face_dim + 1))),
                          Tensor(np.zeros((4, TOY.pose_dim))))

    def test_cross_attention_sensitive_to_pose_with_face_fixed(self):
        model = build_model("cross_attention", "detection", TOY, rng_seed=0)
        face, pose = toy_inputs(seed=4)
        base = model.forward(face, pose).final.data.item()
        perturbed_pose = Tensor(pose.data + 0.5)
        moved = model.forward(face, perturbed_pose).final.data.item()
        assert abs(moved - base) > 0.0

    @pytest.mark.parametrize("topology", ALL_TOPOLOGIES)
    def test_pooled_prediction_invariant_under_joint_time_permutation(self, topology):
        cfg = toy_model_config(use_positional_encoding=False, dropout=0.0)
        model = build_model(topology, "detection", cfg, rng_seed=0)
        rng = np.random.default_rng(5)
        face = rng.normal(size=(8, cfg.face_dim))
        pose = rng.normal(size=(8, cfg.pose_dim))
        perm = rng.permutation(8)
        a = model.forward(Tensor(face), Tensor(pose)).final.data.item()
        b = model.forward(Tensor(face[perm]), Tensor(pose[perm])).final.data.item()
        assert abs(a - b) < 1e-9

    def test_positional_encoding_breaks_permutation_invariance(self):
        model = build_model("one_stream", "detection", TOY, rng_seed=0)
        rng = np.random.default_rng(6)
        face = rng.normal(size=(8, TOY.face_dim))
        pose = rng.normal(size=(8, TOY.pose_dim))
        perm = np.roll(np.arange(8), 3)
        a = model.forward(Tensor(face), Tensor(pose)).final.data.item()
        b = model.forward(Tensor(face[perm]), Tensor(pose[perm])).final.data.item()
        assert abs(a - b) > 1e-12


class TestSplitStreams:
    def test_inverse_of_concat(self):
        rng = np.random.default_rng(7)
        a, b = rng.normal(size=(5, 2)), rng.normal(size=(5, 3))
        left, right = split_streams(Tensor(np.hstack([a, b])), 2)
        np.testing.assert_array_equal(left.data, a)
        np.testing.assert_array_equal(right.data, b)

    def test_shape_contract(self):
        left, right = split_streams(Tensor(np.zeros((1, 5))), 2)
        assert left.shape == (1, 2) and right.shape == (1, 3)

    def test_round_trip_many_seeds(self):
        for seed in range(100):
            rng = np.random.default_rng(seed)
            w = int(rng.integers(2, 12))
            cut = int(rng.integers(1, w))
            x = rng.normal(size=(int(rng.integers(1, 6)), w))
            left, right = split_streams(Tensor(x), cut)
            np.testing.assert_array_equal(np.hstack([left.data, right.data]), x)

    def test_out_of_range_rejected(self):
        with pytest.raises(ShapeError):
            split_streams(Tensor(np.zeros((2, 4))), 4)
        with pytest.raises(ShapeError):
            split_streams(Tensor(np.zeros((2, 4))), 0)


class TestParameterCount:
    def test_linear_layer_count(self):
        from bcfusion.layers import Linear
        lin = Linear(2, 3, np.random.default_rng(0))
        assert sum(p.size for _, p in lin.named_parameters()) == 9

    @pytest.mark.parametrize("topology", ALL_TOPOLOGIES)
    def test_matches_registry_enumeration(self, topology):
        model = build_model(topology, "detection", TOY, 0)
        brute = 0
        for _, p in model.named_parameters():
            n = 1
            for dim in p.data.shape:
                n *= dim
            brute += n
        assert parameter_count(model) == brute

    def test_breakdown_sums_to_total(self):
        model = build_model("two_to_one", "detection", TOY, 0)
        breakdown = parameter_breakdown(model)
        assert sum(breakdown.values()) == parameter_count(model)
        assert "tf3" in breakdown


class TestCheckpoint:
    @pytest.mark.parametrize("topology", ["one_stream", "one_to_two", "cross_to_one"])
    def test_round_trip_reproduces_forward_bitwise(self, tmp_path, topology):
        model = build_model(topology, "detection", TOY, rng_seed=3)
        face, pose = toy_inputs(seed=8)
        before = model.forward(face, pose)
        path = tmp_path / "model.npz"
        save_checkpoint(model, path, extra_meta={"window_seconds": 3.0})
        loaded, meta = load_checkpoint(path)
        after = loaded.forward(face, pose)
        assert before.final.data.item() == after.final.data.item()
        for (_, pa), (_, pb) in zip(before.intermediates, after.intermediates):
            assert pa.data.item() == pb.data.item()
        assert meta["topology"] == topology
        assert meta["window_seconds"] == 3.0

    def test_rejects_non_checkpoint_file(self, tmp_path):
        path = tmp_path / "junk.npz"
        np.savez(path, a=np.zeros(3))
        with pytest.raises(ValueError):
            load_checkpoint(path)
