"""Model assembly: deterministic build, forward contract, parameter
accounting, checkpoint round-trip."""

import numpy as np
import pytest

from sfsr.checkpoint import CheckpointError, load_model, read_checkpoint, save_checkpoint
from sfsr.gradcheck import check_gradients
from sfsr.model import (
    TINY_CONFIG,
    BlockCounts,
    MlpComparison,
    ModelConfig,
    build,
    forward,
    param_count,
)
from sfsr.ops import ConvSpec, conv2d, pixel_shuffle
from sfsr.tensor import NumericError, ShapeError, Tensor
from sfsr.training import l1_loss


def rand_image(shape, seed=0):
    return Tensor(np.random.Generator(np.random.PCG64(seed)).random(shape).astype(np.float32))


def tiny_param_count_oracle() -> int:
    """Closed-form sum for the tiny config, worked independently:
    C=16, window=4, heads=2, one iRSTB with 2 STLc + 1 SCA, one DCA, r=2."""
    c, window, heads, hidden = 16, 4, 2, 32
    h_lf = 3 * 3 * 3 * c + c                       # 448
    embed_norm = 2 * c                             # 32
    dca = (c + c) + (c * c + c)                    # 304
    stlc = (
        2 * c                                      # norm1
        + (c * 3 * c + 3 * c)                      # qkv
        + (c * c + c)                              # proj
        + (2 * window - 1) ** 2 * heads            # bias table
        + 2 * c                                    # norm2
        + (c * hidden + hidden) + (hidden * c + c) # conv mlp
    )
    sca = (c * c + c) + (9 * c * c + c) + (c + c)
    rec = c * (3 * 4) + 12
    return h_lf + embed_norm + dca + 2 * stlc + sca + rec


class TestConfig:
    def test_scale_validation(self):
        with pytest.raises(ShapeError):
            ModelConfig(scale=3)

    def test_heads_divide_channels(self):
        with pytest.raises(ShapeError):
            ModelConfig(scale=2, embed_channels=10, heads=4)

    def test_sca_multiple_of_irstb(self):
        with pytest.raises(ShapeError):
            BlockCounts(n_irstb=4, n_sca=6)

    def test_counts_positive(self):
        with pytest.raises(ShapeError):
            BlockCounts(n_irstb=0)

    def test_dict_roundtrip(self):
        cfg = TINY_CONFIG
        assert ModelConfig.from_dict(cfg.to_dict()) == cfg


class TestBuild:
    def test_bit_identical_for_same_seed(self):
        a = build(TINY_CONFIG, seed=11)
        b = build(TINY_CONFIG, seed=11)
        for (na, pa), (nb, pb) in zip(a.named_parameters().items(), b.named_parameters().items()):
            assert na == nb
            assert np.array_equal(pa.data, pb.data)

    def test_different_seeds_differ(self):
        a = build(TINY_CONFIG, seed=1)
        b = build(TINY_CONFIG, seed=2)
        assert not np.array_equal(a.lf_w.data, b.lf_w.data)

    def test_biases_zero_and_norms_identity(self):
        model = build(TINY_CONFIG, seed=3)
        for name, p in model.named_parameters().items():
            if name.endswith((".b", "_b", ".beta")) or name.endswith((".b1", ".b2", "qkv_b", "proj_b")):
                assert np.all(p.data == 0), name
            if name.endswith(".gamma"):
                assert np.all(p.data == 1), name

    def test_weights_truncated_at_two_std(self):
        model = build(TINY_CONFIG, seed=4)
        w = model.lf_w.data
        assert np.abs(w).max() <= 2 * 0.02 + 1e-7
        assert w.std() > 0.005

    def test_parameter_count_matches_closed_form_oracle(self):
        model = build(TINY_CONFIG, seed=0)
        assert model.parameter_count() == tiny_param_count_oracle()
        assert param_count(TINY_CONFIG).total == tiny_param_count_oracle()


class TestParamCount:
    def test_h_lf_example(self):
        report = param_count(ModelConfig(scale=2))
        assert report.breakdown["h_lf"] == 3 * 3 * 3 * 60 + 60 == 1_680

    def test_convmlp_example(self):
        # C*h + h + h*C + C for C=60, h=120: 14,400 weights + 180 biases
        cfg = ModelConfig(scale=2, counts=BlockCounts(n_irstb=1, n_sca=1, n_stlc_per_irstb=1))
        report = param_count(cfg)
        assert report.breakdown["conv_mlp"] == 60 * 120 + 120 + 120 * 60 + 60 == 14_580

    def test_doubling_irstb_doubles_its_subtotal(self):
        def irstb_subtotal(n):
            cfg = ModelConfig(scale=2, counts=BlockCounts(n_irstb=n, n_sca=n, n_stlc_per_irstb=6))
            b = param_count(cfg).breakdown
            per_stlc_norms = n * 6 * 4 * 60
            return b["attention"] + b["conv_mlp"] + b["sca"] + per_stlc_norms

        assert irstb_subtotal(8) == 2 * irstb_subtotal(4)

    def test_breakdown_sums_to_total(self):
        report = param_count(TINY_CONFIG)
        assert sum(report.breakdown.values()) == report.total

    def test_mlp_comparison_ratio_is_depth(self):
        cmp = MlpComparison(depth=4096, c_in=60, c_out=120)
        assert cmp.dense_params == 4096 * cmp.conv_params
        assert cmp.ratio == 4096


class TestForward:
    def test_shape_x2(self):
        model = build(TINY_CONFIG, seed=5)
        out = forward(model, rand_image((1, 3, 32, 32)))
        assert out.data.shape == (1, 3, 64, 64)

    def test_pad_then_crop_for_non_multiple(self):
        model = build(TINY_CONFIG, seed=5)
        out = forward(model, rand_image((1, 3, 33, 33)))
        assert out.data.shape == (1, 3, 66, 66)

    def test_shape_contract_random_extents(self):
        g = np.random.Generator(np.random.PCG64(6))
        for scale in (2, 4):
            cfg = ModelConfig(
                scale=scale,
                embed_channels=8,
                window=4,
                heads=2,
                counts=BlockCounts(n_irstb=1, n_dca=1, n_sca=1, n_stlc_per_irstb=1),
            )
            model = build(cfg, seed=7)
            for _ in range(5):
                h = int(g.integers(8, 21))
                w = int(g.integers(8, 21))
                out = forward(model, rand_image((1, 3, h, w), seed=h * 100 + w))
                assert out.data.shape == (1, 3, h * scale, w * scale)

    def test_zero_model_outputs_zero(self):
        model = build(TINY_CONFIG, seed=8)
        for p in model.parameters():
            p.data = np.zeros_like(p.data)
        out = forward(model, rand_image((1, 3, 16, 16)))
        assert np.all(out.data == 0)

    def test_deterministic(self):
        model = build(TINY_CONFIG, seed=9)
        x = rand_image((1, 3, 16, 16), seed=1)
        a = forward(model, x).data
        b = forward(model, x).data
        assert np.array_equal(a, b)

    def test_clamp_at_inference(self):
        model = build(TINY_CONFIG, seed=10)
        out = forward(model, rand_image((1, 3, 8, 8)), clamp=True)
        assert out.data.min() >= 0.0
        assert out.data.max() <= 1.0

    def test_wrong_channel_count_rejected(self):
        model = build(TINY_CONFIG, seed=11)
        with pytest.raises(ShapeError):
            forward(model, rand_image((1, 1, 8, 8)))

    def test_non_finite_activation_reports_stage(self):
        model = build(TINY_CONFIG, seed=12)
        model.lf_w.data[0, 0, 0, 0] = np.nan
        with pytest.raises(NumericError, match="low-frequency conv"):
            forward(model, rand_image((1, 3, 8, 8)))

    def test_reconstruction_head_is_linear_with_zero_bias(self):
        model = build(TINY_CONFIG, seed=13)
        x = np.random.Generator(np.random.PCG64(14)).standard_normal((1, 16, 8, 8)).astype(np.float32)

        def head(arr):
            y = conv2d(Tensor(arr), model.rec_w, model.rec_b, ConvSpec(kernel=(1, 1)))
            return pixel_shuffle(y, model.config.scale).data

        assert np.allclose(head(3.0 * x), 3.0 * head(x), atol=1e-5)

    def test_gradients_flow_to_sampled_parameters(self):
        model = build(TINY_CONFIG, seed=15, dtype=np.float64)
        g = np.random.Generator(np.random.PCG64(16))
        x = Tensor(g.random((1, 3, 8, 8)))
        y = Tensor(g.random((1, 3, 16, 16)))
        sample = {
            name: model.named_parameters()[name]
            for name in [
                "lf_conv.w",
                "embed_norm.gamma",
                "dca.0.point_w",
                "irstb.0.stlc.1.attn.bias_table",
                "irstb.0.sca.0.dilated_b",
                "rec_conv.w",
            ]
        }
        report = check_gradients(lambda: l1_loss(forward(model, x), y), sample, step=1e-5, tolerance=1e-4)
        assert report.passed, report.lines()[-1]


class TestCheckpoint:
    def test_save_load_save_byte_identical(self, tmp_path):
        model = build(TINY_CONFIG, seed=17)
        p1 = tmp_path / "a.sfsr"
        p2 = tmp_path / "b.sfsr"
        save_checkpoint(p1, model)
        loaded, _, _ = load_model(p1)
        save_checkpoint(p2, loaded)
        assert p1.read_bytes() == p2.read_bytes()

    def test_loaded_model_forward_identical(self, tmp_path):
        model = build(TINY_CONFIG, seed=18)
        path = tmp_path / "m.sfsr"
        save_checkpoint(path, model)
        loaded, _, _ = load_model(path)
        x = rand_image((1, 3, 12, 12), seed=19)
        assert np.array_equal(forward(model, x).data, forward(loaded, x).data)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.sfsr"
        path.write_bytes(b"NOPE" + b"\x00" * 32)
        with pytest.raises(CheckpointError, match="magic"):
            read_checkpoint(path)

    def test_truncated_record_names_parameter(self, tmp_path):
        model = build(TINY_CONFIG, seed=20)
        path = tmp_path / "m.sfsr"
        save_checkpoint(path, model)
        blob = path.read_bytes()
        (tmp_path / "cut.sfsr").write_bytes(blob[: len(blob) - 10])
        with pytest.raises(CheckpointError, match="truncated"):
            read_checkpoint(tmp_path / "cut.sfsr")

    def test_missing_parameter_detected(self, tmp_path):
        model = build(TINY_CONFIG, seed=21)
        path = tmp_path / "m.sfsr"
        save_checkpoint(path, model)
        blob, records = read_checkpoint(path)
        assert set(records) == set(model.named_parameters())
        # drop the final record and rewrite manually
        import struct, json

        names = list(records)
        keep = {k: records[k] for k in names[:-1]}
        out = tmp_path / "short.sfsr"
        with open(out, "wb") as fh:
            fh.write(b"SFSR")
            fh.write(struct.pack("<I", 1))
            enc = json.dumps(blob, sort_keys=True, separators=(",", ":")).encode()
            fh.write(struct.pack("<Q", len(enc)))
            fh.write(enc)
            for name, arr in keep.items():
                nb = name.encode()
                fh.write(struct.pack("<Q", len(nb)))
                fh.write(nb)
                fh.write(struct.pack("<Q", arr.ndim))
                for e in arr.shape:
                    fh.write(struct.pack("<Q", e))
                fh.write(arr.astype("<f4").tobytes())
        with pytest.raises(CheckpointError, match="missing parameter"):
            load_model(out)

    def test_optimizer_tensors_roundtrip(self, tmp_path):
        model = build(TINY_CONFIG, seed=22)
        m = {f"adam.m/{k}": np.full_like(p.data, 0.5) for k, p in model.named_parameters().items()}
        path = tmp_path / "opt.sfsr"
        save_checkpoint(path, model, optimizer_meta={"alpha": 1e-3, "beta1": 0.9, "beta2": 0.999, "eps": 1e-8, "step": 5}, optimizer_tensors=m)
        loaded, meta, tensors = load_model(path)
        assert meta["step"] == 5
        assert len(tensors) == len(m)
        assert all(np.all(v == 0.5) for v in tensors.values())
