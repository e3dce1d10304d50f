import math

import numpy as np
import pytest

from skelstream import encoder as E
from skelstream.errors import CapacityError, ConfigError, ShapeError
from skelstream.tensor import Tensor, grad_check


class TestPositionCode:
    def test_zero_time_pattern(self):
        pe = E.sinusoidal_pe(0.0, 8)
        assert np.allclose(pe, [0, 1, 0, 1, 0, 1, 0, 1])

    def test_hand_values_dim4(self):
        pe = E.sinusoidal_pe(1.0, 4)
        expect = [math.sin(1.0), math.cos(1.0), math.sin(1e-2), math.cos(1e-2)]
        assert np.allclose(pe, expect, atol=1e-12)

    def test_shapes_and_dtype(self):
        pe = E.sinusoidal_pe(np.arange(5), 6, dtype=np.float32)
        assert pe.shape == (5, 6)
        assert pe.dtype == np.float32

    def test_odd_dim_rejected(self):
        with pytest.raises(ConfigError):
            E.sinusoidal_pe(0.0, 7)

    def test_distinct_times_distinct_codes(self):
        pe = E.sinusoidal_pe(np.arange(50), 16)
        gram = pe @ pe.T
        off = gram - np.diag(np.diag(gram))
        assert np.all(np.diag(gram) > off.max(axis=1) + 1e-6), \
            "each code should be most similar to itself"


class TestCausalMask:
    def test_structure(self):
        m = E.causal_mask(4)
        assert m.shape == (4, 4)
        assert np.all(m[np.tril_indices(4)] == 0.0)
        assert np.all(np.isneginf(m[np.triu_indices(4, k=1)]))


def tiny_encoder(seed=0, v=3, dim=8, layers=2, dtype=np.float64):
    rng = np.random.default_rng(seed)
    from skelstream.graph import star_adjacency
    params = E.init_encoder(rng, star_adjacency(v), dim, layers,
                            graph_heads=2, temporal_heads=2, dtype=dtype)
    return params, rng


class TestEncode:
    def test_output_shape_batched_and_single(self):
        params, rng = tiny_encoder()
        frames = rng.standard_normal((2, 5, 3, 3))
        z = E.encode(frames, params)
        assert z.shape == (2, 5, 3, 8)
        z1 = E.encode(frames[0], params)
        assert z1.shape == (5, 3, 8)
        assert np.allclose(z1.data, z.data[0], atol=1e-12)

    def test_rejects_bad_shapes(self):
        params, rng = tiny_encoder()
        with pytest.raises(ShapeError):
            E.encode(rng.standard_normal((5, 3, 4)), params)

    def test_future_frames_cannot_touch_past_latents(self):
        params, rng = tiny_encoder(seed=1)
        frames = rng.standard_normal((7, 3, 3))
        z_ref = E.encode(frames, params).data
        cut = 4
        altered = frames.copy()
        altered[cut:] += rng.standard_normal(altered[cut:].shape) * 10
        z_alt = E.encode(altered, params).data
        assert np.array_equal(z_ref[:cut], z_alt[:cut]), \
            "latents before the edit must be untouched"
        assert not np.allclose(z_ref[cut:], z_alt[cut:]), \
            "latents at and after the edit should move"

    def test_prefix_encoding_matches_full_pass(self):
        params, rng = tiny_encoder(seed=2)
        frames = rng.standard_normal((6, 3, 3))
        z_full = E.encode(frames, params).data
        for t in range(1, 7):
            z_prefix = E.encode(frames[:t], params).data
            err = np.abs(z_prefix[-1] - z_full[t - 1]).max()
            assert err < 1e-9, f"prefix {t}: max abs err {err:.3e}"

    def test_attention_sink_contents(self):
        params, rng = tiny_encoder()
        sink = []
        E.encode(rng.standard_normal((2, 4, 3, 3)), params, attn_sink=sink)
        names = [n for n, _ in sink]
        assert "block0.q.joint.head0" in names
        assert "block1.temporal" in names
        by_name = dict(sink)
        joint = by_name["block0.q.joint.head0"]
        assert joint.shape == (2, 4, 3, 3), "(B, T, V, V) joint attention"
        temporal = by_name["block0.temporal"]
        assert temporal.shape == (2, 3, 2, 4, 4), "(B, V, heads, T, T)"
        assert np.allclose(temporal.sum(axis=-1), 1.0, atol=1e-9)
        upper = np.triu_indices(4, k=1)
        assert np.all(temporal[..., upper[0], upper[1]] == 0.0), \
            "temporal attention must never look forward"

    def test_grad_check_through_encoder(self):
        params, rng = tiny_encoder(seed=3, v=3, dim=4, layers=1)
        frames = Tensor(rng.standard_normal((1, 3, 3, 3)), requires_grad=True)
        named = list(params.named())
        tensors = [frames] + [t for _, t in named if t.requires_grad]

        def f(*args):
            return (E.encode(args[0], params) ** 2).mean()

        # floor guards entries whose true gradient is ~1e-8: central FD on an
        # O(1) output carries ~1e-11 absolute noise, swamping the ratio.
        report = grad_check(f, tensors, eps=1e-5, sample=3, seed=7, floor=1e-6)
        assert report.ok(1e-4), str(report)


class TestStreaming:
    def test_stream_matches_batch_encode(self):
        params, rng = tiny_encoder(seed=4)
        frames = rng.standard_normal((10, 3, 3))
        z_full = E.encode(frames, params).data
        state = E.StreamState(num_blocks=len(params.blocks))
        for t in range(10):
            z_t = E.encode_step(frames[t], params, state)
            err = np.abs(z_t - z_full[t]).max()
            assert err < 1e-9, f"step {t}: max abs err {err:.3e}"
        assert state.frames_seen == 10

    def test_capacity_limit(self):
        params, rng = tiny_encoder()
        state = E.StreamState(num_blocks=len(params.blocks), limit=2)
        for _ in range(2):
            E.encode_step(rng.standard_normal((3, 3)), params, state)
        with pytest.raises(CapacityError):
            E.encode_step(rng.standard_normal((3, 3)), params, state)

    def test_frame_shape_checked(self):
        params, _ = tiny_encoder()
        state = E.StreamState(num_blocks=len(params.blocks))
        with pytest.raises(ShapeError):
            E.encode_step(np.zeros((4, 3)), params, state)

    def test_step_cost_grows_linearly_not_quadratically(self):
        # the cache means step t does O(t) attention work; a crude proxy:
        # cache lengths after T steps are exactly T per block
        params, rng = tiny_encoder()
        state = E.StreamState(num_blocks=len(params.blocks))
        for t in range(8):
            E.encode_step(rng.standard_normal((3, 3)), params, state)
        for ks, vs in zip(state.keys, state.values):
            assert len(ks) == 8 and len(vs) == 8

    def test_float32_pipeline(self):
        params, rng = tiny_encoder(seed=5, dtype=np.float32)
        frames = rng.standard_normal((6, 3, 3)).astype(np.float32)
        z_full = E.encode(frames, params).data
        assert z_full.dtype == np.float32
        state = E.StreamState(num_blocks=len(params.blocks))
        errs = []
        for t in range(6):
            z_t = E.encode_step(frames[t], params, state)
            errs.append(np.abs(z_t - z_full[t]).max())
        assert max(errs) < 1e-4, f"float32 stream drift {max(errs):.3e}"
