import numpy as np
import pytest

from skelstream import graph as G
from skelstream.errors import ConfigError, ContractError, ShapeError
from skelstream.tensor import Tensor, grad_check


class TestAdjacency:
    def test_star_shape_and_symmetry(self):
        adj = G.star_adjacency(6)
        assert adj.shape == (6, 6)
        assert np.array_equal(adj, adj.T)
        assert np.all(np.diag(adj) == 0)
        assert adj[0].sum() == 5
        assert adj[3].sum() == 1, "a limb touches only the root"

    def test_star_too_small(self):
        with pytest.raises(ConfigError):
            G.star_adjacency(1)

    def test_normalize_two_node_hand_value(self):
        adj = np.array([[0.0, 1.0], [1.0, 0.0]])
        out = G.normalize_adjacency(adj)
        assert np.allclose(out, [[0.5, 0.5], [0.5, 0.5]], atol=1e-12)

    def test_normalize_path_hand_values(self):
        adj = np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], dtype=float)
        out = G.normalize_adjacency(adj)
        assert np.allclose(np.diag(out), [0.5, 1 / 3, 0.5], atol=1e-12)
        assert np.allclose(out[0, 1], 1 / np.sqrt(6), atol=1e-12)
        assert out[0, 2] == 0.0

    def test_normalize_output_symmetric_spectrum_bounded(self):
        rng = np.random.default_rng(7)
        for _ in range(10):
            v = rng.integers(2, 9)
            raw = rng.integers(0, 2, size=(v, v)).astype(float)
            adj = np.triu(raw, 1)
            adj = adj + adj.T
            out = G.normalize_adjacency(adj)
            assert np.allclose(out, out.T)
            eigs = np.linalg.eigvalsh(out)
            assert eigs.max() <= 1.0 + 1e-10, f"spectrum exceeded 1: {eigs.max()}"
            assert eigs.min() >= -1.0 - 1e-10

    def test_normalize_rejects_bad_input(self):
        with pytest.raises(ShapeError):
            G.normalize_adjacency(np.ones((2, 3)))
        with pytest.raises(ContractError):
            G.normalize_adjacency(np.array([[0.0, -1.0], [-1.0, 0.0]]))
        with pytest.raises(ContractError):
            G.normalize_adjacency(np.array([[0.0, 1.0], [0.0, 0.0]]))


def make_pair(rng, v=4, d_in=6, d_out=6, heads=2):
    base = G.star_adjacency(v)
    sa = G.init_sagc(rng, base, d_in, d_out, heads)
    gc = G.GCNParams(
        adjacency=[Tensor(t.data.copy()) for t in sa.adjacency],
        weight=sa.weight,
    )
    return sa, gc


class TestLayers:
    def test_gcn_hand_value(self):
        adj = Tensor(np.array([[0.5, 0.5], [0.5, 0.5]]))
        w = Tensor(np.eye(2))
        params = G.GCNParams(adjacency=[adj], weight=[w])
        h = Tensor(np.array([[2.0, -2.0], [4.0, 0.0]]))
        out = G.gcn(h, params)
        assert np.allclose(out.data, [[3.0, 0.0], [3.0, 0.0]])

    def test_sagc_without_attention_matches_gcn_bitwise(self):
        rng = np.random.default_rng(11)
        sa, gc = make_pair(rng)
        h = Tensor(rng.standard_normal((3, 5, 4, 6)))
        a = G.sagc(h, sa, attend=False)
        b = G.gcn(h, gc)
        assert np.array_equal(a.data, b.data), "degenerate sagc must equal gcn exactly"

    def test_sagc_attention_rows_stochastic(self):
        rng = np.random.default_rng(12)
        sa, _ = make_pair(rng)
        h = Tensor(rng.standard_normal((2, 4, 6)))
        sink = []
        G.sagc(h, sa, attn_sink=sink)
        assert len(sink) == 2, "one attention map per head"
        for attn in sink:
            assert attn.shape == (2, 4, 4)
            assert np.allclose(attn.data.sum(axis=-1), 1.0, atol=1e-9)
            assert np.all(attn.data >= 0)

    def test_batched_matches_per_sample(self):
        rng = np.random.default_rng(13)
        sa, _ = make_pair(rng)
        h = rng.standard_normal((5, 4, 6))
        full = G.sagc(Tensor(h), sa).data
        for i in range(5):
            one = G.sagc(Tensor(h[i]), sa).data
            assert np.allclose(full[i], one, atol=1e-12)

    def test_permutation_equivariance(self):
        # relabeling joints permutes the output rows the same way
        rng = np.random.default_rng(14)
        v = 5
        perm = rng.permutation(v)
        p = np.eye(v)[perm]
        base = G.star_adjacency(v)
        sa = G.init_sagc(rng, base, 6, 6, 2)
        sa_p = G.SAGCParams(
            adjacency=[Tensor(p @ t.data @ p.T, requires_grad=True) for t in sa.adjacency],
            weight=sa.weight,
            wq=sa.wq,
            wk=sa.wk,
        )
        h = rng.standard_normal((v, 6))
        out = G.sagc(Tensor(h), sa).data
        out_p = G.sagc(Tensor(p @ h), sa_p).data
        assert np.allclose(out_p, p @ out, atol=1e-10)

    def test_rectangular_projection(self):
        rng = np.random.default_rng(15)
        sa = G.init_sagc(rng, G.star_adjacency(4), 12, 8, 2)
        h = Tensor(rng.standard_normal((2, 4, 12)))
        out = G.sagc(h, sa)
        assert out.shape == (2, 4, 8)

    def test_head_count_must_divide(self):
        with pytest.raises(ConfigError):
            G.init_sagc(np.random.default_rng(0), G.star_adjacency(3), 4, 6, 4)

    def test_shape_errors(self):
        rng = np.random.default_rng(16)
        sa, gc = make_pair(rng, v=4, d_in=6)
        with pytest.raises(ShapeError):
            G.sagc(Tensor(rng.standard_normal((3, 6))), sa)
        with pytest.raises(ShapeError):
            G.gcn(Tensor(rng.standard_normal((4, 7))), gc)

    def test_grad_check_sagc(self):
        rng = np.random.default_rng(17)
        sa, _ = make_pair(rng, v=3, d_in=4, d_out=4, heads=2)
        h = Tensor(rng.standard_normal((2, 3, 4)), requires_grad=True)

        def f(h_, *params):
            return (G.sagc(h_, sa) ** 2).mean()

        inputs = [h] + sa.adjacency + sa.weight + sa.wq + sa.wk
        report = grad_check(f, inputs)
        assert report.ok(1e-5), str(report)

    def test_grad_check_gcn_weights_only(self):
        rng = np.random.default_rng(18)
        _, gc = make_pair(rng, v=3, d_in=4, d_out=4)
        h = Tensor(rng.standard_normal((3, 4)))

        def f(*ws):
            return G.gcn(h, gc).sum()

        report = grad_check(f, gc.weight)
        assert report.ok(1e-5), str(report)
        assert all(not a.requires_grad for a in gc.adjacency)

    def test_named_parameters_unique(self):
        rng = np.random.default_rng(19)
        sa, gc = make_pair(rng)
        names = [n for n, _ in sa.named("layer.")]
        assert len(names) == len(set(names))
        assert len(names) == 8, "2 heads x (adj, w, wq, wk)"
        assert len(list(gc.named())) == 4
