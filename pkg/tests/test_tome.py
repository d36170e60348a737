import numpy as np
import pytest
from hypothesis import given, strategies as st

from agglo import tome
from agglo.errors import ValidationError
from oracles import brute_merge, clustered_grid, noisy_keys


@st.composite
def plans(draw):
    rows, cols = draw(st.integers(1, 9)), draw(st.integers(1, 9))
    sy, sx = draw(st.integers(1, 4)), draw(st.integers(1, 4))
    oy, ox = draw(st.integers(0, sy - 1)), draw(st.integers(0, sx - 1))
    layout = tome.SinkLayout(sy, sx, min(oy, rows - 1), min(ox, cols - 1))
    n_src = rows * cols - layout.target_count(rows, cols)
    r = draw(st.integers(0, n_src))
    seed = draw(st.integers(0, 2**32 - 1))
    x = np.random.default_rng(seed).normal(size=(rows, cols, 3))
    return x, layout, r


def test_figure_seven_count():
    p = tome.plan(np.zeros((4, 4, 1)), tome.SinkLayout.square(2), 9)
    assert p.survivors == 7


def test_table_five_counts():
    x = np.random.default_rng(0).normal(size=(32, 32, 4))
    assert tome.plan(x, tome.SinkLayout.square(2), 768).survivors == 256


@pytest.mark.parametrize("n,budget,stride,r", [(64, 256, 4, 3840), (48, 256, 3, 2048), (64, 512, 3, 3584), (32, 256, 2, 768)])
def test_stride_for_budget(n, budget, stride, r):
    layout, got_r = tome.stride_for_budget(n, n, budget)
    assert (layout.stride_y, got_r) == (stride, r)
    x = np.zeros((n, n, 1))
    assert tome.plan(x, layout, got_r).survivors == budget


def test_budget_equal_to_n():
    layout, r = tome.stride_for_budget(5, 7, 35)
    assert layout.stride_y == 1 and r == 0


@given(plans())
def test_count_and_coverage(case):
    x, layout, r = case
    p = tome.plan(x, layout, r)
    assert p.survivors == x.shape[0] * x.shape[1] - r
    values, counts = tome.merge(x, p)
    assert counts.sum() == x.shape[0] * x.shape[1]
    recon = tome.unmerge(values, p).data.reshape(-1, 3)
    for row in recon:
        assert np.any(np.all(values == row, axis=1))
    groups, oracle = brute_merge(x, p.assignment)
    assert len(groups) == p.survivors
    np.testing.assert_allclose(recon.reshape(x.shape), oracle, atol=1e-12)


@given(plans())
def test_zero_r_is_identity(case):
    x, layout, _ = case
    p = tome.plan(x, layout, 0)
    assert p.survivors == x.shape[0] * x.shape[1]
    values, _ = tome.merge(x, p)
    assert np.array_equal(tome.unmerge(values, p).data, x)


@given(plans())
def test_idempotent_representation(case):
    x, layout, r = case
    p = tome.plan(x, layout, r)
    v, _ = tome.merge(x, p)
    v2, _ = tome.merge(tome.unmerge(v, p), p)
    assert np.abs(v - v2).max() < 1e-12


@given(plans(), st.floats(1e-3, 1e3))
def test_criterion_scale_invariance(case, k):
    x, layout, r = case
    a = tome.plan(x, layout, r)
    b = tome.plan(x, layout, r, criterion=k * x)
    assert np.array_equal(a.assignment, b.assignment)


@given(plans(), st.integers(0, 1000))
def test_channel_permutation_equivariance(case, seed):
    x, layout, r = case
    perm = np.random.default_rng(seed).permutation(3)
    p = tome.plan(x, layout, r)
    a, _ = tome.merge(x, p)
    b, _ = tome.merge(x[..., perm], p)
    np.testing.assert_allclose(b, a[:, perm], atol=1e-12)


@given(plans())
def test_monotone_survivors(case):
    x, layout, r = case
    counts = [tome.plan(x, layout, k).survivors for k in range(r + 1)]
    assert counts == sorted(counts, reverse=True)


def test_identical_tokens():
    x = np.full((4, 6, 2), 1.5)
    p = tome.plan(x, tome.SinkLayout.square(2), 12)
    v, _ = tome.merge(x, p)
    np.testing.assert_array_equal(v, 1.5)
    assert tome.reconstruction_error(x, p) == 0


def test_single_target_absorbs_all():
    x = np.full((2, 2, 3), 0.7)
    p = tome.plan(x, tome.SinkLayout.square(2), 3)
    v, counts = tome.merge(x, p)
    assert v.shape == (1, 3) and counts.tolist() == [4]
    np.testing.assert_array_equal(v, 0.7)


def test_two_clusters_recover_means():
    rng = np.random.default_rng(4)
    rows, cols = 4, 4
    left = np.array([5.0, 0.0, 0.0])
    right = np.array([0.0, 0.0, 5.0])
    x = np.empty((rows, cols, 3))
    x[:, :2] = left
    x[:, 2:] = right
    x += 0.01 * rng.normal(size=x.shape)
    # targets at (0,0) and (0,2): one per cluster
    layout = tome.SinkLayout(4, 2)
    p = tome.plan(x, layout, 14)
    v, _ = tome.merge(x, p)
    np.testing.assert_allclose(v[0], x[:, :2].reshape(-1, 3).mean(axis=0), atol=1e-6)
    np.testing.assert_allclose(v[1], x[:, 2:].reshape(-1, 3).mean(axis=0), atol=1e-6)
    # with every source merged the error is the within-cluster share of the total variance
    within = sum(((x[:, s] - x[:, s].reshape(-1, 3).mean(axis=0)) ** 2).sum() for s in (slice(0, 2), slice(2, 4)))
    total = ((x.reshape(-1, 3) - x.reshape(-1, 3).mean(axis=0)) ** 2).sum()
    assert abs(tome.reconstruction_error(x, p) - within / total) < 1e-12


def test_values_beat_keys():
    wins = 0
    for seed in range(50):
        rng = np.random.default_rng(seed)
        x, _ = clustered_grid(rng, 16, 16, 8)
        keys = noisy_keys(rng, x)
        layout, r = tome.stride_for_budget(16, 16, 32)
        wins += tome.reconstruction_error(x, tome.plan(x, layout, r)) <= tome.reconstruction_error(x, tome.plan(x, layout, r, keys))
    assert wins >= 45


def test_tie_break_is_raster_order():
    p = tome.plan(np.zeros((4, 4, 1)), tome.SinkLayout.square(2), 9)
    # all affinities tie: the nine lowest-index sources merge, each into target 0
    sources = [i for i in range(16) if not ((i // 4) % 2 == 0 and (i % 4) % 2 == 0)]
    merged = np.flatnonzero(p.assignment != tome.UNMERGED).tolist()
    assert merged == sources[:9]
    assert set(p.assignment[merged].tolist()) == {0}


def test_plan_serialization_and_validation():
    x = np.random.default_rng(1).normal(size=(5, 5, 2))
    p = tome.plan(x, tome.SinkLayout.square(2), 10)
    q = tome.MergePlan.from_dict(p.to_dict())
    assert np.array_equal(q.assignment, p.assignment) and q.survivors == p.survivors
    bad = p.to_dict()
    bad["assignment"][0] = 3  # a target cannot be merged away
    with pytest.raises(ValidationError):
        tome.MergePlan.from_dict(bad)
    with pytest.raises(ValidationError):
        tome.plan(x, tome.SinkLayout.square(2), 100)
