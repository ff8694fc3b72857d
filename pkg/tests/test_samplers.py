import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mcmil.bag_model import ImageBag, NumericError, PatchCoord
from mcmil.samplers import (
    GridConfig,
    MCConfig,
    SamplerConfigError,
    grid_positions,
    mc_displace,
    mc_init,
    mc_normalize,
    mc_resample,
    mc_step,
    trace_rows,
    uniform_positions,
    write_trace,
)


class TestGrid:
    @pytest.mark.parametrize(
        "h,w,size,overlap,count",
        [(1024, 1024, 40, 0.0, 625), (1536, 2048, 224, 0.0, 54), (1024, 1024, 40, 0.5, 2500)],
    )
    def test_counts(self, h, w, size, overlap, count):
        assert len(grid_positions(h, w, GridConfig(size, overlap))) == count

    def test_stride_and_order(self):
        coords = grid_positions(10, 12, GridConfig(4, 0.5))
        assert GridConfig(4, 0.5).stride == 2
        assert coords[:5] == [PatchCoord(0, c, 4) for c in (0, 2, 4, 6, 8)]
        assert coords == sorted(coords, key=lambda c: (c.row, c.col))

    def test_tiny_stride_floor(self):
        assert GridConfig(3, 0.9).stride == 1

    def test_bad_overlap(self):
        with pytest.raises(SamplerConfigError):
            GridConfig(4, 1.0).stride

    def test_deterministic(self):
        g = GridConfig(32, 0.0)
        assert grid_positions(256, 256, g) == grid_positions(256, 256, g)


class TestUniform:
    def test_empty(self, rng):
        assert uniform_positions(100, 100, 0, rng, 10) == []

    def test_single_legal_position(self, rng):
        assert set(uniform_positions(10, 10, 20, rng, 10)) == {PatchCoord(0, 0, 10)}

    def test_mean_matches_discrete_uniform(self, rng):
        # discrete uniform on 0..984: mean 492, variance ((985)^2 - 1) / 12
        coords = uniform_positions(1024, 1024, 10_000, rng, 40)
        rows = np.array([c.row for c in coords])
        cols = np.array([c.col for c in coords])
        mean = (1024 - 40) / 2
        se = math.sqrt((985 ** 2 - 1) / 12 / 10_000)
        assert abs(rows.mean() - mean) < 3 * se
        assert abs(cols.mean() - mean) < 3 * se
        assert rows.min() >= 0 and rows.max() <= 984

    def test_reproducible(self):
        a = uniform_positions(256, 256, 50, np.random.default_rng(3), 32)
        b = uniform_positions(256, 256, 50, np.random.default_rng(3), 32)
        assert a == b


class TestNormalize:
    @pytest.mark.parametrize(
        "scores,expected",
        [([2, 4, 6], [0, 0.5, 1]), ([0.7, 0.7, 0.7], [0.5, 0.5, 0.5]), ([0.9, 0.1], [1, 0])],
    )
    def test_examples(self, scores, expected):
        np.testing.assert_allclose(mc_normalize(scores), expected)

    @pytest.mark.parametrize("bad", [[1.0, math.nan], [math.inf, 0.0]])
    def test_non_finite(self, bad):
        with pytest.raises(NumericError):
            mc_normalize(bad)

    @given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=50))
    def test_range_and_argmax(self, scores):
        out = mc_normalize(scores)
        assert np.all((out >= 0) & (out <= 1))
        if max(scores) > min(scores):
            assert out[int(np.argmax(scores))] == 1.0


def _scored(ps, scores):
    from dataclasses import replace

    scores = np.asarray(scores, dtype=float)
    return replace(ps, raw=scores, norm=mc_normalize(scores))


class TestInit:
    def test_singleton(self, rng):
        ps = mc_init(100, 100, MCConfig(n=1), rng, 10)
        assert len(ps) == 1
        assert np.isnan(ps.raw).all()

    def test_reproducible(self):
        cfg = MCConfig(n=10)
        a = mc_init(256, 256, cfg, np.random.default_rng(5), 32)
        b = mc_init(256, 256, cfg, np.random.default_rng(5), 32)
        assert a.rows.tobytes() == b.rows.tobytes() and a.cols.tobytes() == b.cols.tobytes()

    def test_paper_budget_legal(self, rng):
        ps = mc_init(1024, 1024, MCConfig(n=625), rng, 40)
        assert len(ps) == 625
        assert ps.rows.min() >= 20 and ps.rows.max() <= 1004
        assert all(0 <= c.row <= 984 and 0 <= c.col <= 984 for c in ps.coords())

    def test_default_l(self):
        assert MCConfig(n=64).l == 16
        assert MCConfig(n=3).l == 1


class TestResample:
    def test_two_particles(self, rng):
        cfg = MCConfig(n=2, l=1)
        ps = _scored(mc_init(100, 100, cfg, rng, 10), [1.0, 0.0])
        out = mc_resample(ps, cfg, rng)
        assert (out.rows[1], out.cols[1]) == (ps.rows[0], ps.cols[0])
        assert (out.rows[0], out.cols[0]) == (ps.rows[0], ps.cols[0])
        assert out.replaced.tolist() == [False, True]
        assert np.isnan(out.raw[1]) and out.raw[0] == 1.0

    def test_l_must_be_below_n(self, rng):
        cfg = MCConfig(n=3, l=3)
        ps = _scored(mc_init(100, 100, MCConfig(n=3), rng, 10), [0.1, 0.2, 0.3])
        with pytest.raises(SamplerConfigError):
            mc_resample(ps, cfg, rng)

    def test_requires_scores(self, rng):
        cfg = MCConfig(n=4)
        with pytest.raises(ValueError):
            mc_resample(mc_init(100, 100, cfg, rng, 10), cfg, rng)

    def test_stochastic_victim_frequencies(self):
        # victim weights 1 - norm = (0, 0.5, 1): the 0-scored particle loses 2/3 of the time
        cfg = MCConfig(n=3, l=1, resample_mode="stochastic")
        rng = np.random.default_rng(0)
        ps = _scored(mc_init(100, 100, cfg, rng, 10), [1.0, 0.5, 0.0])
        counts = np.zeros(3)
        for _ in range(10_000):
            counts += mc_resample(ps, cfg, rng).replaced
        freq = counts / 10_000
        assert freq[0] == 0
        assert abs(freq[2] - 2 / 3) < 0.02
        assert abs(freq[1] - 1 / 3) < 0.02

    def test_stochastic_falls_back_when_weights_run_out(self, rng):
        cfg = MCConfig(n=3, l=2, resample_mode="stochastic")
        ps = _scored(mc_init(100, 100, cfg, rng, 10), [1.0, 1.0, 0.0])
        out = mc_resample(ps, cfg, rng)
        assert out.replaced.sum() == 2 and out.replaced[2]

    def test_degenerate_scores(self, rng):
        cfg = MCConfig(n=8, l=2)
        ps = _scored(mc_init(100, 100, cfg, rng, 10), [0.3] * 8)
        np.testing.assert_array_equal(ps.norm, 0.5)
        out = mc_resample(ps, cfg, rng)
        assert len(out) == 8 and out.replaced.sum() == 2


class TestDisplace:
    def test_zero_sigma_keeps_positions(self, rng):
        cfg = MCConfig(n=6, l=2, sigma=0.0)
        ps = _scored(mc_init(100, 100, cfg, rng, 10), np.arange(6.0))
        ps = mc_resample(ps, cfg, rng)
        out = mc_displace(ps, cfg, rng)
        np.testing.assert_array_equal(out.rows, ps.rows)
        np.testing.assert_array_equal(out.cols, ps.cols)

    def test_only_replaced_move(self, rng):
        cfg = MCConfig(n=6, l=2, sigma=5.0)
        ps = _scored(mc_init(200, 200, cfg, rng, 10), np.arange(6.0))
        ps = mc_resample(ps, cfg, rng)
        out = mc_displace(ps, cfg, rng)
        keep = ~ps.replaced
        np.testing.assert_array_equal(out.rows[keep], ps.rows[keep])
        assert np.all(out.rows[ps.replaced] != ps.rows[ps.replaced])

    def test_gaussian_spread(self):
        # sample std per axis of unclamped displacements estimates sigma
        from dataclasses import replace

        cfg = MCConfig(n=10_000, l=1, sigma=10.0)
        rng = np.random.default_rng(7)
        ps = mc_init(10_000, 10_000, cfg, rng, 10)
        ps = replace(ps, rows=np.full(10_000, 5000.0), cols=np.full(10_000, 5000.0),
                     replaced=np.ones(10_000, dtype=bool))
        out = mc_displace(ps, cfg, rng)
        for axis in (out.rows, out.cols):
            d = axis - 5000.0
            assert 9.5 <= d.std(ddof=1) <= 10.5

    def test_corner_with_huge_sigma_stays_legal(self, rng):
        from dataclasses import replace

        cfg = MCConfig(n=50, l=1, sigma=1e6)
        ps = mc_init(64, 64, cfg, rng, 16)
        ps = replace(ps, rows=np.full(50, 8.0), cols=np.full(50, 8.0), replaced=np.ones(50, dtype=bool))
        out = mc_displace(ps, cfg, rng)
        assert out.rows.min() >= 8 and out.rows.max() <= 56
        assert all(0 <= c.row <= 48 and 0 <= c.col <= 48 for c in out.coords())


def region_scorer(r0, c0, side):
    """1 when the patch center falls inside a square region, else 0."""
    def score(bag, coords):
        out = []
        for c in coords:
            cr, cc = c.center()
            out.append(float(r0 <= cr < r0 + side and c0 <= cc < c0 + side))
        return np.array(out)
    return score


class TestStep:
    @pytest.mark.parametrize("sigma", [0.0, 1.0])
    def test_indicator_region_mean_non_decreasing(self, sigma):
        # region of 60 px with 10 px patches: a 1 px jitter cannot leave it from the
        # interior, and with sigma 0 copies land exactly on donors
        bag = ImageBag("b", np.zeros((200, 200)), 1)
        cfg = MCConfig(n=60, l=15, sigma=sigma)
        scorer = region_scorer(70, 70, 60)
        rng = np.random.default_rng(3)
        ps = mc_init(200, 200, cfg, rng, 10)
        means = []
        for _ in range(30):
            ps, _ = mc_step(ps, scorer, cfg, rng, bag)
            means.append(scorer(bag, ps.coords()).mean())
        if sigma == 0:
            assert all(b >= a for a, b in zip(means, means[1:]))
        else:
            assert means[-1] >= means[0]
        assert means[-1] > 0.5

    def test_first_step_evaluates_everything(self, rng):
        bag = ImageBag("b", np.zeros((64, 64)), 0)
        cfg = MCConfig(n=8, l=2, sigma=2.0)
        ps = mc_init(64, 64, cfg, rng, 8)
        ps2, evaluated = mc_step(ps, region_scorer(0, 0, 30), cfg, rng, bag)
        assert [e.index for e in evaluated] == list(range(8))
        assert ps2.iteration == 1
        # the second step only scores the particles moved by the first
        _, evaluated2 = mc_step(ps2, region_scorer(0, 0, 30), cfg, rng, bag)
        assert sorted(e.index for e in evaluated2) == sorted(np.flatnonzero(ps2.replaced).tolist())

    def test_constant_scorer(self, rng):
        bag = ImageBag("b", np.zeros((64, 64)), 0)
        cfg = MCConfig(n=8, l=2)
        ps = mc_init(64, 64, cfg, rng, 8)
        const = lambda b, coords: np.full(len(coords), 0.3)
        for _ in range(5):
            ps, _ = mc_step(ps, const, cfg, rng, bag)
            assert len(ps) == 8

    def test_scorer_shape_checked(self, rng):
        bag = ImageBag("b", np.zeros((64, 64)), 0)
        cfg = MCConfig(n=4, l=1)
        ps = mc_init(64, 64, cfg, rng, 8)
        with pytest.raises(ValueError):
            mc_step(ps, lambda b, c: np.zeros(2), cfg, rng, bag)

    def test_bit_reproducible(self):
        bag = ImageBag("b", np.zeros((128, 128)), 1)
        cfg = MCConfig(n=16, l=4, sigma=6.0, resample_mode="stochastic")
        runs = []
        for _ in range(2):
            rng = np.random.default_rng(9)
            ps = mc_init(128, 128, cfg, rng, 16)
            for _ in range(5):
                ps, _ = mc_step(ps, region_scorer(30, 60, 30), cfg, rng, bag)
            runs.append(ps.rows.tobytes() + ps.cols.tobytes())
        assert runs[0] == runs[1]


def test_trace_export(tmp_path, rng):
    cfg = MCConfig(n=3, l=1)
    ps = _scored(mc_init(64, 64, cfg, rng, 8), [0.2, 0.5, 0.9])
    write_trace(tmp_path / "t.csv", trace_rows(ps, step=4))
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "bag_id,step,particle_idx,row,col,raw_score,norm_score"
    assert len(lines) == 4
    assert lines[3].split(",")[1:3] == ["4", "2"]
