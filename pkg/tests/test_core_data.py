import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fasim import (
    CsvParseError,
    Dataset,
    InvalidInputError,
    SeedSpec,
    center_columns,
    load_csv,
    rank_transform,
)


class TestRankTransform:
    def test_basic_counts(self):
        t = rank_transform(np.array([3.1, -2.0, 5.0]))
        assert np.allclose(t.values, [2 / 3 - 0.5, 1 / 3 - 0.5, 1 - 0.5])
        assert list(t.ranks) == [2, 1, 3]

    def test_ties_take_maximal_count(self):
        t = rank_transform(np.array([7.0, 7.0]))
        assert np.allclose(t.values, [0.5, 0.5])
        assert list(t.ranks) == [2, 2]

    def test_strictly_increasing_length_four(self):
        t = rank_transform(np.array([0.1, 0.7, 2.5, 9.0]))
        assert np.allclose(t.values, [-0.25, 0.0, 0.25, 0.5])

    def test_rejects_non_finite(self):
        with pytest.raises(InvalidInputError):
            rank_transform(np.array([1.0, np.nan]))
        with pytest.raises(InvalidInputError):
            rank_transform(np.array([np.inf, 0.0]))

    def test_range_invariant(self, rng):
        y = rng.normal(size=37)
        t = rank_transform(y)
        assert np.all(t.values >= 1 / 37 - 0.5)
        assert np.all(t.values <= 0.5)

    def test_sum_with_distinct_values(self, rng):
        y = rng.normal(size=25)  # continuous draws: distinct a.s.
        assert rank_transform(y).values.sum() == pytest.approx(0.5, abs=1e-12)

    @given(
        st.lists(
            st.floats(-50, 50).map(lambda v: round(v, 6)), min_size=1, max_size=60
        )
    )
    @settings(max_examples=60, deadline=None)
    def test_monotone_transform_invariance(self, values):
        # quantized inputs: the float images of distinct points stay distinct,
        # so the maps below are strictly increasing in double precision too
        y = np.asarray(values)
        a = rank_transform(y).values
        b = rank_transform(np.exp(y * 0.1)).values  # strictly increasing map
        c = rank_transform(3.0 * y + 7.0).values
        assert np.array_equal(a, b)
        assert np.array_equal(a, c)

    def test_determinism_bitwise(self, rng):
        y = rng.normal(size=50)
        a = rank_transform(y)
        b = rank_transform(y.copy())
        assert np.array_equal(a.values, b.values)
        assert np.array_equal(a.ranks, b.ranks)


class TestCenterColumns:
    def test_examples(self):
        Xc, mu = center_columns(np.array([[1.0], [3.0]]))
        assert np.allclose(Xc.ravel(), [-1, 1]) and mu[0] == 2

        X = np.array([[1.0, -1.0], [-1.0, 1.0]])
        Xc, mu = center_columns(X)
        assert np.array_equal(Xc, X) and np.allclose(mu, 0)

        Xc, mu = center_columns(np.array([[5.0], [5.0], [5.0]]))
        assert np.allclose(Xc, 0) and mu[0] == 5

    def test_mean_zero_within_scale(self, rng):
        X = rng.normal(size=(40, 7)) * 100 + 3
        Xc, _ = center_columns(X)
        scale = np.abs(X).max(axis=0)
        assert np.all(np.abs(Xc.mean(axis=0)) <= 1e-12 * np.maximum(scale, 1))


class TestDataset:
    def test_invariants(self, rng):
        X = rng.normal(size=(5, 3))
        ds = Dataset(X=X, Y=rng.normal(size=5), names=("a", "b", "c"))
        assert ds.n == 5 and ds.p == 3
        assert not ds.X.flags.writeable

    def test_rejects_bad_inputs(self, rng):
        X = rng.normal(size=(5, 3))
        with pytest.raises(InvalidInputError):
            Dataset(X=X, Y=np.ones(4))
        with pytest.raises(InvalidInputError):
            Dataset(X=X * np.nan, Y=np.ones(5))
        with pytest.raises(InvalidInputError):
            Dataset(X=X[:1], Y=np.ones(1))
        with pytest.raises(InvalidInputError):
            Dataset(X=X, Y=np.ones(5), names=("a",))


class TestSeedSpec:
    def test_reproducible_streams(self):
        s = SeedSpec(root_seed=9, stream_id=4)
        assert np.array_equal(s.rng().standard_normal(8), s.rng().standard_normal(8))

    def test_streams_differ(self):
        s = SeedSpec(7)
        a = s.with_stream(1).rng().standard_normal(4)
        b = s.with_stream(2).rng().standard_normal(4)
        assert not np.array_equal(a, b)

    def test_derive_is_deterministic_and_tag_sensitive(self):
        s = SeedSpec(7, 3)
        assert s.derive(1, 2) == s.derive(1, 2)
        assert s.derive(1, 2) != s.derive(2, 1)
        assert s.derive(1) != s.with_stream(4).derive(1)

    def test_rejects_out_of_range(self):
        with pytest.raises(InvalidInputError):
            SeedSpec(-1)
        with pytest.raises(InvalidInputError):
            SeedSpec(0, 1 << 65)


class TestLoadCsv:
    def _write(self, tmp_path, text):
        f = tmp_path / "data.csv"
        f.write_text(text, encoding="utf-8")
        return f

    def test_roundtrip_by_name(self, tmp_path):
        f = self._write(tmp_path, "a,b,y\n1,2,3\n4,5,6\n")
        ds = load_csv(f, response="y")
        assert ds.names == ("a", "b")
        assert np.allclose(ds.Y, [3, 6])
        assert np.allclose(ds.X, [[1, 2], [4, 5]])

    def test_by_index(self, tmp_path):
        f = self._write(tmp_path, "a,b,y\n1,2,3\n4,5,6\n")
        ds = load_csv(f, response_index=0)
        assert np.allclose(ds.Y, [1, 4])
        assert ds.names == ("b", "y")

    def test_unparsable_cell_names_row(self, tmp_path):
        f = self._write(tmp_path, "a,y\n1,2\nbad,4\n")
        with pytest.raises(CsvParseError, match="row 2"):
            load_csv(f, response="y")

    def test_missing_response(self, tmp_path):
        f = self._write(tmp_path, "a,y\n1,2\n3,4\n")
        with pytest.raises(InvalidInputError, match="nope"):
            load_csv(f, response="nope")
        with pytest.raises(InvalidInputError):
            load_csv(f)
