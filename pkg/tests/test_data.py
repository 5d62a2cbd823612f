"""Dataset parsing, normalization, serialization, synthetic problems."""

import gzip
import io

import numpy as np
import pytest

from lgbfgs.data import (
    Dataset,
    normalize_rows,
    parse_libsvm,
    serialize_libsvm,
    synth_logistic_dataset,
    synth_problem,
)
from lgbfgs.objectives import LogisticObjective, QuadraticObjective


class TestParse:
    def test_basic_line(self):
        ds = parse_libsvm("+1 1:0.5 3:-2\n")
        assert ds.n_samples == 1
        assert ds.n_features == 3
        assert ds.labels[0] == 1.0
        row = ds.features.toarray()[0]
        np.testing.assert_allclose(row, [0.5, 0.0, -2.0])

    def test_empty_stream_rejected(self):
        with pytest.raises(ValueError, match="no samples"):
            parse_libsvm("")

    def test_zero_label_maps_to_negative(self):
        ds = parse_libsvm("0 1:1\n1 1:2\n")
        np.testing.assert_array_equal(ds.labels, [-1.0, 1.0])

    def test_nonbinary_label_rejected(self):
        with pytest.raises(ValueError, match="line 2"):
            parse_libsvm("+1 1:1\n3 1:2\n")

    def test_malformed_token_carries_line_number(self):
        with pytest.raises(ValueError, match="line 2"):
            parse_libsvm("+1 1:1\n-1 1:abc\n")

    def test_zero_based_index_rejected(self):
        with pytest.raises(ValueError, match="1-based"):
            parse_libsvm("+1 0:1\n")

    def test_duplicate_index_rejected(self):
        with pytest.raises(ValueError, match="duplicate"):
            parse_libsvm("+1 2:1 2:3\n")

    def test_explicit_dimension(self):
        ds = parse_libsvm("+1 1:1\n", n_features=5)
        assert ds.n_features == 5
        with pytest.raises(ValueError, match="exceeds"):
            parse_libsvm("+1 7:1\n", n_features=5)

    def test_label_only_row_is_zero_row(self):
        ds = parse_libsvm("+1 2:1\n-1\n")
        assert ds.n_samples == 2
        assert ds.row_norms()[1] == 0.0

    def test_reads_file_and_gzip(self, tmp_path):
        text = "+1 1:0.5 2:1\n-1 2:-3\n"
        plain = tmp_path / "data.txt"
        plain.write_text(text)
        zipped = tmp_path / "data.txt.gz"
        with gzip.open(zipped, "wt") as fh:
            fh.write(text)
        ds1 = parse_libsvm(str(plain))
        ds2 = parse_libsvm(str(zipped))
        np.testing.assert_array_equal(ds1.features.toarray(), ds2.features.toarray())
        np.testing.assert_array_equal(ds1.labels, ds2.labels)

    def test_stream_input(self):
        ds = parse_libsvm(io.StringIO("+1 1:2\n"))
        assert ds.n_samples == 1


class TestRoundTrip:
    def test_parse_serialize_parse_is_identity(self):
        rng = np.random.default_rng(0)
        ds = synth_logistic_dataset(n=25, d=7, seed=1)
        text = serialize_libsvm(ds)
        again = parse_libsvm(text, n_features=7)
        np.testing.assert_array_equal(ds.labels, again.labels)
        np.testing.assert_array_equal(ds.features.toarray(), again.features.toarray())

    def test_serialize_to_stream(self):
        ds = parse_libsvm("+1 1:0.25\n")
        buf = io.StringIO()
        serialize_libsvm(ds, buf)
        assert buf.getvalue() == "+1 1:0.25\n"


class TestNormalize:
    def test_row_scaling_hand_case(self):
        ds = parse_libsvm("+1 1:3 2:4\n")
        normalized = normalize_rows(ds)
        np.testing.assert_allclose(normalized.features.toarray()[0], [0.6, 0.8])

    def test_unit_rows_unchanged(self):
        ds = parse_libsvm("+1 1:1\n")
        np.testing.assert_allclose(normalize_rows(ds).features.toarray(), [[1.0]])

    def test_idempotent(self):
        ds = synth_logistic_dataset(n=30, d=5, seed=2)
        once = normalize_rows(ds)
        twice = normalize_rows(once)
        np.testing.assert_allclose(once.features.toarray(), twice.features.toarray(),
                                   atol=1e-15)

    def test_zero_rows_preserved(self, caplog):
        ds = parse_libsvm("+1 2:1\n-1\n")
        with caplog.at_level("WARNING"):
            out = normalize_rows(ds)
        assert "zero rows" in caplog.text
        assert out.row_norms()[1] == 0.0
        assert out.n_samples == 2

    def test_all_norms_one_after_normalization(self):
        ds = synth_logistic_dataset(n=100, d=12, seed=3)
        norms = ds.row_norms()
        np.testing.assert_allclose(norms, 1.0, atol=1e-12)


class TestSynthProblems:
    def test_quadratic_info(self):
        obj = synth_problem("quadratic", d=2, spectrum=np.array([1.0, 2.0]),
                            seed=0, rotate=False)
        assert isinstance(obj, QuadraticObjective)
        assert obj.info.mu == pytest.approx(1.0)
        assert obj.info.lipschitz_L == pytest.approx(2.0)
        assert obj.info.hess_lip_CL == 0.0

    def test_quadratic_rotation_preserves_spectrum(self):
        obj = synth_problem("quadratic", d=5, spectrum=(1.0, 9.0), seed=1, rotate=True)
        eigs = np.linalg.eigvalsh(obj.hess_matrix(np.zeros(5)))
        np.testing.assert_allclose(eigs, np.linspace(1.0, 9.0, 5), atol=1e-10)

    def test_determinism(self):
        a = synth_problem("logistic", d=6, n=40, mu=1e-3, seed=7)
        b = synth_problem("logistic", d=6, n=40, mu=1e-3, seed=7)
        np.testing.assert_array_equal(a.dataset.features.toarray(),
                                      b.dataset.features.toarray())
        np.testing.assert_array_equal(a.dataset.labels, b.dataset.labels)

    def test_logistic_lipschitz_formula(self):
        obj = synth_problem("logistic", d=50, n=500, mu=1e-4, seed=0)
        assert isinstance(obj, LogisticObjective)
        assert obj.info.lipschitz_L == pytest.approx(0.25 + 1e-4)

    def test_bad_spectrum_rejected(self):
        with pytest.raises(ValueError):
            synth_problem("quadratic", d=3, spectrum=(-1.0, 2.0), seed=0)
        with pytest.raises(ValueError):
            synth_problem("quadratic", d=3, spectrum=np.ones(4), seed=0)

    def test_labels_are_binary(self):
        ds = synth_logistic_dataset(n=50, d=4, seed=5)
        assert set(np.unique(ds.labels)) == {-1.0, 1.0}


class TestDatasetValidation:
    def test_bad_labels_rejected(self):
        import scipy.sparse as sp

        with pytest.raises(ValueError):
            Dataset(features=sp.csr_matrix(np.eye(2)), labels=np.array([1.0, 2.0]))

    def test_label_count_mismatch(self):
        import scipy.sparse as sp

        with pytest.raises(ValueError):
            Dataset(features=sp.csr_matrix(np.eye(3)), labels=np.array([1.0, -1.0]))
