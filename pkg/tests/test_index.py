import numpy as np
import pytest

from ragfuse import index as index_mod
from ragfuse.errors import (
    BadMagic,
    DimensionMismatch,
    EmptyIndex,
    TruncatedFile,
    VersionMismatch,
)
from ragfuse.index import (
    Index,
    ProjectionHead,
    all_scores,
    dual_retrieve,
    read_corpus,
    read_head,
    read_index,
    score,
    top_k,
    write_corpus,
    write_head,
    write_index,
)
from ragfuse.types import IndexRecord


def rec(rid, image, text=None, ref="r", src="s"):
    return IndexRecord(rid, image, text if text is not None else image, ref, src)


def small_index():
    return Index(
        [
            rec(0, [1.0, 0.0], [1.0, 0.0]),
            rec(1, [0.0, 1.0], [0.5, 0.5]),
            rec(2, [0.6, 0.8], [0.0, 1.0]),
        ]
    )


class TestScore:
    def test_identity_text(self):
        proj = ProjectionHead.identity(2, "text")
        assert score([1.0, 0.0], rec(0, [0.0, 1.0], [1.0, 0.0]), "text", proj) == 1.0

    def test_identity_image_orthogonal(self):
        proj = ProjectionHead.identity(2, "image")
        assert score([1.0, 0.0], rec(0, [0.0, 1.0], [1.0, 0.0]), "image", proj) == 0.0

    def test_hand_matrix_multiply(self):
        # W = 2I, b = 0: q.(W t) = [1,2].[6,8] = 22
        proj = ProjectionHead(2 * np.eye(2), np.zeros(2), "text")
        assert score([1.0, 2.0], rec(0, [9.0, 9.0], [3.0, 4.0]), "text", proj) == pytest.approx(22.0)

    def test_dimension_mismatch(self):
        proj = ProjectionHead.identity(2, "text")
        with pytest.raises(DimensionMismatch):
            score([1.0, 0.0, 0.0], rec(0, [1.0, 0.0], [1.0, 0.0]), "text", proj)

    def test_head_tag_mismatch(self):
        proj = ProjectionHead.identity(2, "text")
        with pytest.raises(ValueError):
            score([1.0, 0.0], rec(0, [1.0, 0.0], [1.0, 0.0]), "image", proj)

    def test_linear_in_projection(self):
        # score(W1+W2, b=0) = score(W1) + score(W2), the gradient-sanity precursor
        rng = np.random.default_rng(3)
        w1, w2 = rng.normal(size=(2, 4, 4))
        q = rng.normal(size=4)
        r = rec(0, rng.normal(size=4).astype(np.float32))
        s_sum = score(q, r, "image", ProjectionHead(w1 + w2, np.zeros(4), "image"))
        s1 = score(q, r, "image", ProjectionHead(w1, np.zeros(4), "image"))
        s2 = score(q, r, "image", ProjectionHead(w2, np.zeros(4), "image"))
        assert s_sum == pytest.approx(s1 + s2, rel=1e-12)


class TestTopK:
    def test_ordering(self):
        idx = small_index()
        proj = ProjectionHead.identity(2, "image")
        got = top_k([1.0, 0.0], idx, "image", proj, 2)
        assert got.record_ids() == [0, 2]  # scores 1.0, 0.6, 0.0

    def test_tie_break_lowest_ids(self):
        idx = Index([rec(i, [1.0, 0.0]) for i in range(4)])
        proj = ProjectionHead.identity(2, "image")
        got = top_k([1.0, 0.0], idx, "image", proj, 2)
        assert got.record_ids() == [0, 1]

    def test_brute_force_oracle_random_index(self):
        rng = np.random.default_rng(11)
        records = [rec(i, rng.normal(size=8).astype(np.float32),
                       rng.normal(size=8).astype(np.float32)) for i in range(100)]
        idx = Index(records)
        proj = ProjectionHead(rng.normal(size=(8, 8)), rng.normal(size=8), "text")
        q = rng.normal(size=8)
        scores = all_scores(q, idx, "text", proj)
        oracle = np.lexsort((np.arange(100), -scores))[:10]
        got = top_k(q, idx, "text", proj, 10)
        assert got.record_ids() == [records[i].record_id for i in oracle]

    def test_k_bounds(self):
        idx = small_index()
        proj = ProjectionHead.identity(2, "image")
        with pytest.raises(ValueError):
            top_k([1.0, 0.0], idx, "image", proj, 0)
        with pytest.raises(ValueError):
            top_k([1.0, 0.0], idx, "image", proj, 4)

    def test_empty_index(self):
        with pytest.raises(EmptyIndex):
            top_k([1.0], Index([]), "image", ProjectionHead.identity(1, "image"), 1)


class TestDualRetrieve:
    def make(self):
        # text head favours records 0,1; image head favours 2,3
        return Index(
            [
                rec(0, [0.0, 0.1], [1.0, 0.0]),
                rec(1, [0.0, 0.2], [0.9, 0.0]),
                rec(2, [1.0, 0.0], [0.0, 0.3]),
                rec(3, [0.9, 0.0], [0.0, 0.2]),
            ]
        )

    def test_union_disjoint(self):
        idx = self.make()
        t = ProjectionHead.identity(2, "text")
        im = ProjectionHead.identity(2, "image")
        got = dual_retrieve([1.0, 0.0], idx, t, im, 2)
        assert got.record_ids() == [0, 2, 1, 3]  # sorted by raw score desc
        assert len(got) == 4

    def test_union_dedup_keeps_max(self):
        idx = Index([rec(0, [1.0, 0.0], [0.5, 0.0])])  # both heads return record 0
        t = ProjectionHead.identity(2, "text")
        im = ProjectionHead.identity(2, "image")
        got = dual_retrieve([1.0, 0.0], idx, t, im, 1)
        assert len(got) == 1
        assert got.entries[0].score == pytest.approx(1.0)
        assert got.entries[0].head == "image"

    def test_interleave_hand_trace(self):
        # text ranks [A, B]; image ranks [C, A]; interleave-then-dedup = [A, C, B]
        idx = Index(
            [
                rec(0, [0.5, 0.0], [1.0, 0.0]),   # A
                rec(1, [0.0, 0.0], [0.9, 0.0]),   # B
                rec(2, [1.0, 0.0], [0.0, 0.0]),   # C
            ]
        )
        t = ProjectionHead.identity(2, "text")
        im = ProjectionHead.identity(2, "image")
        got = dual_retrieve([1.0, 0.0], idx, t, im, 2, merge="interleave")
        assert got.record_ids() == [0, 2, 1]

    def test_unknown_merge(self):
        idx = self.make()
        t = ProjectionHead.identity(2, "text")
        im = ProjectionHead.identity(2, "image")
        with pytest.raises(ValueError):
            dual_retrieve([1.0, 0.0], idx, t, im, 1, merge="zip")


class TestIndexFile:
    def test_f32_round_trip_bit_identical(self, tmp_path):
        idx = small_index()
        path = tmp_path / "a.rgdx"
        write_index(idx, path)
        back = read_index(path)
        assert len(back) == len(idx)
        assert back.storage_dtype == "f32"
        for a, b in zip(idx.records, back.records):
            assert a.record_id == b.record_id
            np.testing.assert_array_equal(a.image_emb, b.image_emb)
            np.testing.assert_array_equal(a.text_emb, b.text_emb)
            assert a.payload_ref == b.payload_ref
            assert a.source_tag == b.source_tag

    def test_f16_quantization_bound(self, tmp_path):
        rng = np.random.default_rng(5)
        records = [rec(i, rng.uniform(-1, 1, 16).astype(np.float32),
                       rng.uniform(-1, 1, 16).astype(np.float32)) for i in range(20)]
        idx = Index(records, storage_dtype="f16")
        path = tmp_path / "h.rgdx"
        write_index(idx, path)
        back = read_index(path)
        assert back.storage_dtype == "f16"
        # half precision keeps 10 mantissa bits: error <= 2^-10 per unit magnitude
        for a, b in zip(idx.records, back.records):
            err = np.abs(a.image_emb - b.image_emb)
            bound = np.maximum(np.abs(a.image_emb), 1e-3) * 2**-10
            assert np.all(err <= bound)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.rgdx"
        idx = small_index()
        write_index(idx, path)
        data = bytearray(path.read_bytes())
        data[:4] = b"NOPE"
        path.write_bytes(bytes(data))
        with pytest.raises(BadMagic):
            read_index(path)

    def test_version_mismatch(self, tmp_path):
        path = tmp_path / "v.rgdx"
        write_index(small_index(), path)
        data = bytearray(path.read_bytes())
        data[4] = 99
        path.write_bytes(bytes(data))
        with pytest.raises(VersionMismatch):
            read_index(path)

    def test_truncated(self, tmp_path):
        path = tmp_path / "t.rgdx"
        write_index(small_index(), path)
        data = path.read_bytes()
        path.write_bytes(data[: len(data) - 7])
        with pytest.raises(TruncatedFile):
            read_index(path)

    def test_scores_invariant_under_f32_round_trip(self, tmp_path):
        rng = np.random.default_rng(9)
        records = [rec(i, rng.normal(size=6).astype(np.float32)) for i in range(30)]
        idx = Index(records)
        path = tmp_path / "s.rgdx"
        write_index(idx, path)
        back = read_index(path)
        proj = ProjectionHead.identity(6, "image")
        q = rng.normal(size=6)
        np.testing.assert_array_equal(
            all_scores(q, idx, "image", proj), all_scores(q, back, "image", proj)
        )


class TestCorpusFormat:
    def test_round_trip(self, tmp_path):
        idx = small_index()
        path = tmp_path / "corpus.jsonl"
        write_corpus(idx, path)
        back = read_corpus(path)
        assert [r.record_id for r in back.records] == [0, 1, 2]
        np.testing.assert_allclose(back.records[2].image_emb, [0.6, 0.8], rtol=1e-6)

    def test_normalize_at_ingestion(self, tmp_path):
        idx = Index([rec(0, [3.0, 4.0], [0.0, 2.0])])
        path = tmp_path / "c.jsonl"
        write_corpus(idx, path)
        back = read_corpus(path, normalize=True)
        np.testing.assert_allclose(back.records[0].image_emb, [0.6, 0.8], rtol=1e-6)
        np.testing.assert_allclose(np.linalg.norm(back.records[0].text_emb), 1.0, rtol=1e-6)


class TestHeadSidecar:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(2)
        head = ProjectionHead(rng.normal(size=(5, 5)), rng.normal(size=5), "image")
        path = tmp_path / "h.rgph"
        write_head(head, path)
        back = read_head(path)
        assert back.head_tag == "image"
        np.testing.assert_array_equal(back.weight, head.weight)
        np.testing.assert_array_equal(back.bias, head.bias)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "x.rgph"
        path.write_bytes(b"WHAT" + b"\x00" * 16)
        with pytest.raises(BadMagic):
            read_head(path)


class TestIndexInvariants:
    def test_record_ids_strictly_increasing(self):
        with pytest.raises(ValueError):
            Index([rec(1, [1.0]), rec(1, [2.0])])
        with pytest.raises(ValueError):
            Index([rec(2, [1.0]), rec(1, [2.0])])

    def test_dimension_consistency(self):
        with pytest.raises(DimensionMismatch):
            Index([rec(0, [1.0, 2.0]), rec(1, [1.0, 2.0, 3.0])])
