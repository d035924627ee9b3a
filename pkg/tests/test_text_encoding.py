import hashlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trialmatch.errors import DimMismatch, EmptySentence, IoError, MissingKey
from trialmatch.text_encoding import (
    EmbeddingTable,
    FeatureHashEncoder,
    PrecomputedEncoder,
    TokenEmbeddingMatrix,
    concept_embedding,
    make_encoder,
    read_embedding_file,
    tokenize,
    write_embedding_file,
)

token_lists = st.lists(
    st.text(alphabet="abcdefghijklmnopqrstuvwxyz0123456789", min_size=1, max_size=8),
    min_size=1,
    max_size=6,
)


def hash_oracle(token, seed, dim):
    """Independent re-evaluation of the documented hash recipe."""
    digest = hashlib.blake2b(
        token.encode("utf-8"),
        key=seed.to_bytes(8, "little"),
        digest_size=20,
    ).digest()
    vec = np.zeros(dim)
    for k in range(4):
        chunk = digest[5 * k : 5 * k + 5]
        bucket = int.from_bytes(chunk[:4], "little") % dim
        sign = 1.0 if chunk[4] % 2 == 0 else -1.0
        vec[bucket] += sign / 2.0  # 1/sqrt(4)
    return vec


class TestTokenize:
    def test_lowercases_and_splits(self):
        assert tokenize("Chronic Pain, severe") == ["chronic", "pain", "severe"]

    def test_decimal_codes_stay_whole(self):
        assert tokenize("diagnosis code 692.9 recorded") == [
            "diagnosis",
            "code",
            "692.9",
            "recorded",
        ]

    def test_numbers_and_units(self):
        assert tokenize("age over 50 years") == ["age", "over", "50", "years"]

    def test_punctuation_only_is_empty(self):
        assert tokenize("--- !!!") == []


class TestFeatureHash:
    def test_base_vector_matches_recipe_oracle(self):
        enc = FeatureHashEncoder(embed_dim=16, seed=7)
        for token in ("chronic", "pain", "692.9", "zz"):
            np.testing.assert_array_equal(
                enc.base_vector(token), hash_oracle(token, 7, 16)
            )

    def test_deterministic_across_instances(self):
        a = FeatureHashEncoder(embed_dim=32, seed=3)
        b = FeatureHashEncoder(embed_dim=32, seed=3)
        m1 = a.encode_tokens("stable regimen of metformin")
        m2 = b.encode_tokens("stable regimen of metformin")
        np.testing.assert_array_equal(m1.vectors, m2.vectors)

    def test_seed_changes_vectors(self):
        a = FeatureHashEncoder(embed_dim=32, seed=0)
        b = FeatureHashEncoder(embed_dim=32, seed=1)
        assert not np.array_equal(
            a.encode_tokens("pain").vectors, b.encode_tokens("pain").vectors
        )

    def test_one_token_sentence_shape(self):
        enc = FeatureHashEncoder(embed_dim=8, seed=0)
        m = enc.encode_tokens("insulin")
        assert m.tokens == ["insulin"]
        assert m.vectors.shape == (1, 8)

    def test_window_one_is_bare_hash(self):
        enc = FeatureHashEncoder(embed_dim=16, seed=2, window=1)
        m = enc.encode_tokens("chronic pain")
        np.testing.assert_array_equal(m.vectors[1], hash_oracle("pain", 2, 16))

    def test_window_three_mixes_neighbors(self):
        # mixed_i = base_i + 0.5*(base_{i-1} + base_{i+1}), edges truncated
        enc = FeatureHashEncoder(embed_dim=16, seed=2, window=3)
        m = enc.encode_tokens("chronic pain")
        chronic = hash_oracle("chronic", 2, 16)
        pain = hash_oracle("pain", 2, 16)
        np.testing.assert_allclose(m.vectors[0], chronic + 0.5 * pain, atol=1e-12)
        np.testing.assert_allclose(m.vectors[1], pain + 0.5 * chronic, atol=1e-12)
        assert not np.array_equal(
            m.vectors[1], FeatureHashEncoder(16, 2, window=1).encode_tokens("chronic pain").vectors[1]
        )

    def test_window_five_second_neighbor_weight(self):
        enc = FeatureHashEncoder(embed_dim=16, seed=0, window=5)
        toks = ["a", "b", "c"]
        m = enc.encode_tokens(toks)
        expect = (
            hash_oracle("c", 0, 16)
            + 0.5 * hash_oracle("b", 0, 16)
            + 0.25 * hash_oracle("a", 0, 16)
        )
        np.testing.assert_allclose(m.vectors[2], expect, atol=1e-12)

    def test_token_list_input(self):
        enc = FeatureHashEncoder(embed_dim=8, seed=0)
        m = enc.encode_tokens(["x", "y"])
        assert m.tokens == ["x", "y"]

    def test_empty_sentence_raises(self):
        enc = FeatureHashEncoder(embed_dim=8, seed=0)
        with pytest.raises(EmptySentence):
            enc.encode_tokens("?!")
        with pytest.raises(EmptySentence):
            enc.encode_tokens([])

    def test_bad_params_rejected(self):
        with pytest.raises(ValueError):
            FeatureHashEncoder(embed_dim=0)
        with pytest.raises(ValueError):
            FeatureHashEncoder(window=2)

    @given(tokens=token_lists)
    @settings(max_examples=40, deadline=None)
    def test_pure_function_of_tokens(self, tokens):
        enc = FeatureHashEncoder(embed_dim=16, seed=5)
        fresh = FeatureHashEncoder(embed_dim=16, seed=5)
        np.testing.assert_array_equal(
            enc.encode_tokens(tokens).vectors, fresh.encode_tokens(tokens).vectors
        )


class TestConceptEmbedding:
    def test_single_token_unchanged(self):
        enc = FeatureHashEncoder(embed_dim=16, seed=1)
        np.testing.assert_array_equal(
            concept_embedding(enc, "insulin"), enc.base_vector("insulin")
        )

    def test_elementwise_max_definition(self):
        rows = np.array([[1.0, -2.0], [0.0, 5.0]])

        class Stub:
            def encode_tokens(self, s):
                return TokenEmbeddingMatrix(tokens=["a", "b"], vectors=rows)

        np.testing.assert_array_equal(concept_embedding(Stub(), "a b"), [1.0, 5.0])

    def test_order_invariant_at_window_one(self):
        enc = FeatureHashEncoder(embed_dim=16, seed=3, window=1)
        fwd = concept_embedding(enc, "chronic kidney disease")
        rev = concept_embedding(enc, "disease kidney chronic")
        np.testing.assert_array_equal(fwd, rev)

    @given(tokens=token_lists)
    @settings(max_examples=40, deadline=None)
    def test_dominates_every_row(self, tokens):
        enc = FeatureHashEncoder(embed_dim=16, seed=0)
        m = enc.encode_tokens(tokens)
        pooled = concept_embedding(enc, " ".join(tokens))
        assert np.all(pooled[None, :] >= m.vectors - 1e-12)


class TestEmbeddingFile:
    def make_table(self):
        rng = np.random.default_rng(0)
        return EmbeddingTable(
            dim=4,
            entries={
                "no prior insulin": rng.normal(size=(3, 4)),
                "age over 50": rng.normal(size=(4, 4)),
                "": rng.normal(size=(1, 4)),
            },
        )

    def test_round_trip(self, tmp_path):
        table = self.make_table()
        p = tmp_path / "emb.bin"
        write_embedding_file(p, table)
        back = read_embedding_file(p)
        assert back.dim == 4
        assert set(back.entries) == set(table.entries)
        for k in table.entries:
            np.testing.assert_allclose(
                back.entries[k], table.entries[k].astype(np.float32), atol=0
            )

    def test_write_read_write_is_stable(self, tmp_path):
        # float32 quantization happens once; the second pass is bit-identical
        p1, p2 = tmp_path / "a.bin", tmp_path / "b.bin"
        write_embedding_file(p1, self.make_table())
        write_embedding_file(p2, read_embedding_file(p1))
        assert p1.read_bytes() == p2.read_bytes()

    def test_header_layout(self, tmp_path):
        p = tmp_path / "emb.bin"
        write_embedding_file(p, EmbeddingTable(dim=2, entries={"k": np.zeros((1, 2))}))
        first_line = p.read_bytes().split(b"\n", 1)[0]
        import json

        header = json.loads(first_line)
        assert header == {"dim": 2, "count": 1}

    def test_truncated_file_rejected(self, tmp_path):
        p = tmp_path / "emb.bin"
        write_embedding_file(p, self.make_table())
        data = p.read_bytes()
        p.write_bytes(data[:-3])
        with pytest.raises(IoError):
            read_embedding_file(p)

    def test_trailing_bytes_rejected(self, tmp_path):
        p = tmp_path / "emb.bin"
        write_embedding_file(p, self.make_table())
        p.write_bytes(p.read_bytes() + b"x")
        with pytest.raises(IoError):
            read_embedding_file(p)

    def test_bad_header_rejected(self, tmp_path):
        p = tmp_path / "emb.bin"
        p.write_bytes(b'{"dim": 4}\n')
        with pytest.raises(IoError):
            read_embedding_file(p)

    def test_wrong_entry_dim_rejected(self, tmp_path):
        table = EmbeddingTable(dim=4, entries={"k": np.zeros((2, 3))})
        with pytest.raises(DimMismatch):
            write_embedding_file(tmp_path / "emb.bin", table)


class TestPrecomputedEncoder:
    def test_lookup_and_missing_key(self, tmp_path):
        p = tmp_path / "emb.bin"
        mat = np.arange(8, dtype=float).reshape(2, 4)
        write_embedding_file(p, EmbeddingTable(dim=4, entries={"no prior insulin": mat}))
        enc = PrecomputedEncoder(p)
        got = enc.encode_tokens("no prior insulin")
        np.testing.assert_allclose(got.vectors, mat)
        with pytest.raises(MissingKey):
            enc.encode_tokens("something else")

    def test_dim_mismatch_rejected(self, tmp_path):
        p = tmp_path / "emb.bin"
        write_embedding_file(p, EmbeddingTable(dim=4, entries={"k": np.zeros((1, 4))}))
        with pytest.raises(DimMismatch):
            PrecomputedEncoder(p, embed_dim=8)

    def test_check_keys(self, tmp_path):
        p = tmp_path / "emb.bin"
        write_embedding_file(p, EmbeddingTable(dim=4, entries={"a b": np.zeros((2, 4))}))
        enc = PrecomputedEncoder(p)
        enc.check_keys(["a b"])
        with pytest.raises(MissingKey):
            enc.check_keys(["a b", "missing one"])


def test_make_encoder_dispatch(tmp_path):
    enc = make_encoder({"kind": "feature_hash", "embed_dim": 16, "seed": 4, "window": 5})
    assert enc.config() == {"kind": "feature_hash", "embed_dim": 16, "seed": 4, "window": 5}
    p = tmp_path / "emb.bin"
    write_embedding_file(p, EmbeddingTable(dim=4, entries={"k": np.zeros((1, 4))}))
    enc2 = make_encoder({"kind": "precomputed_file", "path": str(p)})
    assert enc2.embed_dim == 4
    with pytest.raises(ValueError):
        make_encoder({"kind": "nope"})
