import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from trialmatch.errors import (
    DimMismatch,
    IoError,
    MalformedRow,
    MissingCodeWarning,
    UnknownCode,
)
from trialmatch.memory import (
    DEMO_DIM,
    N_SLOTS,
    SLOT_INDEX,
    Demographics,
    Patient,
    Visit,
    apply_update,
    demo_features,
    encode_patient,
    encode_prepared,
    gates,
    init_memory_params,
    load_patients,
    normalize_gender,
    prepare_patient_updates,
    save_patients,
    visit_level_embeddings,
)
from trialmatch.taxonomy import Taxonomy, TaxonomyNode
from trialmatch.text_encoding import FeatureHashEncoder, concept_embedding

EMBED = 8
MEM = 4


def chain_nodes(code_type, root, words):
    """One root-to-leaf chain; returns {node_id: TaxonomyNode}."""
    nodes = {}
    parent = None
    desc = []
    for level, word in enumerate(words, start=1):
        node_id = f"{root}.{level}"
        desc.append(word)
        nodes[node_id] = TaxonomyNode(
            node_id=node_id,
            level=level,
            parent_id=parent,
            code_type=code_type,
            description=" ".join(desc),
        )
        parent = node_id
    return nodes


def toy_taxonomies():
    dx = {}
    dx.update(chain_nodes("diagnosis", "A", ["skin", "derm", "ecz", "contact"]))
    dx.update(chain_nodes("diagnosis", "B", ["skin2", "derm2", "ecz2", "atopic"]))
    # a second leaf under the A chain's level-3 node
    dx["A.4b"] = TaxonomyNode(
        node_id="A.4b",
        level=4,
        parent_id="A.3",
        code_type="diagnosis",
        description="skin derm ecz irritant",
    )
    rx = chain_nodes("medication", "M", ["topical", "steroid", "cream", "mild"])
    px = chain_nodes("procedure", "P", ["biopsy", "punch", "skin3", "small"])
    return {
        "diagnosis": Taxonomy(code_type="diagnosis", nodes=dx),
        "medication": Taxonomy(code_type="medication", nodes=rx),
        "procedure": Taxonomy(code_type="procedure", nodes=px),
    }


@pytest.fixture(scope="module")
def taxonomies():
    return toy_taxonomies()


@pytest.fixture(scope="module")
def encoder():
    return FeatureHashEncoder(embed_dim=EMBED, seed=0)


def rand_params(seed=0):
    return init_memory_params(np.random.default_rng(seed), EMBED, MEM)


def zero_params():
    return {
        "mem.erase.w": np.zeros((MEM, EMBED)),
        "mem.erase.b": np.zeros(MEM),
        "mem.add.w": np.zeros((MEM, EMBED)),
        "mem.add.b": np.zeros(MEM),
    }


class TestVisitLevelEmbeddings:
    def test_single_code_gives_chain_embeddings(self, taxonomies, encoder):
        visit = Visit(t=1, diagnoses=("A.4",))
        out = visit_level_embeddings(taxonomies, encoder, visit)
        assert set(out) == {("diagnosis", lv) for lv in (1, 2, 3, 4)}
        chain_descs = ["skin", "skin derm", "skin derm ecz", "skin derm ecz contact"]
        for level, desc in enumerate(chain_descs, start=1):
            np.testing.assert_array_equal(
                out[("diagnosis", level)], concept_embedding(encoder, desc)
            )

    def test_shared_root_pools_to_that_root(self, taxonomies, encoder):
        visit = Visit(t=1, diagnoses=("A.4", "A.4b"))
        out = visit_level_embeddings(taxonomies, encoder, visit)
        np.testing.assert_array_equal(
            out[("diagnosis", 1)], concept_embedding(encoder, "skin")
        )

    def test_distinct_codes_pool_elementwise_max(self, taxonomies, encoder):
        visit = Visit(t=1, diagnoses=("A.4", "B.4"))
        out = visit_level_embeddings(taxonomies, encoder, visit)
        a = concept_embedding(encoder, "skin derm ecz contact")
        b = concept_embedding(encoder, "skin2 derm2 ecz2 atopic")
        want = np.array([max(a[i], b[i]) for i in range(EMBED)])
        np.testing.assert_allclose(out[("diagnosis", 4)], want, atol=0)

    def test_mixed_types_all_present(self, taxonomies, encoder):
        visit = Visit(t=1, diagnoses=("A.4",), medications=("M.4",), procedures=("P.4",))
        out = visit_level_embeddings(taxonomies, encoder, visit)
        assert len(out) == 12

    def test_unknown_code_error_policy(self, taxonomies, encoder):
        visit = Visit(t=1, diagnoses=("nope",))
        with pytest.raises(UnknownCode):
            visit_level_embeddings(taxonomies, encoder, visit, policy="error")

    def test_unknown_code_skip_policy(self, taxonomies, encoder):
        visit = Visit(t=1, diagnoses=("nope", "A.4"))
        with pytest.warns(MissingCodeWarning, match="nope"):
            out = visit_level_embeddings(taxonomies, encoder, visit, policy="skip")
        np.testing.assert_array_equal(
            out[("diagnosis", 4)], concept_embedding(encoder, "skin derm ecz contact")
        )

    def test_all_codes_skipped_leaves_type_absent(self, taxonomies, encoder):
        visit = Visit(t=1, diagnoses=("nope",), medications=("M.4",))
        with pytest.warns(MissingCodeWarning):
            out = visit_level_embeddings(taxonomies, encoder, visit, policy="skip")
        assert not any(t == "diagnosis" for t, _ in out)
        assert ("medication", 1) in out

    def test_bad_policy(self, taxonomies, encoder):
        with pytest.raises(ValueError, match="policy"):
            visit_level_embeddings(taxonomies, encoder, Visit(t=1), policy="ignore")

    def test_cache_is_filled_and_reused(self, taxonomies, encoder):
        cache = {}
        visit = Visit(t=1, diagnoses=("A.4",))
        first = visit_level_embeddings(taxonomies, encoder, visit, cache=cache)
        assert "skin derm ecz contact" in cache
        cache["skin"][:] = 99.0  # poison to prove the cache is consulted
        second = visit_level_embeddings(taxonomies, encoder, visit, cache=cache)
        assert second[("diagnosis", 1)][0] == 99.0
        assert first[("diagnosis", 1)][0] != 99.0


class TestGates:
    def test_zero_input_zero_params(self):
        erase, add = gates(zero_params(), np.zeros(EMBED))
        np.testing.assert_array_equal(erase, np.full(MEM, 0.5))
        np.testing.assert_array_equal(add, np.zeros(MEM))

    def test_saturation(self):
        params = zero_params()
        params["mem.erase.b"][:] = 20.0
        erase, _ = gates(params, np.zeros(EMBED))
        assert np.all(np.abs(erase - 1.0) < 1e-6)

    def test_scalar_oracle(self):
        rng = np.random.default_rng(3)
        params = rand_params(seed=4)
        g = rng.normal(size=EMBED)
        erase, add = gates(params, g)
        for i in range(MEM):
            pre_e = sum(params["mem.erase.w"][i, j] * g[j] for j in range(EMBED))
            pre_e += params["mem.erase.b"][i]
            pre_a = sum(params["mem.add.w"][i, j] * g[j] for j in range(EMBED))
            pre_a += params["mem.add.b"][i]
            assert erase[i] == pytest.approx(1.0 / (1.0 + np.exp(-pre_e)), abs=1e-12)
            assert add[i] == pytest.approx(np.tanh(pre_a), abs=1e-12)

    def test_wrong_input_dim(self):
        with pytest.raises(DimMismatch):
            gates(zero_params(), np.zeros(EMBED + 1))

    @given(
        g=arrays(np.float64, EMBED, elements=st.floats(-50, 50, allow_nan=False))
    )
    def test_ranges(self, g):
        # saturation can round to the exact bound in float64
        erase, add = gates(rand_params(), g)
        assert np.all((erase >= 0.0) & (erase <= 1.0))
        assert np.all((add >= -1.0) & (add <= 1.0))


class TestApplyUpdate:
    def test_zero_memory_returns_add(self):
        add = np.array([0.3, -0.7, 0.1, 0.0])
        out = apply_update(np.zeros(4), np.array([0.9, 0.1, 0.5, 0.2]), add)
        np.testing.assert_array_equal(out, add)

    def test_full_erase_no_add(self):
        out = apply_update(np.array([5.0, -3.0]), np.ones(2), np.zeros(2))
        np.testing.assert_array_equal(out, np.zeros(2))

    def test_hand_values(self):
        out = apply_update(
            np.array([2.0, -1.0]), np.array([0.5, 0.25]), np.array([1.0, 1.0])
        )
        np.testing.assert_allclose(out, [2.0, 0.25], atol=1e-15)

    def test_dim_mismatch(self):
        with pytest.raises(DimMismatch):
            apply_update(np.zeros(3), np.zeros(2), np.zeros(3))

    @given(
        slot=arrays(np.float64, 4, elements=st.floats(-10, 10, allow_nan=False)),
        erase=arrays(np.float64, 4, elements=st.floats(0.001, 0.999)),
        add=arrays(np.float64, 4, elements=st.floats(-0.999, 0.999)),
    )
    def test_per_update_bound(self, slot, erase, add):
        out = apply_update(slot, erase, add)
        assert np.all(np.abs(out) <= np.abs(slot) + 1.0 + 1e-12)


class TestEncodePatient:
    def one_visit_patient(self, codes=("A.4",)):
        return Patient(
            patient_id="p1",
            demographics=Demographics(age=40, gender="female"),
            visits=[Visit(t=1, diagnoses=codes)],
        )

    def test_single_visit_slot_equals_add_gate(self, taxonomies, encoder):
        params = rand_params(seed=7)
        state = encode_patient(taxonomies, encoder, params, self.one_visit_patient())
        for level in range(1, 5):
            desc = " ".join(["skin", "derm", "ecz", "contact"][:level])
            g = concept_embedding(encoder, desc)
            want = np.tanh(params["mem.add.w"] @ g + params["mem.add.b"])
            np.testing.assert_allclose(state.slot("diagnosis", level), want, atol=1e-12)

    def test_zero_params_give_zero_state(self, taxonomies, encoder):
        state = encode_patient(
            taxonomies, encoder, zero_params(), self.one_visit_patient()
        )
        np.testing.assert_array_equal(state.slots, np.zeros((N_SLOTS, MEM)))

    def test_untouched_types_stay_zero(self, taxonomies, encoder):
        state = encode_patient(
            taxonomies, encoder, rand_params(), self.one_visit_patient()
        )
        for level in range(1, 5):
            assert np.all(state.slot("medication", level) == 0.0)
            assert np.all(state.slot("procedure", level) == 0.0)
            assert np.any(state.slot("diagnosis", level) != 0.0)

    def test_two_visits_match_manual_chain(self, taxonomies, encoder):
        params = rand_params(seed=8)
        patient = Patient(
            patient_id="p2",
            demographics=Demographics(age=55, gender="male"),
            visits=[Visit(t=1, diagnoses=("A.4",)), Visit(t=3, diagnoses=("B.4",))],
        )
        state = encode_patient(taxonomies, encoder, params, patient)
        for level in range(1, 5):
            slot = np.zeros(MEM)
            for visit in patient.visits:
                pooled = visit_level_embeddings(taxonomies, encoder, visit)
                erase, add = gates(params, pooled[("diagnosis", level)])
                slot = apply_update(slot, erase, add)
            np.testing.assert_allclose(state.slot("diagnosis", level), slot, atol=1e-12)

    def test_deterministic(self, taxonomies, encoder):
        params = rand_params(seed=9)
        patient = self.one_visit_patient()
        s1 = encode_patient(taxonomies, encoder, params, patient)
        s2 = encode_patient(taxonomies, encoder, params, patient)
        np.testing.assert_array_equal(s1.slots, s2.slots)

    def test_visit_order_matters(self, taxonomies, encoder):
        params = rand_params(seed=10)
        fwd = Patient(
            patient_id="p3",
            demographics=Demographics(age=30, gender="other"),
            visits=[Visit(t=1, diagnoses=("A.4",)), Visit(t=2, diagnoses=("B.4",))],
        )
        rev = Patient(
            patient_id="p3",
            demographics=Demographics(age=30, gender="other"),
            visits=[Visit(t=1, diagnoses=("B.4",)), Visit(t=2, diagnoses=("A.4",))],
        )
        a = encode_patient(taxonomies, encoder, params, fwd)
        b = encode_patient(taxonomies, encoder, params, rev)
        assert not np.allclose(a.slots, b.slots)

    def test_prepared_path_matches_direct(self, taxonomies, encoder):
        params = rand_params(seed=11)
        patient = self.one_visit_patient(codes=("A.4", "B.4"))
        updates = prepare_patient_updates(taxonomies, encoder, patient)
        slots, records = encode_prepared(params, updates, MEM)
        state = encode_patient(taxonomies, encoder, params, patient)
        np.testing.assert_array_equal(slots, state.slots)
        assert len(records) == len(updates)
        assert all(i == SLOT_INDEX[("diagnosis", lv)]
                   for (i, _), lv in zip(updates, range(1, 5)))


class TestDemographics:
    @pytest.mark.parametrize(
        "raw,want",
        [
            ("F", "female"),
            ("female", "female"),
            (" M ", "male"),
            ("Male", "male"),
            ("nonbinary", "other"),
            ("", "other"),
        ],
    )
    def test_normalize_gender(self, raw, want):
        assert normalize_gender(raw) == want

    def test_feature_vector(self):
        vec = demo_features(Demographics(age=60, gender="m"))
        assert vec.shape == (DEMO_DIM,)
        assert vec[0] == pytest.approx(0.5)
        assert list(vec[1:]) == [0.0, 1.0, 0.0]


class TestPatientValidation:
    def test_no_visits(self):
        with pytest.raises(MalformedRow, match="no visits"):
            Patient("p", Demographics(age=1, gender="f"), visits=[])

    def test_ordinals_must_increase(self):
        with pytest.raises(MalformedRow, match="ordinals"):
            Patient(
                "p",
                Demographics(age=1, gender="f"),
                visits=[Visit(t=2, diagnoses=("x",)), Visit(t=2, diagnoses=("y",))],
            )

    def test_visit_without_codes(self):
        with pytest.raises(MalformedRow, match="without codes"):
            Patient("p", Demographics(age=1, gender="f"), visits=[Visit(t=1)])

    @pytest.mark.parametrize("age", [float("nan"), float("inf"), -1.0])
    def test_bad_age(self, age):
        with pytest.raises(MalformedRow, match="age"):
            Patient(
                "p",
                Demographics(age=age, gender="f"),
                visits=[Visit(t=1, diagnoses=("x",))],
            )


class TestPatientFiles:
    def sample(self):
        return [
            Patient(
                "p1",
                Demographics(age=40.5, gender="female"),
                visits=[
                    Visit(t=1, diagnoses=("A.4",), medications=("M.4",)),
                    Visit(t=5, procedures=("P.4",)),
                ],
            ),
            Patient(
                "p2",
                Demographics(age=71, gender="other"),
                visits=[Visit(t=2, diagnoses=("B.4",))],
            ),
        ]

    def test_round_trip(self, tmp_path):
        path = tmp_path / "patients.jsonl"
        save_patients(self.sample(), path)
        loaded = load_patients(path)
        assert [p.patient_id for p in loaded] == ["p1", "p2"]
        assert loaded[0].visits[0].medications == ("M.4",)
        assert loaded[0].visits[1].t == 5
        assert loaded[1].demographics.age == 71

    def test_missing_code_lists_default_empty(self, tmp_path):
        path = tmp_path / "patients.jsonl"
        path.write_text(
            json.dumps(
                {
                    "patient_id": "p1",
                    "age": 30,
                    "gender": "f",
                    "visits": [{"t": 1, "dx": ["A.4"]}],
                }
            )
            + "\n"
        )
        p = load_patients(path)[0]
        assert p.visits[0].medications == ()
        assert p.visits[0].procedures == ()

    def test_duplicate_patient(self, tmp_path):
        path = tmp_path / "patients.jsonl"
        save_patients([self.sample()[0], self.sample()[0]], path)
        with pytest.raises(MalformedRow, match="line 2.*duplicate"):
            load_patients(path)

    def test_bad_json(self, tmp_path):
        path = tmp_path / "patients.jsonl"
        path.write_text("{oops\n")
        with pytest.raises(IoError, match="line 1"):
            load_patients(path)

    def test_missing_field(self, tmp_path):
        path = tmp_path / "patients.jsonl"
        path.write_text(json.dumps({"patient_id": "p1", "age": 3}) + "\n")
        with pytest.raises(MalformedRow, match="line 1"):
            load_patients(path)

    def test_invalid_patient_reports_line(self, tmp_path):
        path = tmp_path / "patients.jsonl"
        path.write_text(
            json.dumps(
                {"patient_id": "p1", "age": 30, "gender": "f", "visits": []}
            )
            + "\n"
        )
        with pytest.raises(MalformedRow, match="line 1"):
            load_patients(path)
