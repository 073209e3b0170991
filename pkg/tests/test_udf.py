from __future__ import annotations

import csv
import io
import json
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from objguard.crypto import HomCiphertext, hom_decrypt, hom_encrypt, peks_encrypt, peks_trapdoor, pre_decrypt, pre_token
from objguard.errors import KeyMismatch, MalformedCiphertext, MissingLabelParams, MissingParam, ObserverFailure
from objguard.stream import CsvStreamBuilder, JsonStreamBuilder, compile_event_spec
from objguard.udf import Clac, Noop, Pre, Requester, Search, Sum, UdfContext, create_udf, register_udf, registry_names
from oracles import clac_filter, parse, plain
from strategies import container_trees, expressions_for, render

RNG = random.Random(7)
LABELS = ["public", "salary", "medical"]
ULABELS = ["staff", "HR manager", "auditor"]


def json_markers(pairs):
    return compile_event_spec("JSONPathMarkerEvent", [{"Predicate": p, "olabel": o} for p, o in pairs])


def json_events(*preds):
    return compile_event_spec("JSONPathEvent", [{"Predicate": p} for p in preds])


def run(builder, steps, data):
    """``steps`` is a list of ``(spec, udf, ctx)``; each udf is set up first."""
    for spec, udf, ctx in steps:
        udf.setup(ctx)
        builder.install(spec, udf, ctx)
    out = bytearray()
    builder.run(data, out.extend)
    return bytes(out)


def ctx_for(ulabel=None, inputs=(), **kw):
    base = UdfContext(Requester("someone", ulabel), **kw)
    return base.for_step("s1", tuple(inputs))


# -- registry ------------------------------------------------------------------


def test_registry_contents_and_extension():
    assert {"NOOP", "CLAC", "SUM", "PRE", "SEARCH"} <= registry_names()

    class Upper(Noop):
        udf_id = "UPPER"

    register_udf("UPPER", Upper)
    assert isinstance(create_udf("UPPER"), Upper)
    assert "UPPER" in registry_names()


def test_noop_passes_everything():
    data = b'{"a": [1, {"b": 2}]}'
    out = run(JsonStreamBuilder(), [(json_events("$.a.*", "$.a"), Noop(), ctx_for())], data)
    assert json.loads(out) == json.loads(data)


# -- CLAC ----------------------------------------------------------------------


def test_clac_requires_rules():
    with pytest.raises(MissingLabelParams):
        Clac().setup(ctx_for("staff", [{"Predicate": "$.a", "olabel": "x"}]))


def test_clac_example():
    data = b'{"name": "ann", "salary": 10, "notes": {"medical": "x"}}'
    markers = [("$.name", "public"), ("$.salary", "salary"), ("$.notes.medical", "medical")]
    rules = [{"ulabel": "staff", "olabel": "public"}, {"ulabel": "HR manager", "olabel": ["public", "salary"]}]
    inputs = [{"Predicate": p, "olabel": o} for p, o in markers] + rules

    def view(ulabel):
        return json.loads(run(JsonStreamBuilder(), [(json_markers(markers), Clac(), ctx_for(ulabel, inputs))], data))

    assert view("staff") == {"name": "ann", "notes": {}}
    assert view("HR manager") == {"name": "ann", "salary": 10, "notes": {}}
    assert view(None) == {"notes": {}}


def test_clac_element_with_two_labels_needs_both():
    data = b'{"x": 1, "y": 2}'
    markers = [("$.x", "public"), ("$.x", "salary"), ("$.y", "public")]
    inputs = [{"Predicate": p, "olabel": o} for p, o in markers] + [{"ulabel": "staff", "olabel": "public"}]
    out = run(JsonStreamBuilder(), [(json_markers(markers), Clac(), ctx_for("staff", inputs))], data)
    assert json.loads(out) == {"y": 2}


@st.composite
def clac_cases(draw):
    tree = draw(container_trees)
    markers = draw(st.lists(st.tuples(expressions_for(tree), st.sampled_from(LABELS)), min_size=1, max_size=4))
    rules = draw(st.sets(st.tuples(st.sampled_from(ULABELS), st.sampled_from(LABELS)), min_size=1, max_size=6))
    ulabel = draw(st.sampled_from(ULABELS + [None]))
    return tree, markers, rules, ulabel


@given(clac_cases())
def test_clac_matches_materialized_filter(case):
    tree, markers, rules, ulabel = case
    data = render(tree).encode()
    inputs = [{"Predicate": p, "olabel": o} for p, o in markers] + [{"ulabel": u, "olabel": o} for u, o in sorted(rules)]
    out = run(JsonStreamBuilder(), [(json_markers(markers), Clac(), ctx_for(ulabel, inputs))], data)
    expected = clac_filter(parse(data), markers, rules, ulabel)
    assert plain(parse(out)) == plain(expected)


def test_clac_on_csv_columns():
    data = b"name,salary\nann,10\nbob,20\n"
    spec = compile_event_spec("ColumnMarkerEvent", [{"column": 1, "olabel": "salary"}])
    ctx = ctx_for("staff", [{"column": 1, "olabel": "salary"}, {"ulabel": "HR manager", "olabel": "salary"}])
    assert run(CsvStreamBuilder(), [(spec, Clac(), ctx)], data) == b"name,salary\nann,\nbob,\n"


# -- SUM and PRE -------------------------------------------------------------------


def salary_doc(pk, salaries):
    recs = [{"name": f"e{i}", "salary": hom_encrypt(pk, s, rng=RNG).to_b64()} for i, s in enumerate(salaries)]
    return json.dumps({"employees": recs}).encode()


def sum_ctx(owner, output="$.total"):
    return ctx_for(None, [{"Predicate": "$.employees.*.salary"}, {"keyOwner": owner.pk.to_bytes()}, {"output": output}])


@settings(max_examples=8)
@given(st.lists(st.integers(0, 200_000), max_size=6))
def test_sum_conserves_total(hom_keys, salaries):
    alice = hom_keys["Alice"]
    out = run(JsonStreamBuilder(), [(json_events("$.employees.*.salary"), Sum(), sum_ctx(alice))], salary_doc(alice.pk, salaries))
    view = json.loads(out)
    assert all("salary" not in e for e in view["employees"])
    assert [e["name"] for e in view["employees"]] == [f"e{i}" for i in range(len(salaries))]
    if not salaries:
        assert view["total"] == {"count": 0}
    else:
        assert view["total"]["count"] == len(salaries)
        assert hom_decrypt(alice, HomCiphertext.from_b64(view["total"]["sum"])) == sum(salaries)


def test_sum_accepts_base64_key_text(hom_keys):
    alice = hom_keys["Alice"]
    ctx = ctx_for(None, [{"keyOwner": alice.pk.to_b64()}, {"output": "$.t"}])
    udf = Sum()
    udf.setup(ctx)
    assert udf.owner == alice.pk


@pytest.mark.parametrize("inputs, exc", [([{"output": "$.t"}], MissingParam), ([{"keyOwner": b"junk"}, {"output": "$.t"}], MalformedCiphertext)])
def test_sum_setup_errors(inputs, exc):
    with pytest.raises(exc):
        Sum().setup(ctx_for(None, inputs))


def test_sum_rejects_foreign_ciphertext(hom_keys):
    alice, bob = hom_keys["Alice"], hom_keys["Bob"]
    with pytest.raises(ObserverFailure) as info:
        run(JsonStreamBuilder(), [(json_events("$.employees.*.salary"), Sum(), sum_ctx(alice))], salary_doc(bob.pk, [1]))
    assert isinstance(info.value.__cause__, KeyMismatch)


def test_sum_then_pre_for_receiver(hom_keys):
    alice, treasurer = hom_keys["Alice"], hom_keys["treasurer"]
    token = pre_token(alice, treasurer.pk).to_b64()
    steps = [
        (json_events("$.employees.*.salary"), Sum(), sum_ctx(alice)),
        (json_events("$.total"), Pre(), ctx_for(None, [{"Predicate": "$.total"}], reenc_token=token)),
    ]
    view = json.loads(run(JsonStreamBuilder(), steps, salary_doc(alice.pk, [100, 250, 50])))
    assert view["total"]["count"] == 3
    assert pre_decrypt(treasurer, HomCiphertext.from_b64(view["total"]["sum"])) == 400


@pytest.mark.parametrize("token", [None, "", "bm90IGEgdG9rZW4="])
def test_pre_without_usable_token_drops(hom_keys, token):
    alice = hom_keys["Alice"]
    steps = [
        (json_events("$.employees.*.salary"), Sum(), sum_ctx(alice)),
        (json_events("$.total"), Pre(), ctx_for(None, [{"Predicate": "$.total"}], reenc_token=token)),
    ]
    view = json.loads(run(JsonStreamBuilder(), steps, salary_doc(alice.pk, [1, 2])))
    assert "total" not in view


def test_pre_token_for_other_owner_drops(hom_keys):
    alice, bob, carol = hom_keys["Alice"], hom_keys["Bob"], hom_keys["Carol"]
    token = pre_token(bob, carol.pk).to_b64()
    data = salary_doc(alice.pk, [5])
    steps = [(json_events("$.employees.*.salary"), Pre(), ctx_for(None, [], reenc_token=token))]
    assert json.loads(run(JsonStreamBuilder(), steps, data)) == {"employees": [{"name": "e0"}]}


def test_pre_reencrypts_individual_values(hom_keys):
    alice, bob = hom_keys["Alice"], hom_keys["Bob"]
    token = pre_token(alice, bob.pk).to_b64()
    steps = [(json_events("$.employees.*.salary"), Pre(), ctx_for(None, [], reenc_token=token))]
    view = json.loads(run(JsonStreamBuilder(), steps, salary_doc(alice.pk, [11, 22])))
    assert [pre_decrypt(bob, HomCiphertext.from_b64(e["salary"])) for e in view["employees"]] == [11, 22]


def test_pre_passes_completion_without_sum(hom_keys):
    alice, bob = hom_keys["Alice"], hom_keys["Bob"]
    token = pre_token(alice, bob.pk).to_b64()
    steps = [
        (json_events("$.employees.*.salary"), Sum(), sum_ctx(alice)),
        (json_events("$.total"), Pre(), ctx_for(None, [], reenc_token=token)),
    ]
    assert json.loads(run(JsonStreamBuilder(), steps, salary_doc(alice.pk, [])))["total"] == {"count": 0}


# -- SEARCH ------------------------------------------------------------------------


def search_csv(pks, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["id", "age", "tags"])
    for i, (age, words) in enumerate(rows):
        w.writerow([i, age, peks_encrypt(pks, words, rng=RNG).to_b64()])
    return buf.getvalue().encode()


def search_ctx(user, key, trapdoor):
    published = {user: key.pk.to_bytes()}
    return UdfContext(
        Requester(user),
        trapdoor=trapdoor,
        key_lookup=lambda uid, kind: published.get(uid) if kind == "peks" else None,
    ).for_step("s1", ({"column": 2},))


ROWS = [(30, ["male", "married"]), (41, ["female"]), (25, ["male", "single"])]


def ids(out):
    return [r[0] for r in list(csv.reader(io.StringIO(out.decode())))[1:]]


def test_search_filters_records(peks_keys):
    a = peks_keys["A"]
    data = search_csv([a.pk, peks_keys["B"].pk], ROWS)
    spec = compile_event_spec("ColumnEvent", [{"column": 2}])
    t = peks_trapdoor(a, ["male"], rng=RNG).to_b64()
    assert ids(run(CsvStreamBuilder(), [(spec, Search(), search_ctx("A", a, t))], data)) == ["0", "2"]
    t2 = peks_trapdoor(a, ["male", "single"], rng=RNG).to_b64()
    assert ids(run(CsvStreamBuilder(), [(spec, Search(), search_ctx("A", a, t2))], data)) == ["2"]


def test_search_without_trapdoor_passes_all(peks_keys):
    a = peks_keys["A"]
    data = search_csv([a.pk], ROWS)
    spec = compile_event_spec("ColumnEvent", [{"column": 2}])
    assert run(CsvStreamBuilder(), [(spec, Search(), search_ctx("A", a, None))], data) == data


def test_search_for_non_recipient_returns_nothing(peks_keys):
    a, c = peks_keys["A"], peks_keys["C"]
    data = search_csv([a.pk], ROWS)
    spec = compile_event_spec("ColumnEvent", [{"column": 2}])
    t = peks_trapdoor(c, ["male"], rng=RNG).to_b64()
    assert ids(run(CsvStreamBuilder(), [(spec, Search(), search_ctx("C", c, t))], data)) == []


def test_search_without_published_key_drops(peks_keys):
    a = peks_keys["A"]
    data = search_csv([a.pk], ROWS)
    spec = compile_event_spec("ColumnEvent", [{"column": 2}])
    t = peks_trapdoor(a, ["male"], rng=RNG).to_b64()
    ctx = UdfContext(Requester("A"), trapdoor=t).for_step("s1", ())
    assert ids(run(CsvStreamBuilder(), [(spec, Search(), ctx)], data)) == []


def test_search_bad_trapdoor_is_an_error(peks_keys):
    with pytest.raises(MalformedCiphertext):
        Search().setup(search_ctx("A", peks_keys["A"], "AAAA"))


def test_search_on_json_records(peks_keys):
    a = peks_keys["A"]
    recs = [{"id": i, "tags": peks_encrypt([a.pk], w, rng=RNG).to_b64()} for i, (_, w) in enumerate(ROWS)]
    data = json.dumps({"records": recs}).encode()
    t = peks_trapdoor(a, ["female"], rng=RNG).to_b64()
    out = run(JsonStreamBuilder(), [(json_events("$.records.*.tags"), Search(), search_ctx("A", a, t))], data)
    assert [r["id"] for r in json.loads(out)["records"]] == [1]
