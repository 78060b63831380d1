import hashlib
import json
import shutil

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cnet_dst import numerics as nx
from cnet_dst.cnet import NULL_TOKEN, coverage_stats, degenerate_cnet, one_best_cnet
from cnet_dst.corpus import (
    RESERVED_TOKENS, SYNTHETIC_PRESETS, DialogActTriple, SynthConfig, acts_to_tokens, build_vocab,
    generate_synthetic, import_dstc2, load_corpus, load_embeddings, synthetic_split, turn_inputs, write_corpus,
)
from cnet_dst.errors import CorpusError, StructureError
from cnet_dst.ontology import Ontology


@pytest.fixture(scope="module")
def fixture_corpus(fixtures_dir):
    return load_corpus(fixtures_dir / "corpus", "train", Ontology.load("dstc2"))


def tree_digest(root):
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(root)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()


# -- act mapping -----------------------------------------------------------------

def test_acts_to_tokens_examples():
    assert acts_to_tokens([DialogActTriple("inform", "food", "thai")]) == ["inform", "food", "thai"]
    assert acts_to_tokens([DialogActTriple("expl-conf", "area", "centre")]) == ["explicit", "confirm", "area", "centre"]
    assert acts_to_tokens([]) == []
    assert acts_to_tokens([DialogActTriple("Inform", "food", "Thai")]) == ["inform", "food", "thai"]


def test_act_triple_validation():
    with pytest.raises(StructureError):
        DialogActTriple("")
    with pytest.raises(StructureError):
        DialogActTriple("inform", None, "thai")


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.sampled_from(["inform", "expl-conf", "request", "reqalts", "canthelp"]),
                          st.sampled_from([None, "food", "area", "pricerange", "addr"]),
                          st.sampled_from([None, "thai", "north", "modern european", "dontcare"])), max_size=6))
def test_act_tokens_are_clean(triples):
    acts = [DialogActTriple(a, s, v if s is not None else None) for a, s, v in triples]
    for tok in acts_to_tokens(acts):
        assert tok and not any(c.isspace() for c in tok) and tok == tok.lower()


# -- loading ----------------------------------------------------------------------

def test_fixture_corpus_counts(fixture_corpus):
    assert [d.id for d in fixture_corpus] == ["dlg-a", "dlg-b", "dlg-c"]
    assert [len(d) for d in fixture_corpus] == [2, 3, 1]
    b = fixture_corpus[1]
    assert b.turns[1].state.goals["food"] == "chinese"
    assert b.turns[2].state.requests == {"phone"}
    assert fixture_corpus[2].turns[0].state.goals["pricerange"] == "dontcare"
    onto = Ontology.load("dstc2")
    for d in fixture_corpus:
        for t in d.turns:
            assert len(t.cnet) >= 1
            for s, v in t.state.goals.items():
                onto.label_index(s, v)


def test_loading_is_deterministic(fixtures_dir, fixture_corpus):
    again = load_corpus(fixtures_dir / "corpus", "train", Ontology.load("dstc2"))
    assert again == fixture_corpus


def test_empty_split(tmp_path):
    (tmp_path / "dev").mkdir()
    with pytest.raises(CorpusError):
        load_corpus(tmp_path, "dev", Ontology.load("dstc2"))
    with pytest.raises(CorpusError):
        load_corpus(tmp_path, "test", Ontology.load("dstc2"))


def test_label_outside_ontology_names_value(tmp_path, fixtures_dir):
    shutil.copytree(fixtures_dir / "corpus", tmp_path / "c")
    lab = tmp_path / "c" / "train" / "dlg-b" / "labels.jsonl"
    lab.write_text(lab.read_text().replace('"chinese"', '"martian"'))
    with pytest.raises(CorpusError, match="martian") as err:
        load_corpus(tmp_path / "c", "train", Ontology.load("dstc2"))
    assert err.value.dialog_id == "dlg-b"


def test_missing_cnet_file(tmp_path, fixtures_dir):
    shutil.copytree(fixtures_dir / "corpus", tmp_path / "c")
    (tmp_path / "c" / "train" / "dlg-a" / "cnet.txt").unlink()
    with pytest.raises(CorpusError, match="cnet.txt") as err:
        load_corpus(tmp_path / "c", "train", Ontology.load("dstc2"))
    assert err.value.dialog_id == "dlg-a"


def test_malformed_record(tmp_path, fixtures_dir):
    shutil.copytree(fixtures_dir / "corpus", tmp_path / "c")
    (tmp_path / "c" / "train" / "dlg-c" / "acts.jsonl").write_text("{not json\n")
    with pytest.raises(CorpusError, match="dlg-c"):
        load_corpus(tmp_path / "c", "train", Ontology.load("dstc2"))


def test_write_load_round_trip(tmp_path):
    dialogs = generate_synthetic(SynthConfig(n_dialogs=4, turns=3, seed=2))
    write_corpus(dialogs, tmp_path, "dev")
    assert load_corpus(tmp_path, "dev", Ontology.load("synthetic")) == dialogs


# -- DSTC2 import -------------------------------------------------------------------

def test_import_dstc2_fixture(fixtures_dir, caplog):
    dialogs = import_dstc2(fixtures_dir / "dstc2", fixtures_dir / "dstc2" / "flist.txt",
                           Ontology.load("dstc2"))
    (d,) = dialogs
    assert d.id == "voip-001" and len(d) == 2
    t0, t1 = d.turns
    assert t0.transcript == ("cheap", "restaurant")
    assert t0.state.goals == {"area": "none", "food": "none", "pricerange": "cheap"}
    assert t1.state.requests == {"phone"}
    for t in d.turns:
        for ts in t.cnet:
            assert all(h.log_score <= 0.0 for h in ts.hypotheses)
    tokens = {h.token for t in d.turns for ts in t.cnet for h in ts.hypotheses}
    assert NULL_TOKEN in tokens and "" not in tokens


# -- vocabulary and embeddings ---------------------------------------------------------

def test_build_vocab(fixture_corpus):
    v = build_vocab(fixture_corpus)
    assert v.tokens[:3] == RESERVED_TOKENS
    for d in fixture_corpus:
        for t in d.turns:
            for w in t.transcript + tuple(acts_to_tokens(t.system_acts)):
                assert w in v
            for ts in t.cnet:
                assert all(h.token in v for h in ts.hypotheses)
    assert build_vocab(fixture_corpus, min_count=10**9).tokens == RESERVED_TOKENS
    assert build_vocab(fixture_corpus).tokens == v.tokens


def test_embeddings_two_word_fixture(fixtures_dir, fixture_corpus):
    v = build_vocab(fixture_corpus)
    table, hit = load_embeddings(fixtures_dir / "embeddings_2word.txt", v, nx.make_rng(0))
    assert table.shape == (len(v), 4)
    np.testing.assert_array_equal(table[v.index("thai")], [0.5, -0.25, 0.125, 1.0])
    np.testing.assert_array_equal(table[v.index("food")], [-1.5, 0.75, 0.0, 2.0])
    assert hit == pytest.approx(2 / len(v))
    rand, _ = load_embeddings(fixtures_dir / "embeddings_2word.txt", v, nx.make_rng(0))
    assert rand.tobytes() == table.tobytes()


def test_embeddings_full_and_empty(tmp_path, fixture_corpus):
    v = build_vocab(fixture_corpus)
    full = tmp_path / "full.txt"
    full.write_text("".join(f"{t} {i} 0.5\n" for i, t in enumerate(v.tokens)))
    table, hit = load_embeddings(full, v, nx.make_rng(0))
    assert hit == 1.0 and table[5, 0] == 5.0
    empty = tmp_path / "empty.txt"
    empty.write_text("")
    table, hit = load_embeddings(empty, v, nx.make_rng(0), dim=3)
    assert hit == 0.0 and table.shape == (len(v), 3)


def test_embeddings_inconsistent_dimension(tmp_path, fixture_corpus):
    bad = tmp_path / "bad.txt"
    bad.write_text("thai 1 2 3\nfood 1 2\n")
    with pytest.raises(StructureError, match="bad.txt:2"):
        load_embeddings(bad, build_vocab(fixture_corpus), nx.make_rng(0))


# -- input views ------------------------------------------------------------------------

def test_turn_inputs_views(fixture_corpus):
    d = fixture_corpus[1]
    tr = turn_inputs(d, "transcript")
    assert [c for _, c in tr] == [degenerate_cnet(t.transcript) for t in d.turns]
    best = turn_inputs(d, "1best")
    assert [c for _, c in best] == [one_best_cnet(t.cnet) for t in d.turns]
    pruned = turn_inputs(d, "cnet")
    for (_, c), t in zip(pruned, d.turns):
        assert all(h.prob >= 0.001 for ts in c for h in ts.hypotheses)
        assert len(c) <= len(t.cnet)
    with pytest.raises(StructureError):
        turn_inputs(d, "lattice")


# -- synthetic generator ------------------------------------------------------------------

def test_noise_free_is_degenerate():
    cfg = SynthConfig(n_dialogs=10, p_swap=0.0, p_confuse=0.0, p_interj=0.0, seed=3)
    for d in generate_synthetic(cfg):
        for t in d.turns:
            assert t.cnet == degenerate_cnet(t.transcript)


def test_generator_deterministic(tmp_path):
    cfg = SynthConfig(n_dialogs=8, seed=5)
    write_corpus(generate_synthetic(cfg), tmp_path / "a", "train")
    write_corpus(generate_synthetic(cfg), tmp_path / "b", "train")
    assert tree_digest(tmp_path / "a") == tree_digest(tmp_path / "b")
    write_corpus(generate_synthetic(SynthConfig(n_dialogs=8, seed=6)), tmp_path / "c", "train")
    assert tree_digest(tmp_path / "a") != tree_digest(tmp_path / "c")


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10**6), p_swap=st.floats(0, 0.5), p_confuse=st.floats(0, 0.5))
def test_truth_always_present_without_drops(seed, p_swap, p_confuse):
    cfg = SynthConfig(n_dialogs=3, seed=seed, p_swap=p_swap, p_confuse=p_confuse, p_interj=0.2)
    onto = Ontology.load("synthetic")
    for d in generate_synthetic(cfg, onto):
        for t in d.turns:
            tokens = {h.token for ts in t.cnet for h in ts.hypotheses}
            assert set(t.transcript) <= tokens
            for s, v in t.state.goals.items():
                onto.label_index(s, v)
            sums = [sum(h.prob for h in ts.hypotheses) for ts in t.cnet]
            assert all(abs(x - 1.0) < 1e-9 for x in sums)


def test_one_best_coverage_near_seventy_percent():
    cfg = SynthConfig(n_dialogs=60, p_swap=0.3, p_confuse=0.0, p_interj=0.0, seed=21)
    dialogs = generate_synthetic(cfg)
    pairs = [(t.transcript, t.cnet) for d in dialogs for t in d.turns]
    assert sum(len(tr) for tr, _ in pairs) >= 1000
    # independent recount: a word is covered when it appears anywhere in the top-path / any hypothesis
    one_hit = full_hit = total = 0
    for words, c in pairs:
        top = {max((h for h in ts.hypotheses if h.token != NULL_TOKEN), key=lambda h: h.log_score).token
               for ts in c if any(h.token != NULL_TOKEN for h in ts.hypotheses)}
        every = {h.token for ts in c for h in ts.hypotheses}
        for w in words:
            total += 1
            one_hit += w in top
            full_hit += w in every
    assert abs(100.0 * one_hit / total - 70.0) <= 3.0
    assert full_hit == total
    rep_1 = coverage_stats([(w, one_best_cnet(c)) for w, c in pairs])
    rep_c = coverage_stats(pairs)
    assert rep_c.all_words_pct == 100.0
    assert rep_1.all_words_pct == pytest.approx(100.0 * one_hit / total, abs=1e-9)


def test_presets():
    assert set(SYNTHETIC_PRESETS) >= {"small", "medium"}
    small = synthetic_split("small", "train")
    assert len(small) == SYNTHETIC_PRESETS["small"]["train"][0]
    assert small[0].id.startswith("small-train")
    assert synthetic_split("small", "train") == small
    assert synthetic_split("small", "test") != small
    with pytest.raises(StructureError):
        synthetic_split("huge", "train")
    with pytest.raises(StructureError):
        synthetic_split("small", "holdout")
