from __future__ import annotations

import json
import math
import random
import time

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cotcap.backends import Gateway
from cotcap.metrics import (
    COLUMNS,
    EmptyEvaluation,
    EvalItem,
    MetricConfig,
    MissingAudioRef,
    MissingReference,
    SingleItemCorpusWarning,
    bleu,
    cider_d,
    clap_similarity,
    cosine,
    evaluate,
    lcs_length,
    meteor,
    references_from_rows,
    rouge_l,
    score_items,
    tokenize,
)
from cotcap.metrics.clap import mean_cosine
from cotcap.metrics.meteor import align, count_chunks, meteor_sentence
from cotcap.models import InferenceResult, StageOutput

from .conftest import FIXTURES, mock_config
from .oracles import bleu_oracle, cider_oracle, coco_scores, lcs_oracle, meteor_oracle, rouge_l_oracle

VOCAB = ["a", "dog", "dogs", "barks", "barking", "man", "speaks", "speaking", "car", "the", "loudly", "runs"]
words = st.lists(st.sampled_from(VOCAB), min_size=1, max_size=7)


def items_from(pairs):
    return [EvalItem(str(i), c, tuple(r)) for i, (c, r) in enumerate(pairs)]


def coco20():
    rows = [json.loads(x) for x in (FIXTURES / "coco20.jsonl").read_text().splitlines()]
    return [(r["candidate"], r["references"]) for r in rows]


# -- tokenizer -----------------------------------------------------------------


@pytest.mark.parametrize(
    "text,tokens",
    [
        ("A dog barks!", ["a", "dog", "barks"]),
        ("Rain, wind; thunder.", ["rain", "wind", "thunder"]),
        ("man's  voice\t\n", ["man", "s", "voice"]),
        ("«Bonjour» dit-il", ["bonjour", "dit", "il"]),
        ("", []),
        ("...", []),
    ],
)
def test_tokenize(text, tokens):
    assert tokenize(text) == tokens


# -- BLEU ------------------------------------------------------------------------


def test_bleu_hand_value():
    res = bleu([EvalItem("a", "a dog barks", ("a dog barks loudly",))], 1)
    assert res.corpus["BLEU_1"] == pytest.approx(math.exp(1 - 4 / 3), abs=1e-12)
    assert res.corpus["BLEU_1"] == pytest.approx(0.7165313, abs=1e-7)


def test_bleu_matches_oracle_on_fixture():
    pairs = coco20()
    res = bleu(items_from(pairs))
    want = bleu_oracle(pairs)
    for k in range(4):
        assert res.corpus[f"BLEU_{k + 1}"] == pytest.approx(want[k], abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(words, st.lists(words, min_size=1, max_size=3)), min_size=1, max_size=5))
def test_bleu_matches_oracle_random(corpus):
    pairs = [(" ".join(c), [" ".join(r) for r in refs]) for c, refs in corpus]
    res = bleu(items_from(pairs))
    want = bleu_oracle(pairs)
    for k in range(4):
        assert res.corpus[f"BLEU_{k + 1}"] == pytest.approx(want[k], abs=1e-12)


def test_bleu_zero_precision_is_zero_not_nan():
    res = bleu([EvalItem("a", "cat", ("dog barks",))])
    assert all(v == 0.0 for v in res.corpus.values())


def test_bleu_identity():
    res = bleu([EvalItem("a", "a dog barks loudly", ("a dog barks loudly", "something else"))])
    assert all(v == 1.0 for v in res.corpus.values())


def test_bleu_brevity_tie_goes_to_shorter_reference():
    # candidate 3 tokens, references 2 and 4 tokens: closest is a tie, shorter (2) wins, so no penalty
    res = bleu([EvalItem("a", "a dog barks", ("a dog", "a dog barks now"))], 1)
    assert res.corpus["BLEU_1"] == 1.0


# -- ROUGE-L -----------------------------------------------------------------------


@settings(max_examples=200, deadline=None)
@given(words, words)
def test_lcs_matches_subsequence_enumeration(a, b):
    assert lcs_length(a, b) == lcs_oracle(a, b)
    assert lcs_length(a, b) == lcs_length(b, a)


def test_rouge_hand_value():
    res = rouge_l([EvalItem("a", "the cat sat", ("the cat sat down",))])
    # P = 1, R = 3/4, F = (1 + 1.44) * 0.75 / (0.75 + 1.44)
    assert res.corpus == pytest.approx(2.44 * 0.75 / 2.19, abs=1e-12)
    assert res.corpus == pytest.approx(0.8356164, abs=1e-7)


@settings(max_examples=60, deadline=None)
@given(words, st.lists(words, min_size=1, max_size=3))
def test_rouge_matches_oracle_both_rules(cand, refs):
    c, rs = " ".join(cand), [" ".join(r) for r in refs]
    for rule in ("coco", "max_f"):
        got = rouge_l([EvalItem("x", c, tuple(rs))], multi_ref=rule).corpus
        assert got == pytest.approx(rouge_l_oracle(c, rs, rule=rule), abs=1e-12)


def test_rouge_multi_ref_rules_differ():
    # high precision comes from one reference, high recall from the other
    item = EvalItem("x", "a b c d", ("a b", "a x b y c z d w"))
    coco = rouge_l([item], multi_ref="coco").corpus
    max_f = rouge_l([item], multi_ref="max_f").corpus
    assert coco > max_f


# -- METEOR ------------------------------------------------------------------------


def test_meteor_identity_hand_value():
    # 3 matches in one chunk: Fmean = 1, penalty = 0.5 * (1/3)^3
    res = meteor([EvalItem("a", "a dog barks", ("a dog barks",))])
    assert res.corpus == pytest.approx(1 - 0.5 / 27, abs=1e-12)
    assert res.corpus == pytest.approx(0.9814815, abs=1e-7)


def test_meteor_stem_match_hand_value():
    # dogs~dog and barking~barks both match by stem only; 2 matches, 1 chunk
    res = meteor([EvalItem("a", "dogs barking", ("dog barks",))])
    assert res.corpus == pytest.approx(1 - 0.5 * (1 / 2) ** 3, abs=1e-12)
    assert res.corpus == 0.9375


def test_meteor_without_stem_stage():
    assert meteor([EvalItem("a", "dogs barking", ("dog barks",))], stages=("exact",)).corpus == 0.0


@settings(max_examples=150, deadline=None)
@given(words, words)
def test_meteor_matches_exhaustive_alignment(cand, ref):
    c, r = " ".join(cand), " ".join(ref)
    assert meteor_sentence(tokenize(c), tokenize(r)) == pytest.approx(meteor_oracle(c, r), abs=1e-12)


def test_meteor_prefers_exact_over_stem():
    a = align(["dog", "dogs"], ["dogs"])
    assert a.pairs == ((1, 0),) and a.exact == 1


def test_meteor_fewest_chunks_among_ties():
    # "the" can align to either occurrence; the contiguous choice gives one chunk
    a = align(["the", "dog"], ["the", "cat", "the", "dog"])
    assert a.chunks == 1 and a.pairs == ((0, 2), (1, 3))
    assert count_chunks([(0, 0), (1, 1), (3, 2)]) == 2


def test_meteor_max_over_references():
    res = meteor([EvalItem("a", "a dog barks", ("a cat meows", "a dog barks"))])
    assert res.corpus == pytest.approx(1 - 0.5 / 27)


# -- CIDEr-D -----------------------------------------------------------------------


def test_cider_single_item_is_zero_with_warning():
    with pytest.warns(SingleItemCorpusWarning):
        res = cider_d([EvalItem("a", "a dog barks", ("a dog barks",))])
    assert res.corpus == 0.0


def test_cider_two_item_hand_computation():
    # The two items share no grams, so every gram has df = 1 and weight log 2.
    # Each candidate equals its only reference: the unigram and bigram cosines
    # are 1, the length penalty is 1, and orders 3 and 4 have no grams at all.
    # Score = 10 * (1 + 1) / (4 orders * 1 reference) = 5.
    items = [EvalItem("a", "dog barks", ("dog barks",)), EvalItem("b", "rain falls", ("rain falls",))]
    res = cider_d(items)
    assert res.per_item == pytest.approx([5.0, 5.0], abs=1e-9)
    want, per = cider_oracle([(i.candidate, i.references) for i in items])
    assert res.corpus == pytest.approx(want, abs=1e-9)


def test_cider_matches_dense_oracle_on_fixture():
    pairs = coco20()
    res = cider_d(items_from(pairs))
    want, per = cider_oracle(pairs)
    assert res.corpus == pytest.approx(want, abs=1e-9)
    assert res.per_item == pytest.approx(per, abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(words, st.lists(words, min_size=1, max_size=3)), min_size=2, max_size=5))
def test_cider_matches_dense_oracle_random(corpus):
    pairs = [(" ".join(c), [" ".join(r) for r in refs]) for c, refs in corpus]
    res = cider_d(items_from(pairs))
    want, per = cider_oracle(pairs)
    assert res.per_item == pytest.approx(per, abs=1e-9)


def test_cider_clipping_caps_repeated_grams():
    base = [EvalItem("b", "rain falls", ("rain falls",))]
    once = cider_d([EvalItem("a", "dog barks", ("dog barks",))] + base).per_item[0]
    spam = cider_d([EvalItem("a", "dog dog dog barks", ("dog barks",))] + base).per_item[0]
    assert spam < once


# -- pycocoevalcap agreement -------------------------------------------------------


def test_agrees_with_pycocoevalcap():
    pairs = coco20()
    ref = coco_scores(pairs)
    if ref is None:
        pytest.skip("pycocoevalcap not installed")
    items = items_from(pairs)
    b = bleu(items).corpus
    assert [b[f"BLEU_{k}"] for k in range(1, 5)] == pytest.approx(ref["BLEU"], abs=1e-4)
    assert rouge_l(items).corpus == pytest.approx(ref["ROUGE_L"], abs=1e-4)
    assert cider_d(items).corpus == pytest.approx(ref["CIDEr"], abs=1e-4)


# -- properties ----------------------------------------------------------------------


def _all_scores(items):
    return score_items(items, MetricConfig()).per_item


def test_scores_are_in_range_and_finite():
    for row in _all_scores(items_from(coco20())).values():
        for k, v in row.items():
            assert math.isfinite(v)
            if k != "CIDEr":
                assert 0.0 <= v <= 1.0
            else:
                assert 0.0 <= v <= 10.0 + 1e-9


def test_permutation_invariance():
    items = items_from(coco20())
    shuffled = list(items)
    random.Random(3).shuffle(shuffled)
    a = score_items(items, MetricConfig())
    b = score_items(shuffled, MetricConfig())
    for k in a.corpus:
        assert a.corpus[k] == pytest.approx(b.corpus[k], abs=1e-12)
    for i in a.per_item:
        assert a.per_item[i] == pytest.approx(b.per_item[i], abs=1e-12)


def test_reference_order_invariance():
    items = items_from(coco20())
    rev = [EvalItem(i.item_id, i.candidate, tuple(reversed(i.references))) for i in items]
    a, b = score_items(items, MetricConfig()), score_items(rev, MetricConfig())
    for k in a.corpus:
        assert a.corpus[k] == pytest.approx(b.corpus[k], abs=1e-12)


def test_identity_dominates():
    items = items_from(coco20())
    ident = [EvalItem(i.item_id, i.references[0], i.references) for i in items]
    a, b = score_items(items, MetricConfig()).corpus, score_items(ident, MetricConfig()).corpus
    for k in a:
        assert b[k] >= a[k]


def test_rouge_symmetric_for_single_reference_at_beta_one():
    a = rouge_l([EvalItem("x", "a dog barks at the man", ("the dog barks",))], beta=1.0).corpus
    b = rouge_l([EvalItem("x", "the dog barks", ("a dog barks at the man",))], beta=1.0).corpus
    assert a == pytest.approx(b)


def test_empty_candidate_scores_zero():
    items = [EvalItem("a", "", ("a dog barks",)), EvalItem("b", "rain", ("rain falls",))]
    rep = score_items(items, MetricConfig())
    assert all(v == 0.0 for v in rep.per_item["a"].values())


def test_errors():
    with pytest.raises(EmptyEvaluation):
        score_items([], MetricConfig())
    with pytest.raises(MissingReference):
        EvalItem("a", "x", ())
    res = InferenceResult("zz", "direct", (StageOutput("s", "d", "x"),), "x", ("m",))
    with pytest.raises(MissingReference):
        evaluate([res], {"other": ["y"]})


def test_report_key_set_and_order():
    rep = score_items(items_from(coco20()), MetricConfig())
    assert list(rep.corpus) == [c for c in COLUMNS if c != "CLAP"]
    only = score_items(items_from(coco20()), MetricConfig().with_metrics(("bleu", "rougel")))
    assert set(only.corpus) == {"BLEU_1", "BLEU_2", "BLEU_3", "BLEU_4", "ROUGE_L"}


def test_config_digest_tracks_parameters():
    assert MetricConfig().digest == MetricConfig().digest
    assert MetricConfig().digest != MetricConfig(cider_sigma=5.0).digest


def test_references_grouped_by_video():
    rows = [
        {"video": "a", "audio_caption": "one", "split": "test"},
        {"video": "a", "audio_caption": "two", "split": "test", "audio": "a.wav"},
        {"video": "b", "audio_caption": "three", "split": "test", "references": ["four"]},
    ]
    refs, audio = references_from_rows(rows)
    assert refs == {"a": ["one", "two"], "b": ["three", "four"]}
    assert audio == {"a": "a.wav"}


# -- CLAP ------------------------------------------------------------------------------


def test_cosine_examples():
    assert cosine([1, 2, 3], [1, 2, 3]) == pytest.approx(1.0)
    assert cosine([1, 0], [0, 1]) == 0.0
    assert cosine([1, 0], [-1, 0]) == -1.0
    assert cosine([0, 0], [1, 0]) == 0.0
    s = 1 / math.sqrt(2)
    assert mean_cosine([([1, 0], [1, 0]), ([1, 0], [s, s]), ([1, 0], [0, 1])]).corpus == pytest.approx(
        (1 + s + 0) / 3
    )
    half = [math.cos(math.pi / 3), math.sin(math.pi / 3)]
    assert mean_cosine([([1, 0], [1, 0]), ([1, 0], half), ([1, 0], [0, 1])]).corpus == pytest.approx(0.5)


def _clap_gateway(tmp_path):
    gw = Gateway(cache_dir=tmp_path / "c")
    gw.register(mock_config("clap", modalities=("text", "audio")))
    return gw


def test_clap_text_mode_identity(tmp_path):
    gw = _clap_gateway(tmp_path)
    res = clap_similarity([EvalItem("a", "a dog barks", ("a dog barks",))], gw, "clap", mode="text")
    assert res.corpus == pytest.approx(1.0)


def test_clap_audio_mode(tmp_path):
    gw = _clap_gateway(tmp_path)
    items = [EvalItem("a", "a dog barks", ("x",), "a.wav"), EvalItem("b", "rain", ("y",), "b.wav")]
    res = clap_similarity(items, gw, "clap", mode="audio")
    assert all(-1.0 <= s <= 1.0 for s in res.per_item)
    with pytest.raises(MissingAudioRef):
        clap_similarity([EvalItem("a", "x", ("y",))], gw, "clap", mode="audio")


def test_clap_in_score_items(tmp_path):
    gw = _clap_gateway(tmp_path)
    cfg = MetricConfig(metrics=("clap", "bleu"), clap_text_backend="clap", clap_mode="text")
    rep = score_items([EvalItem("a", "a dog barks", ("a dog barks",))], cfg, gw)
    assert list(rep.corpus)[0] == "CLAP" and rep.corpus["CLAP"] == pytest.approx(1.0)


def test_meteor_beam_fallback_is_bounded(caplog):
    cand = " ".join(f"a w{i}" for i in range(40))
    ref = " ".join(f"a x{i} w{i}" for i in range(40))
    start = time.perf_counter()
    with caplog.at_level("WARNING", logger="cotcap.metrics.meteor"):
        score = meteor([EvalItem("x", cand, (ref,))]).corpus
    assert time.perf_counter() - start < 5.0
    assert "beam search" in caplog.text
    assert 0.0 < score < 1.0


@settings(max_examples=100, deadline=None)
@given(words, words)
def test_meteor_beam_agrees_with_exact_on_short_inputs(cand, ref):
    from cotcap.metrics.meteor import _align_beam, _align_exact, _edges

    edges = _edges(cand, ref, ("exact", "stem"))
    exact, beam = _align_exact(edges), _align_beam(edges, width=64)
    assert (beam.exact, beam.matches) == (exact.exact, exact.matches)
    assert beam.chunks >= exact.chunks
