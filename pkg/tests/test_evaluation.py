import json
import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from xlnmt.corpus import BOS_ID, EOS_ID, EncodedPair, ParallelCorpus, Sentence, build_vocabulary
from xlnmt.errors import ContractError
from xlnmt.evaluation import (
    ADD_ONE, DirectionRecord, EvalReport, brevity_penalty, corpus_bleu, evaluate_direction,
    ngram_precision, pooled,
)

split = lambda rows: [r.split() for r in rows]

# (hypotheses, references, unsmoothed BLEU, add-one BLEU, p1..p4)
# Values were computed by hand from clipped counts and cross-checked with an
# independent BLEU implementation.
FIXTURES = {
    # p1 12/15, p2 7/12, p3 3/9, p4 1/6; lengths 15 vs 15
    "three-sentence": (
        ["the cat sat on the mat", "a dog barked loudly at night", "it is raining"],
        ["the cat sat on a mat", "the dog barked at night", "it is raining today"],
        (0.8 * 7 / 12 * 3 / 9 * 1 / 6) ** 0.25, 0.48703160198446305, (12 / 15, 7 / 12, 3 / 9, 1 / 6)),
    # exact n-gram matches, half length: BP = e^(1 - 10/5)
    "brevity": (["a b c d e"], ["a b c d e f g h i j"], math.exp(-1), math.exp(-1), (1.0, 1.0, 1.0, 1.0)),
    # "the" x4 in the hypothesis is clipped to the 2 in the reference
    "clipping": (["the the the the cat on mat"], ["the cat is on the mat"],
                 0.0, 0.287190894500909, (5 / 7, 1 / 6, 0.0, 0.0)),
    "mixed": (["we like green tea very much", "hello world", "x y z w v u"],
              ["we like tea very much", "hello there world", "x y z w v u"],
              0.6777829816992624, 0.717689872882231, (13 / 14, 8 / 11, 5 / 8, 2 / 4)),
    # longer than the reference: no penalty
    "long-hypothesis": (["one two three four five six seven eight"], ["one two three four five six"],
                        0.68037493331712, 0.7194089028548126, (6 / 8, 5 / 7, 4 / 6, 3 / 5)),
}


@pytest.mark.parametrize("name", FIXTURES)
def test_bleu_fixtures(name):
    hyps, refs, plain, smooth, precisions = FIXTURES[name]
    s = corpus_bleu(split(hyps), split(refs))
    assert s.bleu == pytest.approx(plain, abs=1e-6)
    assert s.precisions == pytest.approx(list(precisions), abs=1e-12)
    assert corpus_bleu(split(hyps), split(refs), ADD_ONE).bleu == pytest.approx(smooth, abs=1e-6)


def test_clipped_unigram_example():
    assert ngram_precision([["the", "the", "the"]], [["the", "cat"]], 1) == (pytest.approx(1 / 3), 1, 3)


def test_precision_identity_and_disjoint():
    h = [["a", "b", "c"]]
    assert [ngram_precision(h, h, n)[0] for n in (1, 2, 3)] == [1.0, 1.0, 1.0]
    assert ngram_precision(h, [["x", "y"]], 1)[0] == 0.0
    with pytest.raises(ContractError):
        ngram_precision(h, [], 1)


def test_brevity_penalty_examples():
    assert brevity_penalty(10, 10) == 1.0
    assert brevity_penalty(5, 10) == pytest.approx(0.36788, abs=1e-5)
    assert brevity_penalty(0, 10) == 0.0
    with pytest.raises(ContractError):
        brevity_penalty(3, 0)


def test_identical_corpus_is_exactly_one():
    refs = split(["a b c d e", "f g", "h"])
    s = corpus_bleu(refs, refs)
    assert s.bleu == 1.0 and s.display == 100.0


def test_empty_corpus_is_an_error():
    with pytest.raises(ContractError):
        corpus_bleu([], [])


def test_zero_precision_means_zero_bleu():
    s = corpus_bleu(split(["a b c d"]), split(["a b x y"]))
    assert s.precisions[2] == 0.0 and s.bleu == 0.0
    assert corpus_bleu(split(["a b c d"]), split(["a b x y"]), ADD_ONE).bleu > 0


sents = st.lists(st.lists(st.sampled_from("abcde"), min_size=0, max_size=8), min_size=1, max_size=6)


@settings(max_examples=150, deadline=None)
@given(sents, st.data())
def test_bleu_properties(hyps, data):
    refs = data.draw(st.lists(st.lists(st.sampled_from("abcdef"), min_size=1, max_size=8),
                              min_size=len(hyps), max_size=len(hyps)))
    s = corpus_bleu(hyps, refs)
    assert 0.0 <= s.bleu <= 1.0 and all(0.0 <= p <= 1.0 for p in s.precisions)
    if all(p > 0 for p in s.precisions):
        expected = s.bp * math.exp(sum(math.log(p) for p in s.precisions) / 4)
        assert s.bleu == pytest.approx(expected, rel=1e-12)
    elif any(p == 0 and c[1] > 0 for p, c in zip(s.precisions, s.counts)):
        assert s.bleu == 0.0
    perm = data.draw(st.permutations(range(len(hyps))))
    assert corpus_bleu([hyps[i] for i in perm], [refs[i] for i in perm]).bleu == s.bleu
    assert corpus_bleu(refs, refs).bleu == 1.0


def _vocab():
    c = ParallelCorpus([(Sentence("a b c".split(), "en"), Sentence("a b c d".split(), "sv"))])
    return build_vocabulary([c], ["en", "sv"])


def test_evaluate_direction_with_oracle_hypotheses():
    v = _vocab()
    tgt = [BOS_ID, v.stoi["a"], v.stoi["b"], v.stoi["d"], EOS_ID]
    pairs = [EncodedPair([v.tag_id("sv"), v.stoi["a"]], tgt, "en", "sv")]
    rec = evaluate_direction(None, pairs, v, "en->sv", decoded=[tuple(tgt[1:])])
    assert rec.bleu == 1.0 and (rec.p1, rec.p2, rec.p3) == (1.0, 1.0, 1.0)
    assert rec.sentences == 1 and rec.tag_tokens == 0
    tagged = evaluate_direction(None, pairs, v, "en->sv", decoded=[(v.tag_id("en"), EOS_ID)])
    assert tagged.tag_tokens == 1 and tagged.bleu == 0.0
    with pytest.raises(ContractError):
        evaluate_direction(None, [], v, "en->sv")


def test_pooled_average():
    a = DirectionRecord("sv->en", 0.2, 0.5, 0.3, 0.1, 0.0, 1.0, 10, 10)
    b = DirectionRecord("en->sv", 0.4, 0.7, 0.5, 0.3, 0.2, 0.9, 8, 10)
    avg = pooled([a, b], "avg")
    assert avg.bleu == pytest.approx(0.3) and avg.p1 == pytest.approx(0.6) and avg.hyp_len == 18


def test_report_formats():
    r = EvalReport("Training languages")
    r.add(DirectionRecord("de->en", 0.292, 0.6, 0.35, 0.2, 0.1, 1.0, 100, 98))
    r.add(DirectionRecord("en+de+fr->en+de+fr", 0.011, 0.2, 0.02, 0.0, 0.0, 1.0, 50, 51, ADD_ONE))
    table = r.table().splitlines()
    assert table[0] == "Training languages"
    assert table[1].split() == ["direction", "BLEU", "1gram", "2gram", "3gram", "smoothing"]
    assert table[3].split() == ["de->en", "29.20", "60.00", "35.00", "20.00", "none"]
    assert len({len(line) for line in table[1:3]}) == 1
    rows = [json.loads(line) for line in r.jsonl().splitlines()]
    assert {"direction", "bleu", "p1", "p2", "p3", "p4", "bp", "hyp_len", "ref_len"} <= set(rows[0])
    assert EvalReport.parse_jsonl(r.jsonl()) == r.records
