import collections
import itertools
import logging
import random

import pytest

from udistill.model_client import TransportError
from udistill.semantic_norm import (
    ClusteringError,
    EquivalenceJudge,
    cluster_samples,
    extract_answer,
    judge_equivalence,
    normalize_mcq,
)


# ---------------------------------------------------------------------------
# extract_answer


def test_extract_reasoning_and_answer():
    ext = extract_answer("<reasoning> 7*6 </reasoning> <answer> C) 42 </answer>")
    assert ext.answer_span == "C) 42"
    assert ext.reasoning_span == "7*6"
    assert ext.confidence_span is None


def test_extract_absent():
    ext = extract_answer("no tags at all")
    assert ext.answer_span is None
    assert ext.reasoning_span is None


def test_extract_last_tag_wins():
    ext = extract_answer("<answer>B</answer> text <answer>C</answer>")
    assert ext.answer_span == "C"


def test_extract_malformed_is_absent():
    assert extract_answer("<answer> unclosed").answer_span is None
    assert extract_answer("</answer> backwards <answer>").answer_span is None


def test_extract_confidence_and_multiline():
    text = "<reasoning>\nfirst line\nsecond line\n</reasoning> <answer> B </answer> <confidence> low </confidence>"
    ext = extract_answer(text)
    assert ext.reasoning_span == "first line\nsecond line"
    assert ext.confidence_span == "low"


def test_extract_spans_are_substrings():
    text = "<reasoning> because </reasoning> <answer> A </answer>"
    ext = extract_answer(text)
    assert ext.answer_span in text
    assert ext.reasoning_span in text


# ---------------------------------------------------------------------------
# normalize_mcq


def test_normalize_leading_letter(four_choices):
    assert normalize_mcq("C) 42", four_choices) == "C"


def test_normalize_case_punctuation(four_choices):
    assert normalize_mcq("c.", four_choices) == "C"
    assert normalize_mcq(" B ", four_choices) == "B"
    assert normalize_mcq("(a)", four_choices) == "A"


def test_normalize_text_match_fallback(four_choices):
    # linear scan oracle: "42" appears as choice C's body
    bodies = {letter: text for letter, text in four_choices}
    expected = next(l for l, t in bodies.items() if t == "42")
    assert normalize_mcq("42", four_choices) == expected == "C"


def test_normalize_unmapped(four_choices):
    assert normalize_mcq("elephant", four_choices) is None
    assert normalize_mcq("Z", four_choices) is None


def test_normalize_letter_word_not_confused():
    choices = (("A", "blue"), ("B", "bold"))
    # "bold" starts with 'b' but is a body match, not a letter
    assert normalize_mcq("bold", choices) == "B"
    assert normalize_mcq("b", choices) == "B"


def test_normalize_idempotent_on_letters(four_choices):
    for span in ("C) 42", "c.", "42", "B", "a"):
        letter = normalize_mcq(span, four_choices)
        if letter is not None:
            assert normalize_mcq(letter, four_choices) == letter


def test_normalize_requires_choices():
    with pytest.raises(ValueError):
        normalize_mcq("A", ())


# ---------------------------------------------------------------------------
# judges


class ScriptedJudge(EquivalenceJudge):
    """Remote-judge backend with a scripted transport."""

    def __init__(self, replies=None, table=None):
        self.asked = []
        replies = replies if replies is not None else []

        def ask(prompt):
            self.asked.append(prompt)
            if table is not None:
                for (a, b), verdict in table.items():
                    if f"Possible Answer 1: {a}\n" in prompt and f"Possible Answer 2: {b}\n" in prompt:
                        return verdict
                    if f"Possible Answer 1: {b}\n" in prompt and f"Possible Answer 2: {a}\n" in prompt:
                        return verdict
                return "contradictory"
            return replies.pop(0)

        super().__init__(backend="remote_judge", ask=ask)


def test_judge_reflexivity_short_circuit():
    judge = ScriptedJudge(replies=[])
    assert judge_equivalence("q", "same", "same", judge) is True
    assert judge.asked == []  # no network call


def test_judge_scripted_table():
    judge = ScriptedJudge(table={("10", "$10"): "equivalent"})
    assert judge.equivalent("q", "10", "$10") is True
    assert judge.equivalent("q", "10", "eleven") is False


def test_judge_unparseable_thrice_is_not_equivalent(caplog):
    judge = ScriptedJudge(replies=["maybe", "maybe", "maybe"])
    with caplog.at_level(logging.WARNING):
        assert judge.equivalent("q", "a", "b") is False
    assert "unparseable" in caplog.text
    assert len(judge.asked) == 3


def test_judge_reply_tolerance():
    judge = ScriptedJudge(replies=["  Equivalent. "])
    assert judge.equivalent("q", "a", "b") is True


def test_judge_cache_symmetric():
    judge = ScriptedJudge(table={("x", "y"): "equivalent"})
    assert judge.equivalent("q", "x", "y") is True
    n = len(judge.asked)
    assert judge.equivalent("q", "y", "x") is True  # cached, unordered key
    assert len(judge.asked) == n


def test_judge_cache_persists(tmp_path):
    path = tmp_path / "judge.jsonl"
    judge = ScriptedJudge(table={("x", "y"): "equivalent"})
    judge.cache_path = path
    judge.equivalent("q", "x", "y")
    reloaded = ScriptedJudge(table={})
    reloaded.cache_path = path
    reloaded._load_cache()
    assert reloaded.equivalent("q", "x", "y") is True
    assert reloaded.asked == []


def test_judge_prompt_wording():
    judge = ScriptedJudge(replies=["equivalent"])
    judge.equivalent("What is 5+5?", "10", "ten")
    prompt = judge.asked[0]
    assert 'We are evaluating answers to the question "What is 5+5?"' in prompt
    assert "Possible Answer 1: 10" in prompt
    assert "Possible Answer 2: ten" in prompt
    assert "Respond only with 'equivalent' or 'contradictory'." in prompt


def test_exact_judge_gold_anchor_is_bare():
    assert EquivalenceJudge.exact().gold_anchor("10") == "10"
    judge = ScriptedJudge(replies=[])
    assert judge.gold_anchor("10") == "The correct answer is 10"


# ---------------------------------------------------------------------------
# clustering


def answer_texts(letters):
    return [f"<answer> {x} </answer>" for x in letters]


def test_cluster_mcq_counting(mcq_item):
    texts = answer_texts(["B"] * 13 + ["C"] * 6) + ["garbled output with no tags"]
    clusters = cluster_samples(texts, mcq_item, seed=0)
    sizes = sorted((c.canonical_key, c.count) for c in clusters if not c.canonical_key.startswith("<absent"))
    assert sizes == [("B", 13), ("C", 6)]
    absent = [c for c in clusters if c.canonical_key.startswith("<absent")]
    assert len(absent) == 1 and absent[0].count == 1
    assert sum(c.count for c in clusters) == 20


def test_cluster_mcq_matches_gold_unique(mcq_item):
    texts = answer_texts(["C", "C", "B", "junk"])
    clusters = cluster_samples(texts, mcq_item, seed=0)
    gold_flags = [c for c in clusters if c.matches_gold]
    assert len(gold_flags) == 1
    assert gold_flags[0].canonical_key == "C"


def test_cluster_mcq_unmapped_merge_by_text(mcq_item):
    texts = answer_texts(["xyz", "xyz", "B"])
    clusters = cluster_samples(texts, mcq_item, seed=0)
    keys = {c.canonical_key: c.count for c in clusters}
    assert keys["<unmapped:xyz>"] == 2
    assert keys["B"] == 1


def test_cluster_drop_absent_flag(mcq_item):
    texts = answer_texts(["B"]) + ["no tags"]
    kept = cluster_samples(texts, mcq_item, seed=0)
    dropped = cluster_samples(texts, mcq_item, seed=0, drop_absent=True)
    assert sum(c.count for c in kept) == 2
    assert sum(c.count for c in dropped) == 1


def test_cluster_open_currency_variants(open_item):
    # "10", "$10", "10 dollars", "10.00" judged mutually equivalent
    variants = ["10", "$10", "10 dollars", "10.00"]
    anchor = "The correct answer is 10"
    table = {}
    for a, b in itertools.combinations(variants + [anchor], 2):
        table[(a, b)] = "equivalent"
    judge = ScriptedJudge(table=table)
    texts = [f"<answer> {v} </answer>" for v in variants]
    clusters = cluster_samples(texts, open_item, judge, seed=0)
    assert len(clusters) == 1
    assert clusters[0].count == 4
    assert clusters[0].matches_gold


def test_cluster_open_order_insensitive_with_consistent_judge(open_item):
    # judge induced by a true equivalence relation -> greedy first-match
    # clustering must equal the transitive-closure partition in any order
    groups = [["10", "$10", "10.00"], ["12", "twelve"], ["zero"]]
    membership = {x: i for i, g in enumerate(groups) for x in g}

    class RelationJudge(EquivalenceJudge):
        def __init__(self):
            super().__init__(backend="remote_judge", ask=lambda p: "contradictory")

        def equivalent(self, question, a, b):
            ga = membership.get(a)
            gb = membership.get(b)
            return ga is not None and ga == gb

        def gold_anchor(self, gold):
            return gold

    answers = ["10", "$10", "12", "10.00", "twelve", "zero"]
    expected = {frozenset(g) & set(answers) for g in map(set, groups)}
    expected = {g for g in expected if g}
    for seed in range(5):
        perm = answers[:]
        random.Random(seed).shuffle(perm)
        clusters = cluster_samples(
            [f"<answer> {a} </answer>" for a in perm], open_item, RelationJudge(), seed=0
        )
        got = {
            frozenset(extract_answer(perm_text).answer_span for perm_text in
                      (f"<answer> {perm[i]} </answer>" for i in c.member_indices))
            for c in clusters
        }
        assert got == expected


def test_cluster_open_exact_judge_is_group_by_string(open_item):
    answers = ["10", "ten", "10", "0", "ten", "10"]
    clusters = cluster_samples(
        [f"<answer> {a} </answer>" for a in answers], open_item, EquivalenceJudge.exact(), seed=0
    )
    got = collections.Counter(
        (extract_answer(c.representative).answer_span, c.count) for c in clusters
    )
    assert got == collections.Counter({("10", 3): 1, ("ten", 2): 1, ("0", 1): 1})
    gold = [c for c in clusters if c.matches_gold]
    assert len(gold) == 1 and gold[0].count == 3


def test_cluster_open_judge_failure_aborts_item(open_item):
    def dying(prompt):
        raise TransportError("judge endpoint down")

    judge = EquivalenceJudge(backend="remote_judge", ask=dying)
    with pytest.raises(ClusteringError):
        cluster_samples(["<answer> 10 </answer>", "<answer> 11 </answer>"], open_item, judge, seed=0)


def test_cluster_representative_deterministic(mcq_item):
    texts = [f"<reasoning> r{i} </reasoning> <answer> B </answer>" for i in range(10)]
    a = cluster_samples(texts, mcq_item, seed=42)
    b = cluster_samples(texts, mcq_item, seed=42)
    assert [c.representative for c in a] == [c.representative for c in b]
    assert a[0].representative in texts


def test_cluster_partition_fuzzed(mcq_item):
    rng = random.Random(7)
    pool = answer_texts(["A", "B", "C", "D", "a)", "junk"]) + ["none", "<answer> ? </answer>"]
    for _ in range(200):
        texts = [rng.choice(pool) for _ in range(rng.randint(1, 40))]
        clusters = cluster_samples(texts, mcq_item, seed=1)
        assert sum(c.count for c in clusters) == len(texts)
        seen = sorted(i for c in clusters for i in c.member_indices)
        assert seen == list(range(len(texts)))
