from __future__ import annotations

import random

import pytest

from spatialgen.datasets import HoldoutItem
from spatialgen.errors import DuplicateAnswer, UnknownQuestionId
from spatialgen.evaluation import parse_answer, score


def make_holdout(n: int = 566) -> list[HoldoutItem]:
    rng = random.Random(99)
    categories = ["entity_existence", "entity_count", "relation_direction", "relation_distance"]
    slices = {"entity_existence": None, "entity_count": None,
              "relation_direction": "directional", "relation_distance": "distance"}
    items = []
    for i in range(n):
        category = categories[i % len(categories)]
        items.append(
            HoldoutItem(
                id=f"q{i:04d}",
                instance_id=f"inst{i % 120}",
                image=f"images/s/inst{i % 120}/0.png",
                question="Which option is correct?",
                options={"A": "1", "B": "2", "C": "3", "D": "4"},
                answer_key=rng.choice("ABCD"),
                category=category,
                slice=slices[category],
                entity_count=2 + (i % 4),
            )
        )
    return items


# --- parse_answer -----------------------------------------------------------------


@pytest.mark.parametrize(
    "raw,expected",
    [
        ("B", "B"),
        ("b", "B"),
        ("(A)", "A"),
        ("A.", "A"),
        ("The answer is (c).", "C"),
        ("answer: d", "D"),
        ("I think the correct option is B", "B"),
        ("A or B", None),
        ("", None),
        ("none of these", None),
        ("E", None),
        ("The answer is A. Wait, no: B", None),
    ],
)
def test_parse_answer(raw, expected):
    assert parse_answer(raw) == expected


# --- score -----------------------------------------------------------------------


def test_oracle_answers_score_one():
    holdout = make_holdout(200)
    answers = [{"question_id": item.id, "raw_text": item.answer_key} for item in holdout]
    report = score(answers, holdout)
    assert report.overall.accuracy == 1.0
    assert report.unanswered == 0


def test_random_answers_score_near_quarter():
    # oracle: binomial expectation, n=566 per file, p=0.25
    holdout = make_holdout(566)
    accuracies = []
    for seed in range(10):
        rng = random.Random(seed)
        answers = [{"question_id": item.id, "raw_text": rng.choice("ABCD")} for item in holdout]
        accuracies.append(score(answers, holdout).overall.accuracy)
    mean = sum(accuracies) / len(accuracies)
    assert abs(mean - 0.25) < 0.03


def test_all_unparseable_scores_zero():
    holdout = make_holdout(50)
    answers = [{"question_id": item.id, "raw_text": "no idea"} for item in holdout]
    report = score(answers, holdout)
    assert report.overall.accuracy == 0.0
    assert report.unanswered == 50


def test_missing_answers_count_as_wrong_and_unanswered():
    holdout = make_holdout(40)
    answers = [{"question_id": item.id, "raw_text": item.answer_key} for item in holdout[:30]]
    report = score(answers, holdout)
    assert report.overall.total == 40
    assert report.overall.correct == 30
    assert report.unanswered == 10


def test_strata_recombine_exactly():
    holdout = make_holdout(222)
    rng = random.Random(5)
    answers = [{"question_id": item.id, "raw_text": rng.choice("ABCD")} for item in holdout]
    report = score(answers, holdout)
    for strata in (report.per_category, report.per_slice, report.per_entity_bucket):
        assert sum(s.total for s in strata.values()) == report.overall.total
        assert sum(s.correct for s in strata.values()) == report.overall.correct


def test_scoring_is_order_independent():
    holdout = make_holdout(60)
    rng = random.Random(2)
    answers = [{"question_id": item.id, "raw_text": rng.choice("ABCD")} for item in holdout]
    forward = score(answers, holdout)
    backward = score(list(reversed(answers)), holdout)
    assert forward.to_dict() == backward.to_dict()


def test_duplicate_and_unknown_answers_rejected():
    holdout = make_holdout(5)
    with pytest.raises(DuplicateAnswer):
        score(
            [{"question_id": "q0000", "raw_text": "A"}, {"question_id": "q0000", "raw_text": "B"}],
            holdout,
        )
    with pytest.raises(UnknownQuestionId):
        score([{"question_id": "zzz", "raw_text": "A"}], holdout)


def test_report_table_renders():
    holdout = make_holdout(20)
    answers = [{"question_id": item.id, "raw_text": item.answer_key} for item in holdout]
    table = score(answers, holdout).format_table()
    assert "overall" in table and "unanswered" in table
