import json

import pytest

from udistill.qa_dataset import QaItem


@pytest.fixture
def four_choices():
    return (("A", "24"), ("B", "35"), ("C", "42"), ("D", "50"))


@pytest.fixture
def mcq_item(four_choices):
    return QaItem(
        id="q1",
        question="If each of Lisa's 7 chickens lays 6 eggs, how many eggs does Lisa have?",
        choices=four_choices,
        gold="C",
    )


@pytest.fixture
def open_item():
    return QaItem(id="q-open", question="How many dollars does Ann end up with?", gold="10")


def write_jsonl(path, records):
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")
    return path


@pytest.fixture
def tiny_dataset_file(tmp_path):
    records = [
        {
            "id": f"q{i}",
            "question": f"question number {i}?",
            "choices": [{"letter": "A", "text": "yes"}, {"letter": "B", "text": "no"}],
            "gold": "A" if i % 2 else "B",
            "subject": "parity",
        }
        for i in range(10)
    ]
    return write_jsonl(tmp_path / "tiny.jsonl", records)
