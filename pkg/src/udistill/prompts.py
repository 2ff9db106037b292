"""Prompt templates for sampling, confidence elicitation, and equivalence judging."""

from __future__ import annotations

from .qa_dataset import QaItem

CONFIDENCE_INSTRUCTION = "Additionally state how confident you are in your answer."

# Worked example shown inside the instructions so the model copies the tag format.
_FORMAT_EXAMPLE_ANSWER_ONLY = (
    '"If each of Lisa\'s 7 chickens lays 6 eggs, how many eggs does Lisa have? \n'
    "A) 24 \nB) 35 \nC) 42 \nD) 50 \n"
    "<reasoning> This can be solved with multiplication. The answer is 7*6, or 42."
    '</reasoning> <answer> C) 42 </answer>."'
)

_FORMAT_EXAMPLE_WITH_CONFIDENCE = (
    '"If each of Lisa\'s 7 chickens lays 6 eggs, how many eggs does Lisa have? \n'
    "A) 24 \nB) 35 \nC) 42 \nD) 50 \n"
    "<reasoning> This can be solved with multiplication. The answer is 7*6, or 42."
    "</reasoning> <answer> C) 42 </answer> "
    '<confidence>very high</confidence>."'
)

SAMPLING_INSTRUCTION = (
    "Answer the following question. Enclose concise reasoning in "
    "<reasoning> </reasoning> tags and the letter of your FINAL answer in "
    "<answer> </answer> tags without any of your work, like this: "
    f"{_FORMAT_EXAMPLE_ANSWER_ONLY} Your answer should not include words."
)

CONFIDENCE_PROMPT_INSTRUCTION = (
    "Answer the following question and state confidence in the answer "
    "(very low, low, medium, high, very high). Enclose concise reasoning in "
    "<reasoning> </reasoning> tags, confidence in <confidence> </confidence> tags, "
    "and the letter of your FINAL answer in <answer> </answer> tags without any of "
    f"your work, like this: {_FORMAT_EXAMPLE_WITH_CONFIDENCE} "
    "Your answer should not include words."
)

OPEN_SAMPLING_INSTRUCTION = (
    "You are a helpful AI assistant. Answer the following question as briefly "
    "as possible and accurately. Enclose your final answer in <answer> </answer> tags."
)

OPEN_CONFIDENCE_INSTRUCTION = (
    "You are a helpful AI assistant. Answer the following question as briefly "
    "as possible and accurately. Enclose your final answer in <answer> </answer> "
    "tags, and enclose confidence in the answer (very low, low, medium, high, "
    "very high) after the answer in <confidence> </confidence> tags, like so: "
    "<confidence> very high </confidence>."
)

JUDGE_PROMPT_TEMPLATE = (
    'We are evaluating answers to the question "{question}"\n'
    "Here are two possible answers:\n"
    "Possible Answer 1: {a}\n"
    "Possible Answer 2: {b}\n"
    "Is Possible Answer 1 equivalent to Possible Answer 2, or do the answers "
    "contradict? Respond only with 'equivalent' or 'contradictory'."
)

GOLD_ANCHOR_TEMPLATE = "The correct answer is {gold}"


def format_question_block(item: QaItem) -> str:
    """Question plus the lettered option lines for a multiple-choice item."""
    lines = [item.question]
    for letter, text in item.choices:
        lines.append(f"{letter}) {text}")
    return "\n".join(lines)


def build_sampling_prompt(item: QaItem) -> str:
    """Prompt used to collect the Monte Carlo samples (no confidence request)."""
    if item.is_multiple_choice:
        return f"{SAMPLING_INSTRUCTION}\n\n{format_question_block(item)}"
    return f"{OPEN_SAMPLING_INSTRUCTION}\n\n{item.question}"


def build_confidence_prompt(item: QaItem) -> str:
    """Prompt asking for an answer plus a verbalized confidence."""
    if item.is_multiple_choice:
        return f"{CONFIDENCE_PROMPT_INSTRUCTION}\n\n{format_question_block(item)}"
    return f"{OPEN_CONFIDENCE_INSTRUCTION}\n\n{item.question}"


def build_judge_prompt(question: str, a: str, b: str) -> str:
    return JUDGE_PROMPT_TEMPLATE.format(question=question, a=a, b=b)
