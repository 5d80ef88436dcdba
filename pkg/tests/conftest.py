"""Shared fixtures: reference tables, templates, and mock-model builders."""

from __future__ import annotations

import numpy as np
import pytest

from jolt.backend import MockLm
from jolt.prompts import PromptTemplate
from jolt.table import MISSING, Category, ColumnKind, ColumnSpec, Number, Table, Text
from jolt.tokenizer import CharTokenizer, char_vocab


@pytest.fixture
def tok() -> CharTokenizer:
    return CharTokenizer(char_vocab())


def make_tokenizer(words: tuple[str, ...] = ()) -> CharTokenizer:
    return CharTokenizer(char_vocab(words))


def num_col(name: str, precision: int) -> ColumnSpec:
    return ColumnSpec(name=name, kind=ColumnKind.NUMERIC, precision=precision)


def cat_col(name: str, classes) -> ColumnSpec:
    return ColumnSpec(name=name, kind=ColumnKind.CATEGORICAL, classes=tuple(classes))


def text_col(name: str) -> ColumnSpec:
    return ColumnSpec(name=name, kind=ColumnKind.TEXT)


def path_mock(
    tokenizer: CharTokenizer,
    base_context: str,
    transitions: dict[str, dict[str, float]],
    fallback: tuple[str, ...] = ("0", "1"),
    order: int = 64,
) -> MockLm:
    """Mock whose conditionals are keyed off ``base_context`` plus a
    continuation-so-far string.  A large order keeps distinct paths on
    distinct keys, so the transition map reads like a probability tree."""
    conditionals = {}
    for path_text, dist in transitions.items():
        key = tuple(tokenizer.token_strings(base_context + path_text))[-order:]
        conditionals[key] = dist
    return MockLm(tokenizer, conditionals, fallback=fallback, order=order)


def reachable_keys(
    tokenizer: CharTokenizer, context: str, alphabet: tuple[str, ...], max_len: int, order: int
) -> set[tuple[str, ...]]:
    """Every order-k suffix key the scorer can hit while walking token
    paths over ``alphabet`` starting from ``context``."""
    keys: set[tuple[str, ...]] = set()
    frontier = [tuple(tokenizer.token_strings(context))]
    for _ in range(max_len):
        nxt = []
        for ctx in frontier:
            keys.add(ctx[-order:])
            nxt.extend(ctx + (a,) for a in alphabet)
        frontier = nxt
    return keys


def random_suffix_mock(
    tokenizer: CharTokenizer,
    context: str,
    alphabet: tuple[str, ...],
    max_len: int,
    order: int,
    rng: np.random.Generator,
    extra_support: tuple[str, ...] = (),
) -> MockLm:
    """Order-k mock with a random conditional vector on every suffix key
    reachable from ``context`` over ``alphabet``.  ``extra_support`` tokens
    receive mass too (so path masses need not sum to 1 over the alphabet)."""
    support = tuple(dict.fromkeys(alphabet + extra_support))
    conditionals = {}
    for key in reachable_keys(tokenizer, context, alphabet, max_len, order):
        probs = rng.dirichlet(np.ones(len(support)))
        probs = probs / probs.sum()
        conditionals[key] = dict(zip(support, probs))
    return MockLm(tokenizer, conditionals, fallback=(alphabet[0],), order=order)


# Wine fixture: one training example plus one test example, transcribed
# from the reference serialization with ": ", "; ", "\n" separators.

WINE_PREFIX = (
    "The data contains features that determine the quality of wine. "
    "Predict the alcohol content and the quality score of each wine based on the features."
)

WINE_FEATURES = [
    ("fixed_acidity", 1),
    ("volatile_acidity", 2),
    ("citric_acid", 2),
    ("residual_sugar", 1),
    ("chlorides", 3),
    ("free_sulfur_dioxide", 1),
    ("total_sulfur_dioxide", 1),
    ("density", 3),
    ("pH", 2),
    ("sulphates", 2),
]

WINE_TRAIN = ["6.2", "0.23", "0.35", "0.7", "0.051", "24.0", "111.0", "0.992", "3.37", "0.43"]
WINE_TEST = ["9.9", "0.49", "0.23", "2.4", "0.087", "19.0", "115.0", "0.995", "2.77", "0.44"]

WINE_EXPECTED_PROMPT = (
    WINE_PREFIX
    + "\n"
    + "fixed_acidity: 6.2; volatile_acidity: 0.23; citric_acid: 0.35; residual_sugar: 0.7; "
    + "chlorides: 0.051; free_sulfur_dioxide: 24.0; total_sulfur_dioxide: 111.0; density: 0.992; "
    + "pH: 3.37; sulphates: 0.43; color: white; alcohol: 11.0; quality: 3"
    + "\n"
    + "fixed_acidity: 9.9; volatile_acidity: 0.49; citric_acid: 0.23; residual_sugar: 2.4; "
    + "chlorides: 0.087; free_sulfur_dioxide: 19.0; total_sulfur_dioxide: 115.0; density: 0.995; "
    + "pH: 2.77; sulphates: 0.44; color: white; "
)


def wine_table() -> Table:
    from jolt.decimals import parse_scaled

    features = [num_col(name, p) for name, p in WINE_FEATURES] + [cat_col("color", ("white", "red"))]
    targets = [num_col("alcohol", 1), cat_col("quality", tuple(str(i) for i in range(11)))]
    train_row = tuple(
        Number(parse_scaled(v, p)) for v, (_, p) in zip(WINE_TRAIN, WINE_FEATURES)
    ) + (Category("white"), Number(110), Category("3"))
    test_row = tuple(
        Number(parse_scaled(v, p)) for v, (_, p) in zip(WINE_TEST, WINE_FEATURES)
    ) + (Category("white"), MISSING, MISSING)
    return Table(
        feature_columns=tuple(features),
        target_columns=tuple(targets),
        rows=(train_row, test_row),
        train_indices=(0,),
        test_indices=(1,),
    )


@pytest.fixture
def wine() -> tuple[Table, PromptTemplate, str]:
    return wine_table(), PromptTemplate(prefix=WINE_PREFIX, d=": ", s="; ", t="\n"), WINE_EXPECTED_PROMPT
