import math

import numpy as np
import pytest

from jolt.backend import MockLm, enumerate_continuations
from jolt.inference import (
    AcceptanceError,
    CategoricalSummary,
    InferenceError,
    NumericSummary,
    SamplingConfig,
    categorical_logprobs,
    joint_logprob,
    numeric_allowed_strings,
    numerical_logpdf,
    predict_point,
    rejection_sample,
)
from jolt.prompts import Prompt, PromptTemplate, serialize
from jolt.table import MISSING, Category, Number, Table

from conftest import cat_col, make_tokenizer, num_col, path_mock, random_suffix_mock

TEMPLATE = PromptTemplate(prefix="p", d=":", s=";", t="\n")
LN10 = math.log(10.0)


def word_mass_mock(masses: dict[str, float], ctx: str = "Q:"):
    """Classes as single word tokens with direct raw masses at the context."""
    tok = make_tokenizer(words=tuple(masses))
    rest = 1.0 - sum(masses.values())
    dist = dict(masses)
    if rest > 0:
        dist["#"] = rest
    key = tuple(tok.token_strings(ctx))[-3:]
    return tok, MockLm(tok, {key: dist}, fallback=("0",), order=3)


class TestCategoricalLogprobs:
    def test_two_class_normalization(self):
        _, mock = word_mass_mock({"yes": 0.03, "no": 0.01})
        dist = categorical_logprobs(mock, "Q:", ("yes", "no"))
        assert math.exp(dist.logprob[0]) == pytest.approx(0.75, abs=1e-12)
        assert math.exp(dist.logprob[1]) == pytest.approx(0.25, abs=1e-12)

    def test_single_class_is_certain(self):
        _, mock = word_mass_mock({"yes": 0.03})
        dist = categorical_logprobs(mock, "Q:", ("yes",))
        assert dist.logprob == (0.0,)

    def test_multi_token_classes_match_enumeration(self):
        tok = make_tokenizer(words=("wht",))
        classes = ("a", "ab", "wht", "bb")
        alphabet = ("a", "b", "wht")
        rng = np.random.default_rng(7)
        mock = random_suffix_mock(tok, "Q:", alphabet, max_len=2, order=2, rng=rng, extra_support=("#",))
        enum = enumerate_continuations(mock, "Q:", alphabet, max_len=2)
        raw = np.array([enum[c] for c in classes])
        expected = raw / raw.sum()
        dist = categorical_logprobs(mock, "Q:", classes)
        for got, want in zip(dist.logprob, expected):
            assert math.exp(got) == pytest.approx(want, abs=1e-9)

    def test_scale_invariance(self):
        # Halving every class mass (remainder to an unused token) leaves the
        # normalized distribution unchanged.
        _, full = word_mass_mock({"yes": 0.06, "no": 0.02})
        _, half = word_mass_mock({"yes": 0.03, "no": 0.01})
        a = categorical_logprobs(full, "Q:", ("yes", "no"))
        b = categorical_logprobs(half, "Q:", ("yes", "no"))
        for x, y in zip(a.logprob, b.logprob):
            assert abs(x - y) < 1e-12

    def test_empty_classes_rejected(self):
        _, mock = word_mass_mock({"yes": 0.5})
        with pytest.raises(InferenceError):
            categorical_logprobs(mock, "Q:", ())
        with pytest.raises(InferenceError):
            categorical_logprobs(mock, "Q:", ("yes", ""))

    def test_all_zero_classes_rejected(self):
        _, mock = word_mass_mock({"yes": 1.0})
        with pytest.raises(InferenceError, match="zero probability"):
            categorical_logprobs(mock, "Q:", ("A", "B"))


class TestNumericalLogpdf:
    def test_bin_width_arithmetic(self):
        tok = make_tokenizer()
        mock = path_mock(
            tok, "pY:",
            {
                "": {"7": 0.25, "1": 0.75},
                "7": {".": 0.4, ";": 0.6},
                "7.": {"4": 0.5, "5": 0.5},
            },
        )
        got = numerical_logpdf(mock, "pY:", "7.4", 1, TEMPLATE)
        assert got.log_pmf == pytest.approx(math.log(0.05), abs=1e-12)
        assert got.log_pdf == pytest.approx(math.log(0.5), abs=1e-12)
        assert got.log_pdf == got.log_pmf + 1 * LN10  # exact by construction

    def test_zero_precision_density_equals_mass(self):
        tok = make_tokenizer()
        mock = path_mock(tok, "pY:", {"": {"7": 0.3, "1": 0.7}})
        got = numerical_logpdf(mock, "pY:", "7", 0, TEMPLATE)
        assert got.log_pdf == got.log_pmf == pytest.approx(math.log(0.3), abs=1e-12)

    def test_total_mass_matches_enumeration(self):
        # Random terminating mock: support stays inside the allowed set, so
        # the masked renormalization is the identity and bin masses are raw
        # path probabilities.
        tok = make_tokenizer()
        rng = np.random.default_rng(3)
        digits = tuple("0123456789")
        mock = random_suffix_mock(
            tok, "pY:", digits + (".",), max_len=3, order=3, rng=rng, extra_support=(";", "\n"),
        )
        enum = enumerate_continuations(mock, "pY:", digits + (".",), max_len=3)
        values = [f"{a}.{b}" for a in digits for b in digits]
        total = sum(
            math.exp(numerical_logpdf(mock, "pY:", v, 1, TEMPLATE).log_pmf) for v in values
        )
        expected = sum(enum[v] for v in values)
        assert total == pytest.approx(expected, abs=1e-9)

    def test_wrong_precision_rejected(self):
        tok = make_tokenizer()
        mock = path_mock(tok, "pY:", {"": {"7": 1.0}})
        with pytest.raises(InferenceError):
            numerical_logpdf(mock, "pY:", "7.45", 1, TEMPLATE)

    def test_negative_zero_canonicalized(self):
        tok = make_tokenizer()
        mock = path_mock(tok, "pY:", {"": {"0": 0.5, "1": 0.5}, "0": {".": 1.0}, "0.": {"0": 1.0}})
        got = numerical_logpdf(mock, "pY:", "-0.0", 1, TEMPLATE)
        assert got.value == "0.0"

    def test_allowed_set_includes_separators(self):
        allowed = numeric_allowed_strings(TEMPLATE)
        assert set("0123456789") < set(allowed)
        assert "-" in allowed and "." in allowed
        assert TEMPLATE.s in allowed and TEMPLATE.t in allowed


def one_row_table(targets, target_cells):
    return Table(
        feature_columns=(num_col("A", 0),),
        target_columns=tuple(targets),
        rows=((Number(1),) + tuple(target_cells),),
        train_indices=(),
        test_indices=(0,),
    )


class TestJointLogprob:
    def test_independent_targets_sum_of_marginals(self):
        tok = make_tokenizer()
        table = one_row_table(
            [cat_col("Y", ("a", "b")), cat_col("Z", ("c", "d"))],
            [Category("a"), Category("d")],
        )
        prompt = serialize(table, TEMPLATE, 0)
        z_dist = {"c": 0.3, "d": 0.7}
        transitions = {"": {"a": 0.4, "b": 0.6}}
        for y in ("a", "b"):
            transitions[y] = {";": 1.0}
            transitions[y + ";"] = {"Z": 1.0}
            transitions[y + ";Z"] = {":": 1.0}
            transitions[y + ";Z:"] = z_dist
        mock = path_mock(tok, prompt.text + "Y:", transitions)
        result = joint_logprob(mock, prompt, list(zip(table.target_columns, [Category("a"), Category("d")])), TEMPLATE)
        y_marginal = categorical_logprobs(mock, prompt.text + "Y:", ("a", "b")).logprob[0]
        z_marginal = categorical_logprobs(mock, prompt.text + "Y:a;Z:", ("c", "d")).logprob[1]
        assert result.joint_logprob == pytest.approx(y_marginal + z_marginal, abs=1e-12)
        assert result.joint_logprob == sum(result.per_target_logprob)

    def test_deterministic_dependency(self):
        # Z is a function of Y: consistent pairs score log p(y); inconsistent -inf.
        tok = make_tokenizer()
        specs = [cat_col("Y", ("a", "b")), cat_col("Z", ("c", "d"))]
        f = {"a": "c", "b": "d"}
        transitions = {"": {"a": 0.4, "b": 0.6}}
        for y in ("a", "b"):
            transitions[y] = {";": 1.0}
            transitions[y + ";"] = {"Z": 1.0}
            transitions[y + ";Z"] = {":": 1.0}
            transitions[y + ";Z:"] = {f[y]: 1.0}
        table = one_row_table(specs, [Category("a"), Category("c")])
        prompt = serialize(table, TEMPLATE, 0)
        mock = path_mock(tok, prompt.text + "Y:", transitions)

        consistent = joint_logprob(mock, prompt, list(zip(specs, [Category("a"), Category("c")])), TEMPLATE)
        assert consistent.joint_logprob == pytest.approx(math.log(0.4), abs=1e-12)
        inconsistent = joint_logprob(mock, prompt, list(zip(specs, [Category("a"), Category("d")])), TEMPLATE)
        assert inconsistent.joint_logprob == -math.inf

    def test_heterogeneous_pair_matches_enumeration(self):
        # numeric (n=1) then categorical, checked against the enumerated
        # probability of the full continuation string.
        tok = make_tokenizer()
        specs = [num_col("Y", 1), cat_col("C", ("a", "bb"))]
        table = one_row_table(specs, [Number(35), Category("bb")])
        prompt = serialize(table, TEMPLATE, 0)
        transitions = {}
        transitions[""] = {"3": 0.3, "7": 0.7}
        for y in ("3.5", "7.2"):
            transitions[y[0]] = {".": 1.0}
            transitions[y[:2]] = {y[2]: 1.0}
            transitions[y] = {";": 1.0}
            transitions[y + ";"] = {"C": 1.0}
            transitions[y + ";C"] = {":": 1.0}
            transitions[y + ";C:"] = {"a": 0.6, "b": 0.4}
            transitions[y + ";C:b"] = {"b": 1.0}
        mock = path_mock(tok, prompt.text + "Y:", transitions)
        result = joint_logprob(mock, prompt, list(zip(specs, [Number(35), Category("bb")])), TEMPLATE)

        alphabet = ("3", "7", ".", "5", "2", ";", "C", ":", "a", "b")
        enum = enumerate_continuations(mock, prompt.text + "Y:", alphabet, max_len=8)
        # one bin-width correction for the single numeric target
        expected = math.log(enum["3.5;C:bb"]) + 1 * LN10
        assert result.joint_logprob == pytest.approx(expected, abs=1e-9)

    def test_order_and_missing_validation(self):
        tok = make_tokenizer()
        specs = [cat_col("Y", ("a",)), cat_col("Z", ("c",))]
        table = one_row_table(specs, [Category("a"), Category("c")])
        prompt = serialize(table, TEMPLATE, 0)
        mock = path_mock(tok, prompt.text, {})
        with pytest.raises(InferenceError):
            joint_logprob(mock, prompt, [(specs[0], MISSING)], TEMPLATE)


def sampling_mock(valid_masses=None):
    """Single categorical target 'C'; generation emits one token then newline."""
    valid_masses = valid_masses or {"a": 0.3, "b": 0.2, "z": 0.5}
    tok = make_tokenizer()
    table = one_row_table([cat_col("C", ("a", "b"))], [MISSING])
    prompt = serialize(table, TEMPLATE, 0)
    transitions = {"": dict(valid_masses)}
    for t in valid_masses:
        transitions[t] = {"\n": 1.0}
    mock = path_mock(tok, prompt.text + "C:", transitions)
    return mock, prompt, table


class TestRejectionSampling:
    def test_invalid_half_renormalizes(self):
        mock, prompt, table = sampling_mock()
        cfg = SamplingConfig(n_samples=2000, top_p=1.0, max_new_tokens=4, seed=1)
        summary = rejection_sample(mock, prompt, table.target_columns, TEMPLATE, cfg)
        assert summary.acceptance_rate == pytest.approx(0.5, abs=0.03)
        freq = summary.per_target["C"].frequencies
        assert freq["a"] == pytest.approx(0.6, abs=0.03)
        assert freq["b"] == pytest.approx(0.4, abs=0.03)

    def test_always_valid_acceptance_one(self):
        mock, prompt, table = sampling_mock({"a": 0.7, "b": 0.3})
        cfg = SamplingConfig(n_samples=500, top_p=1.0, max_new_tokens=4, seed=2)
        summary = rejection_sample(mock, prompt, table.target_columns, TEMPLATE, cfg)
        assert summary.acceptance_rate == 1.0

    def test_exhaustion_raises_with_rate(self):
        mock, prompt, table = sampling_mock({"z": 1.0})
        cfg = SamplingConfig(n_samples=3, max_attempts_per_sample=5, max_new_tokens=4, seed=0)
        with pytest.raises(AcceptanceError) as err:
            rejection_sample(mock, prompt, table.target_columns, TEMPLATE, cfg)
        assert err.value.acceptance_rate == 0.0

    def test_multi_target_parse(self):
        tok = make_tokenizer()
        specs = [num_col("Y", 1), cat_col("C", ("a", "b"))]
        table = one_row_table(specs, [MISSING, MISSING])
        prompt = serialize(table, TEMPLATE, 0)
        transitions = {
            "": {"3": 1.0}, "3": {".": 1.0}, "3.": {"5": 1.0},
            "3.5": {";": 1.0}, "3.5;": {"C": 1.0}, "3.5;C": {":": 1.0},
            "3.5;C:": {"a": 1.0}, "3.5;C:a": {"\n": 1.0},
        }
        mock = path_mock(tok, prompt.text + "Y:", transitions)
        cfg = SamplingConfig(n_samples=20, max_new_tokens=16, seed=3)
        summary = rejection_sample(mock, prompt, specs, TEMPLATE, cfg)
        assert summary.acceptance_rate == 1.0
        assert summary.per_target["Y"].median == 3.5
        assert summary.per_target["C"].mode == "a"

    def test_median_and_interval_order_statistics(self):
        s = NumericSummary(
            median=float(np.percentile([1.0, 2.0, 3.0], 50)),
            interval=tuple(np.percentile([1.0, 2.0, 3.0], [2.5, 97.5])),
            level=0.95,
            values_scaled=(10, 20, 30),
            precision=1,
        )
        assert s.median == 2.0
        assert s.interval[0] == pytest.approx(np.percentile([1.0, 2.0, 3.0], 2.5))
        assert s.rendered_median() == "2.0"
        even = NumericSummary(median=0.0, interval=(0, 0), level=0.95, values_scaled=(10, 20, 30, 41), precision=1)
        assert even.rendered_median() == "2.5"  # mean of middle two scaled values


class TestPredictPoint:
    def test_argmax_binary(self):
        _, mock = word_mass_mock({"yes": 0.03, "no": 0.01})
        prompt = Prompt(text="Q:", boundary=0)
        specs = [cat_col("C", ("yes", "no"))]
        # conditioning is prompt.text + "C:" here; rebuild mock on that base
        tok = make_tokenizer(words=("yes", "no"))
        mock = path_mock(tok, "Q:C:", {"": {"yes": 0.03, "no": 0.01, "#": 0.96}}, fallback=("0",))
        got = predict_point(mock, prompt, specs, TEMPLATE, "logits", SamplingConfig())
        assert got == ["yes"]

    def test_tie_breaks_to_first_class(self):
        tok = make_tokenizer(words=("yes", "no"))
        mock = path_mock(tok, "Q:C:", {"": {"yes": 0.02, "no": 0.02, "#": 0.96}}, fallback=("0",))
        prompt = Prompt(text="Q:", boundary=0)
        got = predict_point(mock, prompt, [cat_col("C", ("yes", "no"))], TEMPLATE, "logits", SamplingConfig())
        assert got == ["yes"]

    def test_logits_mode_rejects_numeric(self):
        tok = make_tokenizer()
        mock = path_mock(tok, "x", {})
        with pytest.raises(InferenceError, match="categorical"):
            predict_point(mock, Prompt("x", 0), [num_col("Y", 1)], TEMPLATE, "logits", SamplingConfig())

    def test_greedy_sampling_equals_logits_on_deterministic_mock(self):
        tok = make_tokenizer()
        table = one_row_table([cat_col("C", ("a", "b"))], [MISSING])
        prompt = serialize(table, TEMPLATE, 0)
        transitions = {"": {"b": 1.0}, "b": {"\n": 1.0}}
        mock = path_mock(tok, prompt.text + "C:", transitions)
        via_logits = predict_point(mock, prompt, table.target_columns, TEMPLATE, "logits", SamplingConfig())
        via_sampling = predict_point(
            mock, prompt, table.target_columns, TEMPLATE, "sampling",
            SamplingConfig(n_samples=5, top_p=1e-9, max_new_tokens=4, seed=0),
        )
        assert via_logits == via_sampling == ["b"]

    def test_argmax_invariant_to_monotone_transform(self):
        # squaring raw masses (a strictly monotone transform) keeps the argmax
        tok = make_tokenizer(words=("yes", "no"))
        for masses in ({"yes": 0.03, "no": 0.01}, {"yes": 0.0009, "no": 0.0001}):
            rest = 1.0 - sum(masses.values())
            mock = path_mock(tok, "Q:C:", {"": {**masses, "#": rest}}, fallback=("0",))
            got = predict_point(mock, Prompt("Q:", 0), [cat_col("C", ("yes", "no"))], TEMPLATE, "logits", SamplingConfig())
            assert got == ["yes"]
