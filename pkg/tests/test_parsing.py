import pytest
from hypothesis import given
from hypothesis import strategies as st

from batchcot.parsing import (
    BYTES_OVER_4,
    WHITESPACE,
    ChainOrigin,
    CompletionRecord,
    UnsplittableError,
    chain_from_dict,
    chain_to_dict,
    count_tokens,
    extract_boxed,
    parse_final_answers,
    split_batch_chains,
    vanilla_chain,
)
from batchcot.prompts import BATCH, VANILLA, PromptEnvelope


def batch_record(raw_text, k=2, ids=None):
    ids = ids or tuple(f"q{i}" for i in range(k))
    env = PromptEnvelope(text="p", mode=BATCH, batch_size=k, question_ids=ids)
    return CompletionRecord(envelope=env, raw_text=raw_text,
                            counted_tokens=count_tokens(raw_text))


def vanilla_record(raw_text, qid="q0"):
    env = PromptEnvelope(text="p", mode=VANILLA, batch_size=1, question_ids=(qid,))
    return CompletionRecord(envelope=env, raw_text=raw_text,
                            counted_tokens=count_tokens(raw_text))


class TestExtractBoxed:
    def test_single(self):
        assert extract_boxed("so \\boxed{42}.") == ["42"]

    def test_nested_braces(self):
        assert extract_boxed("\\boxed{\\frac{1}{2}} then \\boxed{7}") == \
            ["\\frac{1}{2}", "7"]

    def test_unterminated_skipped(self):
        assert extract_boxed("\\boxed{unclosed") == []

    def test_no_match(self):
        assert extract_boxed("nothing here") == []

    def test_space_before_brace(self):
        assert extract_boxed("\\boxed {5}") == ["5"]

    def test_unterminated_then_inner(self):
        assert extract_boxed("\\boxed{a \\boxed{b}") == ["b"]


# payloads with balanced braces and no backslash (so no spurious \boxed)
_payload_atom = st.text(alphabet="abc 01+-/=^_", min_size=0, max_size=6)


@st.composite
def balanced_payload(draw, depth=0):
    parts = [draw(_payload_atom)]
    if depth < 3:
        for _ in range(draw(st.integers(0, 2))):
            parts.append("{" + draw(balanced_payload(depth + 1)) + "}")
            parts.append(draw(_payload_atom))
    return "".join(parts)


class TestExtractBoxedProperty:
    @given(st.lists(balanced_payload(), min_size=0, max_size=5),
           st.lists(_payload_atom.filter(lambda s: "{" not in s and "}" not in s),
                    min_size=6, max_size=6))
    def test_roundtrip(self, payloads, fillers):
        text = fillers[0]
        for i, payload in enumerate(payloads):
            text += "\\boxed{" + payload + "}" + fillers[i + 1]
        assert extract_boxed(text) == payloads


class TestParseFinalAnswers:
    def test_basic(self):
        rec = batch_record("work...\n[Final Answer]\n1. \\boxed{3}\n2. \\boxed{9}")
        result = parse_final_answers(rec)
        assert result.entries == [(1, "3"), (2, "9")]
        assert not result.fallback

    def test_last_block_wins(self):
        text = ("[Final Answer]\n1. \\boxed{0}\n2. \\boxed{0}\n"
                "more thoughts\n"
                "[Final Answer]\n1. \\boxed{3}\n2. \\boxed{9}")
        rec = batch_record(text)
        assert parse_final_answers(rec).entries == [(1, "3"), (2, "9")]

    def test_fallback_to_last_k_boxed(self):
        rec = batch_record("a \\boxed{7} b \\boxed{1} c \\boxed{2}", k=2)
        result = parse_final_answers(rec)
        assert result.entries == [(1, "1"), (2, "2")]
        assert result.fallback

    def test_marker_decoration_tolerated(self):
        rec = batch_record("**[final answer]**\n1. \\boxed{5}\n2. \\boxed{6}")
        result = parse_final_answers(rec)
        assert result.entries == [(1, "5"), (2, "6")]
        assert not result.fallback

    def test_positions_strictly_increasing_within_k(self):
        text = "[Final Answer]\n2. \\boxed{9}\n1. \\boxed{3}\n5. \\boxed{8}"
        rec = batch_record(text, k=3)
        entries = parse_final_answers(rec).entries
        positions = [p for p, _ in entries]
        assert positions == sorted(set(positions))
        assert all(1 <= p <= 3 for p in positions)

    def test_fewer_entries_than_k(self):
        rec = batch_record("[Final Answer]\n1. \\boxed{3}", k=3)
        assert parse_final_answers(rec).entries == [(1, "3")]

    def test_requires_batch_mode(self):
        with pytest.raises(ValueError):
            parse_final_answers(vanilla_record("\\boxed{1}"))


FIXTURE_2 = (
    "[Solution Process]\n"
    "1. first we compute carefully and find four.\n"
    "2. then we double three to get six.\n"
    "[Final Answer]\n"
    "1. \\boxed{4}\n"
    "2. \\boxed{6}\n"
)


class TestSplitBatchChains:
    def test_two_chains_with_answers(self):
        rec = batch_record(FIXTURE_2, k=2)
        chains = split_batch_chains(rec)
        assert [c.predicted_answer for c in chains] == ["4", "6"]
        assert [c.origin.position for c in chains] == [1, 2]
        assert all(c.origin.size == 2 and c.origin.kind == BATCH for c in chains)

    def test_partition_identity(self):
        rec = batch_record(FIXTURE_2, k=2)
        chains = split_batch_chains(rec)
        sol_end = rec.raw_text.index("[Solution Process]") + len("[Solution Process]")
        region = rec.raw_text[sol_end:rec.raw_text.index("[Final Answer]")]
        assert "".join(c.text for c in chains) == region

    def test_segments_are_substrings(self):
        rec = batch_record(FIXTURE_2, k=2)
        for chain in split_batch_chains(rec):
            assert chain.text in rec.raw_text

    def test_missing_heading_unsplittable(self):
        text = ("[Solution Process]\n1. only one heading here\n"
                "[Final Answer]\n1. \\boxed{1}\n2. \\boxed{2}\n3. \\boxed{3}\n")
        with pytest.raises(UnsplittableError):
            split_batch_chains(batch_record(text, k=3))

    def test_problem_prefix_headings(self):
        text = ("[Solution Process]\n"
                "Problem 1: reason a\n"
                "Problem 2: reason b\n"
                "[Final Answer]\n1. \\boxed{1}\n2. \\boxed{2}\n")
        chains = split_batch_chains(batch_record(text, k=2))
        assert len(chains) == 2
        assert "reason b" in chains[1].text

    def test_answer_falls_back_to_segment_boxed(self):
        text = ("[Solution Process]\n"
                "1. reasoning gives \\boxed{11}\n"
                "2. reasoning gives \\boxed{22}\n"
                "[Final Answer]\n1. \\boxed{11}\n")
        chains = split_batch_chains(batch_record(text, k=2))
        assert chains[0].predicted_answer == "11"
        assert chains[1].predicted_answer == "22"

    def test_requires_batch_mode(self):
        with pytest.raises(ValueError):
            split_batch_chains(vanilla_record("text"))


class TestVanillaChain:
    def test_last_boxed_wins(self):
        rec = vanilla_record("try \\boxed{1}; actually \\boxed{2}")
        chain = vanilla_chain(rec)
        assert chain.predicted_answer == "2"
        assert chain.origin.kind == VANILLA
        assert chain.text == rec.raw_text

    def test_no_boxed(self):
        assert vanilla_chain(vanilla_record("no answer")).predicted_answer is None


class TestCountTokens:
    def test_whitespace(self):
        assert count_tokens("a b  c", WHITESPACE) == 3

    def test_empty(self):
        assert count_tokens("", WHITESPACE) == 0
        assert count_tokens("", BYTES_OVER_4) == 0

    def test_bytes_over_4(self):
        assert count_tokens("abcdefgh", BYTES_OVER_4) == 2
        assert count_tokens("abcde", BYTES_OVER_4) == 2

    def test_unknown_scheme(self):
        with pytest.raises(ValueError):
            count_tokens("x", "chars")


class TestChainSerialization:
    def test_roundtrip(self):
        chain = vanilla_chain(vanilla_record("body \\boxed{3}", qid="qz"))
        chain.verdict = "correct"
        d = chain_to_dict(chain)
        assert d["token_scheme"] == WHITESPACE
        assert d["token_count"] == 2
        back = chain_from_dict(d)
        assert back.question_id == "qz"
        assert back.predicted_answer == "3"
        assert back.verdict == "correct"

    def test_record_token_preference(self):
        rec = CompletionRecord(
            envelope=PromptEnvelope(text="p", mode=VANILLA, batch_size=1,
                                    question_ids=("a",)),
            raw_text="x y z", counted_tokens=3, reported_tokens=17,
        )
        assert rec.effective_tokens == 17

    def test_origin_position_invariant(self):
        with pytest.raises(ValueError):
            ChainOrigin(kind=BATCH, size=2, position=3)
