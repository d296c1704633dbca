import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from domaincert import InputError
from domaincert.chartask import (TASK_TOKENS, CharTaskItem, CharTaskSpec,
                                 apply_task, build_dataset, chartask_vocabulary,
                                 check_valid_sequence, check_valid_tokens,
                                 generate_item, increment, load_dataset,
                                 parse_flat, pool_elements, save_dataset)

ELEMENTS = st.sampled_from(pool_elements("intchar"))
ELEMENT_LISTS = st.lists(ELEMENTS, min_size=1, max_size=10)


class TestApplyTaskReferenceRows:
    """The worked examples for every task on both pools."""

    @pytest.mark.parametrize("task,s_in,s_out", [
        ("S", ["5", "3", "6"], ["3", "5", "6"]),
        ("A", ["5", "3", "6"], ["6", "4", "7"]),
        ("R", ["5", "3", "6"], ["6", "5", "3"]),
        ("E", ["5", "3", "6"], ["6", "3", "5"]),
        ("S", ["13", "5", "c", "a"], ["13", "5", "a", "c"]),
        ("A", ["13", "5", "c", "a"], ["14", "6", "d", "b"]),
        ("R", ["13", "5", "c", "a"], ["c", "a", "5", "13"]),
    ])
    def test_reference_row(self, task, s_in, s_out):
        assert list(apply_task(task, s_in)) == s_out

    def test_even_odd_groups_sorted(self):
        # evens ascending, then odds ascending, parity of the last character
        assert apply_task("E", ["13", "5", "c", "a"]) == ("13", "5", "a", "c")
        assert apply_task("E", ["4", "1", "2", "3"]) == ("2", "4", "1", "3")

    def test_singleton_identity(self):
        assert apply_task("S", ["x"]) == ("x",)

    def test_empty_input_rejected(self):
        with pytest.raises(InputError):
            apply_task("S", [])
        with pytest.raises(InputError):
            apply_task("Z", ["1"])


class TestApplyTaskProperties:
    @given(ELEMENT_LISTS)
    def test_sorting_idempotent(self, v):
        once = apply_task("S", v)
        assert apply_task("S", once) == once

    @given(ELEMENT_LISTS)
    def test_reverse_is_flipped_sort_without_duplicates(self, v):
        if len(set(v)) == len(v):
            assert apply_task("R", v) == tuple(reversed(apply_task("S", v)))

    @given(ELEMENT_LISTS)
    def test_even_odd_is_permutation(self, v):
        assert sorted(apply_task("E", v)) == sorted(v)

    @given(ELEMENT_LISTS)
    def test_adding_preserves_length_and_inverts(self, v):
        out = apply_task("A", v)
        assert len(out) == len(v)
        assert [increment(e) for e in v] == list(out)


class TestGenerator:
    def test_items_pass_the_checker(self):
        spec = CharTaskSpec(tasks=TASK_TOKENS, pool="intchar", seed=1)
        rng = np.random.default_rng(1)
        for _ in range(500):
            item = generate_item(spec, rng)
            assert check_valid_sequence(item.flat)

    def test_task_frequencies_uniform(self):
        spec = CharTaskSpec(tasks=TASK_TOKENS, pool="int", seed=2)
        rng = np.random.default_rng(2)
        n = 10_000
        counts = {t: 0 for t in TASK_TOKENS}
        for _ in range(n):
            counts[generate_item(spec, rng).task] += 1
        sigma = (0.25 * 0.75 / n) ** 0.5
        for t in TASK_TOKENS:
            assert abs(counts[t] / n - 0.25) <= 3 * sigma

    def test_fixed_seed_reproduces_item(self):
        spec = CharTaskSpec(tasks=("S", "A"), pool="int", seed=3)
        a = generate_item(spec, np.random.default_rng(42))
        b = generate_item(spec, np.random.default_rng(42))
        assert a == b

    def test_task_tokens_structure(self):
        spec = CharTaskSpec(tasks=("E",), pool="int", seed=4)
        item = generate_item(spec, np.random.default_rng(0))
        assert item.task_tokens[0] == item.task == "E"
        assert sorted(item.task_tokens) == sorted(TASK_TOKENS)


class TestChecker:
    def test_reference_sequences(self):
        assert check_valid_sequence("Q 5 3 6 S R A E 3 5 6".split())
        assert not check_valid_sequence("Q 5 3 6 S R A E 5 3 6".split())
        assert not check_valid_sequence("Q 5 3 S S A E 3 5".split())

    def test_structural_rules(self):
        assert not check_valid_sequence("5 3 S R A E 3 5".split())    # no marker
        assert not check_valid_sequence("Q S R A E".split())          # empty input
        assert not check_valid_sequence("Q 5 S R A E 5 Q".split())    # stray marker
        assert not check_valid_sequence("Q 5 S R A 5".split())        # short block

    def test_parse_round_trip(self):
        item = CharTaskItem.make(("5", "3", "6"), "S", ("R", "A", "E"))
        parsed = parse_flat(item.flat)
        assert parsed == item

    def test_token_level_checker(self):
        vocab = chartask_vocabulary("intchar")
        item = CharTaskItem.make(("5", "3", "6"), "S", ("R", "A", "E"))
        tokens = vocab.encode(item.flat)
        assert check_valid_tokens(tokens, vocab)
        assert check_valid_tokens(tokens + (vocab.eos_id,), vocab)
        assert not check_valid_tokens(tokens + (vocab.bos_id,), vocab)
        assert not check_valid_tokens((vocab.eos_id,) + tokens, vocab)

    def test_rejects_every_single_token_corruption(self):
        """Fuzz: substitutions, insertions and deletions all invalidate."""
        spec = CharTaskSpec(tasks=TASK_TOKENS, pool="intchar", seed=5)
        rng = np.random.default_rng(5)
        alphabet = pool_elements("intchar") + TASK_TOKENS + ("Q",)
        checked = 0
        for _ in range(120):
            flat = list(generate_item(spec, rng).flat)
            for _ in range(4):
                pos = int(rng.integers(len(flat)))
                replacement = alphabet[int(rng.integers(len(alphabet)))]
                if replacement != flat[pos]:
                    mutated = flat[:pos] + [replacement] + flat[pos + 1:]
                    assert not check_valid_sequence(mutated)
                    checked += 1
                inserted = flat[:pos] + [replacement] + flat[pos:]
                assert not check_valid_sequence(inserted)
                deleted = flat[:pos] + flat[pos + 1:]
                assert not check_valid_sequence(deleted)
                checked += 2
        assert checked >= 1000


class TestDatasets:
    def test_split_sizes_and_disjointness(self):
        spec = CharTaskSpec(tasks=("S",), pool="int", train=1000, val=64,
                            test=256, max_input_len=8, seed=6)
        splits = build_dataset(spec)
        assert (len(splits.train), len(splits.val), len(splits.test)) == (1000, 64, 256)
        flats = [i.flat for bucket in (splits.train, splits.val, splits.test)
                 for i in bucket]
        assert len(set(flats)) == len(flats)

    def test_target_and_ood_pools_do_not_collide(self):
        target = CharTaskSpec(tasks=("S",), pool="int", train=5000, val=0,
                              test=0, min_input_len=6, max_input_len=10, seed=7)
        ood = CharTaskSpec(tasks=TASK_TOKENS, pool="intchar", train=5000, val=0,
                           test=0, min_input_len=6, max_input_len=10, seed=8)
        a = {i.flat for i in build_dataset(target).train}
        b = {i.flat for i in build_dataset(ood).train}
        assert not a & b

    def test_file_round_trip(self, tmp_path):
        spec = CharTaskSpec(tasks=("S", "E"), pool="int", train=50, val=0,
                            test=0, seed=9)
        items = build_dataset(spec).train
        path = tmp_path / "data.txt"
        save_dataset(path, items, spec, "train")
        loaded, header = load_dataset(path)
        assert loaded == items
        assert header["spec_sha256"] == spec.sha256()
        assert header["seed"] == "9"
        assert header["split"] == "train"

    def test_impossible_spec_fails_cleanly(self):
        spec = CharTaskSpec(tasks=("S",), pool="int", train=10_000, val=0,
                            test=0, min_input_len=1, max_input_len=1,
                            int_pool_size=3, seed=10)
        with pytest.raises(InputError):
            build_dataset(spec)  # only a handful of distinct items exist

    def test_spec_validation(self):
        with pytest.raises(InputError):
            CharTaskSpec(tasks=())
        with pytest.raises(InputError):
            CharTaskSpec(tasks=("S", "S"))
        with pytest.raises(InputError):
            CharTaskSpec(min_input_len=5, max_input_len=3)
        with pytest.raises(InputError):
            CharTaskSpec(max_input_len=55)


class TestVocabulary:
    def test_pools_have_documented_sizes(self):
        assert len(pool_elements("int")) == 49
        assert len(pool_elements("intchar")) == 49 + 249
        assert len(set(pool_elements("intchar"))) == 298

    def test_increments_stay_in_vocabulary(self):
        vocab = chartask_vocabulary("intchar")
        for e in pool_elements("intchar"):
            vocab.id_of(increment(e))

    def test_no_trailing_nine_in_integer_pool(self):
        assert all(not e.endswith("9") for e in pool_elements("int"))
