import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from atnk.tasks import (EOS, FIRST_SYMBOL, TaskInstance, TspInstance, format_instance, gen_copy,
                        gen_monotone, gen_reverse, gen_sort, gen_tsp, parse_instance, read_instances,
                        solve_tsp, tour_length, write_instances)

GENERATOR_CALLS = [
    lambda s: gen_copy(s, 20, 5, (1, 6)),
    lambda s: gen_reverse(s, 20, 5, (1, 6)),
    lambda s: gen_monotone(s, 20, (1, 4), (2, 4)),
    lambda s: gen_sort(s, 20, (1, 6)),
    lambda s: gen_tsp(s, 5, 5),
]


def brute_force_by_heap(cities):
    """Second oracle: Heap's-algorithm permutations of all n cities, no symmetry pruning."""
    n = len(cities)
    a = list(range(n))
    best = math.inf

    def visit():
        nonlocal best
        best = min(best, tour_length(cities, a))

    c = [0] * n
    visit()
    i = 0
    while i < n:
        if c[i] < i:
            j = 0 if i % 2 == 0 else c[i]
            a[j], a[i] = a[i], a[j]
            visit()
            c[i] += 1
            i = 0
        else:
            c[i] = 0
            i += 1
    return best


class TestCopyReverse:
    def test_copy_rule(self):
        for x in gen_copy(0, 50, 3, (1, 4)):
            assert x.target == x.source + (EOS,)
            assert all(FIRST_SYMBOL <= s < FIRST_SYMBOL + 3 for s in x.source)

    def test_copy_length_one(self):
        assert all(len(x.source) == 1 for x in gen_copy(0, 5, 4, 1))

    def test_lengths_cover_range(self):
        lens = {len(x.source) for x in gen_copy(0, 300, 4, (2, 5))}
        assert lens == {2, 3, 4, 5}

    def test_reverse_rule(self):
        for x in gen_reverse(1, 50, 4, (1, 5)):
            assert x.target == x.source[::-1] + (EOS,)
            if x.source == x.source[::-1]:
                assert x.target == x.source + (EOS,)

    @pytest.mark.parametrize("bad", [(0, 3), (4, 2)])
    def test_bad_range(self, bad):
        with pytest.raises(ValueError):
            gen_copy(0, 1, 4, bad)

    def test_small_vocab_rejected(self):
        with pytest.raises(ValueError):
            gen_reverse(0, 1, 2, 3)


class TestMonotone:
    def test_single_phone_three_frames(self):
        (x,) = gen_monotone(0, 1, 1, (3, 3), noise=0.0)
        assert len(x.source) == 3 and len(x.target) == 2
        assert x.oracle["spans"] == [(0, 3)]

    def test_zero_noise_segments_are_uniform(self):
        for x in gen_monotone(2, 30, (1, 5), (2, 4), noise=0.0):
            for phone, (a, b) in zip(x.target[:-1], x.oracle["spans"]):
                assert set(x.source[a:b]) == {phone}

    def test_spans_partition_source(self):
        for x in gen_monotone(3, 50, (1, 6), (2, 5)):
            spans = x.oracle["spans"]
            assert spans[0][0] == 0 and spans[-1][1] == len(x.source)
            assert all(a[1] == b[0] for a, b in zip(spans, spans[1:]))
            assert all(2 <= b - a <= 5 for a, b in spans)
            assert len(spans) == len(x.target) - 1

    def test_no_immediate_phone_repeats(self):
        for x in gen_monotone(4, 50, (2, 6), (2, 3)):
            assert all(a != b for a, b in zip(x.target[:-2], x.target[1:-1]))

    def test_noise_rate(self):
        flips = total = 0
        for x in gen_monotone(5, 400, (3, 5), (2, 4)):
            for phone, (a, b) in zip(x.target[:-1], x.oracle["spans"]):
                flips += sum(s != phone for s in x.source[a:b])
                total += b - a
        assert abs(flips / total - 0.1) < 0.015

    def test_one_frame_phones_rejected(self):
        with pytest.raises(ValueError):
            gen_monotone(0, 1, 2, (1, 3))


class TestSort:
    def test_example(self):
        # 0-based version of [3,1,2] -> [2,3,1]
        x = TaskInstance((6, 4, 5), ())
        order = tuple(int(i) for i in np.argsort(x.source))
        assert order == (1, 2, 0)

    def test_rule_and_distinctness(self):
        for x in gen_sort(0, 50, (1, 7)):
            assert len(set(x.source)) == len(x.source)
            assert [x.source[i] for i in x.target] == sorted(x.source)
            assert x.pointer

    def test_sorted_source_gives_identity(self):
        found = [x for x in gen_sort(1, 400, (2, 3)) if list(x.source) == sorted(x.source)]
        assert found and all(x.target == tuple(range(len(x.source))) for x in found)


class TestTsp:
    def test_square(self):
        tour, length = solve_tsp([(0, 0), (1, 0), (1, 1), (0, 1)])
        assert length == pytest.approx(4.0)
        assert tour == (0, 1, 2, 3)

    def test_two_cities(self):
        tour, length = solve_tsp([(0.1, 0.2), (0.4, 0.6)])
        assert length == pytest.approx(2 * 0.5)
        assert tour_length([(0.1, 0.2), (0.4, 0.6)], [1, 0]) == pytest.approx(1.0)

    @pytest.mark.parametrize("n", [2, 3, 4, 5, 6, 7])
    def test_double_oracle(self, n):
        for x in gen_tsp(10 + n, 3, n):
            assert x.optimal_length == pytest.approx(brute_force_by_heap(x.cities), abs=1e-12)
            assert tour_length(x.cities, x.optimal_tour) == x.optimal_length
            assert x.optimal_tour[0] == 0

    def test_rotation_and_reflection_invariance(self, rng):
        pts = rng.random((6, 2))
        perm = list(rng.permutation(6))
        base = tour_length(pts, perm)
        for k in range(6):
            assert tour_length(pts, perm[k:] + perm[:k]) == pytest.approx(base, abs=1e-12)
        assert tour_length(pts, perm[::-1]) == pytest.approx(base, abs=1e-12)

    def test_not_a_permutation(self):
        with pytest.raises(ValueError):
            tour_length([(0, 0), (1, 1), (2, 2)], [0, 1, 1])

    @pytest.mark.parametrize("n", [1, 10])
    def test_size_limits(self, n):
        with pytest.raises(ValueError):
            gen_tsp(0, 1, n)


class TestDeterminismAndFormat:
    @pytest.mark.parametrize("make", GENERATOR_CALLS)
    def test_pure_function_of_seed(self, make):
        a, b = make(7), make(7)
        assert [format_instance(x) for x in a] == [format_instance(x) for x in b]
        assert [format_instance(x) for x in a] != [format_instance(x) for x in make(8)]

    @pytest.mark.parametrize("make", GENERATOR_CALLS)
    def test_text_round_trip(self, make, tmp_path):
        data = make(3)
        path = tmp_path / "data.txt"
        write_instances(path, data)
        back = read_instances(path)
        assert [(x.source, x.target, x.pointer) for x in back] == [(x.source, x.target, x.pointer) for x in data]
        if isinstance(data[0], TspInstance):
            assert [x.optimal_length for x in back] == [x.optimal_length for x in data]

    def test_line_layout(self):
        assert format_instance(TaskInstance((3, 4), (3, 4, 2))) == "SRC\t3 4\tTGT\t3 4 2"
        line = format_instance(TspInstance(((0.0, 0.5), (1.0, 0.25)), (0, 1), oracle=2.0))
        assert line.split("\t")[::2] == ["CITIES", "OPT", "LEN"]

    def test_malformed_line(self):
        with pytest.raises(ValueError):
            parse_instance("SRC\t1 2\tTARGET\t3")

    @settings(max_examples=30)
    @given(st.lists(st.integers(3, 50), min_size=1, max_size=8))
    def test_parse_format_inverse(self, src):
        x = TaskInstance(tuple(src), tuple(src) + (EOS,))
        y = parse_instance(format_instance(x))
        assert (y.source, y.target) == (x.source, x.target)
