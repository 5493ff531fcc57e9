import itertools
import struct

import numpy as np
import pytest

from swapcast.agents import CapExceeded, UtilityFunction, build_utility_cover
from swapcast.core import DimensionError, PredictionGrid, build_epsilon_net
from swapcast.events import (
    BestResponse,
    Bucket,
    BucketScheme,
    Interval,
    best_response_events,
    convex_polygon_events_2d,
    count_convex_closed_sets,
    intervals_1d,
    is_convex_closed,
    logistic_bucket_events,
    make_family,
    polygon_subset_oracle,
    read_membership,
    stream_convex_closed_masks,
    write_membership,
)
from swapcast.events.io import pack_membership, unpack_membership

U_TILDE = UtilityFunction([[-1.0, 1.0], [1.0, 0.0]], id="u_tilde")


def test_intervals_three_points():
    fam = intervals_1d(build_epsilon_net(1, 0.5))
    labels = [l[0] for l in fam.labels]
    assert labels == [Interval(0, 0), Interval(0, 0.5), Interval(0, 1),
                      Interval(0.5, 0.5), Interval(0.5, 1), Interval(1, 1)]
    assert fam.membership[1].tolist() == [True, True, False]


def test_intervals_counts():
    assert len(intervals_1d(build_epsilon_net(1, 1.0))) == 3
    assert len(intervals_1d(build_epsilon_net(1, 1 / 64))) == 2145


def test_intervals_reject_2d():
    with pytest.raises(DimensionError):
        intervals_1d(build_epsilon_net(2, 0.5))


def test_dedup_and_empties():
    g = build_epsilon_net(1, 0.5)
    rows = np.array([[1, 0, 0], [0, 0, 0], [1, 0, 0], [0, 1, 1]], dtype=bool)
    fam = make_family("t", g, rows, ["a", "b", "c", "d"])
    assert len(fam) == 2
    assert fam.labels == (("a", "c"), ("d",))
    assert fam.summary()["merged_duplicates"] == 1
    assert fam.summary()["dropped_empties"] == 1


def test_polygons_two_by_two():
    fam = convex_polygon_events_2d(PredictionGrid.from_shape([2, 2]))
    assert len(fam) == 15


def test_polygons_single_point():
    assert len(convex_polygon_events_2d(PredictionGrid.from_shape([1, 1]))) == 1


@pytest.mark.parametrize("shape", [(1, 2), (2, 2), (2, 3), (3, 2), (3, 3), (1, 5), (2, 4), (4, 4), (3, 5), (2, 8)])
def test_enumerator_matches_oracle(shape):
    g = PredictionGrid.from_shape(shape)
    fam = convex_polygon_events_2d(g)
    assert len(fam) == polygon_subset_oracle(g)
    assert len(fam) == count_convex_closed_sets(g)
    # every produced set is convex-closed and distinct
    assert len({r.tobytes() for r in np.packbits(fam.membership, axis=1)}) == len(fam)
    for row in fam.membership:
        assert is_convex_closed(np.flatnonzero(row), g.lattice)


def test_oracle_small_values():
    assert polygon_subset_oracle(PredictionGrid.from_shape([1, 2])) == 3
    assert polygon_subset_oracle(PredictionGrid.from_shape([2, 2])) == 15


def test_oracle_rejects_large():
    with pytest.raises(ValueError):
        polygon_subset_oracle(PredictionGrid.from_shape([5, 4]))


def test_known_square_counts():
    assert [count_convex_closed_sets((m, m)) for m in range(1, 6)] == [1, 15, 213, 2855, 33366]


def test_polygon_cap_reports_size():
    with pytest.raises(CapExceeded) as err:
        convex_polygon_events_2d(PredictionGrid.from_shape([4, 4]), cap=100)
    assert err.value.size == 2855


def test_polygons_reject_1d():
    with pytest.raises(DimensionError):
        convex_polygon_events_2d(build_epsilon_net(1, 0.5))


def test_br_events_lemma_utility():
    g = build_epsilon_net(2, 0.5, lifted=True)
    fam = best_response_events([U_TILDE], g, "high")
    assert len(fam) == 2
    assert fam.membership[fam.find(BestResponse("u_tilde", 0))].tolist() == [True, False, False]
    assert fam.membership[fam.find(BestResponse("u_tilde", 1))].tolist() == [False, True, True]


def test_br_events_constant_tie():
    g = build_epsilon_net(2, 0.5, lifted=True)
    u = UtilityFunction([[0.3, 0.2], [0.3, 0.2]], id="flat")
    fam = best_response_events([u], g, "high")
    assert len(fam) == 1
    assert fam.find(BestResponse("flat", 0)) is None
    assert fam.membership[0].all()


def test_br_events_at_most_k_per_utility():
    g = build_epsilon_net(2, 0.25, lifted=True)
    rng = np.random.default_rng(0)
    us = [UtilityFunction(rng.random((2, 2)), id=f"u{i}") for i in range(3)]
    assert best_response_events(us, g).dedup_log["raw"] == 6


def test_bucket_scheme():
    s = BucketScheme(0.25)
    assert s.count == 4
    assert s.index([0.0, 0.25, 0.5, 0.74999, 0.75, 1.0]).tolist() == [0, 1, 2, 2, 3, 3]
    s3 = BucketScheme(0.3)
    assert s3.count == 3
    assert s3.index([0.95]).tolist() == [2]


def test_bucket_equal_payoffs():
    g = build_epsilon_net(2, 0.5, lifted=True)
    u = UtilityFunction([[0.3, 0.2], [0.3, 0.2]], id="flat")
    fam = logistic_bucket_events([u], g, 1.0, BucketScheme(0.25))
    # one nonempty event per action, identical membership, so merged into one
    assert fam.dedup_log["raw"] - fam.dedup_log["dropped_empty"] == 2
    assert len(fam) == 1
    assert fam.find(Bucket("flat", 0, 2)) == fam.find(Bucket("flat", 1, 2)) == 0
    assert fam.membership.all()


def test_bucket_single():
    g = build_epsilon_net(2, 0.5, lifted=True)
    fam = logistic_bucket_events([U_TILDE], g, 1.0, BucketScheme(1.0))
    # both actions cover every grid point, so their events coincide and merge
    assert fam.dedup_log["raw"] == 2
    assert len(fam) == 1 and fam.membership.all()


def test_bucket_lemma_utility_midpoint():
    g = build_epsilon_net(2, 0.5, lifted=True)
    fam = logistic_bucket_events([U_TILDE], g, 1.0, BucketScheme(0.25))
    j = fam.find(Bucket("u_tilde", 1, 2))
    assert fam.membership[j][1]


def test_logistic_rejects_bad_eta():
    g = build_epsilon_net(2, 0.5, lifted=True)
    with pytest.raises(ValueError):
        logistic_bucket_events([U_TILDE], g, 0.0, BucketScheme(0.5))


def test_br_family_is_subfamily_of_polygons():
    g = PredictionGrid.from_shape([4, 4], lifted=True)
    cover = build_utility_cover(2, 3, 1.0)
    br = best_response_events(cover, g)
    poly = convex_polygon_events_2d(PredictionGrid.from_shape([4, 4]))
    keys = {r.tobytes() for r in np.packbits(poly.membership, axis=1)}
    assert all(r.tobytes() in keys for r in np.packbits(br.membership, axis=1))


def test_membership_file_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    m = rng.random((7, 130)) < 0.4
    path = tmp_path / "m.evfm"
    write_membership(path, m)
    raw = path.read_bytes()
    assert raw[:4] == b"EVFM"
    assert struct.unpack("<II", raw[4:12]) == (7, 130)
    assert len(raw) == 12 + 7 * 3 * 8
    assert np.array_equal(read_membership(path), m)


def test_membership_word_layout():
    m = np.zeros((1, 70), dtype=bool)
    m[0, [0, 65]] = True
    body = pack_membership(m)[12:]
    words = np.frombuffer(body, dtype="<u8")
    assert words.tolist() == [1, 2]
    assert np.array_equal(unpack_membership(pack_membership(m)), m)


def test_interval_events_are_exactly_convex_sets_1d():
    g = build_epsilon_net(1, 0.2)
    fam = intervals_1d(g)
    for n in range(1, g.size + 1):
        for sub in itertools.combinations(range(g.size), n):
            contiguous = sub[-1] - sub[0] == n - 1
            row = np.zeros(g.size, dtype=bool)
            row[list(sub)] = True
            found = any(np.array_equal(row, r) for r in fam.membership)
            assert found == contiguous


@pytest.mark.parametrize("shape", [[2, 3], [3, 3], [4, 4], [5, 5]])
def test_stream_matches_enumeration(shape):
    grid = PredictionGrid.from_shape(shape)
    fam = convex_polygon_events_2d(grid)
    packed = np.packbits(fam.membership, axis=1, bitorder="little")
    want = sorted(int.from_bytes(r.tobytes(), "little") for r in packed)
    assert sorted(stream_convex_closed_masks(grid)) == want
