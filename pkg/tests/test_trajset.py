import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gvcltraj.scenegen import AgentPose, DrivableMask
from gvcltraj.trajset import (
    TrajectorySet,
    build_cover,
    closest_mode,
    closest_modes,
    corpus_digest,
    drivable_labels,
    ego_to_map,
    map_to_ego,
    pairwise_distance,
    traj_distance,
    tune_epsilon,
)


def brute_distance(a, b):
    return max(float(np.hypot(*(p - q))) for p, q in zip(a, b))


def straight(end_x, n=12):
    return np.stack([np.linspace(end_x / n, end_x, n), np.zeros(n)], axis=1)


def line_1d(values):
    # each "trajectory" is a single point on the x axis
    return np.array([[[v, 0.0]] for v in values], dtype=float)


corpora = arrays(np.float64, st.tuples(st.integers(1, 25), st.just(4), st.just(2)),
                 elements=st.floats(-20, 20))


# --- distance --------------------------------------------------------------


def test_distance_examples():
    a = np.random.default_rng(0).normal(size=(6, 2))
    assert traj_distance(a, a) == 0
    assert traj_distance(a, a + [3.0, 4.0]) == pytest.approx(5.0)
    a = np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 0.5]])
    b = np.array([[0.5, 0.0], [1.0, 3.0], [0.0, 0.5]])
    assert traj_distance(a, b) == pytest.approx(brute_distance(a, b))
    with pytest.raises(ValueError):
        traj_distance(a, b[:2])


@given(corpora, corpora)
def test_pairwise_matches_brute_force(a, b):
    d = pairwise_distance(a, b, chunk=3)
    for i in range(len(a)):
        for j in range(len(b)):
            assert d[i, j] == pytest.approx(brute_distance(a[i], b[j]), abs=1e-12)


# --- cover -----------------------------------------------------------------


def test_single_trajectory_corpus():
    t = straight(10.0)
    ts = build_cover(t[None], 0.1)
    assert len(ts) == 1 and np.array_equal(ts.elements[0], t)


def test_middle_trajectory_covers_three():
    corpus = np.stack([straight(0.0), straight(3.0), straight(6.0)])
    ts = build_cover(corpus, 3.0)
    assert len(ts) == 1 and np.array_equal(ts.elements[0], corpus[1])
    assert pairwise_distance(corpus, ts.elements).min(axis=1).max() <= 3.0


def test_tie_break_lowest_index():
    # 0 and 10 each cover only themselves; greedy takes index order
    ts = build_cover(line_1d([10.0, 0.0]), 1.0)
    assert ts.elements[:, 0, 0].tolist() == [10.0, 0.0]
    ts = build_cover(line_1d([0.0, 1.0, 2.0, 3.0]), 1.0)
    assert ts.elements[:, 0, 0].tolist() == [1.0, 2.0]


def test_cover_errors():
    with pytest.raises(ValueError):
        build_cover(np.zeros((0, 12, 2)), 1.0)
    with pytest.raises(ValueError):
        build_cover(np.zeros((3, 12, 2)), 0.0)


@settings(max_examples=60, deadline=None)
@given(corpora, st.floats(0.5, 30))
def test_cover_soundness_and_distinctness(corpus, eps):
    ts = build_cover(corpus, eps)
    assert pairwise_distance(corpus, ts.elements).min(axis=1).max() <= eps
    assert len(np.unique(ts.elements.reshape(len(ts), -1), axis=0)) == len(ts)
    assert ts.source_hash == corpus_digest(corpus)


@settings(max_examples=40, deadline=None)
@given(corpora, st.floats(0.5, 10), st.floats(1.0, 3.0))
def test_cover_monotone_in_epsilon(corpus, eps, factor):
    assert len(build_cover(corpus, eps)) >= len(build_cover(corpus, eps * factor))


@settings(max_examples=40, deadline=None)
@given(corpora, st.floats(0.5, 30))
def test_recovering_a_cover_never_grows(corpus, eps):
    ts = build_cover(corpus, eps)
    again = build_cover(ts.elements, eps)
    assert len(again) <= len(ts)
    assert pairwise_distance(ts.elements, again.elements).min(axis=1).max() <= eps


def test_recovering_a_cover_can_shrink():
    # greedy picks 1 then 2, which lie within epsilon of each other
    ts = build_cover(line_1d([0.0, 1.0, 2.0, 3.0]), 1.0)
    assert len(ts) == 2 and len(build_cover(ts.elements, 1.0)) == 1


def test_tune_epsilon():
    rng = np.random.default_rng(1)
    corpus = np.cumsum(rng.normal(size=(150, 12, 2)), axis=1)
    eps = tune_epsilon(corpus, 10, 20)
    assert 10 <= len(build_cover(corpus, eps)) <= 20
    with pytest.raises(ValueError):
        tune_epsilon(corpus, 500, 600)


def test_round_trip(tmp_path):
    corpus = np.cumsum(np.random.default_rng(2).normal(size=(40, 12, 2)), axis=1)
    ts = build_cover(corpus, 3.0)
    ts.save(tmp_path / "k.json")
    back = TrajectorySet.load(tmp_path / "k.json")
    assert back.epsilon == ts.epsilon and back.source_hash == ts.source_hash
    assert back.elements.tobytes() == ts.elements.tobytes()


# --- closest mode ----------------------------------------------------------


def test_closest_mode_examples():
    rng = np.random.default_rng(3)
    elements = rng.normal(size=(6, 12, 2)) * 5
    ts = TrajectorySet(1.0, elements)
    assert closest_mode(elements[4], ts) == 4
    gt = np.zeros((1, 2))
    tie = TrajectorySet(1.0, np.array([[[5.0, 0]], [[1.0, 0]], [[3.0, 0]], [[-1.0, 0]]]))
    assert closest_mode(gt, tie) == 1
    with pytest.raises(ValueError):
        closest_mode(gt, TrajectorySet(1.0, np.zeros((0, 1, 2))))


def test_closest_mode_matches_scan():
    rng = np.random.default_rng(4)
    ts = TrajectorySet(1.0, np.cumsum(rng.normal(size=(64, 12, 2)), axis=1))
    gts = np.cumsum(rng.normal(size=(50, 12, 2)), axis=1)
    for gt, k in zip(gts, closest_modes(gts, ts)):
        scan = [brute_distance(gt, e) for e in ts.elements]
        assert k == int(np.argmin(scan)) == closest_mode(gt, ts)


@settings(max_examples=30, deadline=None)
@given(corpora, st.floats(0.5, 10))
def test_each_element_is_its_own_mode(corpus, eps):
    ts = build_cover(corpus, eps)
    assert closest_modes(ts.elements, ts).tolist() == list(range(len(ts)))


# --- frames and drivable labels ---------------------------------------------


@given(arrays(np.float64, (5, 2), elements=st.floats(-50, 50)), st.floats(-40, 40), st.floats(-40, 40),
       st.floats(-3.14, 3.14))
def test_frame_round_trip(points, x, y, h):
    back = map_to_ego(ego_to_map(points, (x, y), h), (x, y), h)
    assert np.allclose(back, points, atol=1e-9)


def _square_mask(value):
    return DrivableMask(np.full((40, 40), value, dtype=bool), 0.5, (-10.0, -10.0))


def test_drivable_all_or_nothing():
    ts = TrajectorySet(1.0, np.stack([straight(x) for x in (2.0, 4.0, 6.0)]))
    pose = AgentPose((0.0, 0.0), 0.0)
    assert drivable_labels(ts, _square_mask(True), pose).tolist() == [1, 1, 1]
    assert drivable_labels(ts, _square_mask(False), pose).tolist() == [0, 0, 0]


def test_single_blocked_cell():
    # elements end at x = 3, 5, 7 along y = 0, 1, 2; block the cell holding (7, 2)
    elements = np.stack([np.stack([np.linspace(0.5, e, 6), np.full(6, y)], 1) for e, y in ((3, 0), (5, 1), (7, 2))])
    ts = TrajectorySet(1.0, elements)
    mask = _square_mask(True)
    grid = mask.grid.copy()
    iy, ix = mask.cell_index(np.array([7.0, 2.0]))
    grid[iy, ix] = False
    mask = DrivableMask(grid, 0.5, (-10.0, -10.0))
    oracle = [int(all(grid[mask.cell_index(p)] for p in e)) for e in elements]
    assert oracle == [1, 1, 0]
    assert drivable_labels(ts, mask, AgentPose((0.0, 0.0), 0.0)).tolist() == oracle


def test_off_map_counts_as_blocked():
    ts = TrajectorySet(1.0, straight(30.0)[None])
    assert drivable_labels(ts, _square_mask(True), AgentPose((0.0, 0.0), 0.0)).tolist() == [0]


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 3))
def test_drivable_labels_rotation_invariant(seed, quarter_turns):
    rng = np.random.default_rng(seed)
    grid = rng.random((40, 40)) < 0.7
    mask = DrivableMask(grid, 0.5, (-10.0, -10.0))
    ts = TrajectorySet(1.0, np.cumsum(rng.uniform(-0.2, 1.0, size=(8, 6, 2)), axis=1))
    pos = rng.uniform(-5.2, 5.2, 2)
    h = rng.uniform(-3.0, 3.0)
    labels = drivable_labels(ts, mask, AgentPose(tuple(pos), h))
    rot = quarter_turns * np.pi / 2
    c, s = np.cos(rot), np.sin(rot)
    pos_r = (c * pos[0] - s * pos[1], s * pos[0] + c * pos[1])
    h_r = float(np.angle(np.exp(1j * (h + rot))))
    mask_r = DrivableMask(np.rot90(grid, -quarter_turns), 0.5, (-10.0, -10.0))
    assert np.array_equal(drivable_labels(ts, mask_r, AgentPose(pos_r, h_r)), labels)
