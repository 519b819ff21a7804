import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gvcltraj import metrics as M
from gvcltraj.metrics import PredictionRecord
from gvcltraj.scenegen import AgentPose, DrivableMask
from gvcltraj.trajset import TrajectorySet
from metric_suite import ref_ade, ref_all, ref_ece, ref_order, suite_records

OPEN = DrivableMask(np.ones((200, 200), dtype=bool), 0.5, (-50.0, -50.0))
POSE = AgentPose((0.0, 0.0), 0.0)


def _ts(n=6, seed=0):
    rng = np.random.default_rng(seed)
    return TrajectorySet(1.0, np.cumsum(rng.normal(size=(n, 12, 2)), axis=1))


def _rec(p, ts, gt=None, best=0, mask=OPEN):
    gt = ts.elements[best] if gt is None else gt
    return PredictionRecord(np.asarray(p, float), gt, mask, POSE, best)


def test_record_validation():
    ts = _ts()
    with pytest.raises(ValueError):
        _rec([0.5, 0.6, 0, 0, 0, 0], ts)
    with pytest.raises(ValueError):
        _rec([1.5, -0.5, 0, 0, 0, 0], ts)


def test_empty_inputs_rejected():
    for fn in (M.acc, M.rank, M.nll, M.ece):
        with pytest.raises(ValueError):
            fn([])


def test_displacement_examples():
    ts = _ts()
    p = np.eye(6)[2]
    r = _rec(p, ts, best=2)
    assert M.ade_k(r, ts, 1) == 0 and M.fde_1(r, ts) == 0
    r = _rec(p, ts, gt=ts.elements[2] - [1.0, 0.0], best=2)
    assert M.ade_k(r, ts, 1) == pytest.approx(1.0) and M.fde_1(r, ts) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        M.ade_k(r, ts, 7)


def test_ade_matches_scan():
    rng = np.random.default_rng(5)
    ts = _ts(10, 1)
    for _ in range(20):
        r = _rec(rng.dirichlet(np.ones(10)), ts, gt=np.cumsum(rng.normal(size=(12, 2)), 0))
        for k in (1, 3, 5, 10):
            assert M.ade_k(r, ts, k) == pytest.approx(ref_ade(r, ts, k), abs=1e-12)


def test_acc_rank_examples():
    ts = _ts(5)
    recs = [_rec(np.eye(5)[i] * 0.8 + 0.04, ts, best=i) for i in range(5)]
    assert M.acc(recs) == 1 and M.rank(recs) == 1
    assert M.rank([_rec(np.full(5, 0.2), ts, best=0)]) == 1
    p = np.array([0.1, 0.35, 0.05, 0.35, 0.15])
    for best in range(5):
        expected = ref_order(p).index(best) + 1
        assert M.rank([_rec(p, ts, best=best)]) == expected
    assert [M.rank([_rec(p, ts, best=b)]) for b in range(5)] == [4, 1, 5, 2, 3]


def test_nll_ece_examples():
    ts = _ts(4)
    certain = [_rec(np.eye(4)[i], ts, best=i) for i in range(4)]
    assert M.nll(certain) == 0 and M.ece(certain) == 0
    one = [_rec([0.8, 0.1, 0.05, 0.05], ts, best=0)]
    assert M.ece(one) == pytest.approx(0.2, abs=1e-15)
    assert M.nll([_rec(np.full(4, 0.25), ts, best=2)]) == pytest.approx(math.log(4), abs=1e-12)


def test_nll_clamp_and_count():
    ts = _ts(4)
    recs = [_rec([1.0, 0, 0, 0], ts, best=3), _rec([0.25] * 4, ts, best=3)]
    assert M.nll(recs) == pytest.approx((-math.log(1e-12) + math.log(4)) / 2)
    assert M.n_clamped(recs) == 1


def test_dac_examples():
    ts = TrajectorySet(1.0, np.stack([np.stack([np.linspace(1, e, 12), np.full(12, y)], 1)
                                      for e, y in ((5, 0), (6, 1), (7, -1), (8, 2), (9, -2), (10, 3))]))
    p = np.array([0.3, 0.25, 0.2, 0.15, 0.07, 0.03])
    assert M.dac([_rec(p, ts)] * 3, ts) == 1.0
    grid = np.ones((40, 40), dtype=bool)
    mask = DrivableMask(grid, 0.5, (-10.0, -10.0))
    iy, ix = mask.cell_index(np.array([8.0, 2.0]))  # end of mode 3, one of the top five
    grid[iy, ix] = False
    recs = [_rec(p, ts, mask=DrivableMask(grid, 0.5, (-10.0, -10.0))) for _ in range(3)]
    assert M.dac(recs, ts) == pytest.approx(1 - 1 / 5)


def test_hit_rate_examples():
    ts = _ts()
    p = np.eye(6)[0] * 0.4 + 0.1
    assert M.hit_rate([_rec(p, ts, best=0)], ts, d=1e-9) == 1.0
    far = [_rec(p, ts, gt=ts.elements[0] + 100.0)]
    assert M.hit_rate(far, ts) == 0.0


def test_handcrafted_suite_matches_reference():
    ts, recs = suite_records()
    got = M.evaluate(recs, ts)
    ref, counts = ref_all(recs, ts)
    assert set(got) == set(M.METRIC_NAMES)
    for name in ("NLL", "ECE", "FDE_1", "ADE_1", "ADE_5", "ADE_10", "ADE_15"):
        assert got[name] == pytest.approx(ref[name], abs=1e-9), name
    n = len(recs)
    assert round(got["ACC"] * n) == counts["correct"] and got["ACC"] == pytest.approx(ref["ACC"], abs=1e-15)
    assert round(got["RNK"] * n) == counts["rank_sum"]
    assert round(got["DAC"] * 5 * n) == counts["dac_modes"]
    assert round(got["HitRate_5_2"] * n) == counts["hits"]
    # the suite exercises both outcomes of every count
    assert 0 < counts["correct"] < n and 0 < counts["hits"] < n and 0 < counts["dac_modes"] < 5 * n


def test_evaluate_clamps_k_to_set_size():
    ts = _ts(3)
    r = _rec([0.5, 0.3, 0.2], ts, best=1)
    out = M.evaluate([r], ts)
    assert out["ADE_15"] == M.ade_k(r, ts, 3)


def _calibrated(n, seed=0):
    rng = np.random.default_rng(seed)
    conf = rng.uniform(0.4, 1.0, n)
    correct = rng.random(n) < conf
    return conf, correct


def test_calibrated_predictor_ece_small():
    conf, correct = _calibrated(100_000)
    assert M.calibration_error(conf, correct) < 0.01


def test_uniform_nll_is_log_k():
    ts = _ts(37)
    recs = [_rec(np.full(37, 1 / 37), ts, best=b % 37) for b in range(50)]
    assert abs(M.nll(recs) - math.log(37)) < 1e-9


def test_aggregate_sample_std():
    per = [{"A": 1.0}, {"A": 2.0}, {"A": 4.0}]
    mean, std = M.aggregate(per)
    assert mean["A"] == pytest.approx(7 / 3)
    assert std["A"] == pytest.approx(math.sqrt(((1 - 7 / 3) ** 2 + (2 - 7 / 3) ** 2 + (4 - 7 / 3) ** 2) / 2))
    assert M.aggregate([{"A": 3.0}])[1]["A"] == 0.0


# --- properties ----------------------------------------------------------------


@st.composite
def record_sets(draw):
    n = draw(st.integers(1, 8))
    seed = draw(st.integers(0, 2**31))
    rng = np.random.default_rng(seed)
    ts = _ts(8, seed % 7)
    recs = []
    for _ in range(n):
        logits = rng.normal(0, 2, 8)
        p = np.exp(logits - logits.max())
        recs.append((logits, _rec(p / p.sum(), ts, gt=np.cumsum(rng.normal(size=(12, 2)), 0), best=int(rng.integers(8)))))
    return ts, recs, rng.permutation(n)


@settings(max_examples=40, deadline=None)
@given(record_sets())
def test_permutation_invariance(data):
    ts, pairs, perm = data
    recs = [r for _, r in pairs]
    a = M.evaluate(recs, ts)
    b = M.evaluate([recs[i] for i in perm], ts)
    for k in a:
        assert a[k] == pytest.approx(b[k], abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(record_sets(), st.floats(0.2, 5.0))
def test_temperature_keeps_orderings(data, temp):
    ts, pairs, _ = data
    recs = [r for _, r in pairs]
    scaled = []
    for logits, r in pairs:
        z = logits / temp
        p = np.exp(z - z.max())
        scaled.append(PredictionRecord(p / p.sum(), r.gt, r.mask, r.pose, r.best_mode))
    if any(not np.array_equal(a.order(), b.order()) for a, b in zip(recs, scaled)):
        return  # rounding created or broke a tie; ordering not preserved
    a, b = M.evaluate(recs, ts), M.evaluate(scaled, ts)
    for k in ("ACC", "RNK", "ADE_1", "ADE_5", "FDE_1", "HitRate_5_2", "DAC"):
        assert a[k] == b[k]


@settings(max_examples=40, deadline=None)
@given(record_sets())
def test_metric_ranges(data):
    ts, pairs, _ = data
    recs = [r for _, r in pairs]
    out = M.evaluate(recs, ts)
    assert out["NLL"] >= 0 and 0 <= out["ECE"] <= 1
    for k in ("DAC", "ACC", "HitRate_5_2"):
        assert 0 <= out[k] <= 1
    for r in recs:
        all_modes = min(np.linalg.norm(e - r.gt, axis=-1).mean() for e in ts.elements)
        assert M.ade_k(r, ts, 1) >= all_modes - 1e-12


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=30), st.integers(0, 2**31))
def test_calibration_error_matches_reference(conf, seed):
    conf = np.array(conf)
    correct = np.random.default_rng(seed).random(len(conf)) < 0.5

    class R:  # two-mode record-like object with mode 0 on top
        def __init__(self, c, ok):
            self.probs = [c, 1 - c]
            self.best_mode = 0 if ok else 1

    recs = [R(max(c, 1 - c), ok) for c, ok in zip(conf, correct)]
    got = M.calibration_error([max(r.probs) for r in recs], correct)
    assert got == pytest.approx(ref_ece(recs), abs=1e-12)
