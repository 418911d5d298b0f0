"""Convex blending and weight-search tests."""

import numpy as np
import pytest

from credit_stack.blend import (
    EnsembleSpec,
    blend,
    load_ensemble,
    optimize_weights,
    read_predictions,
    save_ensemble,
    write_predictions,
)
from credit_stack.errors import (
    ConfigError,
    DataError,
    InvalidWeightsError,
    LengthMismatchError,
    SingleMemberError,
)
from credit_stack.metric import composite_metric
from oracles import exhaustive_blend_best_m


# ---------------------------------------------------------------------------
# blending arithmetic


def test_blend_even_weights():
    out = blend([[0.2, 0.4], [0.6, 0.8]], [0.5, 0.5])
    np.testing.assert_allclose(out, [0.4, 0.6], atol=1e-15)


def test_blend_one_hot_returns_member_exactly():
    a = np.array([0.11, 0.72, 0.33])
    b = np.array([0.99, 0.01, 0.55])
    np.testing.assert_array_equal(blend([a, b], [1.0, 0.0]), a)
    np.testing.assert_array_equal(blend([a, b], [0.0, 1.0]), b)


def test_blend_hand_value():
    assert blend([[0.1], [0.4]], [0.4, 0.6])[0] == pytest.approx(0.28, abs=1e-15)


def test_blend_convexity_bounds():
    rng = np.random.default_rng(0)
    members = [rng.random(50) for _ in range(4)]
    w = rng.random(4)
    w /= w.sum()
    out = blend(members, w)
    stacked = np.vstack(members)
    assert np.all(out >= stacked.min(axis=0) - 1e-12)
    assert np.all(out <= stacked.max(axis=0) + 1e-12)


def test_blend_unconstrained_allows_any_weights():
    out = blend([[0.2], [0.4]], [1.5, -0.5], constrained=False)
    assert out[0] == pytest.approx(0.1, abs=1e-15)


def test_blend_rejects_bad_inputs():
    with pytest.raises(LengthMismatchError):
        blend([[0.1, 0.2], [0.3]], [0.5, 0.5])
    with pytest.raises(InvalidWeightsError):
        blend([[0.1], [0.2]], [0.7, 0.7])
    with pytest.raises(InvalidWeightsError):
        blend([[0.1], [0.2]], [1.5, -0.5])
    with pytest.raises(InvalidWeightsError):
        blend([[0.1], [0.2]], [1.0])
    with pytest.raises(DataError):
        blend([], [])


def test_ensemble_spec_validation():
    EnsembleSpec(("a", "b"), (0.25, 0.75))
    with pytest.raises(InvalidWeightsError):
        EnsembleSpec(("a", "a"), (0.5, 0.5))
    with pytest.raises(InvalidWeightsError):
        EnsembleSpec(("a", "b"), (0.5,))
    with pytest.raises(InvalidWeightsError):
        EnsembleSpec(("a", "b"), (-0.1, 1.1))
    with pytest.raises(InvalidWeightsError):
        EnsembleSpec(("a", "b"), (0.6, 0.6))


# ---------------------------------------------------------------------------
# weight search


def labeled_members(n=60, seed=1):
    rng = np.random.default_rng(seed)
    y = (rng.random(n) < 0.5).astype(np.int64)
    good = 0.7 * y + 0.15 + rng.normal(scale=0.1, size=n)
    fair = 0.4 * y + 0.3 + rng.normal(scale=0.25, size=n)
    noise = rng.random(n)
    return y, [np.clip(v, 0.0, 1.0) for v in (good, fair, noise)]


def test_search_puts_all_weight_on_a_perfect_member():
    y = np.array([1, 0, 1, 0, 1, 0, 1, 0])
    perfect = 0.9 * y + 0.05
    reversed_ = 1.0 - perfect
    spec, best = optimize_weights([perfect, reversed_], y, step=0.05)
    assert spec.weights == (1.0, 0.0)
    assert best == composite_metric(y, perfect).M


def test_search_identical_members_tie_to_leading():
    y = np.array([1, 0, 1, 0, 1, 1, 0, 0])
    p = np.array([0.9, 0.2, 0.8, 0.1, 0.7, 0.6, 0.3, 0.4])
    spec, _ = optimize_weights([p, p.copy()], y, step=0.1)
    assert spec.weights == (1.0, 0.0)


def test_search_matches_exhaustive_oracle():
    y, members = labeled_members()
    spec, best = optimize_weights(members, y, step=0.05)
    oracle_best = exhaustive_blend_best_m(members, y, step=0.05)
    assert abs(best - oracle_best) <= 1e-12
    # and the returned weights really achieve the returned score
    achieved = composite_metric(y, blend(members, spec.weights)).M
    assert abs(achieved - best) <= 1e-12


def test_search_beats_every_vertex():
    y, members = labeled_members(seed=3)
    _, best = optimize_weights(members, y, step=0.1)
    for j in range(3):
        one_hot = [1.0 if i == j else 0.0 for i in range(3)]
        assert best >= composite_metric(y, blend(members, one_hot)).M - 1e-12


def test_search_four_member_ascent_path():
    y, members = labeled_members(seed=4)
    members = members + [np.clip(members[0] * 0.5 + 0.25, 0, 1)]
    spec, best = optimize_weights(members, y, step=0.1)
    assert len(spec.weights) == 4
    assert abs(sum(spec.weights) - 1.0) <= 1e-12
    for j in range(4):
        one_hot = [1.0 if i == j else 0.0 for i in range(4)]
        assert best >= composite_metric(y, blend(members, one_hot)).M - 1e-12
    again, best2 = optimize_weights(members, y, step=0.1)
    assert again.weights == spec.weights and best2 == best


def test_search_custom_member_names():
    y = np.array([1, 0, 1, 0])
    spec, _ = optimize_weights(
        [[0.9, 0.1, 0.8, 0.2], [0.5, 0.5, 0.5, 0.5]], y, step=0.5,
        member_names=["wide", "recent"],
    )
    assert spec.member_names == ("wide", "recent")
    with pytest.raises(ConfigError):
        optimize_weights(
            [[0.9, 0.1, 0.8, 0.2], [0.5, 0.5, 0.5, 0.5]], y, step=0.5,
            member_names=["only_one"],
        )


def test_search_rejects_bad_steps_and_member_counts():
    y = np.array([1, 0, 1, 0])
    two = [[0.9, 0.1, 0.8, 0.2], [0.5, 0.4, 0.6, 0.3]]
    with pytest.raises(SingleMemberError):
        optimize_weights([two[0]], y)
    with pytest.raises(ConfigError):
        optimize_weights(two, y, step=0.3)  # not a whole lattice
    with pytest.raises(ConfigError):
        optimize_weights(two, y, step=0.0)
    with pytest.raises(ConfigError):
        optimize_weights(two, y, step=1.5)


# ---------------------------------------------------------------------------
# persistence


def test_ensemble_round_trip(tmp_path):
    spec = EnsembleSpec(("wide", "recent", "stacked"), (0.25, 0.5, 0.25))
    path = tmp_path / "blend.json"
    save_ensemble(spec, path)
    back = load_ensemble(path)
    assert back == spec


def test_ensemble_loader_rejects_garbage(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"weights": [1.0]}', encoding="utf-8")
    with pytest.raises(DataError):
        load_ensemble(path)
    with pytest.raises(DataError):
        load_ensemble(tmp_path / "missing.json")


def test_predictions_round_trip(tmp_path):
    ids = ["C001", "C002", "C003"]
    probs = np.array([0.123456789012345, 1.0 / 3.0, 0.9999999999999999])
    path = tmp_path / "preds.csv"
    write_predictions(ids, probs, path)
    back_ids, back = read_predictions(path)
    assert back_ids == ids
    np.testing.assert_array_equal(back, probs)  # full-precision round trip

    with pytest.raises(LengthMismatchError):
        write_predictions(ids, probs[:2], tmp_path / "x.csv")


def test_predictions_reader_rejects_garbage(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("customer_id,probability\nC1,hello\n", encoding="utf-8")
    with pytest.raises(DataError):
        read_predictions(bad)

    short = tmp_path / "short.csv"
    short.write_text("customer_id,probability\nC1\n", encoding="utf-8")
    with pytest.raises(DataError):
        read_predictions(short)

    empty = tmp_path / "empty.csv"
    empty.write_text("customer_id,probability\n", encoding="utf-8")
    with pytest.raises(DataError):
        read_predictions(empty)

    with pytest.raises(DataError):
        read_predictions(tmp_path / "missing.csv")
