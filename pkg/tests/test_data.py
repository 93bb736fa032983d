import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fbcpr.data import (ReplayBuffer, RunningNormalizer, Transition, UnlabeledDataset, UnlabeledEpisode,
                        buffer_push, emd_priorities, normalize_state, sample_episode_windows, sample_transitions,
                        update_priorities)


def _tr(k, d=2):
    return Transition(np.array([k, 0.0]), np.array([0.0]), np.array([k + 1.0, 0.0]), np.ones(d), step=k)


def _filled(n, capacity=10):
    buf = ReplayBuffer(capacity, 2, 1, 2)
    for k in range(n):
        buffer_push(buf, _tr(float(k)))
    return buf


def test_overwrite_drops_oldest():
    buf = _filled(11, capacity=10)
    assert len(buf) == 10
    stored = set(buf.obs[:, 0])
    assert 0.0 not in stored and stored == set(map(float, range(1, 11)))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 20), st.integers(0, 60))
def test_overwrite_keeps_most_recent(capacity, n):
    buf = _filled(n, capacity)
    order = buf.ordered_indices()
    np.testing.assert_array_equal(buf._obs[order, 0], np.arange(max(0, n - capacity), n, dtype=float))


def test_samples_come_from_stored_items(rng):
    buf = _filled(7)
    batch = sample_transitions(buf, len(buf), rng)
    assert set(batch.obs[:, 0]) <= set(buf.obs[:, 0])
    np.testing.assert_array_equal(batch.next_obs[:, 0], batch.obs[:, 0] + 1)


def test_interleaved_push_sample_is_reproducible():
    def run():
        r = np.random.default_rng(5)
        buf, seen = ReplayBuffer(8, 2, 1, 2), []
        for k in range(30):
            buffer_push(buf, _tr(float(k)))
            seen.append(buf.sample(3, r).obs[:, 0].copy())
        return np.concatenate(seen)

    np.testing.assert_array_equal(run(), run())


def test_one_item_and_empty_cases(rng):
    buf = _filled(1)
    assert np.all(sample_transitions(buf, 50, rng).obs[:, 0] == 0.0)
    assert len(sample_transitions(buf, 0, rng)) == 0
    with pytest.raises(ValueError):
        sample_transitions(ReplayBuffer(3, 2, 1, 2), 1, rng)


def test_uniform_sampling_frequencies(rng):
    buf = _filled(10)
    counts = np.bincount(buf.sample(100_000, rng).obs[:, 0].astype(int), minlength=10) / 100_000
    np.testing.assert_allclose(counts, 0.1, atol=0.002)


def test_non_finite_push_rejected():
    buf = ReplayBuffer(3, 2, 1, 2)
    with pytest.raises(ValueError, match="obs"):
        buffer_push(buf, Transition(np.array([np.nan, 0.0]), np.zeros(1), np.zeros(2), np.ones(2)))
    assert len(buf) == 0


def test_buffer_state_round_trip(rng):
    buf = _filled(13)
    other = ReplayBuffer(10, 2, 1, 2)
    other.load_state_dict(buf.state_dict())
    assert (other.cursor, other.size) == (buf.cursor, buf.size)
    np.testing.assert_array_equal(other.obs, buf.obs)


# -- unlabeled dataset


def _dataset(priorities=None):
    eps = [UnlabeledEpisode("a", np.arange(40, dtype=float).reshape(20, 2)),
           UnlabeledEpisode("b", -np.arange(40, dtype=float).reshape(20, 2) - 1)]
    return UnlabeledDataset(eps, priorities)


def test_equal_priorities_split_evenly(rng):
    ids = _dataset().sample_episode_ids(100_000, rng)
    assert 0.49 <= np.mean(ids == 0) <= 0.51


def test_zero_priority_never_sampled(rng):
    windows = sample_episode_windows(_dataset([1.0, 0.0]), 200, 5, rng)
    assert all(w[0, 0] >= 0 for w in windows)


def test_windows_contiguous_and_whole_when_short(rng):
    ds = _dataset()
    for w in ds.sample_windows(100, 5, rng):
        assert w.shape == (5, 2)
        assert np.all(np.abs(np.diff(w[:, 0])) == 2)
    for w in ds.sample_windows(10, 20, rng) + ds.sample_windows(10, 50, rng):
        assert len(w) == 20


def test_dataset_validation(tmp_path):
    with pytest.raises(ValueError):
        UnlabeledDataset([])
    with pytest.raises(ValueError):
        UnlabeledDataset([UnlabeledEpisode("a", np.zeros((3, 2))), UnlabeledEpisode("b", np.zeros((3, 4)))])
    with pytest.raises(ValueError):
        UnlabeledDataset([UnlabeledEpisode("a", np.zeros((3, 2)), actions=np.zeros((3, 1)))])
    with pytest.raises(ValueError):
        _dataset([0.0, 0.0])
    with pytest.raises(ValueError):
        sample_episode_windows(None, 1, 1, np.random.default_rng(0))
    p = tmp_path / "ragged.jsonl"
    p.write_text('{"id": "x", "states": [[0.0, 1.0], [2.0]]}\n')
    with pytest.raises(ValueError, match="ragged"):
        UnlabeledDataset.load_jsonl(p)


def test_jsonl_round_trip(tmp_path, rng):
    eps = [UnlabeledEpisode("e0", rng.normal(size=(5, 3)), rng.normal(size=(4, 2))),
           UnlabeledEpisode("e1", rng.normal(size=(2, 3)), rng.normal(size=(1, 2)))]
    UnlabeledDataset(eps).save_jsonl(tmp_path / "d.jsonl")
    back = UnlabeledDataset.load_jsonl(tmp_path / "d.jsonl")
    assert [e.id for e in back.episodes] == ["e0", "e1"] and back.has_actions
    for a, b in zip(eps, back.episodes):
        assert a.states.tobytes() == b.states.tobytes()
        assert a.actions.tobytes() == b.actions.tobytes()
    s, a = back.sample_labeled(5, rng)
    assert s.shape == (5, 3) and a.shape == (5, 2)


# -- priorities


def test_priority_hand_example():
    np.testing.assert_array_equal(emd_priorities([0.6, 0.7, 2.3]), [0.5, 0.5, 1.0])


def test_equal_emds_give_uniform_priorities():
    np.testing.assert_array_equal(emd_priorities([1.3] * 4), [0.25] * 4)


def test_clipping_and_top_bin():
    # 7.0 clips to 5.0 and joins [4.5, 5.0] with 4.7; 0.1 clips into the first bin with 0.9
    np.testing.assert_array_equal(emd_priorities([7.0, 4.7, 0.1, 0.9, 3.0]), [0.5, 0.5, 0.5, 0.5, 1.0])
    # bin edges are half-open: 1.0 starts a new bin
    np.testing.assert_array_equal(emd_priorities([0.99, 1.0]), [1.0, 1.0])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 100), min_size=1, max_size=30))
def test_priorities_positive_and_finite(emds):
    p = emd_priorities(emds)
    assert np.all(p > 0) and np.all(np.isfinite(p))


def test_update_priorities_shape_check():
    ds = _dataset()
    update_priorities(ds, [0.6, 2.0])
    np.testing.assert_array_equal(ds.priorities, [1.0, 1.0])
    with pytest.raises(ValueError):
        update_priorities(ds, [0.6])


# -- normalizer


def test_fresh_normalizer_is_identity():
    s = np.array([3.0, -4.0])
    np.testing.assert_array_equal(normalize_state(RunningNormalizer(2), s), s)


def test_normalizer_hand_example():
    n = RunningNormalizer(1)
    n.observe([[0.0], [2.0]])
    assert n.mean[0] == 1.0 and n.std[0] == 1.0
    assert n.normalize(np.array([3.0]))[0] == 2.0


def test_constant_stream_floor():
    n = RunningNormalizer(1)
    for _ in range(5):
        n.observe(np.full((4, 1), 7.0))
    assert n.std[0] == 1e-6
    assert np.isfinite(n.normalize(np.array([8.0]))).all()


def test_streaming_matches_two_pass(rng):
    x = rng.normal(3.0, 2.0, size=(10_000, 3))
    n = RunningNormalizer(3)
    for chunk in np.array_split(x, 37):
        n.observe(chunk)
    np.testing.assert_allclose(n.mean, x.mean(0), atol=1e-10, rtol=0)
    np.testing.assert_allclose(n.var, x.var(0), atol=1e-10, rtol=0)
