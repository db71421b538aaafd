import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gaitsep import data as D
from gaitsep import threshold as TH


def rec(samples, rate=30.0, t0=0.0, subject="1", sensor="ch"):
    samples = np.asarray(samples, dtype=float).reshape(-1, 3)
    t = t0 + np.arange(len(samples)) * 1000.0 / rate
    return D.Recording(subject, sensor, t, samples, rate)


def labeled_set(n_gait, n_non, subjects=("1",), seed=0):
    r = np.random.default_rng(seed)
    parts = []
    for s in subjects:
        n = n_gait + n_non
        data, _ = D.center(r.standard_normal((n, 60, 3)))
        labels = [1] * n_gait + [0] * n_non
        parts.append(D.WindowSet(data, labels, [s] * n, ["ch"] * n, np.stack([labels, np.arange(n)], 1)))
    return D.WindowSet.concat(parts)


# --- resampling ----------------------------------------------------------

def test_resample_constant_signal():
    out = D.resample_to_30hz(rec(np.tile([0.1, -0.2, 1.0], (100, 1)), rate=31.25))
    assert np.allclose(out.samples, [0.1, -0.2, 1.0])
    assert len(out.samples) == int((99 * 32.0) / (1000 / 30)) + 1


def test_resample_at_30hz_is_identity():
    x = np.random.default_rng(0).standard_normal((50, 3))
    out = D.resample_to_30hz(rec(x, rate=30.0, t0=1234.0))
    np.testing.assert_allclose(out.samples, x, atol=1e-12)
    np.testing.assert_allclose(out.timestamps_ms, 1234.0 + np.arange(50) * 1000 / 30)


def test_resample_preserves_a_ramp():
    t_sec = np.arange(32) / 31.25  # one second of samples, 0 .. 31/31.25
    out = D.resample_to_30hz(D.Recording("1", "ch", t_sec * 1000, np.column_stack([t_sec] * 3)))
    grid = out.timestamps_ms / 1000
    assert len(grid) == 30
    np.testing.assert_allclose(out.samples[:, 0], grid, atol=1e-12)


def test_recording_validation():
    with pytest.raises(D.DataError):
        D.Recording("1", "ch", [0, 10, 10], np.zeros((3, 3)))
    with pytest.raises(D.DataError):
        D.Recording("1", "ch", [0, 10], [[0, 0, np.inf], [0, 0, 0]])
    with pytest.raises(D.DataError):
        D.resample_to_30hz(rec(np.zeros((1, 3))))


# --- labeling and windowing ----------------------------------------------------

def test_label_examples():
    ev = D.label_intervals([(0, 1, "UPDRS Timed Up and Go"), (1, 2, "UHDRS 15 - Retropulsion Pull Test"),
                            (2, 3, "Typing test"), (3, 4, "tandem walking, eyes open")])
    assert [e.label for e in ev] == ["gait", "excluded", "non_gait", "gait"]


def test_overlapping_gait_and_non_gait_is_rejected():
    with pytest.raises(D.DataError, match="Typing"):
        D.label_intervals([(0, 100, "Gait"), (50, 150, "Typing")])
    # an excluded interval may overlap anything
    D.label_intervals([(0, 100, "Gait"), (50, 150, "Retropulsion Pull Test")])


@pytest.mark.parametrize("length,count", [(60, 1), (105, 4), (59, 0), (75, 2), (300, 17)])
def test_window_counts(length, count):
    r = rec(np.random.default_rng(0).standard_normal((length + 20, 3)))
    ms = 1000 / 30
    ws = D.extract_windows(r, D.label_intervals([(10 * ms - 1, (10 + length) * ms - 1, "Gait")]))
    assert len(ws) == count == D.n_windows(length)
    assert list(ws.origin[:, 1]) == list(range(0, 15 * count, 15))


def test_windows_are_centered_and_stay_inside_intervals():
    x = np.random.default_rng(1).standard_normal((400, 3)) + [0.0, 0.0, 1.0]
    ms = 1000 / 30
    events = D.label_intervals([(0, 129.5 * ms, "Gait"), (129.5 * ms, 400 * ms, "Sitting")])
    ws = D.extract_windows(rec(x), events)
    np.testing.assert_allclose(ws.data.mean(axis=1), 0, atol=1e-12)
    for k, off in ws.origin:
        start = 0 if k == 0 else 130
        stop = 130 if k == 0 else 400
        assert start + off + 60 <= stop
        np.testing.assert_allclose(ws.data[(ws.origin[:, 0] == k) & (ws.origin[:, 1] == off)][0],
                                   x[start + off : start + off + 60] - x[start + off : start + off + 60].mean(0))


def test_excluded_interval_contributes_nothing():
    ms = 1000 / 30
    ws = D.extract_windows(rec(np.ones((200, 3))), D.label_intervals([(0, 200 * ms, "Retropulsion Pull Test")]))
    assert len(ws) == 0


def test_window_extraction_is_translation_consistent():
    x = np.random.default_rng(2).standard_normal((300, 3))
    ms = 1000 / 30
    ev = D.label_intervals([(0, 300 * ms, "Gait")])
    a = D.extract_windows(rec(x), ev)
    b = D.extract_windows(rec(np.vstack([np.zeros((15, 3)), x[:-15]])), ev)
    np.testing.assert_allclose(b.data[1:], a.data[:-1], atol=1e-12)


# --- splits -------------------------------------------------------------

def test_stratified_counts_example():
    sp = D.stratified_split(labeled_set(100, 400), seed=3)
    assert sp.train.class_counts() == (240, 60)
    assert sp.validation.class_counts() == (80, 20)
    assert sp.test.class_counts() == (80, 20)


@given(st.integers(5, 80), st.integers(5, 80), st.integers(0, 1000))
def test_stratified_ratios_within_one_window(n1, n0, seed):
    ws = labeled_set(n1, n0, seed=seed % 7)
    sp = D.stratified_split(ws, seed)
    for part, frac in ((sp.train, 0.6), (sp.validation, 0.2), (sp.test, 0.2)):
        c0, c1 = part.class_counts()
        assert abs(c0 - frac * n0) <= 1 and abs(c1 - frac * n1) <= 1
    assert len(sp.train) + len(sp.validation) + len(sp.test) == len(ws)


def test_stratified_split_is_seeded_and_order_independent():
    ws = labeled_set(30, 50, seed=4)
    a = D.stratified_split(ws, 9)
    b = D.stratified_split(ws.subset(np.random.default_rng(0).permutation(len(ws))), 9)
    for x, y in ((a.train, b.train), (a.validation, b.validation), (a.test, b.test)):
        assert np.array_equal(x.data, y.data) and np.array_equal(x.labels, y.labels)
    assert not np.array_equal(a.train.data, D.stratified_split(ws, 10).train.data)


def test_stratified_split_needs_five_per_class():
    with pytest.raises(D.DataError):
        D.stratified_split(labeled_set(4, 50), 0)


def test_loso_folds_partition_subjects():
    subjects = D.PAPER_SUBJECTS
    ws = labeled_set(6, 9, subjects=subjects)
    folds = D.loso_folds(ws)
    assert len(folds) == 16
    assert [f.subject for f in folds] == sorted(subjects, key=int)
    seen = []
    for f in folds:
        assert set(f.test.subjects) == {f.subject}
        assert f.subject not in set(f.train.subjects) | set(f.validation.subjects)
        assert len(f.train) + len(f.validation) + len(f.test) == len(ws)
        c0, c1 = f.validation.class_counts()
        assert (c0, c1) == (round(0.3 * 9 * 15), round(0.3 * 6 * 15))
        seen.append(f.test.data)
    together = np.concatenate(seen)
    assert len(together) == len(ws)
    assert len({d.tobytes() for d in together}) == len(ws)


def test_loso_is_order_independent_and_reports_empty_subject():
    ws = labeled_set(6, 9, subjects=("1", "2", "3"))
    a = D.loso_folds(ws, ["1", "2", "3"])
    b = D.loso_folds(ws.subset(np.random.default_rng(5).permutation(len(ws))), ["3", "1", "2"])
    for x, y in zip(a, b):
        assert np.array_equal(x.train.data, y.train.data) and np.array_equal(x.validation.data, y.validation.data)
    with pytest.raises(D.DataError, match="subject 4"):
        D.loso_folds(ws, ["1", "2", "3", "4"])


# --- cache -------------------------------------------------------------------

def test_cache_round_trip_and_determinism(small_synth):
    buf = D.encode_cache(small_synth)
    assert buf == D.encode_cache(small_synth)
    assert buf[:4] == b"GWIN"
    assert len(buf) == 10 + sum(2 + len(s) + 2 + 720 for s in small_synth.subjects)
    back = D.decode_cache(buf)
    np.testing.assert_allclose(back.data, small_synth.data, atol=1e-6)
    np.testing.assert_allclose(back.data.mean(axis=1), 0, atol=1e-9)
    assert np.array_equal(back.labels, small_synth.labels)
    assert list(back.subjects) == list(small_synth.subjects)


def test_cache_rejects_damage(small_synth):
    buf = D.encode_cache(small_synth.subset(np.arange(3)))
    for bad in (buf[:-1], buf[:7], buf + b"\0", b"XWIN" + buf[4:], buf[:4] + b"\x02\x00" + buf[6:]):
        with pytest.raises(D.DataError):
            D.decode_cache(bad)


# --- CSV ingestion -----------------------------------------------------------

def write_fixture(tmp_path, subject, n_samples, events, signal):
    t = 1_600_000_000_000 + np.arange(n_samples) * 32.0  # 31.25 Hz
    x = signal(np.arange(n_samples))
    with open(tmp_path / f"{subject}_ch.csv", "w") as fh:
        fh.write("t_ms,ax_g,ay_g,az_g\n")
        for ti, row in zip(t, x):
            fh.write(f"{ti:.0f},{float(row[0])!r},{float(row[1])!r},{float(row[2])!r}\n")
    with open(tmp_path / f"{subject}_annotations.csv", "w") as fh:
        fh.write("start_ms,stop_ms,activity\n")
        for a, b, name in events:
            fh.write(f"{t[0] + a:.0f},{t[0] + b:.0f},{name}\n")
    return t


def test_prepare_counts_match_window_arithmetic(tmp_path):
    events = [(0, 4000, "10 Meter Walk Test"), (5000, 9000, "Sitting"), (9000, 9500, "Gait"),
              (10000, 20000, "Retropulsion Pull Test")]
    sig = lambda i: np.column_stack([np.sin(i / 5), np.cos(i / 7), 1 + 0 * i])  # noqa: E731
    t = write_fixture(tmp_path, "7", 700, events, sig)
    ws = D.prepare_subject(tmp_path, "7")
    grid = t[0] + np.arange(int((t[-1] - t[0]) / (1000 / 30)) + 1) * 1000 / 30
    expected = {1: 0, 0: 0}
    for a, b, name in events[:3]:
        n = int(np.sum((grid >= t[0] + a) & (grid < t[0] + b)))
        expected[0 if name == "Sitting" else 1] += max(0, (n - 60) // 15 + 1) if n >= 60 else 0
    assert ws.class_counts() == (expected[0], expected[1])
    assert expected[1] > 0 and expected[0] > 0


def test_prepare_constant_signal_gives_zero_windows(tmp_path):
    write_fixture(tmp_path, "8", 400, [(0, 12000, "Gait")], lambda i: np.tile([0.3, 0.1, 0.9], (len(i), 1)))
    ws = D.prepare_subject(tmp_path, "8")
    assert len(ws) > 0
    np.testing.assert_allclose(ws.data, 0, atol=1e-12)


def test_prepare_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        D.prepare_subject(tmp_path, "9")


# --- synthetic generator ----------------------------------------------------------

def test_synth_is_deterministic_and_balanced():
    cfg = D.SynthConfig(n_subjects=3, windows_per_class=50, seed=4)
    a, b = D.synth_generate(cfg), D.synth_generate(cfg)
    assert np.array_equal(a.data, b.data)
    for s in set(a.subjects):
        assert a.select(subjects=[s]).class_counts() == (50, 50)
    np.testing.assert_allclose(a.data.mean(axis=1), 0, atol=1e-9)
    assert not np.array_equal(a.data, D.synth_generate(D.SynthConfig(n_subjects=3, windows_per_class=50)).data)


def test_synth_gait_has_larger_magnitude():
    ws = D.synth_generate(D.SynthConfig(n_subjects=4, windows_per_class=250))
    a = TH.window_magnitudes(ws.data)
    assert a[ws.labels == 1].mean() > a[ws.labels == 0].mean()


@pytest.mark.parametrize("kw", [dict(gait_freq_range_hz=(0.4, 2.0)), dict(gait_freq_range_hz=(1.0, 3.0)),
                                dict(windows_per_class=0), dict(sensors=("xx",)), dict(label_noise=0.6)])
def test_synth_rejects_invalid_config(kw):
    with pytest.raises(D.DataError):
        D.synth_generate(D.SynthConfig(**kw))


def test_synth_sensor_noise_profiles():
    ws = D.synth_generate(D.SynthConfig(n_subjects=2, windows_per_class=40, sensors=D.SENSORS))
    assert set(ws.sensors) == set(D.SENSORS)
    assert len(ws) == 2 * 2 * 40 * 5
