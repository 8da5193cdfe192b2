"""Smoke test for the pymitl extension: synth data, training, transfer, metrics."""

import math
import tempfile

import pymitl


def main():
    sets = pymitl.synth_generate(2, 24, 4, 128, 2, sample_rate_hz=128.0, seed=3)
    assert len(sets) == 4, sets
    s = sets[0]
    assert (s.n_trials, s.n_channels, s.n_samples) == (24, 4, 128)
    assert len(s.data()) == 24 * 4 * 128
    assert len(s.trial(0)) == 4

    filtered = s.highpass(4.0, 4)
    assert filtered.n_samples == s.n_samples

    with tempfile.TemporaryDirectory() as d:
        s.save(d)
        back = pymitl.EpochSet.load(d)
        assert back.data() == s.data() and back.labels == s.labels

    results = pymitl.train(sets, "standard", epochs=20, seed=1)
    assert sorted(results) == [1, 2]
    for r in results.values():
        r.check_leakage()
        assert 0.0 <= r.accuracy <= 1.0
        assert "confusion" in r.report()

    source = results[1].checkpoint
    with tempfile.TemporaryDirectory() as d:
        source.save(d)
        loaded = pymitl.Checkpoint.load(d)
        assert loaded.count_parameters() == source.count_parameters()

    targets = pymitl.synth_generate(2, 24, 4, 128, 4, sample_rate_hz=128.0, seed=4)
    moved = pymitl.train(targets, "transfer_standard", epochs=5, subject=1,
                         freeze_depth="block1", pretrained=source)
    assert moved[1].checkpoint.n_classes == 4
    test = [t for t in targets if t.subject == 1 and t.session == 2]
    report = moved[1].checkpoint.evaluate(test)
    assert report["n_test"] == test[0].n_trials

    assert source.replace_head(3).n_classes == 3
    assert math.isclose(pymitl.kappa([0, 1, 1, 0], [0, 1, 0, 0], 2, mode="cohen"), 0.5)
    assert pymitl.kappa([0, 1, 1, 0], [0, 1, 0, 0], 2) == 0.0
    assert pymitl.accuracy([0, 1], [0, 0]) == 0.5
    out = pymitl.filtfilt([1.0] * 500, 250.0)
    assert max(abs(v) for v in out) < 1e-3

    try:
        pymitl.train(sets, "frozen")
    except ValueError as e:
        print("rejected as expected:", e)
    else:
        raise AssertionError("frozen without a depth should be rejected")

    print("pymitl smoke test passed:", ", ".join(f"{u}: {r.accuracy:.3f}" for u, r in results.items()))


if __name__ == "__main__":
    main()
