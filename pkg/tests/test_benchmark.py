from thor.benchmark import DeskBenchmark, DeskSettings

TINY = DeskSettings(T=50, base_channels=8, depth=2, image_size=(32, 32), epochs=1, n_train=4, n_test_healthy=1,
                    n_test_anomalous={"small": 1, "medium": 1, "large": 1})


def test_reports_are_cached_and_stable(tmp_path):
    bench = DeskBenchmark(tmp_path, TINY)
    first = bench.report(0, "thor", 10)
    assert len(list(tmp_path.glob("report_*.json"))) == 1
    again = DeskBenchmark(tmp_path, TINY).report(0, "thor", 10)
    assert again.content_hash() == first.content_hash()
    assert bench.model(0).train_seconds > 0


def test_cache_key_tracks_settings():
    assert TINY.key("model", 0) != DeskSettings().key("model", 0)
    assert TINY.key("model", 0) != TINY.key("model", 1)
