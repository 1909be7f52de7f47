import numpy as np
import pytest

from ctsdg import plots
from ctsdg.errors import OutputError


def fake_report(n_epochs=6):
    def breakdown(scale):
        return {"l_y": 0.7 * scale, "l_v": 40.0 * scale, "l_r": 0.1 * scale,
                "l_con": 0.5 * scale, "total": 0.8 * scale}

    return {"seed": 0, "best_epoch": 4, "best_val_total": 0.4,
            "stop_reason": "epochs_max reached",
            "epochs": [{"train": breakdown(1.0 / (e + 1)),
                        "val": breakdown(1.2 / (e + 1))}
                       for e in range(n_epochs)]}


def fake_results():
    return [{"source_domains": ["a", "b"], "target_domain": "c",
             "accuracies": [80.0, 90.0], "mean": 85.0, "std": 5.0,
             "runs": 2, "seeds": [0, 1]},
            {"source_domains": ["a", "c"], "target_domain": "b",
             "accuracies": [70.0], "mean": 70.0, "std": 0.0,
             "runs": 1, "seeds": [0]}]


def test_training_curves_writes_png(tmp_path):
    out = tmp_path / "curves.png"
    plots.plot_training_curves(fake_report(), str(out))
    assert out.stat().st_size > 0
    assert out.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_lodo_bars_writes_png(tmp_path):
    out = tmp_path / "bars.png"
    plots.plot_lodo_bars(fake_results(), str(out), title="demo")
    assert out.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_ablation_bars_writes_png(tmp_path):
    table = {"folds": ["b", "c"],
             "variants": {"full": fake_results(), "no_lv": fake_results()},
             "average": {"full": 77.5, "no_lv": 75.0}}
    out = tmp_path / "ablation.png"
    plots.plot_ablation_bars(table, str(out))
    assert out.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_unwritable_path_raises_output_error(tmp_path):
    with pytest.raises(OutputError):
        plots.plot_training_curves(fake_report(), str(tmp_path / "no" / "x.png"))
