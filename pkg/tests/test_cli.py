import csv
import json
import shutil
from pathlib import Path

import numpy as np
import pytest

from maskfuse import codec
from maskfuse.cli import EXIT_CONFIG, EXIT_OK, EXIT_PARTIAL, main, parse_strategy
from maskfuse.cli import ConfigError
from maskfuse.core import m4d_registry
from maskfuse.fusion import OrderedFusion, RandomFusion
from maskfuse.metrics import ConfusionMatrix, summarize

REG = m4d_registry()
PAPER_ORDER = "ship,land,oil_spill,look_alike"


def run(*argv):
    return main([str(a) for a in argv])


def synth(out, **kw):
    args = ["synth", "--out", out]
    for key, value in kw.items():
        flag = "--" + key.replace("_", "-")
        if value is True:
            args.append(flag)
        else:
            args += [flag, str(value)]
    assert run(*args) == EXIT_OK
    return Path(out) / "manifest.json"


def read_csv_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


class TestStrategyParsing:
    def test_ordered_names(self):
        strategy = parse_strategy(f"ordered:{PAPER_ORDER}", REG)
        assert isinstance(strategy, OrderedFusion)
        assert strategy.order.priority == (3, 4, 1, 2)

    def test_ordered_ids(self):
        strategy = parse_strategy("ordered:3,4,1,2", REG)
        assert strategy.order.priority == (3, 4, 1, 2)

    def test_random(self):
        strategy = parse_strategy("random:42", REG)
        assert isinstance(strategy, RandomFusion)
        assert strategy.seed == 42

    @pytest.mark.parametrize(
        "text",
        ["", "ordered", "ordered:", "random:x", "sorted:1,2,3,4",
         "ordered:ship,land", "ordered:ship,land,oil_spill,boat"],
    )
    def test_bad_strategies(self, text):
        with pytest.raises(ConfigError):
            parse_strategy(text, REG)


class TestFuseEval:
    def test_exact_oracle_closure_end_to_end(self, tmp_path):
        manifest = synth(tmp_path / "data", images=6, width=32, height=32, seed=3)
        fuse_out = tmp_path / "fused"
        assert (
            run(
                "fuse", "--manifest", manifest, "--out", fuse_out,
                "--strategy", f"ordered:{PAPER_ORDER}", "--threshold", 0.0,
            )
            == EXIT_OK
        )
        summary = json.loads((fuse_out / "fuse_summary.json").read_text())
        assert summary["fused"] == 6 and summary["failures"] == []

        eval_out = tmp_path / "eval"
        assert (
            run(
                "eval", "--manifest", manifest, "--pred", fuse_out / "maps",
                "--out", eval_out,
            )
            == EXIT_OK
        )
        rows = read_csv_rows(eval_out / "report.csv")
        assert rows[0]["mIoU"] == "100.00"
        assert rows[0]["mF1"] == "100.00"

    def test_predictions_equal_ground_truth(self, tmp_path):
        manifest = synth(tmp_path / "data", images=3, width=24, height=24, seed=1)
        out = tmp_path / "eval"
        assert (
            run("eval", "--manifest", manifest, "--pred", tmp_path / "data" / "gt",
                "--out", out)
            == EXIT_OK
        )
        assert read_csv_rows(out / "report.csv")[0]["mIoU"] == "100.00"

    def test_report_matches_emitted_confusion(self, tmp_path):
        manifest = synth(
            tmp_path / "data", images=4, width=24, height=24, seed=2,
            morph_radius=1,
        )
        fuse_out, eval_out = tmp_path / "f", tmp_path / "e"
        run("fuse", "--manifest", manifest, "--out", fuse_out,
            "--strategy", f"ordered:{PAPER_ORDER}")
        run("eval", "--manifest", manifest, "--pred", fuse_out / "maps", "--out", eval_out)

        confusion = json.loads((eval_out / "confusion.json").read_text())
        recomputed = summarize(
            ConfusionMatrix(np.array(confusion["cells"])), REG
        )
        report = json.loads((eval_out / "report.json").read_text())["rows"][0]
        assert report["miou"] == pytest.approx(recomputed.miou, abs=1e-12)
        assert report["mf1"] == pytest.approx(recomputed.mf1, abs=1e-12)

    def test_missing_mask_is_partial_failure(self, tmp_path):
        manifest = synth(tmp_path / "data", images=3, width=24, height=24, seed=4)
        victims = sorted((tmp_path / "data" / "masks").glob("img_0001__*.png"))
        assert victims
        victims[0].unlink()
        out = tmp_path / "fused"
        code = run(
            "fuse", "--manifest", manifest, "--out", out,
            "--strategy", f"ordered:{PAPER_ORDER}",
        )
        assert code == EXIT_PARTIAL
        summary = json.loads((out / "fuse_summary.json").read_text())
        assert [f["image_id"] for f in summary["failures"]] == ["img_0001"]
        # other images still fused
        assert (out / "maps" / "img_0000.png").exists()
        assert (out / "maps" / "img_0002.png").exists()

    def test_missing_prediction_skipped_and_noted(self, tmp_path):
        manifest = synth(tmp_path / "data", images=3, width=24, height=24, seed=5)
        pred = tmp_path / "pred"
        shutil.copytree(tmp_path / "data" / "gt", pred)
        (pred / "img_0002.png").unlink()
        out = tmp_path / "eval"
        assert (
            run("eval", "--manifest", manifest, "--pred", pred, "--out", out)
            == EXIT_PARTIAL
        )
        metadata = json.loads((out / "report.json").read_text())["metadata"]
        assert metadata["evaluated"] == 2
        assert [s["image_id"] for s in metadata["skipped"]] == ["img_0002"]

    def test_empty_dataset(self, tmp_path):
        manifest = synth(tmp_path / "data", images=0)
        out = tmp_path / "fused"
        assert (
            run("fuse", "--manifest", manifest, "--out", out,
                "--strategy", f"ordered:{PAPER_ORDER}")
            == EXIT_OK
        )
        assert json.loads((out / "fuse_summary.json").read_text())["images"] == 0

    def test_bad_strategy_is_config_error(self, tmp_path):
        manifest = synth(tmp_path / "data", images=1)
        assert (
            run("fuse", "--manifest", manifest, "--out", tmp_path / "x",
                "--strategy", "ordered:ship")
            == EXIT_CONFIG
        )

    def test_missing_manifest_is_config_error(self, tmp_path):
        assert (
            run("fuse", "--manifest", tmp_path / "nope.json", "--out", tmp_path / "x",
                "--strategy", f"ordered:{PAPER_ORDER}")
            == EXIT_CONFIG
        )

    def test_out_of_range_threshold_is_config_error(self, tmp_path):
        manifest = synth(tmp_path / "data", images=1)
        assert (
            run("fuse", "--manifest", manifest, "--out", tmp_path / "x",
                "--strategy", f"ordered:{PAPER_ORDER}", "--threshold", 1.5)
            == EXIT_CONFIG
        )

    def test_format_flag_selects_report_files(self, tmp_path):
        manifest = synth(tmp_path / "data", images=2, width=16, height=16, seed=30)
        out = tmp_path / "eval"
        assert (
            run("eval", "--manifest", manifest, "--pred", tmp_path / "data" / "gt",
                "--out", out, "--format", "csv")
            == EXIT_OK
        )
        assert (out / "report.csv").exists()
        assert not (out / "report.json").exists()

    def test_random_strategy_deterministic(self, tmp_path):
        manifest = synth(tmp_path / "data", images=3, width=24, height=24, seed=6,
                         morph_radius=2)
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        for out in (out_a, out_b):
            assert (
                run("fuse", "--manifest", manifest, "--out", out,
                    "--strategy", "random:42")
                == EXIT_OK
            )
        for name in ("img_0000.png", "img_0001.png", "img_0002.png"):
            assert (out_a / "maps" / name).read_bytes() == (out_b / "maps" / name).read_bytes()


class TestJobsDeterminism:
    def test_jobs_do_not_change_output(self, tmp_path):
        manifest = synth(tmp_path / "data", images=6, width=24, height=24, seed=7,
                         morph_radius=1)
        outs = {}
        for jobs in (1, 2):
            out = tmp_path / f"jobs{jobs}"
            assert (
                run("fuse", "--manifest", manifest, "--out", out,
                    "--strategy", "random:9", "--jobs", jobs)
                == EXIT_OK
            )
            outs[jobs] = out
        for path in sorted((outs[1] / "maps").glob("*.png")):
            assert path.read_bytes() == (outs[2] / "maps" / path.name).read_bytes()


class TestSweepOrder:
    def test_all_orders_on_contested_dataset(self, tmp_path):
        manifest = synth(
            tmp_path / "data", images=4, width=32, height=32, seed=8,
            morph_radius=2, overlap_bias=0.8,
        )
        out = tmp_path / "sweep"
        assert (
            run("sweep-order", "--manifest", manifest, "--out", out,
                "--orders", "all", "--seed", 5)
            == EXIT_OK
        )
        rows = read_csv_rows(out / "order_sweep.csv")
        assert len(rows) == 25
        labels = {r["row_label"] for r in rows}
        assert "random:5" in labels
        # rows sorted by mIoU descending
        mious = [float(r["mIoU"]) for r in rows]
        assert mious == sorted(mious, reverse=True)
        # identical metric rows share an equivalence class
        by_class = {}
        for r in rows:
            key = tuple(r[name] for name in REG.names)
            by_class.setdefault(r["equiv_class"], set()).add(key)
        for members in by_class.values():
            assert len(members) == 1

    def test_disjoint_dataset_all_rows_identical(self, tmp_path):
        manifest = synth(
            tmp_path / "data", images=3, width=48, height=48, seed=9,
            overlap_bias=0.0, shapes_per_class=1,
        )
        out = tmp_path / "sweep"
        assert (
            run("sweep-order", "--manifest", manifest, "--out", out, "--orders", "all")
            == EXIT_OK
        )
        rows = read_csv_rows(out / "order_sweep.csv")
        assert len({r["mIoU"] for r in rows}) == 1
        assert {r["equiv_class"] for r in rows} == {"A"}

    def test_duplicate_orders_rejected(self, tmp_path):
        manifest = synth(tmp_path / "data", images=1)
        assert (
            run("sweep-order", "--manifest", manifest, "--out", tmp_path / "s",
                "--orders", f"{PAPER_ORDER};{PAPER_ORDER}")
            == EXIT_CONFIG
        )

    def test_explicit_orders(self, tmp_path):
        manifest = synth(tmp_path / "data", images=2, width=24, height=24, seed=10)
        out = tmp_path / "sweep"
        assert (
            run("sweep-order", "--manifest", manifest, "--out", out,
                "--orders", f"{PAPER_ORDER};look_alike,oil_spill,ship,land;random:3")
            == EXIT_OK
        )
        assert len(read_csv_rows(out / "order_sweep.csv")) == 3

    def test_cache_reused_across_runs(self, tmp_path):
        manifest = synth(tmp_path / "data", images=2, width=24, height=24, seed=11)
        out = tmp_path / "sweep"
        run("sweep-order", "--manifest", manifest, "--out", out, "--orders", "all")
        first = (out / "order_sweep.csv").read_bytes()
        cache_entries = sorted(p.name for p in (out / "cache").iterdir())
        run("sweep-order", "--manifest", manifest, "--out", out, "--orders", "all")
        assert (out / "order_sweep.csv").read_bytes() == first
        assert sorted(p.name for p in (out / "cache").iterdir()) == cache_entries


class TestSweepThreshold:
    def test_survivor_counts_monotone(self, tmp_path):
        manifest = synth(
            tmp_path / "data", images=5, width=32, height=32, seed=12,
            score_noise_sigma=0.35, score_from_quality=True, morph_radius=1,
        )
        out = tmp_path / "sweep"
        assert (
            run("sweep-threshold", "--manifest", manifest, "--out", out,
                "--strategy", f"ordered:{PAPER_ORDER}",
                "--thresholds", "0.0,0.1,0.2,0.3,0.5,0.7,0.9,1.0")
            == EXIT_OK
        )
        rows = read_csv_rows(out / "threshold_sweep.csv")
        survivors = [int(r["survivors"]) for r in rows]
        assert survivors == sorted(survivors, reverse=True)
        assert survivors[-1] == 0  # threshold 1.0 kills every detection
        by_label = {r["row_label"]: r for r in rows}
        assert by_label["t=0.20"]["reference"] == "peak"
        assert by_label["t=0.00"]["reference"] == ""

    def test_interior_peak_with_quality_scores(self, tmp_path):
        manifest = synth(
            tmp_path / "data", images=12, width=40, height=40, seed=13,
            score_noise_sigma=0.25, score_from_quality=True,
            morph_radius=2, flip_prob=0.3, box_jitter_sigma=2.0,
        )
        out = tmp_path / "sweep"
        assert (
            run("sweep-threshold", "--manifest", manifest, "--out", out,
                "--strategy", f"ordered:{PAPER_ORDER}")
            == EXIT_OK
        )
        rows = read_csv_rows(out / "threshold_sweep.csv")
        mious = {r["row_label"]: float(r["mIoU"]) for r in rows}
        best_label = max(mious, key=mious.get)
        assert best_label not in ("t=0.90",)
        assert max(mious.values()) >= mious["t=0.00"]

    def test_bad_threshold_rejected(self, tmp_path):
        manifest = synth(tmp_path / "data", images=1)
        assert (
            run("sweep-threshold", "--manifest", manifest, "--out", tmp_path / "s",
                "--strategy", f"ordered:{PAPER_ORDER}", "--thresholds", "0.5,1.5")
            == EXIT_CONFIG
        )


class TestGtBoxStudy:
    def test_exact_row_hits_hundred_and_dominates(self, tmp_path):
        manifest = synth(tmp_path / "data", images=8, width=32, height=32, seed=14)
        out = tmp_path / "study"
        assert (
            run("gtbox-study", "--manifest", manifest, "--out", out,
                "--sigmas", "0,5", "--seed", 3, "--order", PAPER_ORDER)
            == EXIT_OK
        )
        rows = read_csv_rows(out / "gtbox_study.csv")
        by_label = {r["row_label"]: float(r["mIoU"]) for r in rows}
        assert by_label["exact_box"] == 100.0
        assert by_label["jitter_sigma=5"] < 100.0


class TestColorize:
    def test_colorize_maps(self, tmp_path):
        manifest = synth(tmp_path / "data", images=2, width=16, height=16, seed=15)
        palette = tmp_path / "palette.json"
        palette.write_text(
            json.dumps({str(i): [i * 40, 0, 255 - i * 40] for i in range(5)})
        )
        out = tmp_path / "color"
        assert (
            run("colorize", "--maps", tmp_path / "data" / "gt",
                "--palette", palette, "--out", out)
            == EXIT_OK
        )
        assert sorted(p.name for p in out.iterdir()) == ["img_0000.png", "img_0001.png"]

    def test_empty_dir_is_config_error(self, tmp_path):
        (tmp_path / "empty").mkdir()
        palette = tmp_path / "p.json"
        palette.write_text('{"0": [0,0,0]}')
        assert (
            run("colorize", "--maps", tmp_path / "empty", "--palette", palette,
                "--out", tmp_path / "c")
            == EXIT_CONFIG
        )


class TestDirectionalOrderEffect:
    def test_lookalike_first_orders_score_worst(self, tmp_path):
        # big, overlap-seeking look-alikes + mask bleed: orders that put
        # look_alike first should lose contested pixels everywhere else.
        manifest = synth(
            tmp_path / "data", images=10, width=48, height=48, seed=16,
            size_scale="look_alike=2.5", overlap_bias=0.9, morph_radius=2,
        )
        out = tmp_path / "sweep"
        assert (
            run("sweep-order", "--manifest", manifest, "--out", out, "--orders", "all")
            == EXIT_OK
        )
        rows = [r for r in read_csv_rows(out / "order_sweep.csv")
                if not r["row_label"].startswith("random")]
        mious = {r["row_label"]: float(r["mIoU"]) for r in rows}
        lookalike_first = [v for k, v in mious.items() if k.startswith("look_alike")]
        ship_or_land_first = [
            v for k, v in mious.items() if k.startswith(("ship", "land"))
        ]
        assert np.mean(lookalike_first) < np.mean(ship_or_land_first)
        assert max(lookalike_first) <= max(ship_or_land_first)
