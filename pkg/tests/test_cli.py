import json

import pytest

from glaucoscreen import cli
from glaucoscreen.classify import PredictionRecord, read_predictions, write_predictions
from glaucoscreen.dataset import FoldPlan, load_manifest


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def plan_path(small_dataset, tmp_path_factory):
    path = tmp_path_factory.mktemp("plan") / "folds.csv"
    assert cli.main(["split", "--manifest", str(small_dataset / "data" / "manifest.csv"), "--out", str(path)]) == 0
    return path


class TestSynthAndPreprocess:
    def test_synth(self, capsys, tmp_path):
        code, out, _ = run(capsys, "synth", "--n", 20, "--imbalance", 3, "--size", 64, "--out", tmp_path, "--seed", 2)
        assert code == 0 and "20 images (5 referable)" in out
        assert len(load_manifest(tmp_path / "manifest.csv")) == 20

    def test_seed_before_subcommand(self, capsys, tmp_path):
        run(capsys, "--seed", 2, "synth", "--n", 6, "--size", 64, "--out", tmp_path / "a")
        run(capsys, "synth", "--n", 6, "--size", 64, "--out", tmp_path / "b", "--seed", 2)
        assert (tmp_path / "a" / "truth.csv").read_bytes() == (tmp_path / "b" / "truth.csv").read_bytes()

    def test_preprocess_with_empty_masks(self, capsys, tmp_path):
        from glaucoscreen.imaging import write_raster
        from glaucoscreen.segmentation import Mask

        run(capsys, "synth", "--n", 5, "--size", 128, "--out", tmp_path / "d")
        (tmp_path / "m").mkdir()
        for r in load_manifest(tmp_path / "d" / "manifest.csv"):
            write_raster(Mask.empty().to_raster(), tmp_path / "m" / f"{r.id}.pgm")
        code, out, _ = run(
            capsys, "preprocess", "--manifest", tmp_path / "d" / "manifest.csv", "--out", tmp_path / "v", "--masks", tmp_path / "m"
        )
        assert code == 0 and "(100.0%)" in out
        assert json.loads((tmp_path / "v" / "preprocess.json").read_text())["fallback_rate"] == 1.0


class TestSplit:
    def test_table_and_plan(self, capsys, small_dataset, tmp_path):
        code, out, _ = run(capsys, "split", "--manifest", small_dataset / "data" / "manifest.csv", "--out", tmp_path / "f.csv")
        assert code == 0
        lines = out.splitlines()
        assert lines[0].split() == ["fold", "train", "val", "test"]
        # 120 images: auto test count 12; pool 108 -> five shards of 21 and 3 always-train ids
        assert lines[1].split() == ["0", "87", "21", "12"]
        assert FoldPlan.read_csv(tmp_path / "f.csv").k == 5

    def test_options(self, capsys, small_dataset, tmp_path):
        code, out, _ = run(
            capsys, "split", "--manifest", small_dataset / "data" / "manifest.csv", "--out", tmp_path / "f.csv",
            "--test-count", 20, "--k", 4, "--val-fraction", 0.25,
        )
        assert code == 0 and out.splitlines()[4].split() == ["3", "75", "25", "20"]


class TestTrainPredictFuseEval:
    def test_chain(self, capsys, small_dataset, plan_path, tmp_path):
        views = small_dataset / "views"
        manifest = small_dataset / "data" / "manifest.csv"
        cfg = tmp_path / "c.txt"
        cfg.write_text("train.epochs = 5\n")
        preds = []
        for view in ("original", "cropped", "polar"):
            code, out, _ = run(
                capsys, "train", "--views", views, "--plan", plan_path, "--fold", 1, "--view", view,
                "--config", cfg, "--history", tmp_path / f"h_{view}.csv", "--out", tmp_path / f"{view}.json",
            )
            assert code == 0 and "87 train" in out
            pred = tmp_path / f"p_{view}.csv"
            code, out, _ = run(
                capsys, "predict", "--model", tmp_path / f"{view}.json", "--views", views, "--view", view,
                "--plan", plan_path, "--subset", "test", "--out", pred,
            )
            assert code == 0 and "12 " in out
            preds.append(pred)
        code, out, _ = run(capsys, "fuse", *preds, "--out", tmp_path / "fused.csv")
        assert code == 0 and len(read_predictions(tmp_path / "fused.csv")) == 12
        code, out, _ = run(capsys, "eval", "--pred", tmp_path / "fused.csv", "--manifest", manifest, "--out", tmp_path / "r.csv")
        assert code == 0 and out.startswith("AUC ")
        assert (tmp_path / "r.csv").read_text().startswith("auc,f1,tp,fp,tn,fn,n,threshold\n")
        assert json.loads((tmp_path / "r.jsonl").read_text())["n"] == 12

    def test_fine_tune_on_fraction(self, capsys, small_dataset, plan_path, tmp_path):
        views = small_dataset / "views"
        base = ("--views", views, "--plan", plan_path, "--view", "polar")
        assert run(capsys, "train", *base, "--fold", 0, "--out", tmp_path / "a.json")[0] == 0
        code, out, _ = run(
            capsys, "train", *base, "--fold", 2, "--init", tmp_path / "a.json", "--train-fraction", 0.5, "--out", tmp_path / "b.json"
        )
        assert code == 0 and "44 train" in out

    def test_fuse_single_file_weight_one_is_identity(self, capsys, tmp_path):
        recs = [PredictionRecord("a", "cropped", (0.25, 0.75)), PredictionRecord("b", "cropped", (0.875, 0.125))]
        write_predictions(recs, tmp_path / "p.csv")
        (tmp_path / "w.txt").write_text("weight.cropped = 1\n")
        code, _, _ = run(capsys, "fuse", tmp_path / "p.csv", "--weights", tmp_path / "w.txt", "--out", tmp_path / "f.csv")
        assert code == 0
        assert [(r.id, r.probs) for r in read_predictions(tmp_path / "f.csv")] == [(r.id, r.probs) for r in recs]

    def test_predict_train_subset_needs_fold(self, capsys, small_dataset, plan_path, tmp_path):
        views = small_dataset / "views"
        run(capsys, "train", "--views", views, "--plan", plan_path, "--fold", 0, "--view", "polar", "--out", tmp_path / "m.json")
        code, _, err = run(
            capsys, "predict", "--model", tmp_path / "m.json", "--views", views, "--view", "polar",
            "--plan", plan_path, "--subset", "val", "--out", tmp_path / "p.csv",
        )
        assert code == 1 and "--fold" in err


class TestCrossval:
    def test_five_row_fold_table(self, capsys, small_dataset, tmp_path):
        (tmp_path / "c.txt").write_text("train.epochs = 3\n")
        code, out, _ = run(
            capsys, "crossval", "--manifest", small_dataset / "data" / "manifest.csv", "--views", small_dataset / "views",
            "--config", tmp_path / "c.txt", "--out", tmp_path / "cv",
        )
        assert code == 0
        lines = out.splitlines()
        assert lines[0].split()[1:6] == [f"fold{i}" for i in range(5)]
        assert [l.split()[0] for l in lines[2:]] == ["original", "cropped", "polar", "fused"]
        assert all("±" in l for l in lines[2:])


class TestExitCodes:
    @pytest.mark.parametrize(
        "argv",
        [[], ["bogus"], ["synth", "--out", "x"], ["synth", "--n", "notanint", "--out", "x"], ["--jobs", "0", "split"]],
    )
    def test_usage(self, capsys, argv):
        assert run(capsys, *argv)[0] == 1

    def test_bad_jobs_env(self, capsys, monkeypatch, tmp_path):
        monkeypatch.setenv("PIPELINE_JOBS", "zero")
        code, _, err = run(capsys, "split", "--manifest", tmp_path / "m.csv", "--out", tmp_path / "f.csv")
        assert code == 1 and "usage error" in err

    def test_missing_manifest(self, capsys, tmp_path):
        code, _, err = run(capsys, "split", "--manifest", tmp_path / "nope.csv", "--out", tmp_path / "f.csv")
        assert code == 2 and "manifest not found" in err

    def test_malformed_manifest(self, capsys, tmp_path):
        (tmp_path / "m.csv").write_text("id,path,label\na,a.png,7\n")
        code, _, err = run(capsys, "split", "--manifest", tmp_path / "m.csv", "--out", tmp_path / "f.csv")
        assert code == 2 and "data error" in err

    def test_bad_config_key(self, capsys, tmp_path):
        (tmp_path / "c.txt").write_text("trian.epochs = 3\n")
        code, _, err = run(capsys, "synth", "--n", 4, "--out", tmp_path, "--config", tmp_path / "c.txt")
        assert code == 2 and "trian.epochs" in err

    def test_internal(self, capsys, monkeypatch, tmp_path):
        def boom(args):
            raise RuntimeError("kaput")

        monkeypatch.setitem(cli.COMMANDS, "synth", boom)
        code, _, err = run(capsys, "synth", "--n", 4, "--out", tmp_path)
        assert code == 3 and "RuntimeError: kaput" in err
