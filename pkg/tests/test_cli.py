import hashlib
import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from colonmark.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from colonmark.cli import main
from colonmark.dataset import LABELS, FrameRecord, Manifest, Split, save_manifest
from colonmark.imaging import PreprocessConfig, read_image, write_image
from colonmark.model import ViTConfig, forward, init_model, predict
from colonmark.training import TrainConfig, kl_loss, sam_step, target_matrix

SMALL_DATA = {"counts": {"TRAIN": [4, 4, 4, 12], "VAL": [2, 2, 2, 4], "TEST": [2, 2, 2, 4],
                         "SNAPSHOT": [3, 3, 3, 3]},
              "image_size": 16, "frames_per_video": 4}
TINY_RUN = {"model": {"image_size": 16, "patch_size": 8, "dim": 16, "depth": 1, "heads": 2,
                      "mlp_dim": 32, "head_hidden": [], "dropout": 0.0},
            "train": {"epochs": 1, "batch_size": 8, "learning_rate": 0.05, "seed": 1}}


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    doc = json.loads(out) if code == 0 else None
    if code == 0:
        assert out.count("\n") == 1, "stdout must hold a single JSON document"
    return code, doc, err


def tree_digest(root: Path) -> str:
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(root)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "data.json"
    cfg.write_text(json.dumps(SMALL_DATA))
    assert main(["gen-data", "--out", str(root / "data"), "--config", str(cfg), "--seed", "5"]) == 0
    (root / "run.json").write_text(json.dumps(TINY_RUN))
    return root


class TestGenData:
    def test_counts_and_files(self, data_dir, capsys, tmp_path):
        code, doc, _ = run(capsys, "gen-data", "--out", tmp_path / "d", "--config", data_dir / "data.json",
                           "--seed", 5)
        assert code == 0 and (tmp_path / "d" / "manifest.jsonl").exists()
        assert doc["counts"]["TRAIN"] == {"AO": 4, "ICV_CEC": 4, "REC_RF": 4, "OTHER": 12}
        assert tree_digest(tmp_path / "d") == tree_digest(data_dir / "data")

    def test_missing_config(self, capsys, tmp_path):
        code, _, err = run(capsys, "gen-data", "--out", tmp_path, "--config", tmp_path / "nope.json")
        assert code == 2 and "nope.json" in err

    def test_unknown_key(self, capsys, tmp_path):
        (tmp_path / "c.json").write_text('{"count": {}}')
        assert run(capsys, "gen-data", "--out", tmp_path / "x", "--config", tmp_path / "c.json")[0] == 2


def test_usage_error(capsys):
    assert main(["train"]) == 2
    capsys.readouterr()


def test_sample_plan_matches_library_oracle(capsys, tmp_path):
    recs = []
    for split, counts in ((Split.TRAIN, (40, 10, 50, 1900)), (Split.SNAPSHOT, (518, 132, 716, 1050))):
        n = 0
        for lab, c in zip(LABELS, counts):
            for _ in range(c):
                recs.append(FrameRecord(f"{split.value}-{n // 100}", n % 100, "x.ppm", lab, lab, split))
                n += 1
    save_manifest(Manifest(recs), tmp_path / "m.jsonl")
    code, doc, _ = run(capsys, "sample-plan", "--manifest", tmp_path / "m.jsonl")
    assert code == 0
    assert doc["p"] == {"AO": 1.0, "ICV_CEC": 1.0, "REC_RF": 1.0, "OTHER": pytest.approx(0.457476, abs=1e-6)}


def test_sample_plan_missing_manifest(capsys, tmp_path):
    assert run(capsys, "sample-plan", "--manifest", tmp_path / "none.jsonl")[0] == 3


def test_preprocess(capsys, tmp_path):
    img = np.zeros((20, 30, 3))
    img[4:16, 5:25] = 0.6
    write_image(tmp_path / "in.ppm", img)
    code, doc, _ = run(capsys, "preprocess", "--in", tmp_path / "in.ppm", "--out", tmp_path / "o.ppm",
                       "--size", "8,6")
    assert code == 0 and doc["crop"] == [5, 4, 20, 12]
    assert read_image(tmp_path / "o.ppm").shape == (6, 8, 3)


def test_split_is_deterministic(data_dir, capsys, tmp_path):
    m = data_dir / "data" / "manifest.jsonl"
    a = run(capsys, "split", "--manifest", m, "--ratios", "0.5,0.25,0.25", "--seed", 3, "--out", tmp_path / "a")
    b = run(capsys, "split", "--manifest", m, "--ratios", "0.5,0.25,0.25", "--seed", 3, "--out", tmp_path / "b")
    assert a[0] == b[0] == 0
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()
    assert sum(v["videos"] for k, v in a[1]["splits"].items() if k != "SNAPSHOT") == 12
    assert run(capsys, "split", "--manifest", m, "--ratios", "0.5,x")[0] == 2


class TestTrain:
    def test_zero_epochs_is_init(self, data_dir, capsys, tmp_path):
        code, doc, _ = run(capsys, "train", "--manifest", data_dir / "data" / "manifest.jsonl",
                           "--config", data_dir / "run.json", "--out", tmp_path / "m.ckpt", "--epochs", 0)
        assert code == 0 and doc["epochs"] == 0 and doc["best_checkpoint"] is None
        ckpt = load_checkpoint(tmp_path / "m.ckpt")
        init = init_model(ckpt.vit_config, 1)
        assert all(ckpt.params[k].tobytes() == t.data.tobytes() for k, t in init.params.items())

    def test_double_run_and_outputs(self, data_dir, capsys, tmp_path):
        args = ["train", "--manifest", data_dir / "data" / "manifest.jsonl", "--config", data_dir / "run.json",
                "--epochs", 2]
        code, doc, _ = run(capsys, *args, "--out", tmp_path / "a.ckpt")
        assert code == 0 and len(doc["history"]) == 2
        assert (tmp_path / "a.best.ckpt").exists()
        lines = (tmp_path / "a.log.jsonl").read_text().splitlines()
        assert [json.loads(x)["epoch"] for x in lines] == [1, 2]
        assert run(capsys, *args, "--out", tmp_path / "b.ckpt")[0] == 0
        assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
        assert load_checkpoint(tmp_path / "a.ckpt").train_config["seed"] == 1

    def test_flag_overrides_file(self, data_dir, capsys, tmp_path):
        code, _, _ = run(capsys, "train", "--manifest", data_dir / "data" / "manifest.jsonl",
                         "--config", data_dir / "run.json", "--out", tmp_path / "m.ckpt",
                         "--epochs", 0, "--seed", 9, "--lr", 0.2)
        cfg = load_checkpoint(tmp_path / "m.ckpt").train_config
        assert code == 0 and cfg["seed"] == 9 and cfg["learning_rate"] == 0.2 and cfg["batch_size"] == 8

    def test_bad_config(self, data_dir, capsys, tmp_path):
        bad = dict(TINY_RUN, extra=1)
        (tmp_path / "bad.json").write_text(json.dumps(bad))
        assert run(capsys, "train", "--manifest", data_dir / "data" / "manifest.jsonl",
                   "--config", tmp_path / "bad.json", "--out", tmp_path / "m.ckpt")[0] == 2

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_non_finite_exit_code(self, data_dir, capsys, tmp_path):
        code, _, err = run(capsys, "train", "--manifest", data_dir / "data" / "manifest.jsonl",
                           "--config", data_dir / "run.json", "--out", tmp_path / "m.ckpt", "--lr", 1e30)
        assert code == 4 and "numerical" in err


@pytest.fixture(scope="module")
def oracle_fixture(tmp_path_factory):
    """A tiny model fitted until it classifies its channel-coded frames perfectly."""
    root = tmp_path_factory.mktemp("oracle")
    vit = ViTConfig(image_size=16, patch_size=8, dim=16, depth=1, heads=2, mlp_dim=32,
                    head_hidden=(), dropout=0.0)
    rng = np.random.default_rng(4)
    recs, imgs = [], []
    for i in range(8):
        x = 0.2 * rng.uniform(size=(16, 16, 3)) + 0.05
        if i % 4 < 3:
            x[..., i % 4] += 0.7
        else:
            x[:8] += 0.7
        write_image(root / f"{i}.ppm", x)
        imgs.append(read_image(root / f"{i}.ppm"))
        recs.append(FrameRecord(f"v{i}", 0, f"{i}.ppm", LABELS[i % 4], LABELS[i % 4], Split.TEST))
    save_manifest(Manifest(recs), root / "m.jsonl")
    x = np.stack(imgs).astype(np.float32)
    t = target_matrix([r.label for r in recs])
    model, buf = init_model(vit, 0), {}
    for _ in range(200):
        _, buf = sam_step(lambda: kl_loss(forward(model, x), t), model.params, buf, lr=0.05, rho=0.05)
    assert predict(model, x)[0] == [r.label for r in recs]
    pre = PreprocessConfig(target_size=(16, 16), gamma=False)
    tc = TrainConfig(preprocess=pre)
    save_checkpoint(Checkpoint(vit, model.state(), train_config=tc.to_dict()), root / "oracle.ckpt")
    return root


def test_eval_perfect_oracle(oracle_fixture, capsys):
    r = oracle_fixture
    code, doc, err = run(capsys, "eval", "--checkpoint", r / "oracle.ckpt", "--manifest", r / "m.jsonl",
                         "--split", "test")
    assert code == 0 and doc["accuracy"] == 1.0 and doc["total_frames"] == 8
    assert "100.00%" in err


def test_embed_double_run(oracle_fixture, capsys, tmp_path):
    r = oracle_fixture
    outs = []
    for name in ("a.csv", "b.csv"):
        code, doc, _ = run(capsys, "embed", "--checkpoint", r / "oracle.ckpt", "--manifest", r / "m.jsonl",
                           "--split", "TEST", "--out", tmp_path / name)
        assert code == 0 and doc["rows"] == 8
        outs.append((tmp_path / name).read_bytes())
    assert outs[0] == outs[1]


def test_eval_bad_checkpoint(oracle_fixture, capsys, tmp_path):
    (tmp_path / "junk.ckpt").write_bytes(b"nothing here")
    code, _, _ = run(capsys, "eval", "--checkpoint", tmp_path / "junk.ckpt", "--manifest",
                     oracle_fixture / "m.jsonl")
    assert code == 3


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "colonmark", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    for sub in ("gen-data", "sample-plan", "preprocess", "split", "train", "eval", "embed"):
        assert sub in out.stdout
