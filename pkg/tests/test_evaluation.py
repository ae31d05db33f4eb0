import csv

import numpy as np
import pytest

from colonmark.dataset import LABELS, FrameRecord, Label, Manifest, Split
from colonmark.errors import DegenerateData, EmptyMatrix, EmptySplit
from colonmark.evaluation import (ConfusionMatrix, confusion, export_embeddings, metrics,
                                  project_embeddings_2d)
from colonmark.imaging import FrameLoader, PreprocessConfig, write_image
from colonmark.model import ViTConfig, features, init_model

CFG = PreprocessConfig(target_size=(8, 8), gamma=False)


def write_split(root, labels, split=Split.TEST, video="v"):
    """Flat-colour frames whose red level encodes the label index."""
    recs = []
    for i, lab in enumerate(labels):
        path = f"{video}_{i}.ppm"
        write_image(root / path, np.full((12, 12, 3), (Label(lab).index + 1) / 5))
        recs.append(FrameRecord(video, i, path, Label(lab), Label(lab), split))
    return recs


class AlwaysOther:
    def predict(self, batch):
        return [Label.OTHER] * len(batch), None


class Oracle:
    def predict(self, batch):
        idx = np.rint(batch[:, 0, 0, 0] * 5 - 1).astype(int)
        return [LABELS[i] for i in idx], None


class RandomStub:
    def __init__(self, seed):
        self.rng = np.random.default_rng(seed)
        self.calls = []

    def predict(self, batch):
        preds = [LABELS[i] for i in self.rng.integers(4, size=len(batch))]
        self.calls.extend(preds)
        return preds, None


class TestConfusion:
    def test_always_other(self, tmp_path):
        m = Manifest(write_split(tmp_path, ["AO"] * 10))
        cm = confusion(AlwaysOther(), m, Split.TEST, CFG, tmp_path)
        assert cm.counts[0].tolist() == [0, 0, 0, 10] and cm.total == 10

    def test_oracle_is_diagonal(self, tmp_path):
        labels = ["AO"] * 3 + ["ICV_CEC"] * 5 + ["OTHER"] * 7
        m = Manifest(write_split(tmp_path, labels))
        cm = confusion(Oracle(), m, "TEST", CFG, tmp_path)
        np.testing.assert_array_equal(cm.counts, np.diag([3, 5, 0, 7]))

    def test_random_matches_tally(self, tmp_path):
        rng = np.random.default_rng(9)
        labels = [LABELS[i] for i in rng.integers(4, size=200)]
        m = Manifest(write_split(tmp_path, labels))
        stub = RandomStub(1)
        cm = confusion(stub, m, "TEST", CFG, tmp_path)
        tally = [[0] * 4 for _ in range(4)]
        for t, p in zip(labels, stub.calls):
            tally[LABELS.index(t)][LABELS.index(p)] += 1
        assert cm.counts.tolist() == tally

    def test_skips_disagreement(self, tmp_path):
        recs = write_split(tmp_path, ["AO", "REC_RF"])
        recs[1] = FrameRecord("v", 1, recs[1].image_path, Label.REC_RF, Label.AO, Split.TEST)
        assert confusion(Oracle(), Manifest(recs), "TEST", CFG, tmp_path).total == 1

    def test_empty_split(self, tmp_path):
        m = Manifest(write_split(tmp_path, ["AO"], split=Split.TRAIN))
        with pytest.raises(EmptySplit):
            confusion(Oracle(), m, "TEST", CFG, tmp_path)

    def test_missing_file_names_path(self, tmp_path):
        m = Manifest([FrameRecord("v", 0, "nope.ppm", Label.AO, Label.AO, Split.TEST)])
        with pytest.raises(OSError, match="nope.ppm"):
            confusion(Oracle(), m, "TEST", CFG, tmp_path)


WORKED = ConfusionMatrix(np.array([[8, 2, 0, 0], [1, 9, 0, 0], [0, 0, 10, 0], [1, 1, 0, 8]]))


class TestMetrics:
    def test_diagonal(self):
        r = metrics(ConfusionMatrix(np.diag([5, 5, 5, 5])))
        assert r.accuracy == 1.0
        assert all(m.precision == 1.0 and m.recall == 1.0 for m in r.per_class.values())

    def test_worked_example(self):
        r = metrics(WORKED)
        assert r.accuracy == 0.875
        assert r.per_class[Label.AO].precision == 0.8 and r.per_class[Label.AO].recall == 0.8
        assert r.per_class[Label.ICV_CEC].precision == 0.75

    def test_empty_row(self):
        c = np.diag([3, 0, 2, 1])
        r = metrics(ConfusionMatrix(c))
        icv = r.per_class[Label.ICV_CEC]
        assert icv.recall == 0.0 and not icv.recall_defined and not icv.precision_defined
        assert r.per_class[Label.AO].recall_defined

    def test_empty_matrix(self):
        with pytest.raises(EmptyMatrix):
            metrics(ConfusionMatrix(np.zeros((4, 4), dtype=int)))

    def test_random_pairs_vs_brute_force(self):
        rng = np.random.default_rng(0)
        true = [LABELS[i] for i in rng.integers(4, size=1000)]
        pred = [LABELS[i] for i in rng.integers(4, size=1000)]
        r = metrics(ConfusionMatrix.from_pairs(true, pred))
        assert abs(r.accuracy - np.mean([t == p for t, p in zip(true, pred)])) <= 1e-12
        for lab in LABELS:
            hit = sum(t == lab and p == lab for t, p in zip(true, pred))
            assert abs(r.per_class[lab].recall - hit / sum(t == lab for t in true)) <= 1e-12
            assert abs(r.per_class[lab].precision - hit / sum(p == lab for p in pred)) <= 1e-12
            assert 0 <= r.per_class[lab].precision <= 1

    def test_json_and_table(self):
        r = metrics(WORKED)
        d = r.to_dict()
        assert d["total_frames"] == 40 and d["per_class"]["AO"]["precision"] == 0.8
        table = r.format_table()
        assert "87.50%" in table and "75.00%" in table

    def test_table_marks_undefined(self):
        assert "n/a" in metrics(ConfusionMatrix(np.diag([3, 0, 2, 1]))).format_table()


class TestProjection:
    def test_rank_one(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(30, 1)) * rng.normal(size=(1, 8)) + rng.normal(size=8)
        p = project_embeddings_2d(x)
        assert p.explained_ratio[0] >= 1 - 1e-6
        assert np.abs(p.coords[:, 1]).max() < 1e-6

    def test_two_d_is_rigid(self):
        x = np.random.default_rng(1).normal(size=(20, 2)) * [3.0, 1.0]
        p = project_embeddings_2d(x)
        d_in = np.linalg.norm(x[:, None] - x[None], axis=-1)
        d_out = np.linalg.norm(p.coords[:, None] - p.coords[None], axis=-1)
        np.testing.assert_allclose(d_out, d_in, atol=1e-6)

    def test_matches_dense_eigensolver(self):
        x = np.random.default_rng(2).normal(size=(50, 16))
        p = project_embeddings_2d(x)
        xc = x - x.mean(0)
        evals = np.linalg.eigh(xc.T @ xc / 50)[0][::-1]
        np.testing.assert_allclose(p.explained_variance, evals[:2], atol=1e-6)
        np.testing.assert_allclose(p.components @ p.components.T, np.eye(2), atol=1e-6)

    def test_rank_two_reconstruction(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(40, 2)) @ rng.normal(size=(2, 10)) + rng.normal(size=10)
        p = project_embeddings_2d(x)
        np.testing.assert_allclose(p.coords @ p.components + p.mean, x, atol=1e-6)

    def test_sign_convention(self):
        p = project_embeddings_2d(np.random.default_rng(4).normal(size=(25, 6)))
        for v in p.components:
            assert v[np.argmax(np.abs(v))] > 0

    def test_degenerate(self):
        with pytest.raises(DegenerateData):
            project_embeddings_2d(np.ones((5, 4)))

    def test_too_few_rows(self):
        with pytest.raises(ValueError):
            project_embeddings_2d(np.ones((1, 4)))


class TestExport:
    @pytest.fixture
    def setup(self, tmp_path):
        rng = np.random.default_rng(0)
        recs = []
        for i in range(3):
            write_image(tmp_path / f"f{i}.ppm", rng.uniform(0.2, 1.0, size=(20, 20, 3)))
            recs.append(FrameRecord("vid", i, f"f{i}.ppm", LABELS[i], LABELS[i], Split.TEST))
        recs.append(FrameRecord("vid", 9, "f0.ppm", Label.AO, Label.AO, Split.TRAIN))
        model = init_model(ViTConfig(image_size=16, patch_size=8, dim=16, depth=1, heads=2,
                                     mlp_dim=16, head_hidden=()), 0)
        return tmp_path, Manifest(recs), model, PreprocessConfig(target_size=(16, 16))

    def test_rows_and_determinism(self, setup):
        root, m, model, cfg = setup
        export_embeddings(model, m, "TEST", root / "a.csv", cfg, root)
        export_embeddings(model, m, "TEST", root / "b.csv", cfg, root)
        a = (root / "a.csv").read_bytes()
        assert a == (root / "b.csv").read_bytes()
        rows = list(csv.reader(a.decode().splitlines()))
        assert rows[0] == ["video_id", "frame_idx", "true_label", "predicted_label", "x", "y"]
        assert len(rows) == 4 and [r[1] for r in rows[1:]] == ["0", "1", "2"]

    def test_coordinates_match_composition(self, setup):
        root, m, model, cfg = setup
        export_embeddings(model, m, "TEST", root / "e.csv", cfg, root)
        rows = list(csv.DictReader((root / "e.csv").read_text().splitlines()))
        loader = FrameLoader(root, cfg)
        feats = features(model, loader.batch([f"f{i}.ppm" for i in range(3)]))
        coords = project_embeddings_2d(feats).coords
        got = np.array([[float(r["x"]), float(r["y"])] for r in rows])
        np.testing.assert_allclose(got, coords, atol=5e-7)
