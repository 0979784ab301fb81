import csv
import io

import numpy as np
import pytest

import oracles
from ismp.cli import main
from ismp.evaluation import write_synthetic_category
from ismp.geometry import load_cloud


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def data(tmp_path):
    write_synthetic_category(tmp_path, "cat", "sphere", "bulge", 3, n_train=2,
                             n_test_normal=2, n_test_anomalous=2, n_points=64)
    return tmp_path


class TestGen:
    def test_deterministic(self, tmp_path, capsys):
        for name in ("a", "b"):
            assert run(capsys, "gen", "--out", str(tmp_path / name), "--n-points", "64",
                       "--n-train", "1", "--n-test-normal", "1", "--n-test-anomalous", "1")[0] == 0
        files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
        assert len(files) == 5
        for f in files:
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()

    def test_unknown_anomaly_is_usage_error(self, tmp_path, capsys):
        code, _, err = run(capsys, "gen", "--out", str(tmp_path), "--anomaly", "scratch")
        assert code == 2 and "error:cli:usage:" in err


class TestEval:
    def write_scores(self, root, data):
        base = data / "cat"
        rows = [["sample_id", "object_score", "object_label", "flagged_fraction"]]
        (root / "points").mkdir(parents=True)
        for p in sorted((base / "test").iterdir()):
            sid = p.stem
            labels = np.loadtxt(base / "gt" / f"{sid}.txt", dtype=int, ndmin=1)
            anomalous = int(labels.any())
            rows.append([sid, str(0.9 if anomalous else 0.1), str(anomalous), "0"])
            (root / "points" / f"{sid}.txt").write_text(
                "".join(f"{float(l)} 0 0\n" for l in labels))
        buf = io.StringIO()
        csv.writer(buf, lineterminator="\n").writerows(rows)
        (root / "objects.csv").write_text(buf.getvalue())

    def test_perfect_separation(self, data, tmp_path, capsys):
        scores = tmp_path / "scores"
        self.write_scores(scores, data)
        code, out, _ = run(capsys, "eval", "--data", str(data), "--category", "cat",
                           "--scores", str(scores))
        assert code == 0
        assert out == "method,category,o_auroc,p_auroc\nISMP,cat,1.000000,1.000000\n"

    def test_missing_category_is_domain_error(self, data, capsys):
        code, _, err = run(capsys, "eval", "--data", str(data), "--category", "nope",
                           "--scores", "x")
        assert code == 1 and err.splitlines()[-1].startswith("error:")


class TestFilterSweep:
    def test_two_rows(self, capsys):
        code, out, err = run(capsys, "filter-sweep", "--alphas", "0,0.2", "--rows", "8", "--dims", "3")
        assert code == 0 and "config_digest=" in err
        rows = list(csv.reader(io.StringIO(out)))
        assert rows[0] == ["alpha", "beta", "gamma", "mean_delta", "var_delta"]
        assert len(rows) == 3
        assert float(rows[1][3]) == 0.0 and float(rows[1][4]) == 0.0

    def test_bad_number_list(self, capsys):
        assert run(capsys, "filter-sweep", "--alphas", "x")[0] == 2

    def test_config_file_and_flag_precedence(self, tmp_path, capsys):
        conf = tmp_path / "c.conf"
        conf.write_text("# sweep\nrows = 6\nalphas = 0,0.1,0.2\n")
        _, out, _ = run(capsys, "filter-sweep", "--config", str(conf))
        assert len(out.splitlines()) == 4
        _, out, _ = run(capsys, "filter-sweep", "--config", str(conf), "--alphas", "0.3")
        assert len(out.splitlines()) == 2 and out.splitlines()[1].startswith("0.3,")

    def test_unknown_config_key(self, tmp_path, capsys):
        conf = tmp_path / "c.conf"
        conf.write_text("colour = red\n")
        code, _, err = run(capsys, "filter-sweep", "--config", str(conf))
        assert code == 2 and "unknown option" in err


def test_project_writes_pgm(data, tmp_path, capsys):
    src = data / "cat" / "test" / "good_000.xyz"
    out = tmp_path / "slices"
    assert run(capsys, "project", "--input", str(src), "--out", str(out), "--resolution", "16")[0] == 0
    for sid in ("P1", "P2", "P3", "P4"):
        raw = (out / f"good_000_{sid}.pgm").read_bytes()
        header = b"P5\n16 16\n255\n"
        assert raw.startswith(header) and len(raw) == len(header) + 16 * 16
        assert (out / f"good_000_{sid}.txt").exists()


def test_project_missing_file_exit_1(tmp_path, capsys):
    code, _, err = run(capsys, "project", "--input", str(tmp_path / "none.xyz"), "--out", str(tmp_path))
    assert code == 1 and "error:" in err


def test_register_prints_twelve_numbers(data, tmp_path, capsys):
    tpl = data / "cat" / "train" / "train_000.xyz"
    pts = load_cloud(tpl).points
    R = oracles.rotation([0, 0, 1], 20)
    src = tmp_path / "moved.xyz"
    np.savetxt(src, pts @ R.T + [0.05, 0, 0], fmt="%.17g")
    code, out, err = run(capsys, "register", "--source", str(src), "--template", str(tpl),
                         "--keypoints", "64", "--fallback")
    assert code == 0 and "inlier_fraction=" in err
    assert len(out.split()) == 12
    assert all(np.isfinite(float(v)) for v in out.split())


def test_missing_subcommand_is_usage(capsys):
    assert run(capsys)[0] == 2
