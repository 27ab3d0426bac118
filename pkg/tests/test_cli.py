"""End-to-end command-line tests on a tiny synthetic workspace."""

import numpy as np
import pytest

from vishud import cli, datasets, network, raster
from vishud.errors import BadConfigError
from vishud.gridcodec import BBox

SYNTH_CFG = """\
# tiny dataset
image_size = 64
count = 12
humans_min = 1
humans_max = 2
clutter_density = 0.4
occlusion_prob = 0.25
seed = 7
train_frac = 0.7
val_frac = 0.1
test_frac = 0.2
"""

TRAIN_CFG = """\
epochs = 2
iterations = 2
batch_size = 2
base_lr = 1e-3
decay_start = 2
blocks = 4,8
stride = 4
dropout = 0.5
seed = 42
"""


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Synth dataset plus a briefly trained checkpoint."""
    root = tmp_path_factory.mktemp("ws")
    (root / "synth.cfg").write_text(SYNTH_CFG)
    assert cli.main(["synth", "--config", str(root / "synth.cfg"),
                     "--out", str(root / "data")]) == 0
    (root / "train.cfg").write_text(TRAIN_CFG)
    assert cli.main(["train", "--manifest", str(root / "data" / "manifest.tsv"),
                     "--config", str(root / "train.cfg"),
                     "--out", str(root / "model.ckpt")]) == 0
    return root


class TestConfigParsing:
    def test_defaults_and_overrides(self):
        cfg = cli.parse_config_text("epochs = 5\n# comment\n\n", cli.DESK_DEFAULTS)
        assert cfg["epochs"] == "5"
        assert cfg["base_lr"] == cli.DESK_DEFAULTS["base_lr"]

    def test_unknown_key(self):
        with pytest.raises(BadConfigError):
            cli.parse_config_text("momentum = 0.9\n", cli.DESK_DEFAULTS)

    def test_repeated_key(self):
        with pytest.raises(BadConfigError):
            cli.parse_config_text("epochs = 5\nepochs = 6\n", cli.DESK_DEFAULTS)

    def test_missing_equals(self):
        with pytest.raises(BadConfigError):
            cli.parse_config_text("epochs 5\n", cli.DESK_DEFAULTS)

    def test_empty_value(self):
        with pytest.raises(BadConfigError):
            cli.parse_config_text("epochs =\n", cli.DESK_DEFAULTS)


class TestWorkerCount:
    def test_explicit(self, monkeypatch):
        monkeypatch.setenv("VSHD_THREADS", "3")
        assert cli.worker_count() == 3

    def test_auto(self, monkeypatch):
        monkeypatch.setenv("VSHD_THREADS", "0")
        assert 1 <= cli.worker_count() <= 4

    def test_invalid(self, monkeypatch):
        monkeypatch.setenv("VSHD_THREADS", "many")
        with pytest.raises(BadConfigError):
            cli.worker_count()
        monkeypatch.setenv("VSHD_THREADS", "-1")
        with pytest.raises(BadConfigError):
            cli.worker_count()


class TestUsageErrors:
    def test_no_command(self):
        assert cli.main([]) == 2

    def test_unknown_command(self):
        assert cli.main(["transmogrify"]) == 2

    def test_missing_required_flag(self):
        assert cli.main(["saliency", "--out", "x.pgm"]) == 2

    def test_bad_size_literal(self):
        assert cli.main(["encode", "--ann", "a.idl", "--size", "64"]) == 2

    def test_bad_saliency_mode(self, workspace):
        assert cli.main(["train", "--manifest", "m", "--out", "c",
                         "--saliency", "sometimes"]) == 2


class TestProcessingErrors:
    def test_missing_input_file(self, tmp_path, capsys):
        rc = cli.main(["saliency", "--in", str(tmp_path / "nope.ppm"),
                       "--out", str(tmp_path / "map.pgm")])
        assert rc == 1
        assert "error: saliency:" in capsys.readouterr().err

    def test_bad_config_key(self, workspace, tmp_path, capsys):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("momentum = 0.9\n")
        rc = cli.main(["train", "--manifest", str(workspace / "data" / "manifest.tsv"),
                       "--config", str(cfg), "--out", str(tmp_path / "c.ckpt")])
        assert rc == 1
        assert "error: train:" in capsys.readouterr().err

    def test_stride_blocks_mismatch(self, workspace, tmp_path, capsys):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("blocks = 4,8\nstride = 16\n")
        rc = cli.main(["train", "--manifest", str(workspace / "data" / "manifest.tsv"),
                       "--config", str(cfg), "--out", str(tmp_path / "c.ckpt")])
        assert rc == 1
        assert "stride" in capsys.readouterr().err


class TestSynth:
    def test_outputs(self, workspace):
        data = workspace / "data"
        images = sorted(data.glob("*.ppm"))
        anns = sorted(data.glob("*.idl"))
        assert len(images) == 12 and len(anns) == 12
        entries = datasets.parse_manifest((data / "manifest.tsv").read_text())
        assert len(entries) == 12
        counts = {s: sum(e.split == s for e in entries) for s in datasets.SPLITS}
        assert counts == {"train": 8, "val": 1, "test": 3}

    def test_reproducible(self, workspace, tmp_path):
        assert cli.main(["synth", "--config", str(workspace / "synth.cfg"),
                         "--out", str(tmp_path / "again")]) == 0
        for name in ("synth_00000.ppm", "synth_00005.idl", "manifest.tsv"):
            assert (tmp_path / "again" / name).read_bytes() == \
                (workspace / "data" / name).read_bytes()


class TestSaliencyCommand:
    def test_writes_map_and_mvsi(self, tmp_path):
        rng = np.random.default_rng(3)
        img = rng.random((32, 32, 3)) * 0.2
        img[10:20, 12:22] = [0.9, 0.7, 0.3]
        (tmp_path / "in.ppm").write_bytes(raster.save_pnm(img))
        rc = cli.main(["saliency", "--in", str(tmp_path / "in.ppm"),
                       "--out", str(tmp_path / "map.pgm"),
                       "--mvsi", str(tmp_path / "mvsi.ppm")])
        assert rc == 0
        smap = raster.load_pnm((tmp_path / "map.pgm").read_bytes())
        assert smap.shape == (32, 32, 1)
        # the bright patch is the salient region
        assert smap[14, 16, 0] > smap[2, 2, 0]
        mvsi = raster.load_pnm((tmp_path / "mvsi.ppm").read_bytes())
        assert mvsi.shape == (32, 32, 3)
        assert mvsi.mean() < img.mean()  # modulation darkens


class TestEncodeCommand:
    def test_prints_label_grid(self, tmp_path, capsys):
        (tmp_path / "a.idl").write_text('"img.ppm": (10, 10, 40, 60);\n')
        rc = cli.main(["encode", "--ann", str(tmp_path / "a.idl"),
                       "--size", "64x64", "--stride", "16"])
        assert rc == 0
        lines = capsys.readouterr().out.strip().split("\n")
        assert len(lines) == 16
        assert "1 1 1 0 -14 -14 16 36" in lines

    def test_multi_record_headers(self, tmp_path, capsys):
        (tmp_path / "a.idl").write_text('"a.ppm": (10, 10, 40, 60);\n"b.ppm";\n')
        assert cli.main(["encode", "--ann", str(tmp_path / "a.idl")]) == 0
        out = capsys.readouterr().out
        assert "# a.ppm" in out and "# b.ppm" in out


class TestTrainCommand:
    def test_checkpoint_and_trace(self, workspace):
        ckpt = (workspace / "model.ckpt").read_bytes()
        assert ckpt[:4] == b"VSHD"
        trace = (workspace / "model.ckpt.trace").read_text().strip().split("\n")
        assert len(trace) == 4  # 2 epochs x 2 iterations
        first = trace[0].split()
        assert len(first) == 6
        assert first[0] == "1" and first[1] == "0"

    def test_zero_iterations_equals_init(self, workspace, tmp_path):
        cfg = tmp_path / "zero.cfg"
        cfg.write_text(TRAIN_CFG.replace("iterations = 2", "iterations = 0")
                       .replace("decay_start = 2", "decay_start = 1")
                       .replace("epochs = 2", "epochs = 1"))
        out = tmp_path / "zero.ckpt"
        rc = cli.main(["train", "--manifest", str(workspace / "data" / "manifest.tsv"),
                       "--config", str(cfg), "--out", str(out)])
        assert rc == 0
        net_cfg = network.NetConfig.default(64, 64, 3, channels=(4, 8))
        params = network.load_checkpoint(out.read_bytes(), net_cfg)
        fresh = network.init(net_cfg, seed=42)
        for k in fresh:
            np.testing.assert_array_equal(params[k], fresh[k])

    def test_saliency_off_changes_checkpoint(self, workspace, tmp_path):
        out = tmp_path / "off.ckpt"
        rc = cli.main(["train", "--manifest", str(workspace / "data" / "manifest.tsv"),
                       "--config", str(workspace / "train.cfg"),
                       "--saliency", "off", "--out", str(out)])
        assert rc == 0
        assert out.read_bytes() != (workspace / "model.ckpt").read_bytes()


class TestDetectAndEval:
    def test_detect_writes_detections(self, workspace, tmp_path):
        out = tmp_path / "dets.txt"
        rc = cli.main(["detect", "--ckpt", str(workspace / "model.ckpt"),
                       "--manifest", str(workspace / "data" / "manifest.tsv"),
                       "--config", str(workspace / "train.cfg"),
                       "--split", "test", "--out", str(out)])
        assert rc == 0
        for line in out.read_text().splitlines():
            parts = line.split()
            assert len(parts) == 6
            float(parts[5])

    def test_detect_thread_count_does_not_change_output(self, workspace, tmp_path,
                                                        monkeypatch):
        outs = []
        for threads, name in (("1", "a.txt"), ("4", "b.txt")):
            monkeypatch.setenv("VSHD_THREADS", threads)
            out = tmp_path / name
            rc = cli.main(["detect", "--ckpt", str(workspace / "model.ckpt"),
                           "--manifest", str(workspace / "data" / "manifest.tsv"),
                           "--config", str(workspace / "train.cfg"),
                           "--split", "train", "--out", str(out)])
            assert rc == 0
            outs.append(out.read_bytes())
        assert outs[0] == outs[1]

    def test_eval_on_ground_truth_is_perfect(self, workspace, tmp_path):
        data = workspace / "data"
        entries = [e for e in datasets.parse_manifest((data / "manifest.tsv").read_text())
                   if e.split == "test"]
        lines = []
        for e in entries:
            ann = datasets.parse_idl((data / e.annotation_path).read_text())[0]
            for b in ann.boxes:
                lines.append(f"{e.image_path} {b.x1:.2f} {b.y1:.2f} "
                             f"{b.x2:.2f} {b.y2:.2f} 1.000000")
        dets = tmp_path / "gt_dets.txt"
        dets.write_text("\n".join(lines) + "\n")
        report = tmp_path / "report.txt"
        rc = cli.main(["eval", "--dets", str(dets),
                       "--manifest", str(data / "manifest.tsv"),
                       "--split", "test", "--out", str(report)])
        assert rc == 0
        text = report.read_text()
        assert "accuracy = 1.000000" in text
        assert "lamr = 0.000100" in text
        assert (tmp_path / "report.txt.curve").exists()

    def test_eval_curve_file_format(self, workspace, tmp_path):
        self.test_eval_on_ground_truth_is_perfect(workspace, tmp_path)
        curve = (tmp_path / "report.txt.curve").read_text().strip().split("\n")
        assert all(len(line.split(",")) == 3 for line in curve)


class TestAugmentCommand:
    def test_writes_fourteen_variants(self, workspace, tmp_path):
        data = workspace / "data"
        entry = datasets.parse_manifest((data / "manifest.tsv").read_text())[0]
        out = tmp_path / "aug"
        rc = cli.main(["augment", "--in", str(data / entry.image_path),
                       "--ann", str(data / entry.annotation_path),
                       "--out", str(out)])
        assert rc == 0
        assert len(list(out.glob("variant_*.ppm"))) == 14
        assert len(list(out.glob("variant_*.idl"))) == 14
        first = datasets.parse_idl((out / "variant_00.idl").read_text())[0]
        orig = datasets.parse_idl((data / entry.annotation_path).read_text())[0]
        assert [b.as_tuple() for b in first.boxes] == [b.as_tuple() for b in orig.boxes]

    def test_variant_zero_image_identical(self, workspace, tmp_path):
        data = workspace / "data"
        entry = datasets.parse_manifest((data / "manifest.tsv").read_text())[0]
        out = tmp_path / "aug"
        cli.main(["augment", "--in", str(data / entry.image_path),
                  "--ann", str(data / entry.annotation_path), "--out", str(out)])
        assert (out / "variant_00.ppm").read_bytes() == \
            (data / entry.image_path).read_bytes()
