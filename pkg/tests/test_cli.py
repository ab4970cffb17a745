import json
import os

import numpy as np
import pytest

from corpus import make_corpus, write_config
from pave_forge import imageio
from pave_forge.cli import build_parser, main


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    return make_corpus(str(tmp_path_factory.mktemp("cli_corpus")))


def test_salience(capsys, corpus):
    code, out, _ = run(capsys, "salience", "--in", corpus[0])
    assert code == 0
    lines = out.strip().splitlines()
    assert len(lines) == 5 and all(l.endswith("\tpass") for l in lines)
    code, out, _ = run(capsys, "salience", "--in", corpus[0], "--threshold", "0.9")
    assert all(l.endswith("\tfail") for l in out.strip().splitlines())


def test_fuse(capsys, corpus, tmp_path):
    mask = np.zeros((48, 64))
    mask[10:30, 20:40] = 1
    imageio.save_image(str(tmp_path / "m.png"), mask)
    out = tmp_path / "f.png"
    code, _, _ = run(capsys, "fuse", "--fg", os.path.join(corpus[0], "KC_001.png"),
                     "--bg", os.path.join(corpus[1], "bg_3.png"), "--mask", str(tmp_path / "m.png"),
                     "--levels", "3", "--sigma", "1.5", "--out", str(out))
    assert code == 0 and imageio.load_image(str(out)).shape == (48, 64, 3)
    imageio.save_image(str(tmp_path / "small.png"), np.ones((5, 5)))
    code, _, err = run(capsys, "fuse", "--fg", os.path.join(corpus[0], "KC_001.png"),
                       "--bg", os.path.join(corpus[1], "bg_3.png"),
                       "--mask", str(tmp_path / "small.png"), "--out", str(out))
    assert code == 2 and "small.png" in err


def test_gan_loss(capsys, tmp_path):
    p = tmp_path / "s.txt"
    p.write_text("[real]\n0.5\n[fake]\n0.5\n")
    code, out, _ = run(capsys, "gan-loss", "--scores", str(p))
    assert code == 0 and out.strip() == "-1.386294"
    p.write_text("0.5\n")
    assert run(capsys, "gan-loss", "--scores", str(p))[0] == 2


@pytest.mark.parametrize("kind,channels", [("cbam", "4"), ("se", "4"), ("aspp", "3"), ("asse", "4")])
def test_block(capsys, kind, channels):
    code, out, _ = run(capsys, "block", "--kind", kind, "--shape", f"1,{channels},9,7", "--seed", "3")
    assert code == 0
    fields = dict(l.split(": ", 1) for l in out.strip().splitlines())
    assert fields["output shape"] == f"1,{channels},9,7"
    assert int(fields["params"]) > 0
    again = run(capsys, "block", "--kind", kind, "--shape", f"1,{channels},9,7", "--seed", "3")[1]
    assert again == out


def test_bench(capsys):
    code, out, _ = run(capsys, "bench", "--kind", "se", "--shape", "1,4,8,8", "--repeats", "2",
                       "--cores", "4", "--clock-ghz", "3", "--ops-per-cycle", "16")
    assert code == 0
    assert "FLOPS = Cores x Clock Speed x Operations Per Cycle = 4 x 3 GHz x 16 = 1.9200e+11" in out


def test_boxloss(capsys):
    code, out, _ = run(capsys, "boxloss", "--pred", "0,0,2,2", "--gt", "0,0,4,2")
    assert code == 0 and out.splitlines()[0] == "value: 0.800000000"
    code, out, _ = run(capsys, "boxloss", "--pred", "0,0,2,2", "--gt", "2,2,4,4", "--kind", "ciou")
    assert out.splitlines()[0] == "value: 1.250000000"
    code, _, err = run(capsys, "boxloss", "--pred", "2,0,0,2", "--gt", "0,0,1,1")
    assert code == 1 and "--pred" in err


def test_eval(capsys, tmp_path):
    d, g = tmp_path / "d.txt", tmp_path / "g.txt"
    d.write_text("a 0 0.9 0 0 2 2\na 0 0.8 5 5 6 6\n")
    g.write_text("a 0 0 0 2 2\nb 0 0 0 2 2\n")
    code, out, _ = run(capsys, "eval", "--dets", str(d), "--gts", str(g))
    assert code == 0 and "mAP@0.5 (all): 0.500000" in out
    report = json.loads((tmp_path / "d.report.json").read_text())
    assert report["map"] == 0.5 and "accuracy" not in report
    code, _, _ = run(capsys, "eval", "--dets", str(d), "--gts", str(g), "--tn", "3",
                     "--json", str(tmp_path / "r.json"))
    assert "accuracy" in json.loads((tmp_path / "r.json").read_text())
    d.write_text("a 0 0.9 0 0\n")
    code, _, err = run(capsys, "eval", "--dets", str(d), "--gts", str(g))
    assert code == 2 and "line 1" in err


def test_augment_and_split(capsys, corpus, tmp_path):
    cfg = write_config(str(tmp_path / "cfg.txt"), corpus[0], corpus[1], str(tmp_path / "out"))
    code, out, _ = run(capsys, "augment", "--config", cfg)
    assert code == 0 and "wrote 25 images" in out
    assert (tmp_path / "out" / "manifest.tsv").exists()
    code, out, _ = run(capsys, "split", "--dir", str(tmp_path / "out"), "--ratios", "0.6,0.2,0.2",
                       "--seed", "5")
    assert code == 0
    counts = dict(kv.split("=") for kv in out.split())
    assert sum(map(int, counts.values())) == 25
    total = sum(len(os.listdir(tmp_path / "out" / s / "images")) for s in ("train", "test", "val"))
    assert total == 25


def test_missing_flag_names_it(capsys):
    code, _, err = run(capsys, "boxloss", "--pred", "0,0,1,1")
    assert code == 1 and "--gt" in err
    code, _, err = run(capsys, "augment")
    assert code == 1 and "--config" in err


def test_unknown_subcommand(capsys):
    code, _, err = run(capsys, "train")
    assert code == 1 and "usage:" in err
    assert run(capsys)[0] == 1


def test_bad_option_values(capsys):
    assert run(capsys, "block", "--kind", "se", "--shape", "1,4,8")[0] == 1
    assert run(capsys, "block", "--kind", "se", "--shape", "1,6,8,8", "--reduction", "4")[0] == 1
    assert run(capsys, "split", "--dir", ".", "--ratios", "0.5,0.5,0.5")[0] == 1
    assert run(capsys, "eval", "--dets", "x", "--gts", "y", "--iou", "1.5")[0] == 1


def test_corrupt_image_names_file(capsys, tmp_path):
    (tmp_path / "KC_bad.png").write_bytes(b"not a png at all")
    code, _, err = run(capsys, "salience", "--in", str(tmp_path))
    assert code == 2 and "KC_bad.png" in err


def test_missing_config_is_data_error(capsys, tmp_path):
    code, _, err = run(capsys, "augment", "--config", str(tmp_path / "none.cfg"))
    assert code == 2 and "none.cfg" in err


def test_help_documents_every_flag(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--help"])
    assert exc.value.code == 0
    top = capsys.readouterr().out
    parser = build_parser()
    sub = next(a for a in parser._actions if a.dest == "command")
    assert set(sub.choices) == {"salience", "fuse", "gan-loss", "block", "boxloss", "eval",
                                "augment", "split", "bench"}
    for name, sp in sub.choices.items():
        assert name in top
        text = sp.format_help()
        for action in sp._actions:
            for opt in action.option_strings:
                assert opt in text
            assert action.help
