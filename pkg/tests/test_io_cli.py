import json
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from fdd.cli import main
from fdd.dae import load_checkpoint, save_checkpoint
from fdd.errors import ConfigError, InputError
from fdd.io import content_hash, load_images, load_json_config, parse_options, write_png

FIXTURE = Path(__file__).parent / "fixtures" / "diffusion_ranking.csv"
TINY = {"input_shape": [16, 16, 1], "encoder_channels": [4, 8], "latent_dim": 6,
        "batch_size": 8, "max_epochs": 2}


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


# -- image loading -----------------------------------------------------------


def test_empty_directory_rejected(tmp_path):
    with pytest.raises(InputError):
        load_images(tmp_path)


def test_images_sorted_and_channels_kept(tmp_path):
    Image.fromarray(np.full((4, 5), 255, np.uint8)).save(tmp_path / "b.png")
    Image.fromarray(np.zeros((3, 3, 3), np.uint8)).save(tmp_path / "a.png")
    a, b = load_images(tmp_path)
    assert a.shape == (3, 3, 3) and np.all(a == -1.0)
    assert b.shape == (4, 5, 1) and np.all(b == 1.0)


def test_mixed_inputs_preprocessed_to_config(tmp_path, tiny_config):
    Image.fromarray(np.zeros((32, 20, 3), np.uint8)).save(tmp_path / "a.png")
    Image.fromarray(np.zeros((8, 8), np.uint8)).save(tmp_path / "b.png")
    images = load_images(tmp_path, tiny_config)
    assert all(im.shape == (16, 16, 1) for im in images)


def test_undecodable_skipped_or_fatal(tmp_path):
    Image.fromarray(np.zeros((4, 4), np.uint8)).save(tmp_path / "a.png")
    (tmp_path / "b.png").write_bytes(b"not a png")
    assert len(load_images(tmp_path)) == 1
    with pytest.raises(InputError):
        load_images(tmp_path, strict=True)


def test_png_round_trip(tmp_path, rng):
    img = rng.uniform(-1, 1, (6, 7, 1))
    write_png(img, tmp_path / "x.png")
    (back,) = load_images(tmp_path)
    np.testing.assert_allclose(back, img, atol=1 / 255 + 1e-9)


def test_content_hash_depends_on_order_and_values(rng):
    a = rng.uniform(-1, 1, (3, 4, 4, 1))
    assert content_hash(a) == content_hash(a.copy())
    assert content_hash(a) != content_hash(a[::-1])


def test_parse_options():
    assert parse_options("a=1,b=x", {"a": int, "b": str}) == {"a": 1, "b": "x"}
    with pytest.raises(ConfigError, match="zzz"):
        parse_options("zzz=1", {"a": int})


def test_json_config_names_unknown_key(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"lr": 0.1, "learning_rate": 2}))
    with pytest.raises(ConfigError, match="learning_rate"):
        load_json_config(path, {"lr"})


# -- commands ----------------------------------------------------------------


@pytest.fixture
def encoder(tmp_path, tiny_model):
    path = tmp_path / "enc.dae"
    save_checkpoint(tiny_model, path)
    return path


@pytest.fixture
def image_dir(tmp_path, capsys):
    code, _, _ = run(capsys, "make-corpus", "shapes", "--count", 12, "--size", 16,
                     "--out", tmp_path / "imgs")
    assert code == 0
    return tmp_path / "imgs"


def test_make_corpus_is_byte_reproducible(tmp_path, capsys):
    for name in ("a", "b"):
        assert run(capsys, "make-corpus", "bikes", "--count", 5, "--seed", 3,
                   "--out", tmp_path / name)[0] == 0
    files = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert len(files) == 5
    for f in files:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_make_corpus_sheet(tmp_path, capsys):
    code, _, _ = run(capsys, "make-corpus", "frames", "--count", 4, "--size", 32,
                     "--out", tmp_path / "c", "--sheet", tmp_path / "sheet.png")
    assert code == 0 and (tmp_path / "sheet.png").read_bytes()[:4] == b"\x89PNG"


def test_train_dae_and_resume(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(TINY))
    out = tmp_path / "m.dae"
    code, stdout, _ = run(capsys, "train-dae", "--corpus", "shapes:count=16,size=16",
                          "--config", cfg, "--out", out, "--plot", tmp_path / "loss.png")
    assert code == 0 and "trained 2 epochs" in stdout
    first = load_checkpoint(out)
    assert first.params.step == 4
    assert (tmp_path / "m.loss.csv").read_text().startswith("epoch,loss")
    assert (tmp_path / "loss.png").exists()
    code, _, _ = run(capsys, "train-dae", "--corpus", "shapes:count=16,size=16",
                     "--config", cfg, "--out", tmp_path / "m2.dae", "--resume", out)
    assert code == 0
    assert load_checkpoint(tmp_path / "m2.dae").params.step == 8


def test_train_dae_rejects_unknown_config_key(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({**TINY, "dropout": 0.5}))
    code, _, err = run(capsys, "train-dae", "--corpus", "shapes:count=4,size=16",
                       "--config", cfg, "--out", tmp_path / "m.dae")
    assert code == 2 and "dropout" in err


def test_train_dae_rejects_bad_corpus(tmp_path, capsys):
    code, _, err = run(capsys, "train-dae", "--corpus", "nothing-here",
                       "--out", tmp_path / "m.dae")
    assert code == 2 and "corpus spec" in err


def test_score_identical_sets(encoder, image_dir, capsys):
    code, out, _ = run(capsys, "score", "--encoder", encoder, "--real", image_dir,
                       "--gen", image_dir)
    assert code == 0 and out.strip() in ("0.000000", "-0.000000")


def test_score_json_report(encoder, image_dir, tmp_path, capsys):
    code, out, _ = run(capsys, "score", "--metric", "kdd", "--encoder", encoder,
                       "--real", image_dir, "--gen", image_dir, "--json", "--seed", 4,
                       "--report", tmp_path / "r.csv")
    doc = json.loads(out)
    assert code == 0 and doc["seed"] == 4 and len(doc["config_hash"]) == 64
    assert doc["metric"] == "kdd" and doc["n_real"] == 12
    assert (tmp_path / "r.csv").read_text().splitlines()[0].startswith("label,metric")


def test_score_missing_directory(encoder, tmp_path, capsys):
    code, _, _ = run(capsys, "score", "--encoder", encoder, "--real", tmp_path / "nope",
                     "--gen", tmp_path / "nope")
    assert code == 2


def test_disturb_command(image_dir, tmp_path, capsys):
    code, out, _ = run(capsys, "disturb", "--input", image_dir, "--out", tmp_path / "d",
                       "--kind", "patch_swap:alpha=0.25")
    assert code == 0
    assert sorted(p.name for p in (tmp_path / "d").iterdir()) == \
        sorted(p.name for p in image_dir.iterdir())


def test_rank_fixture_output(tmp_path, capsys):
    code, out, _ = run(capsys, "rank", "--scores", FIXTURE, "--out", tmp_path)
    assert code == 0
    lines = out.splitlines()
    assert "FDD order: [DDPM, DDIM, EDM]" in lines
    assert "FID order: [EDM, DDPM, DDIM]" in lines
    assert "disagreement: FDD vs FID" in lines
    assert (tmp_path / "ranking.json").exists() and (tmp_path / "ranking.png").exists()


def test_sensitivity_correlate_and_plots(encoder, tmp_path, capsys):
    code, out, _ = run(capsys, "sensitivity", "--data", "shapes:count=12,size=16",
                       "--encoder", encoder, "--groups", 3, "--k", 4, "--metrics", "fdd,kdd,tdd",
                       "--disturb", "gaussian:alpha=0.04", "--disturb", "patch_mask:alpha=0.25",
                       "--out", tmp_path / "s")
    assert code == 0 and out.splitlines()[0] == "disturbance,metric,mean,std"
    assert len(out.splitlines()) == 1 + 2 * 3
    for name in ("sensitivity.csv", "sensitivity_summary.csv", "sensitivity.png"):
        assert (tmp_path / "s" / name).exists()
    code, out, _ = run(capsys, "correlate", "--sensitivity", tmp_path / "s" / "sensitivity.csv",
                       "--out", tmp_path / "c")
    assert code == 0 and out.splitlines()[0] == "metric,fdd,kdd,tdd"
    assert (tmp_path / "c" / "correlation.png").exists()


def test_consistency_command(encoder, tmp_path, capsys):
    code, out, _ = run(capsys, "consistency", "--data", "shapes:count=6,size=16",
                       "--encoder", encoder, "--k", 6, "--ladder", "0.01,0.16",
                       "--out", tmp_path / "c", "--no-plot")
    assert code == 0
    rows = out.splitlines()
    assert rows[0] == "level,metric,score,verdict" and len(rows) == 3
    assert not (tmp_path / "c" / "consistency.png").exists()


def test_consistency_rejects_bad_ladder(encoder, tmp_path, capsys):
    code, _, err = run(capsys, "consistency", "--data", "shapes:count=6,size=16",
                       "--encoder", encoder, "--k", 6, "--ladder", "0.16,0.01",
                       "--out", tmp_path / "c")
    assert code == 2


def test_gradcam_command(encoder, image_dir, tmp_path, capsys):
    code, out, _ = run(capsys, "gradcam", "--encoder", encoder, "--images", image_dir,
                       "--limit", 3, "--out", tmp_path / "g")
    assert code == 0 and "grid 4x4" in out
    assert len(list((tmp_path / "g").glob("*_grid.csv"))) == 3
    assert len(list((tmp_path / "g").glob("*_attention.png"))) == 3
