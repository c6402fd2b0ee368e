import os
import subprocess
import sys

import numpy as np
import pytest

from agfilter.attention import default_weights, load_weights, save_weights
from agfilter.cli import evaluate, main
from agfilter.imageio import read_any, read_tensor, write_image, write_tensor
from agfilter.metrics import auc, confusion, overlap_error
from agfilter.synthetic import texture
from agfilter.tensor import Tensor


def _fields(out: str) -> dict[str, str]:
    line = [l for l in out.strip().splitlines() if l][-1]
    return dict(kv.split("=", 1) for kv in line.split())


def _run(capsys, *argv):
    code = main([str(a) for a in argv])
    return code, _fields(capsys.readouterr().out) if code == 0 else {}


# -- filter -----------------------------------------------------------------------


def test_filter_self_guided_is_near_identity(tmp_path, capsys):
    I = texture(5, 64, 64)
    write_tensor(tmp_path / "i.tnsr", I)
    code, f = _run(
        capsys, "filter", "--guidance", tmp_path / "i.tnsr", "--input", tmp_path / "i.tnsr",
        "-o", tmp_path / "o.tnsr", "--lambda", "1e-8",
    )
    assert code == 0
    out = read_tensor(tmp_path / "o.tnsr")
    mse = np.mean((out.data.astype(float) - I.data) ** 2)
    assert 10 * np.log10(1.0 / mse) >= 40.0
    assert f["shape"] == "64x64x1"


def test_filter_reports_default_parameters(tmp_path, capsys):
    write_image(tmp_path / "g.pgm", texture(1, 32, 32))
    write_image(tmp_path / "p.pgm", texture(2, 16, 16))
    code, f = _run(capsys, "filter", "--guidance", tmp_path / "g.pgm", "--input", tmp_path / "p.pgm", "-o", tmp_path / "o.pgm")
    assert code == 0
    assert (f["r"], f["lam"]) == ("2", "0.01")
    assert read_any(tmp_path / "o.pgm").shape == (1, 32, 32)


def test_filter_with_weights(tmp_path, capsys):
    write_image(tmp_path / "g.ppm", texture(1, 32, 32, 3))
    write_image(tmp_path / "p.ppm", texture(2, 16, 16, 3))
    save_weights(tmp_path / "w.bin", default_weights(3))
    code, f = _run(
        capsys, "filter", "--guidance", tmp_path / "g.ppm", "--input", tmp_path / "p.ppm",
        "--weights", tmp_path / "w.bin", "-o", tmp_path / "o.tnsr",
    )
    assert code == 0 and f["shape"] == "32x32x3"


def test_filter_missing_guidance(tmp_path, capsys):
    write_image(tmp_path / "p.pgm", texture(2, 16, 16))
    code = main(["filter", "--guidance", str(tmp_path / "nope.pgm"), "--input", str(tmp_path / "p.pgm"), "-o", str(tmp_path / "o.pgm")])
    assert code == 2
    assert not (tmp_path / "o.pgm").exists()


def test_filter_bad_magic_is_io_error(tmp_path):
    (tmp_path / "g.pgm").write_bytes(b"P7 junk")
    code = main(["filter", "--guidance", str(tmp_path / "g.pgm"), "--input", str(tmp_path / "g.pgm"), "-o", str(tmp_path / "o.pgm")])
    assert code == 2


def test_usage_error_exit_code(tmp_path):
    assert main(["filter", "--guidance", "x"]) == 3
    assert main(["nonsense"]) == 3


def test_filter_invalid_radius(tmp_path):
    write_image(tmp_path / "g.pgm", texture(1, 8, 8))
    code = main(["filter", "--guidance", str(tmp_path / "g.pgm"), "--input", str(tmp_path / "g.pgm"), "-o", str(tmp_path / "o.pgm"), "-r", "0"])
    assert code == 3


# -- refine -----------------------------------------------------------------------


def test_refine_constant_probability(tmp_path, capsys):
    write_image(tmp_path / "g.ppm", texture(3, 64, 64, 3))
    write_tensor(tmp_path / "p.tnsr", Tensor.full(16, 16, 0.5))
    code, f = _run(capsys, "refine", "--guidance", tmp_path / "g.ppm", "--prob", tmp_path / "p.tnsr", "--out-mask", tmp_path / "m.pgm")
    assert code == 0
    assert f["shape"] == "64x64x1"
    assert 0.25 <= float(f["mean"]) <= 0.75
    prob = read_tensor(tmp_path / "m.tnsr")
    # a constant input stays constant whatever the guidance
    np.testing.assert_allclose(prob.data, 0.5, atol=1e-6)


def test_refine_full_resolution_and_threshold_zero(tmp_path, capsys):
    write_image(tmp_path / "g.pgm", texture(4, 24, 24))
    write_image(tmp_path / "p.pgm", texture(5, 24, 24))
    code, f = _run(
        capsys, "refine", "--guidance", tmp_path / "g.pgm", "--prob", tmp_path / "p.pgm",
        "--out-mask", tmp_path / "m.pgm", "--out-prob", tmp_path / "q.tnsr", "--threshold", "0",
    )
    assert code == 0
    assert f["shape"] == "24x24x1"
    mask = read_any(tmp_path / "m.pgm")
    assert mask.data.min() == 1.0 and int(f["foreground"]) == 24 * 24
    q = read_tensor(tmp_path / "q.tnsr")
    assert q.data.min() >= 0.0 and q.data.max() <= 1.0


def test_refine_threshold_out_of_range(tmp_path):
    write_image(tmp_path / "g.pgm", texture(4, 24, 24))
    code = main(["refine", "--guidance", str(tmp_path / "g.pgm"), "--prob", str(tmp_path / "g.pgm"), "--out-mask", str(tmp_path / "m.pgm"), "--threshold", "1.5"])
    assert code == 3
    assert not (tmp_path / "m.pgm").exists()


# -- gradcheck --------------------------------------------------------------------


def test_gradcheck_windowed_mean(capsys):
    code, f = _run(capsys, "gradcheck", "--op", "windowed_mean", "--seed", "0")
    assert code == 0
    assert float(f["err_x"]) <= 1e-7
    assert f["status"] == "pass" and f["nan"] == "0"


def test_gradcheck_full_filter(capsys):
    code, f = _run(capsys, "gradcheck", "--op", "ag_filter", "--seed", "1")
    assert code == 0
    assert max(float(f[k]) for k in ("err_I", "err_O", "err_T")) <= 1e-4


def test_gradcheck_unknown_op():
    assert main(["gradcheck", "--op", "conv2d"]) == 3


def test_gradcheck_bad_epsilon():
    assert main(["gradcheck", "--op", "relu", "--epsilon", "0.5"]) == 3


# -- eval -------------------------------------------------------------------------


def _masks(tmp_path, rng):
    g = (rng.random((20, 20)) > 0.5).astype(np.float32)
    p = (rng.random((20, 20)) > 0.5).astype(np.float32)
    write_image(tmp_path / "gt.pgm", Tensor(g))
    write_image(tmp_path / "pred.pgm", Tensor(p))
    return Tensor(p), Tensor(g)


def test_eval_identical(tmp_path, capsys, rng):
    _masks(tmp_path, rng)
    code, f = _run(capsys, "eval", "--pred", tmp_path / "gt.pgm", "--gt", tmp_path / "gt.pgm")
    assert code == 0
    assert f["acc"] == "1.000000" and f["oe"] == "0.000000" and f["iou"] == "1.000000"


def test_eval_disjoint(tmp_path, capsys):
    a = np.zeros((8, 8), np.float32)
    a[:, :4] = 1
    write_image(tmp_path / "a.pgm", Tensor(a))
    write_image(tmp_path / "b.pgm", Tensor(1 - a))
    code, f = _run(capsys, "eval", "--pred", tmp_path / "a.pgm", "--gt", tmp_path / "b.pgm")
    assert code == 0
    assert f["oe"] == "1.000000" and f["acc"] == "0.000000"


def test_eval_matches_library(tmp_path, capsys, rng):
    p, g = _masks(tmp_path, rng)
    scores = Tensor(rng.random((20, 20)))
    write_tensor(tmp_path / "s.tnsr", scores)
    code, f = _run(capsys, "eval", "--pred", tmp_path / "pred.pgm", "--gt", tmp_path / "gt.pgm", "--scores", tmp_path / "s.tnsr")
    assert code == 0
    c = confusion(p, g)
    expected = {"acc": c.accuracy, "sen": c.sensitivity, "spe": c.specificity, "iou": c.iou,
                "oe": overlap_error(g, p), "auc": auc(scores, g)}
    for k, v in expected.items():
        assert f[k] == f"{v:.6f}"
    assert evaluate(p, g, scores)["auc"] == expected["auc"]


def test_eval_vacuous_flag(tmp_path, capsys):
    z = Tensor(np.zeros((4, 4), np.float32))
    o = Tensor(np.ones((4, 4), np.float32))
    write_image(tmp_path / "z.pgm", z)
    write_image(tmp_path / "o.pgm", o)
    code, f = _run(capsys, "eval", "--pred", tmp_path / "o.pgm", "--gt", tmp_path / "o.pgm")
    assert code == 0 and f["vacuous"] == "spe"
    assert main(["eval", "--pred", str(tmp_path / "z.pgm"), "--gt", str(tmp_path / "z.pgm")]) == 3


# -- fit --------------------------------------------------------------------------


def test_fit_zero_steps_writes_initial(tmp_path, capsys):
    save_weights(tmp_path / "w0.bin", default_weights(2))
    code, _ = _run(capsys, "fit", "--synthetic", "--steps", "0", "--init-weights", tmp_path / "w0.bin", "--out-weights", tmp_path / "w.bin")
    assert code == 0
    assert (tmp_path / "w.bin").read_bytes() == (tmp_path / "w0.bin").read_bytes()


def test_fit_synthetic_converges(tmp_path, capsys):
    code, f = _run(capsys, "fit", "--synthetic", "--seed", "0", "--out-weights", tmp_path / "w.bin")
    assert code == 0
    assert float(f["ratio"]) <= 0.1
    assert load_weights(tmp_path / "w.bin").head.shape == (2,)


def test_fit_divergence(tmp_path):
    code = main(["fit", "--synthetic", "--steps", "20", "--lr", "1e12", "--out-weights", str(tmp_path / "w.bin")])
    assert code == 1
    assert not (tmp_path / "w.bin").exists()


def test_fit_needs_data(tmp_path):
    assert main(["fit", "--out-weights", str(tmp_path / "w.bin")]) == 3


def test_fit_from_files(tmp_path, capsys):
    write_image(tmp_path / "g.pgm", texture(1, 24, 24))
    write_image(tmp_path / "o.pgm", texture(2, 12, 12))
    write_image(tmp_path / "t.pgm", texture(3, 24, 24))
    code, f = _run(
        capsys, "fit", "--guidance", tmp_path / "g.pgm", "--input", tmp_path / "o.pgm",
        "--target", tmp_path / "t.pgm", "--steps", "5", "--lr", "1", "--out-weights", tmp_path / "w.bin",
    )
    assert code == 0
    assert float(f["final_loss"]) <= float(f["initial_loss"])


# -- determinism ------------------------------------------------------------------


def _cli(args, threads):
    env = dict(os.environ, OMP_NUM_THREADS=str(threads), OPENBLAS_NUM_THREADS=str(threads), MKL_NUM_THREADS=str(threads))
    res = subprocess.run([sys.executable, "-m", "agfilter", *map(str, args)], env=env, capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    return res.stdout


@pytest.mark.parametrize("threads", [1, 4])
def test_outputs_are_bitwise_reproducible(tmp_path, threads):
    write_image(tmp_path / "g.ppm", texture(1, 48, 48, 3))
    write_image(tmp_path / "p.ppm", texture(2, 24, 24, 3))
    write_tensor(tmp_path / "prob.tnsr", texture(6, 12, 12))
    save_weights(tmp_path / "w.bin", default_weights(3))
    blobs = []
    for run, t in enumerate((1, threads)):
        d = tmp_path / f"run{run}"
        d.mkdir()
        outs = [
            _cli(["filter", "--guidance", tmp_path / "g.ppm", "--input", tmp_path / "p.ppm", "--weights", tmp_path / "w.bin", "-o", d / "f.tnsr"], t),
            _cli(["refine", "--guidance", tmp_path / "g.ppm", "--prob", tmp_path / "prob.tnsr", "--out-mask", d / "m.pgm"], t),
            _cli(["fit", "--synthetic", "--steps", "20", "--out-weights", d / "w.bin"], t),
        ]
        files = [(d / n).read_bytes() for n in ("f.tnsr", "m.pgm", "m.tnsr", "w.bin")]
        blobs.append((outs, files))
    assert blobs[0] == blobs[1]


def test_gamma_flag(tmp_path, capsys):
    from agfilter.cli import build_parser

    base = ["filter", "--guidance", "g", "--input", "i", "-o", "o"]
    assert build_parser().parse_args(base).gamma is None
    assert build_parser().parse_args(base + ["--gamma"]).gamma == 2.2
    assert build_parser().parse_args(base + ["--gamma", "1.8"]).gamma == 1.8
    write_image(tmp_path / "g.pgm", texture(1, 16, 16))
    assert main(["filter", "--guidance", str(tmp_path / "g.pgm"), "--input", str(tmp_path / "g.pgm"), "-o", str(tmp_path / "o.tnsr"), "--gamma", "0"]) == 3
