import json

import numpy as np
import pytest

from carpe.cli import main
from carpe.checkpoint import (
    Checkpoint,
    load_checkpoint,
    save_checkpoint,
    serialize,
)


@pytest.fixture(scope="module")
def small_ckpts(tmp_path_factory):
    rng = np.random.default_rng(0)
    base = tmp_path_factory.mktemp("ckpts")

    def mk(shift):
        return Checkpoint(
            config={"model": {}, "train": {}},
            epoch=0,
            tensors={
                "w": ("w_head", rng.normal(size=(3, 3)) + shift),
                "b": ("adapter", rng.normal(size=4) + shift),
            },
        )

    a, b = base / "a.ckpt", base / "b.ckpt"
    save_checkpoint(mk(0.0), a)
    save_checkpoint(mk(1.0), b)
    return a, b, base


def test_usage_error_exit_code_2(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["definitely-not-a-command"])
    assert exc.value.code == 2


def test_missing_required_flag_exits_2():
    with pytest.raises(SystemExit) as exc:
        main(["finetune", "--out-dir", "x"])
    assert exc.value.code == 2


def test_runtime_failure_exit_code_1(tmp_path, capsys):
    rc = main(["eval", "--ckpt", str(tmp_path / "missing.ckpt")])
    assert rc == 1
    assert "error:" in capsys.readouterr().err


def test_gen_corpus_writes_manifest(tmp_path, capsys):
    out = tmp_path / "manifest.json"
    rc = main(["gen-corpus", "--out", str(out), "--set", "data.seed=5"])
    assert rc == 0
    doc = json.loads(out.read_text())
    assert doc["seed"] == 5
    assert doc["format_version"] == 1


def test_merge_coeff_zero_bit_equal(small_ckpts, tmp_path, capsys):
    a, b, _ = small_ckpts
    out = tmp_path / "merged.ckpt"
    rc = main(["merge", "--coeff", "0", str(a), str(b), str(out)])
    assert rc == 0
    assert out.read_bytes() == a.read_bytes()


def test_merge_coeff_half_midpoint(small_ckpts, tmp_path):
    a, b, _ = small_ckpts
    out = tmp_path / "merged.ckpt"
    assert main(["merge", "--coeff", "0.5", str(a), str(b), str(out)]) == 0
    ck_a, ck_b, ck_m = load_checkpoint(a), load_checkpoint(b), load_checkpoint(out)
    for name in ck_a.tensors:
        want = 0.5 * ck_a.tensors[name][1] + 0.5 * ck_b.tensors[name][1]
        assert np.abs(ck_m.tensors[name][1] - want).max() < 1e-12


def test_merge_structure_mismatch_fails(small_ckpts, tmp_path, capsys):
    a, _, _ = small_ckpts
    other = tmp_path / "other.ckpt"
    save_checkpoint(Checkpoint(config={}, tensors={"z": ("router", np.zeros(2))}), other)
    rc = main(["merge", "--coeff", "0.5", str(a), str(other), str(tmp_path / "out.ckpt")])
    assert rc == 1


def test_gradcheck_command_passes(capsys):
    rc = main(["gradcheck", "--tol", "1e-4", "--eps", "1e-5"])
    out = capsys.readouterr().out
    assert rc == 0
    assert "PASS" in out


def test_gradcheck_bad_tolerance_fails(capsys):
    rc = main(["gradcheck", "--tol", "1e-12"])
    assert rc == 1
    assert "FAIL" in capsys.readouterr().out
