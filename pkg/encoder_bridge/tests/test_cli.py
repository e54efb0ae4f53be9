import json

import numpy as np

from encoder_bridge import AMIP_HEADER
from encoder_bridge.cli import main


def _write(path, lines):
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def test_encode_end_to_end(tmp_path, capsys):
    q = tmp_path / "q.txt"
    p = tmp_path / "p.txt"
    _write(q, ["what is a cat", "what is a dog", "what is a cat"])
    _write(p, ["cats are small", "dogs are loud", "fish are quiet"])
    out = tmp_path / "out"
    code = main(["--queries", str(q), "--passages", str(p),
                 "--model", "hashed-ngram", "--out", str(out),
                 "--out-dim", "32"])
    assert code == 0
    assert "2 query rows and 3 key rows" in capsys.readouterr().out

    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest == {"model": "hashed-ngram", "dim": 32,
                        "queries": {"lines": 3, "rows": 2},
                        "passages": {"lines": 3, "rows": 3}}
    for name, rows in (("queries.amip", 2), ("keys.amip", 3)):
        blob = (out / name).read_bytes()
        magic, version, n, d, dtype, _ = AMIP_HEADER.unpack_from(blob)
        assert (magic, version, n, d, dtype) == (b"AMIP", 1, rows, 32, 0)
        data = np.frombuffer(blob[AMIP_HEADER.size:], dtype="<f4").reshape(n, d)
        assert np.allclose(np.linalg.norm(data.astype(np.float64), axis=1),
                           1.0, atol=1e-4)


def test_reruns_are_byte_identical(tmp_path):
    q = tmp_path / "q.txt"
    p = tmp_path / "p.txt"
    _write(q, ["alpha beta", "gamma"])
    _write(p, ["delta epsilon zeta"])
    out = tmp_path / "out"
    args = ["--queries", str(q), "--passages", str(p),
            "--model", "hashed-ngram", "--out", str(out), "--out-dim", "16"]
    assert main(args) == 0
    first = {f: (out / f).read_bytes()
             for f in ("queries.amip", "keys.amip", "manifest.json")}
    assert main(args) == 0
    second = {f: (out / f).read_bytes()
              for f in ("queries.amip", "keys.amip", "manifest.json")}
    assert first == second


def test_usage_error_exit_1(capsys):
    assert main(["--queries", "q.txt"]) == 1  # missing required flags
    assert "usage error" in capsys.readouterr().err
    assert main(["--bogus-flag", "x"]) == 1


def test_data_errors_exit_2(tmp_path, capsys):
    q = tmp_path / "q.txt"
    _write(q, ["only queries"])
    code = main(["--queries", str(q), "--passages", str(tmp_path / "missing.txt"),
                 "--model", "hashed-ngram", "--out", str(tmp_path / "o")])
    assert code == 2
    assert "error" in capsys.readouterr().err
