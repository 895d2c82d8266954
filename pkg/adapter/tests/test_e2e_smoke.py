"""End-to-end smoke: POPE-format questions through the engine CLI.

Ten yes/no questions flow through `edecode eval-pope` with the adapter as
a subprocess backend, under both the full and the fast mode at the
reference operating point (4 tiles, alpha=beta=0.5, tau=1e-2, top-3
layers/heads). Every answer must parse as yes or no.
"""

import json
import shlex

import numpy as np
import pytest
from PIL import Image

from edecode.cli import main

from conftest import adapter_command


@pytest.fixture(scope="module")
def pope_setup(tiny_model, tmp_path_factory):
    root = tmp_path_factory.mktemp("pope")
    rng = np.random.default_rng(5)
    rows = []
    for i in range(10):
        img = rng.integers(0, 256, size=(448, 448, 3), dtype=np.uint8)
        name = f"img{i}.png"
        Image.fromarray(img).save(root / name)
        rows.append({
            "id": i,
            "image": name,
            "question": "Is there a dog in the image?",
            "label": "yes" if i % 2 == 0 else "no",
        })
    dataset = root / "questions.jsonl"
    dataset.write_text("\n".join(json.dumps(r) for r in rows) + "\n")
    return root, dataset


@pytest.mark.parametrize("mode", ["ed", "fasted"])
def test_ten_questions_all_parse(pope_setup, tiny_model, tmp_path, mode):
    root, dataset = pope_setup
    backend = "subprocess:" + shlex.join(adapter_command(tiny_model))
    out = tmp_path / f"run_{mode}"
    code = main([
        "eval-pope", str(dataset),
        "--backend", backend,
        "--mode", mode,
        "--alpha", "0.5", "--beta", "0.5", "--tau", "1e-2", "--k", "3", "--h", "3",
        "--n", "4",
        "--seed", "11",
        "--max-tokens", "3",
        "--out", str(out),
    ])
    assert code == 0
    report = json.loads((out / "report.json").read_text())
    assert report["counts"]["total"] == 10
    assert report["counts"]["unparseable"] == 0
    answers = [json.loads(l) for l in (out / "answers.jsonl").read_text().splitlines()]
    assert len(answers) == 10
    assert all(a["parsed"] in ("yes", "no") for a in answers)
