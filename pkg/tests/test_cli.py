import json
import os

import numpy as np
import pytest

from smlm.cli import main
from smlm.midi_ingest import parse_midi
from smlm.net import ModelConfig, init_params, save_checkpoint

FIXTURE_MIDI = os.path.join(os.path.dirname(__file__), "fixtures", "midi")
GOLDEN_DATASET = os.path.join(os.path.dirname(__file__), "golden", "prepared.jsonl")
RECIPES = os.path.join(os.path.dirname(__file__), "..", "recipes")


@pytest.fixture(scope="module")
def desk_ckpt(tmp_path_factory):
    path = tmp_path_factory.mktemp("ckpt") / "desk.smlm"
    save_checkpoint(str(path), init_params(ModelConfig.desk(), 0))
    return str(path)


def test_no_arguments_is_usage_error(capsys):
    assert main([]) == 2
    assert "usage" in capsys.readouterr().err.lower()


def test_unknown_flag_rejected():
    assert main(["prepare", "--in", "x", "--out", "y", "--bogus"]) == 2


def test_prepare_reproduces_golden(tmp_path):
    out = tmp_path / "prepared.jsonl"
    assert main(["prepare", "--in", FIXTURE_MIDI, "--out", str(out), "--seed", "7"]) == 0
    assert out.read_bytes() == open(GOLDEN_DATASET, "rb").read()


def test_prepare_different_seed_differs(tmp_path):
    out = tmp_path / "prepared.jsonl"
    assert main(["prepare", "--in", FIXTURE_MIDI, "--out", str(out), "--seed", "8"]) == 0
    assert out.read_bytes() != open(GOLDEN_DATASET, "rb").read()


def test_generate_infeasible_spec_exit_1(tmp_path, desk_ckpt, capsys):
    spec = tmp_path / "bad.json"
    spec.write_text(json.dumps({"allowedPitches": [], "noteCount": {"min": 1, "max": 4}}))
    rc = main(
        ["generate", "--ckpt", desk_ckpt, "--constraints", str(spec),
         "--out", str(tmp_path / "x.mid")]
    )
    assert rc == 1
    err = capsys.readouterr().err
    assert "allowedPitches" in err and "noteCount" in err and '"slot": 0' in err


def test_generate_schema_violation_exit_1(tmp_path, desk_ckpt, capsys):
    spec = tmp_path / "bad.json"
    spec.write_text(json.dumps({"pitches": [0, 1]}))
    rc = main(
        ["generate", "--ckpt", desk_ckpt, "--constraints", str(spec),
         "--out", str(tmp_path / "x.mid")]
    )
    assert rc == 1


def test_generate_writes_midi_and_roll(tmp_path, desk_ckpt):
    out = tmp_path / "out.mid"
    roll = tmp_path / "out.svg"
    rc = main(
        ["generate", "--ckpt", desk_ckpt,
         "--constraints", os.path.join(RECIPES, "onset_grid_8.json"),
         "--seed", "3", "--out", str(out), "--roll", str(roll)]
    )
    assert rc == 0
    parsed = parse_midi(out.read_bytes())
    assert parsed.ticks_per_quarter == 480
    for note in parsed.notes:
        assert (note.onset_tick // 120) % 8 == 0
    assert roll.read_text().startswith("<?xml")


def test_generate_deterministic_outputs(tmp_path, desk_ckpt):
    a = tmp_path / "a.mid"
    b = tmp_path / "b.mid"
    for out in (a, b):
        rc = main(
            ["generate", "--ckpt", desk_ckpt,
             "--constraints", os.path.join(RECIPES, "combined.json"),
             "--seed", "11", "--out", str(out)]
        )
        assert rc == 0
    assert a.read_bytes() == b.read_bytes()


def test_render_golden_record(tmp_path):
    out = tmp_path / "roll.svg"
    rc = main(["render", "--in", GOLDEN_DATASET, "--index", "1", "--out", str(out)])
    assert rc == 0
    svg = out.read_text()
    assert svg.count("#9e9e9e") == 14  # the second golden record has 14 notes


def test_render_bad_index_exit_1(tmp_path, capsys):
    rc = main(["render", "--in", GOLDEN_DATASET, "--index", "99", "--out", str(tmp_path / "r.svg")])
    assert rc == 1


def test_eval_prints_nll(tmp_path, desk_ckpt, capsys):
    rc = main(["eval", "--ckpt", desk_ckpt, "--data", GOLDEN_DATASET, "--seed", "1"])
    assert rc == 0
    value = float(capsys.readouterr().out.strip())
    assert 0 < value < 4.1


def test_train_smoke(tmp_path, desk_ckpt):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({
        "train": {"learningRate": 1e-3, "batchSize": 4, "maxEpochs": 2,
                  "seed": 5, "validationFraction": 0.3},
        "model": {"hiddenSize": 16, "numLayers": 1, "numHeads": 2},
    }))
    rc = main(["train", "--data", GOLDEN_DATASET, "--config", str(cfg),
               "--out", str(tmp_path / "run")])
    assert rc == 0
    lines = (tmp_path / "run" / "metrics.jsonl").read_text().splitlines()
    assert len(lines) == 2
    assert (tmp_path / "run" / "best.smlm").exists()


def test_all_recipes_are_schema_valid():
    import jsonschema

    from smlm.score_rep import ConstraintSpec, constraint_schema

    schema = constraint_schema()
    names = sorted(os.listdir(RECIPES))
    assert len(names) == 13
    for name in names:
        with open(os.path.join(RECIPES, name)) as f:
            doc = json.load(f)
        jsonschema.validate(doc, schema)
        ConstraintSpec.from_dict(doc)
