"""Command-line entry points: prepare, train, generate, render, eval, serve.

Exit codes: 0 success, 1 runtime failure (including infeasible constraints,
reported on stderr), 2 usage error. Every random choice is surfaced as a
--seed flag; there is no hidden entropy. SMLM_LOG in {error, info, debug}
controls verbosity.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import jsonschema

from .artifact_io import (
    DatasetRecord,
    excerpt_to_midi,
    read_dataset,
    render_piano_roll,
    write_bytes,
    write_dataset,
    write_text,
)
from .midi_ingest import prepare_directory
from .net import ModelConfig, load_checkpoint
from .sampler import SamplerConfig, generate, generated_slot_indices
from .score_rep import (
    ConstraintSpec,
    InfeasibleConstraints,
    compile_constraints,
    constraint_schema,
)
from .trainer import TrainConfig, evaluate, run_training

log = logging.getLogger("smlm")

_LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


def _setup_logging() -> None:
    level = os.environ.get("SMLM_LOG", "info").lower()
    if level not in _LOG_LEVELS:
        level = "info"
    logging.basicConfig(level=_LOG_LEVELS[level], format="%(levelname)s %(message)s")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="smlm",
        description="Constrained symbolic music generation with softly masked language models.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="ingest a directory of MIDI files into a dataset")
    p.add_argument("--in", dest="input_dir", required=True)
    p.add_argument("--out", dest="output", required=True)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train", help="train a model on a prepared dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--model-preset", choices=["paper", "desk"], default="desk")
    p.add_argument("--config", help="JSON file with train/model overrides")
    p.add_argument("--out", dest="output_dir", required=True)
    p.add_argument("--resume", action="store_true")

    p = sub.add_parser("generate", help="generate a composition under constraints")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--constraints", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--temperature", type=float)
    p.add_argument("--top-p", dest="top_p", type=float)
    p.add_argument("--out", dest="output", required=True)
    p.add_argument("--roll", help="also write an SVG piano roll here")

    p = sub.add_parser("render", help="render a dataset record as an SVG piano roll")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--out", dest="output", required=True)

    p = sub.add_parser("eval", help="report masked NLL of a checkpoint on a dataset")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("serve", help="run the HTTP generation service")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--host", default="127.0.0.1")

    return parser


def _load_train_configs(args) -> tuple[TrainConfig, ModelConfig]:
    model = ModelConfig.paper() if args.model_preset == "paper" else ModelConfig.desk()
    train_kwargs: dict = {}
    if args.config:
        with open(args.config) as f:
            doc = json.load(f)
        t = doc.get("train", {})
        key_map = {
            "learningRate": "learning_rate",
            "lrDecayPerEpoch": "lr_decay_per_epoch",
            "batchSize": "batch_size",
            "maxEpochs": "max_epochs",
            "seed": "seed",
            "validationFraction": "validation_fraction",
        }
        for k, v in t.items():
            if k not in key_map:
                raise ValueError(f"unknown train config key: {k}")
            train_kwargs[key_map[k]] = v
        m = doc.get("model", {})
        model_map = {
            "hiddenSize": "hidden_size",
            "numLayers": "num_layers",
            "numHeads": "num_heads",
            "ffnMultiplier": "ffn_multiplier",
            "slotCount": "slot_count",
        }
        overrides = {}
        for k, v in m.items():
            if k not in model_map:
                raise ValueError(f"unknown model config key: {k}")
            overrides[model_map[k]] = v
        if overrides:
            base = {
                "hidden_size": model.hidden_size,
                "num_layers": model.num_layers,
                "num_heads": model.num_heads,
                "ffn_multiplier": model.ffn_multiplier,
                "slot_count": model.slot_count,
            }
            base.update(overrides)
            model = ModelConfig(**base)
    return TrainConfig(**train_kwargs), model


def load_constraint_spec(path: str) -> ConstraintSpec:
    with open(path) as f:
        doc = json.load(f)
    jsonschema.validate(doc, constraint_schema())
    return ConstraintSpec.from_dict(doc)


def cmd_prepare(args) -> int:
    dataset = prepare_directory(args.input_dir, args.seed, log=log)
    records = [DatasetRecord.from_excerpt(sid, ex) for sid, ex in dataset]
    write_dataset(args.output, records)
    log.info("wrote %d excerpts to %s", len(records), args.output)
    return 0


def cmd_train(args) -> int:
    train_cfg, model_cfg = _load_train_configs(args)
    records = read_dataset(args.data)
    dataset = [(r.source_id, r.to_excerpt(model_cfg.slot_count)) for r in records]
    metrics = run_training(
        dataset, train_cfg, model_cfg, args.output_dir, resume=args.resume, log=log
    )
    if metrics:
        log.info("final train NLL %.4f val NLL %.4f", metrics[-1]["trainNLL"], metrics[-1]["valNLL"])
    return 0


def cmd_generate(args) -> int:
    spec = load_constraint_spec(args.constraints)
    params = load_checkpoint(args.ckpt)
    cfg = params.cfg
    grid = compile_constraints(spec, slot_count=cfg.slot_count)
    scfg = SamplerConfig(
        temperature=args.temperature if args.temperature is not None else spec.temperature,
        top_p=args.top_p if args.top_p is not None else spec.top_p,
        seed=args.seed,
    )
    excerpt, trace = generate(grid, params, cfg, scfg)
    write_bytes(args.output, excerpt_to_midi(excerpt))
    log.info("wrote %s (%d notes, %d decisions)", args.output, len(excerpt.notes()), len(trace))
    if args.roll:
        gen_slots = generated_slot_indices(grid)
        write_text(args.roll, render_piano_roll(excerpt, generated=gen_slots))
        log.info("wrote %s", args.roll)
    return 0


def cmd_render(args) -> int:
    records = read_dataset(args.input)
    if not 0 <= args.index < len(records):
        raise ValueError(f"record index {args.index} outside 0..{len(records) - 1}")
    excerpt = records[args.index].to_excerpt()
    write_text(args.output, render_piano_roll(excerpt))
    log.info("wrote %s", args.output)
    return 0


def cmd_eval(args) -> int:
    params = load_checkpoint(args.ckpt)
    records = read_dataset(args.data)
    dataset = [(r.source_id, r.to_excerpt(params.cfg.slot_count)) for r in records]
    nll = evaluate(dataset, params, params.cfg, args.seed)
    print(f"{nll:.6f}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    app = create_app(args.ckpt)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


_COMMANDS = {
    "prepare": cmd_prepare,
    "train": cmd_train,
    "generate": cmd_generate,
    "render": cmd_render,
    "eval": cmd_eval,
    "serve": cmd_serve,
}


def main(argv=None) -> int:
    _setup_logging()
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except InfeasibleConstraints as e:
        print(f"infeasible constraints: {json.dumps(e.report())}", file=sys.stderr)
        return 1
    except Exception as e:  # runtime failures map to exit 1 with a message
        print(f"error: {e}", file=sys.stderr)
        return 1


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    sys.exit(main())
