"""Command-line front end.

Subcommands:

* decode     — generate text for one image + prompt
* eval-pope  — answer yes/no object-existence questions and score them
* eval-chair — caption images and score object hallucination
* bench      — compare latency and forward-pass counts across modes
* rerun      — repeat a previous run from its manifest

Every run writes a manifest (full config, backend descriptor, seed,
engine version, timestamps) into the output directory; rerun replays it.
With a deterministic backend the re-run's outputs are byte-identical.

Exit codes: 0 ok, 2 configuration error, 3 input error, 4 backend error,
5 internal error.
"""

from __future__ import annotations

import argparse
import csv
import datetime
import json
import os
import sys
import time
from dataclasses import fields
from pathlib import Path

from . import __version__
from .backend import open_session
from .config import MODES, SAMPLING, DecodeConfig, TAU_LONG_ANSWER
from .decoder import GenerationResult, generate
from .errors import ConfigError, EDecodeError, InputError
from .imaging import load_image
from .metrics import (
    CaptionRecord,
    PopeRecord,
    chair_eval,
    load_synonyms,
    parse_yes_no,
    pope_eval,
)
from .tiling import build_region_map, split_image

DEFAULT_CHAIR_PROMPT = "Please describe this image in detail"

# --flag -> DecodeConfig field
_FLAG_FIELDS = {
    "mode": "mode",
    "alpha": "alpha",
    "beta": "beta",
    "tau": "tau",
    "n": "num_tiles",
    "tile_size": "tile_size",
    "k": "top_layers",
    "h": "top_heads",
    "seed": "seed",
    "max_tokens": "max_tokens",
    "sampling": "sampling",
}


def _add_config_flags(parser: argparse.ArgumentParser):
    g = parser.add_argument_group("decoding configuration")
    g.add_argument("--mode", choices=MODES, default=None, help="decoding mode")
    g.add_argument("--alpha", type=float, default=None, help="tile blend weight in [0,1]")
    g.add_argument("--beta", type=float, default=None, help="plausibility truncation strength in [0,1]")
    g.add_argument("--tau", type=float, default=None, help="attention softmax temperature")
    g.add_argument("--n", type=int, default=None, help="number of tiles (perfect square)")
    g.add_argument("--tile-size", type=int, default=None, help="tile side length in pixels")
    g.add_argument("--k", type=int, default=None, help="attention layers kept in refinement")
    g.add_argument("--h", type=int, default=None, help="attention heads kept in refinement")
    g.add_argument("--seed", type=int, default=None, help="seed for the sampler and the backend")
    g.add_argument("--max-tokens", type=int, default=None, help="generation budget")
    g.add_argument("--sampling", choices=SAMPLING, default=None, help="token selection rule")
    g.add_argument("--weighted-lhs", action="store_true", default=None,
                   help="weight the candidate side of the plausibility test too")
    g.add_argument("--no-renormalize", action="store_true", default=None,
                   help="zero masked tokens without rescaling the rest")
    g.add_argument("--config", default=None, metavar="FILE",
                   help="JSON file of config defaults (flags override it)")
    parser.add_argument("--backend", default=None,
                        help="'synthetic' or 'subprocess:<command>' "
                             "(default: $ED_BACKEND_CMD if set, else synthetic)")
    parser.add_argument("--out", default=None, metavar="DIR",
                        help="output directory (default: ed_runs/<command>)")


def _resolve_backend(value: str | None) -> str:
    if value:
        return value
    env = os.environ.get("ED_BACKEND_CMD")
    if env:
        if env == "synthetic" or env.startswith("subprocess:"):
            return env
        return f"subprocess:{env}"
    return "synthetic"


def _build_config(args: argparse.Namespace, default_tau: float | None = None) -> DecodeConfig:
    """defaults < command default < config file < explicit flags"""
    values = {}
    if default_tau is not None:
        values["tau"] = default_tau
    if args.config:
        try:
            with open(args.config) as f:
                file_values = json.load(f)
        except OSError as exc:
            raise ConfigError(f"cannot read config file {args.config}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {args.config} is not valid JSON: {exc}") from None
        known = {f.name for f in fields(DecodeConfig)}
        unknown = set(file_values) - known
        if unknown:
            raise ConfigError(f"unknown keys in config file: {sorted(unknown)}")
        values.update(file_values)
    for flag, field in _FLAG_FIELDS.items():
        v = getattr(args, flag)
        if v is not None:
            values[field] = v
    if args.weighted_lhs:
        values["weighted_lhs"] = True
    if args.no_renormalize:
        values["renormalize"] = False
    return DecodeConfig.from_dict(values)


def _out_dir(args: argparse.Namespace, command: str) -> Path:
    path = Path(args.out) if args.out else Path("ed_runs") / command
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


class Manifest:
    """Run record sufficient to reproduce the run with the same backend."""

    def __init__(self, command: str, params: dict, out: Path):
        self.payload = {
            "engine_version": __version__,
            "command": command,
            "params": params,
            "started_at": datetime.datetime.now(datetime.timezone.utc).isoformat(),
            "finished_at": None,
        }
        self.path = out / "manifest.json"
        _write_json(self.path, self.payload)

    def finish(self):
        self.payload["finished_at"] = datetime.datetime.now(datetime.timezone.utc).isoformat()
        _write_json(self.path, self.payload)


def _session_options(config: DecodeConfig) -> dict:
    return {"seed": config.seed}


def _dump_trace(result: GenerationResult, path: Path):
    with open(path, "w") as f:
        for trace in result.traces:
            f.write(json.dumps(trace.to_dict(), sort_keys=True) + "\n")


def _plot_weights(result: GenerationResult, path: Path):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    steps = [t.step for t in result.traces if t.weights is not None]
    if not steps:
        return
    num_tiles = len(result.traces[0].weights)
    fig, ax = plt.subplots(figsize=(7, 4))
    for k in range(num_tiles):
        ax.plot(steps, [t.weights[k] for t in result.traces if t.weights], label=f"tile {k}")
    ax.set_xlabel("step")
    ax.set_ylabel("tile weight")
    ax.set_ylim(0, 1)
    ax.legend(loc="upper right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


# ---------------------------------------------------------------- commands


def run_decode(params: dict, out: Path) -> dict:
    config = DecodeConfig.from_dict(params["config"])
    image = load_image(params["image"])
    with open_session(params["backend"], _session_options(config)) as session:
        prompt = session.tokenize(params["prompt"])
        if params.get("dump_tiles") and config.mode != "regular":
            tile_set = split_image(image, config.num_tiles, config.tile_size)
            regions = build_region_map(tile_set, session.info.grid_side)
            _write_json(out / "tiles.json", tile_set.debug_dict(regions))
        result = generate(session, image, prompt, config)
    payload = result.to_dict()
    _write_json(out / "result.json", payload)
    if params.get("trace"):
        _dump_trace(result, Path(params["trace"]))
    if params.get("plot"):
        _plot_weights(result, out / "weights.png")
    print(result.text)
    if result.status != "ok":
        print(f"warning: generation ended early: {result.error}", file=sys.stderr)
    return payload


def _read_jsonl(path: str) -> list[dict]:
    try:
        with open(path) as f:
            lines = [line for line in f if line.strip()]
    except OSError as exc:
        raise InputError(f"cannot read dataset {path}: {exc}") from None
    records = []
    for i, line in enumerate(lines):
        try:
            records.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise InputError(f"{path}:{i + 1}: invalid JSON: {exc}") from None
    if not records:
        raise InputError(f"dataset {path} is empty")
    return records


def _image_path(ref: str, root: str | None, dataset: str) -> str:
    if os.path.isabs(ref):
        return ref
    base = Path(root) if root else Path(dataset).parent
    return str(base / ref)


def run_eval_pope(params: dict, out: Path) -> dict:
    config = DecodeConfig.from_dict(params["config"])
    rows = _read_jsonl(params["dataset"])
    records = []
    with open_session(params["backend"], _session_options(config)) as session:
        with open(out / "answers.jsonl", "w") as answers:
            for row in rows:
                try:
                    image = load_image(_image_path(row["image"], params.get("image_root"), params["dataset"]))
                    question = str(row["question"])
                    label = str(row["label"]).lower()
                except KeyError as exc:
                    raise InputError(f"dataset row missing field {exc}") from None
                result = generate(session, image, session.tokenize(question), config)
                rec = PopeRecord(
                    question_id=str(row.get("id", len(records))),
                    image=str(row["image"]),
                    question=question,
                    label=label,
                    answer=result.text,
                )
                records.append(rec)
                answers.write(json.dumps({
                    "id": rec.question_id,
                    "label": rec.label,
                    "answer": rec.answer,
                    "parsed": parse_yes_no(rec.answer),
                    "tokens": result.tokens,
                }, sort_keys=True) + "\n")
    report = pope_eval(records)
    payload = report.to_dict()
    _write_json(out / "report.json", payload)
    if params.get("csv"):
        _report_csv(out / "report.csv", payload)
    print(json.dumps(payload, indent=2, sort_keys=True))
    return payload


def run_eval_chair(params: dict, out: Path) -> dict:
    config = DecodeConfig.from_dict(params["config"])
    rows = _read_jsonl(params["dataset"])
    try:
        synonyms = load_synonyms(params.get("synonyms"))
    except InputError as exc:
        # a bad --synonyms value is a configuration problem, not bad data
        raise ConfigError(str(exc)) from None
    prompt_text = params.get("prompt") or DEFAULT_CHAIR_PROMPT
    records = []
    with open_session(params["backend"], _session_options(config)) as session:
        prompt = session.tokenize(prompt_text)
        with open(out / "captions.jsonl", "w") as captions:
            for row in rows:
                try:
                    image = load_image(_image_path(row["image"], params.get("image_root"), params["dataset"]))
                    gt = frozenset(str(o).lower() for o in row["gt_objects"])
                except KeyError as exc:
                    raise InputError(f"dataset row missing field {exc}") from None
                result = generate(session, image, prompt, config)
                records.append(CaptionRecord(image=str(row["image"]), caption=result.text, gt_objects=gt))
                captions.write(json.dumps({
                    "image": str(row["image"]),
                    "caption": result.text,
                    "gt_objects": sorted(gt),
                }, sort_keys=True) + "\n")
    report = chair_eval(records, synonyms, params.get("recall_aggregation", "macro"))
    payload = report.to_dict()
    _write_json(out / "report.json", payload)
    if params.get("csv"):
        _report_csv(out / "report.csv", payload)
    print(json.dumps(payload, indent=2, sort_keys=True))
    return payload


def _report_csv(path: Path, payload: dict):
    """Flat metric,value table; presentation only, never feeds back into JSON."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["metric", "value"])
        for key, value in sorted(payload.items()):
            if key == "counts":
                for ck, cv in sorted(value.items()):
                    writer.writerow([f"count_{ck}", cv])
            else:
                writer.writerow([key, value])


def run_bench(params: dict, out: Path) -> dict:
    base = dict(params["config"])
    rows = _read_jsonl(params["dataset"])
    prompt_text = params.get("prompt") or DEFAULT_CHAIR_PROMPT
    modes = params.get("modes") or list(MODES)
    table = []
    for mode in modes:
        if mode not in MODES:
            raise ConfigError(f"unknown mode {mode!r} in --modes")
        config = DecodeConfig.from_dict({**base, "mode": mode})
        tokens = forwards = replays = 0
        elapsed = 0.0
        with open_session(params["backend"], _session_options(config)) as session:
            prompt = session.tokenize(prompt_text)
            for row in rows:
                image = load_image(_image_path(row["image"], params.get("image_root"), params["dataset"]))
                t0 = time.perf_counter()
                result = generate(session, image, prompt, config)
                elapsed += time.perf_counter() - t0
                tokens += len(result.tokens)
                forwards += result.total_forwards
                replays += result.total_replays
        table.append({
            "mode": mode,
            "images": len(rows),
            "tokens": tokens,
            "forwards": forwards,
            "replays": replays,
            "forwards_per_token": forwards / tokens if tokens else None,
            "latency_per_image_s": elapsed / len(rows),
        })

    with open(out / "bench.csv", "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=list(table[0].keys()))
        writer.writeheader()
        writer.writerows(table)

    by_mode = {row["mode"]: row for row in table}
    summary = {"rows": table}
    if "ed" in by_mode and "fasted" in by_mode:
        ed_fpt = by_mode["ed"]["forwards_per_token"]
        fast_fpt = by_mode["fasted"]["forwards_per_token"]
        if ed_fpt and fast_fpt:
            summary["ed_to_fasted_forward_ratio"] = ed_fpt / fast_fpt
    _write_json(out / "bench.json", summary)
    if not params.get("no_plot"):
        _plot_bench(table, out / "bench.png")
    print(json.dumps(summary, indent=2, sort_keys=True))
    return summary


def _plot_bench(table: list[dict], path: Path):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    modes = [row["mode"] for row in table]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 4))
    ax1.bar(modes, [row["latency_per_image_s"] for row in table], color="#4878d0")
    ax1.set_ylabel("latency per image (s)")
    ax2.bar(modes, [row["forwards_per_token"] or 0 for row in table], color="#ee854a")
    ax2.set_ylabel("forwards per token")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


_RUNNERS = {
    "decode": run_decode,
    "eval-pope": run_eval_pope,
    "eval-chair": run_eval_chair,
    "bench": run_bench,
}


def run_rerun(params: dict, out: Path) -> dict:
    try:
        with open(params["manifest"]) as f:
            manifest = json.load(f)
    except OSError as exc:
        raise InputError(f"cannot read manifest {params['manifest']}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"manifest is not valid JSON: {exc}") from None
    command = manifest.get("command")
    runner = _RUNNERS.get(command)
    if runner is None:
        raise InputError(f"manifest has unknown command {command!r}")
    replay = Manifest(command, manifest["params"], out)
    payload = runner(manifest["params"], out)
    replay.finish()
    return payload


# ---------------------------------------------------------------- argparse


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="edecode",
        description="Ensemble decoding over image tiles, with POPE/CHAIR evaluation",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("decode", help="generate text for one image and prompt")
    p.add_argument("--image", required=True, help="path to a PNG/JPEG image")
    p.add_argument("--prompt", required=True, help="prompt text")
    p.add_argument("--trace", default=None, metavar="PATH", help="write per-step JSONL trace")
    p.add_argument("--plot", action="store_true", help="write a tile-weight-vs-step plot")
    p.add_argument("--dump-tiles", action="store_true", help="write tile geometry debug JSON")
    _add_config_flags(p)

    p = sub.add_parser("eval-pope", help="run and score yes/no object-existence questions")
    p.add_argument("dataset", help="JSONL with {id, image, question, label}")
    p.add_argument("--image-root", default=None, help="base directory for image refs")
    p.add_argument("--csv", action="store_true", help="also write report.csv")
    _add_config_flags(p)

    p = sub.add_parser("eval-chair", help="caption images and score object hallucination")
    p.add_argument("dataset", help="JSONL with {image, gt_objects}")
    p.add_argument("--image-root", default=None, help="base directory for image refs")
    p.add_argument("--prompt", default=None, help=f"caption prompt (default: {DEFAULT_CHAIR_PROMPT!r})")
    p.add_argument("--synonyms", default=None, help="alternate synonym dictionary JSON")
    p.add_argument("--recall-aggregation", choices=("macro", "micro"), default="macro")
    p.add_argument("--csv", action="store_true", help="also write report.csv")
    _add_config_flags(p)

    p = sub.add_parser("bench", help="compare modes on latency and forward counts")
    p.add_argument("dataset", help="JSONL with at least {image}")
    p.add_argument("--image-root", default=None, help="base directory for image refs")
    p.add_argument("--prompt", default=None, help="prompt used for every image")
    p.add_argument("--modes", default=None, help="comma-separated subset of ed,fasted,regular")
    p.add_argument("--no-plot", action="store_true", help="skip bench.png")
    _add_config_flags(p)

    p = sub.add_parser("rerun", help="repeat a run from its manifest")
    p.add_argument("manifest", help="path to a manifest.json from a previous run")
    p.add_argument("--out", default=None, metavar="DIR")
    return parser


def _params_from_args(args: argparse.Namespace) -> dict:
    # caption-length tasks run at the long-answer temperature unless overridden
    default_tau = TAU_LONG_ANSWER if args.command in ("eval-chair", "bench") else None
    config = _build_config(args, default_tau)
    params = {"backend": _resolve_backend(args.backend), "config": config.to_dict()}
    if args.command == "decode":
        params.update(image=args.image, prompt=args.prompt, trace=args.trace,
                      plot=args.plot, dump_tiles=args.dump_tiles)
    elif args.command == "eval-pope":
        params.update(dataset=args.dataset, image_root=args.image_root, csv=args.csv)
    elif args.command == "eval-chair":
        params.update(dataset=args.dataset, image_root=args.image_root, prompt=args.prompt,
                      synonyms=args.synonyms, recall_aggregation=args.recall_aggregation,
                      csv=args.csv)
    elif args.command == "bench":
        params.update(dataset=args.dataset, image_root=args.image_root, prompt=args.prompt,
                      modes=args.modes.split(",") if args.modes else None,
                      no_plot=args.no_plot)
    return params


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "rerun":
            out = _out_dir(args, "rerun")
            run_rerun({"manifest": args.manifest}, out)
            return 0
        params = _params_from_args(args)
        out = _out_dir(args, args.command)
        manifest = Manifest(args.command, params, out)
        _RUNNERS[args.command](params, out)
        manifest.finish()
        return 0
    except EDecodeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
