"""Command-line entry points for the full pipeline.

Subcommands: gen-data, sketchify, train-base, train-cgc, sample, eval,
serve. Every subcommand accepts --config pointing at a YAML/JSON file;
explicit flags override the file, the file overrides built-in defaults.

Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from . import data as data_mod
from . import metrics as metrics_mod
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .coarse import Vocabulary
from .config import PipelineConfig, merged_config
from .pipeline import GenerationPipeline
from .schedules import ModulatorConfig
from .training import TrainConfig, train_base, train_cgc

TRAIN_DEFAULTS = {
    "base": {"epochs": 50, "lr": 1e-3},
    "cgc": {"epochs": 150, "lr": 1e-3},
    "cgc-finetune": {"epochs": 50, "lr": 1e-4},
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems with exit code 1."""

    def error(self, message):
        raise UsageError(message)


def load_sketch_png(path, image_size: int) -> np.ndarray:
    with Image.open(path) as im:
        gray = im.convert("L").resize((image_size, image_size), Image.BILINEAR)
    return (np.asarray(gray, dtype=np.float32) >= 127.5).astype(np.uint8)


def save_image_png(image_hw3: np.ndarray, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(image_hw3).save(path, format="PNG", optimize=False, compress_level=6)


def build_parser() -> _Parser:
    parser = _Parser(prog="sketchdial", description=__doc__)
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="YAML/JSON config file")
        return p

    p = add("gen-data", "generate a procedural dataset split")
    p.add_argument("--out", required=True, help="output split directory")
    p.add_argument("--n", type=int)
    p.add_argument("--image-size", type=int, dest="image_size")
    p.add_argument("--seed", type=int)
    p.add_argument("--distortion", type=float)

    p = add("sketchify", "threshold an edge-map image into a binary sketch")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--threshold", type=int, default=50)

    for phase in ("train-base", "train-cgc"):
        p = add(phase, f"run the {phase.split('-')[1]} training phase")
        p.add_argument("--data", required=True, help="dataset split directory")
        p.add_argument("--out", required=True, help="output checkpoint path")
        p.add_argument("--epochs", type=int)
        p.add_argument("--lr", type=float)
        p.add_argument("--batch-size", type=int, dest="batch_size")
        p.add_argument("--seed", type=int)
        p.add_argument("--log", help="JSONL training log path")
        p.add_argument("--checkpoint-every", type=int, dest="checkpoint_every")
        p.add_argument("--snapshot-dir", help="directory for periodic snapshots")
        if phase == "train-base":
            p.add_argument("--fine-dropout", type=float, dest="fine_dropout",
                           help="probability a sample's fine residuals are dropped")
        if phase == "train-cgc":
            p.add_argument("--base", required=True, help="checkpoint to start from")
            p.add_argument("--finetune", action="store_true",
                           help="run the reduced-lr finetune phase instead of the ramp")
            p.add_argument("--ablate-modulator", action="store_true", dest="ablate_modulator",
                           help="hold the fine branch at 1.0 for the whole phase")

    p = add("sample", "generate images from a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--sketch", help="sketch PNG (white strokes)")
    p.add_argument("--prompt", default="")
    p.add_argument("--gamma", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output PNG path (single-sketch mode)")
    p.add_argument("--context", choices=("auto", "fused", "text"), default="auto",
                   help="conditioning context source")
    p.add_argument("--no-fine", action="store_true", dest="no_fine",
                   help="coarse-only pipeline: never evaluate the fine adapter")
    p.add_argument("--spectrum", help="comma-separated gamma list; writes one PNG per value")
    p.add_argument("--dataset", help="batch mode: dataset split directory")
    p.add_argument("--out-dir", dest="out_dir", help="batch mode: output directory")
    p.add_argument("--limit", type=int, help="batch mode: number of records")

    p = add("eval", "score a directory of generated images against a reference split")
    p.add_argument("--reference", required=True, help="reference dataset split directory")
    p.add_argument("--generated", required=True, help="directory of NNNNNN.png generated images")
    p.add_argument("--out", help="report JSON path (default: stdout only)")
    p.add_argument("--strata", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--encoder-ckpt", dest="encoder_ckpt", help="joint encoder checkpoint to reuse")
    p.add_argument("--save-encoder", dest="save_encoder", help="persist the (re)trained joint encoder")
    p.add_argument("--encoder-epochs", type=int, dest="encoder_epochs", default=8)

    p = add("serve", "run the JSON-over-HTTP generation service")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8008)

    return parser


def _require_file(path, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"{what} not found: {p}")
    return p


def _cfg_value(args, merged, section, key, default=None):
    """flag > config file > default."""
    flag = getattr(args, key, None)
    if flag is not None:
        return flag
    return merged[section].get(key, default)


def cmd_gen_data(args, merged) -> int:
    n = _cfg_value(args, merged, "data", "n")
    image_size = _cfg_value(args, merged, "data", "image_size")
    seed = _cfg_value(args, merged, "data", "seed")
    distortion = _cfg_value(args, merged, "data", "distortion")
    records = data_mod.generate_toy_dataset(n, image_size=image_size, seed=seed, distortion=distortion)
    data_mod.save_dataset(records, args.out, seed=seed,
                          config={"n": n, "image_size": image_size, "distortion": distortion})
    print(f"wrote {len(records)} records to {args.out}")
    return 0


def cmd_sketchify(args, merged) -> int:
    src = _require_file(args.input, "input image")
    with Image.open(src) as im:
        edge_map = np.asarray(im.convert("L"), dtype=np.float64)
    sketch = data_mod.sketchify(edge_map, threshold=args.threshold)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(sketch.astype(bool)).save(args.out)
    print(f"sketch with {int(sketch.sum())} on-pixels -> {args.out}")
    return 0


def _train_config(args, merged, phase: str) -> TrainConfig:
    epochs = _cfg_value(args, merged, "train", "epochs", TRAIN_DEFAULTS[phase]["epochs"])
    lr = _cfg_value(args, merged, "train", "lr", TRAIN_DEFAULTS[phase]["lr"])
    mod = merged["modulator"]
    modulator = ModulatorConfig(T_epochs=epochs, k=mod["k"], m_min=mod["m_min"], m_max=mod["m_max"])
    return TrainConfig(
        phase=phase,
        epochs=epochs,
        lr=lr,
        batch_size=_cfg_value(args, merged, "train", "batch_size"),
        modulator=modulator,
        seed=_cfg_value(args, merged, "train", "seed"),
        checkpoint_every=_cfg_value(args, merged, "train", "checkpoint_every"),
        ablate_modulator=getattr(args, "ablate_modulator", False),
        fine_dropout=(_cfg_value(args, merged, "train", "fine_dropout", 0.0)
                      if phase == "base" else 0.0),
    )


def cmd_train_base(args, merged) -> int:
    dataset = data_mod.load_dataset(_require_file(args.data, "dataset directory"))
    cfg = _train_config(args, merged, "base")
    model_config = PipelineConfig.from_dict(merged["model"])
    ckpt = train_base(cfg, dataset, model_config, log_path=args.log,
                      out_dir=args.snapshot_dir, progress=True)
    save_checkpoint(ckpt, args.out)
    print(f"phase base done: final loss {ckpt.history[-1]['loss']:.5f} -> {args.out}")
    return 0


def cmd_train_cgc(args, merged) -> int:
    dataset = data_mod.load_dataset(_require_file(args.data, "dataset directory"))
    base = load_checkpoint(_require_file(args.base, "base checkpoint"))
    phase = "cgc-finetune" if args.finetune else "cgc"
    cfg = _train_config(args, merged, phase)
    ckpt = train_cgc(cfg, base, dataset, log_path=args.log,
                     out_dir=args.snapshot_dir, progress=True)
    save_checkpoint(ckpt, args.out)
    print(f"phase {phase} done: final loss {ckpt.history[-1]['loss']:.5f} -> {args.out}")
    return 0


def cmd_sample(args, merged) -> int:
    pipeline = GenerationPipeline.from_checkpoint(
        _require_file(args.ckpt, "checkpoint"), context_mode=args.context
    )
    steps = args.steps if args.steps is not None else merged["knob"]["steps"]
    gamma = args.gamma if args.gamma is not None else merged["knob"]["gamma"]
    seed = args.seed if args.seed is not None else 0
    size = pipeline.config.image_size

    if args.dataset:  # batch mode over a dataset split
        if not args.out_dir:
            raise UsageError("batch mode needs --out-dir")
        records = data_mod.load_dataset(_require_file(args.dataset, "dataset directory"))
        if args.limit:
            records = records[: args.limit]
        out_dir = Path(args.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        for i, rec in enumerate(records):
            img = pipeline.generate(rec.sketch, rec.prompt, gamma=gamma, steps=steps,
                                    seed=seed + i, use_fine=not args.no_fine)
            save_image_png(img, out_dir / f"{i:06d}.png")
        print(f"wrote {len(records)} generations to {out_dir}")
        return 0

    if not args.sketch or not args.out:
        raise UsageError("single mode needs --sketch and --out")
    sketch = load_sketch_png(_require_file(args.sketch, "sketch"), size)

    if args.spectrum:
        gammas = [int(v) for v in args.spectrum.split(",")]
        out = Path(args.out)
        for g in sorted(gammas):
            img = pipeline.generate(sketch, args.prompt, gamma=g, steps=steps, seed=seed,
                                    use_fine=not args.no_fine)
            save_image_png(img, out.with_name(f"{out.stem}_gamma{g:03d}{out.suffix}"))
        print(f"wrote {len(gammas)} spectrum images next to {out}")
        return 0

    img = pipeline.generate(sketch, args.prompt, gamma=gamma, steps=steps, seed=seed,
                            use_fine=not args.no_fine)
    save_image_png(img, args.out)
    print(f"wrote {args.out} (gamma={gamma}, steps={steps}, seed={seed})")
    return 0


def _load_joint_encoder(path) -> metrics_mod.JointEncoder:
    import torch

    ckpt = load_checkpoint(path)
    vocab = Vocabulary(list(ckpt.config["vocab_tokens"]))
    enc = metrics_mod.JointEncoder(vocab, embed_dim=ckpt.config["embed_dim"])
    state = {k: torch.from_numpy(v) for k, v in ckpt.components["joint_encoder"].items()}
    enc.load_state_dict(state)
    enc.eval()
    return enc


def _save_joint_encoder(enc: metrics_mod.JointEncoder, path) -> None:
    components = {
        "joint_encoder": {k: t.detach().cpu().numpy().astype("<f4") for k, t in enc.state_dict().items()}
    }
    ckpt = Checkpoint(
        config={"embed_dim": enc.embed_dim, "vocab_tokens": list(enc.vocab.tokens)},
        phase="joint-encoder",
        epoch=0,
        components=components,
    )
    save_checkpoint(ckpt, path)


def cmd_eval(args, merged) -> int:
    reference = data_mod.load_dataset(_require_file(args.reference, "reference directory"))
    gen_dir = _require_file(args.generated, "generated directory")

    pairs = []
    for i, rec in enumerate(reference):
        path = Path(gen_dir) / f"{i:06d}.png"
        if path.exists():
            with Image.open(path) as im:
                arr = np.asarray(im.convert("RGB"), dtype=np.float32)
            pairs.append((np.transpose(arr, (2, 0, 1)) / 127.5 - 1.0, rec))
    if not pairs:
        raise RuntimeError(f"no NNNNNN.png files in {gen_dir} matching reference ids")

    if args.encoder_ckpt:
        encoder = _load_joint_encoder(_require_file(args.encoder_ckpt, "encoder checkpoint"))
    else:
        vocab = Vocabulary.default()
        encoder = metrics_mod.train_joint_encoder(
            reference, vocab, epochs=args.encoder_epochs, seed=args.seed
        )
    if args.save_encoder:
        _save_joint_encoder(encoder, args.save_encoder)

    gen_images = np.stack([img for img, _ in pairs])
    ref_images = np.stack([rec.image for _, rec in pairs])
    prompts = [rec.prompt for _, rec in pairs]

    def metric_block(idx):
        gen_f = encoder.image_features(gen_images[idx])
        ref_f = encoder.image_features(ref_images[idx])
        block = {
            "alignment": metrics_mod.prompt_alignment(gen_images[idx], [prompts[i] for i in idx], encoder),
            "conformity": float(np.mean([
                metrics_mod.sketch_conformity(gen_images[i], pairs[i][1].sketch) for i in idx
            ])),
            "count": int(len(idx)),
        }
        if min(gen_f.n, ref_f.n) >= gen_f.dim + 1:
            block["fid"] = metrics_mod.fid(gen_f, ref_f)
        else:
            block["fid"] = None  # too few rows for covariance estimation
        return block

    all_idx = list(range(len(pairs)))
    report = metric_block(all_idx)
    strata = data_mod.stratify_by_pixel_count([rec for _, rec in pairs], args.strata)
    report["per_stratum"] = [
        dict(metric_block([i for i in all_idx if strata[i] == s]), stratum=int(s))
        for s in range(args.strata)
        if np.any(strata == s)
    ]
    report["seed"] = args.seed
    report["config_hash"] = hashlib.sha256(
        json.dumps({"strata": args.strata, "encoder_epochs": args.encoder_epochs,
                    "n_pairs": len(pairs)}, sort_keys=True).encode()
    ).hexdigest()[:16]

    text = json.dumps(report, indent=2)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    print(text)
    return 0


def cmd_serve(args, merged) -> int:
    import uvicorn

    from .service import create_app

    pipeline = GenerationPipeline.from_checkpoint(_require_file(args.ckpt, "checkpoint"))
    uvicorn.run(create_app(pipeline), host=args.host, port=args.port)
    return 0


COMMANDS = {
    "gen-data": cmd_gen_data,
    "sketchify": cmd_sketchify,
    "train-base": cmd_train_base,
    "train-cgc": cmd_train_cgc,
    "sample": cmd_sample,
    "eval": cmd_eval,
    "serve": cmd_serve,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_usage(sys.stderr)
            return 1
        merged = merged_config(args.config) if args.config else merged_config()
        return COMMANDS[args.command](args, merged)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    except SystemExit as exc:  # argparse --help and friends
        return int(exc.code or 0)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
