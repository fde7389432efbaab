"""Command line entry point: ``mgtc {mask,flops,stats,compare,demo-model,gen-corpus,verify}``.

Exit codes: 0 ok, 2 usage, 3 format/shape, 4 feasibility, 5 I/O, 1 anything else.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

from mgtc import __version__
from mgtc.baselines import cell_running_mask, random_mask, tube_mask
from mgtc.demo import DEMO_EXAMPLES, DEMO_LR, DEMO_STEPS
from mgtc.errors import ConfigError, FormatError, MGTCError
from mgtc.fileio import atomic_write
from mgtc.flops import PRESETS, EncoderSpec, estimate_flops, parse_views, savings_report, tokens_for
from mgtc.masking import mgtc_mask
from mgtc.rng import derive_seeds
from mgtc.stats_report import compare_strategies, emit_report, residual_histogram
from mgtc.synthetic import parse_corpus
from mgtc.tokenizer import CubeShape, tokenize
from mgtc.video_io import ClipSpec, default_sidecar, load_raw, load_y4m, resample_fps, write_raw, write_y4m

EXIT_OK, EXIT_USAGE, EXIT_FORMAT, EXIT_FEASIBILITY, EXIT_IO = 0, 2, 3, 4, 5
DEFAULT_CORPUS = "static:2,noise:2,moving-block:4"
PROVENANCE_SUFFIX = ".provenance.json"


class VerificationError(FormatError):
    pass


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _input_record(path, sidecar=None):
    rec = {"path": str(path), "sha256": sha256_file(path)}
    if sidecar is not None:
        rec["sidecar"] = {"path": str(sidecar), "sha256": sha256_file(sidecar)}
    return rec


def load_clip(path, sidecar=None):
    """Load a ``.y4m`` stream or a raw file with its JSON sidecar; returns ``(clip, input_record)``."""
    path = Path(path)
    if path.suffix.lower() == ".y4m":
        return load_y4m(path), _input_record(path)
    side = Path(sidecar) if sidecar else default_sidecar(path)
    return load_raw(path, side), _input_record(path, side)


def provenance(command, config, inputs, **extra):
    doc = {"tool": "mgtc", "version": __version__, "command": command, "config": config, "inputs": inputs}
    doc.update(extra)
    return doc


def write_provenance(out_path, prov):
    path = Path(str(out_path) + PROVENANCE_SUFFIX)
    atomic_write(path, json.dumps(prov, indent=2, sort_keys=True) + "\n")
    return path


def _config(args, *names):
    return {n: getattr(args, n) for n in names}


def _ratios(text):
    try:
        return [float(r) for r in text.split(",") if r.strip()]
    except ValueError:
        raise ConfigError(f"ratios must be comma-separated numbers, got {text!r}") from None


def _maybe_resample(clip, args, cube):
    if args.fps is None and args.frames is None:
        return clip
    frames = args.frames if args.frames is not None else clip.num_frames
    if frames % cube.c:
        raise ConfigError(f"--frames {frames} must be a multiple of the temporal cube size {cube.c}")
    spec = ClipSpec(args.fps if args.fps is not None else clip.source_fps, frames, args.offset)
    return resample_fps(clip, spec)


def _report_format(args):
    if args.format:
        return args.format
    return "json" if str(args.out).endswith(".json") else "csv"


def cmd_mask(args):
    cube = CubeShape.parse(args.cube)
    clip, record = load_clip(args.input, args.sidecar)
    clip = _maybe_resample(clip, args, cube)
    grid = tokenize(clip, cube)
    if args.strategy == "mgtc":
        if args.mode == "train" and args.seed is None:
            raise ConfigError("--mode train needs --seed")
        mask = mgtc_mask(grid, args.ratio, mode=args.mode, seed=args.seed if args.mode == "train" else None)
    elif args.strategy == "cell_running":
        mask = cell_running_mask(grid, args.ratio)
    else:
        if args.seed is None:
            raise ConfigError(f"--strategy {args.strategy} needs --seed")
        fn = random_mask if args.strategy == "random" else tube_mask
        mask = fn(grid, args.ratio, args.seed)
    mask.save(args.out)
    prov = provenance(
        "mask",
        _config(args, "strategy", "ratio", "mode", "seed", "cube", "fps", "frames", "offset"),
        [record],
        lattice=list(grid.lattice),
        masked=mask.num_masked,
        ratio_realized=mask.ratio_realized,
    )
    write_provenance(args.out, prov)
    print(f"{args.strategy}: masked {mask.num_masked}/{mask.L} tokens "
          f"(lattice {grid.t_blocks}x{grid.s_blocks}) -> {args.out}")
    return EXIT_OK


def _encoder(args):
    base = PRESETS.get(args.preset)
    if base is None:
        if args.depth is None or args.width is None:
            raise ConfigError("--preset custom needs --depth and --width")
        base = EncoderSpec(depth=args.depth, width=args.width)
    return EncoderSpec(
        depth=args.depth or base.depth,
        width=args.width or base.width,
        mlp_ratio=args.mlp_ratio or base.mlp_ratio,
        num_classes=args.num_classes or base.num_classes,
        num_heads=1 if args.width and args.width % base.num_heads else base.num_heads,
    )


def cmd_flops(args):
    spec = _encoder(args)
    if args.tokens is not None:
        tokens = args.tokens
    else:
        cube = CubeShape.parse(args.cube)
        h, _, w = args.size.partition("x")
        tokens = tokens_for(args.frames, int(h), int(w or h), (cube.c, cube.p1, cube.p2))
    clips, crops = parse_views(args.views) if args.views else (1, 1)
    views = clips * crops
    profile = estimate_flops(spec, tokens)
    doc = {"encoder": vars(spec).copy(), "preset": args.preset, "views": [clips, crops], "profile": profile.to_dict(),
           "total_gflops_all_views": profile.total_gflops * views}
    if args.ratio is not None:
        doc["savings"] = savings_report(spec, tokens, args.ratio)
        doc["savings"]["gflops_masked_all_views"] = doc["savings"]["flops_masked"] / 1e9 * views
    if args.out:
        atomic_write(args.out, json.dumps(dict(doc, provenance=provenance("flops", _config(
            args, "preset", "tokens", "ratio", "views"), [])), indent=2) + "\n")
    if args.json:
        print(json.dumps(doc, indent=2))
        return EXIT_OK
    label = args.preset if args.preset in PRESETS else "custom"
    rows = [
        ("encoder", f"{label} (depth {spec.depth}, width {spec.width}, mlp {spec.mlp_ratio:g}, classes {spec.num_classes})"),
        ("tokens", f"{tokens}"),
        ("qkv+proj / block", f"{profile.qkv_and_proj / 1e9:.3f} G"),
        ("attention / block", f"{profile.attention_scores_and_values / 1e9:.3f} G"),
        ("mlp / block", f"{profile.mlp / 1e9:.3f} G"),
        ("head", f"{profile.head / 1e9:.3f} G"),
        ("GFLOPs", f"{profile.total_gflops:.1f}" + (f" x {clips} x {crops} = {profile.total_gflops * views:.1f}" if views > 1 else "")),
    ]
    if args.ratio is not None:
        s = doc["savings"]
        rows += [
            ("masked tokens", f"{s['kept_tokens']} kept of {tokens} (ratio {args.ratio:g})"),
            ("GFLOPs masked", f"{s['flops_masked'] / 1e9:.1f}" + (f" x {clips} x {crops}" if views > 1 else "")),
            ("saving", f"{100 * s['relative_saving']:.1f}%"),
        ]
    width = max(len(k) for k, _ in rows)
    for k, v in rows:
        print(f"{k:<{width}}  {v}")
    return EXIT_OK


def _gather_clips(args, cube):
    if args.inputs:
        clips, names, records = [], [], []
        for path in args.inputs:
            clip, rec = load_clip(path, None)
            clips.append(_maybe_resample(clip, args, cube))
            names.append(str(path))
            records.append(rec)
        return clips, names, records
    corpus = args.synthetic or DEFAULT_CORPUS
    clips = [_maybe_resample(c, args, cube) for c in parse_corpus(corpus, seed=args.corpus_seed)]
    names = [f"synthetic[{n}]" for n in range(len(clips))]
    return clips, names, [{"synthetic": corpus, "corpus_seed": args.corpus_seed}]


def cmd_stats(args):
    cube = CubeShape.parse(args.cube)
    clips, names, records = _gather_clips(args, cube)
    hist = residual_histogram(clips, cube, args.epsilon, names=names, log_bins=args.bins)
    fmt = _report_format(args)
    prov = provenance("stats", _config(args, "cube", "epsilon", "bins", "fps", "frames", "offset"), records)
    emit_report(hist, args.out, fmt, provenance=prov if fmt == "json" else None)
    write_provenance(args.out, prov)
    print(f"{hist.total} cubes from {len(clips)} clips; near-zero (D < {args.epsilon:g}) "
          f"fraction {hist.near_zero_fraction:.4f} -> {args.out}")
    return EXIT_OK


def cmd_compare(args):
    cube = CubeShape.parse(args.cube)
    if not args.inputs and not args.synthetic:
        args.synthetic = "moving-block:1"
    clips, names, records = _gather_clips(args, cube)
    ratios = _ratios(args.ratios)
    summary = None
    for clip, name, seed in zip(clips, names, derive_seeds(args.seed, len(clips))):
        part = compare_strategies(tokenize(clip, cube), ratios, seed, clip=name)
        summary = part if summary is None else summary.merged(part)
    summary = type(summary)(summary.records, args.seed)
    fmt = _report_format(args)
    prov = provenance("compare", _config(args, "cube", "ratios", "seed", "fps", "frames", "offset"), records)
    emit_report(summary, args.out, fmt, provenance=prov if fmt == "json" else None)
    write_provenance(args.out, prov)
    for r in summary.records:
        print(f"{r.clip:<16} {r.strategy:<13} ratio {r.ratio:<5g} kept-energy {r.kept_motion_energy_fraction:.4f} "
              f"proxy-mse {r.reconstruction_proxy_error:10.2f}")
    return EXIT_OK


def cmd_demo_model(args):
    from mgtc.demo import run_direction_demo
    from mgtc.toy_transformer import save_params

    def show(step, loss, acc):
        print(f"step {step:5d}  loss {loss:.5f}  train-acc {acc:.3f}")

    result = run_direction_demo(mask_ratio=args.mask_ratio, seed=args.seed, steps=args.steps, lr=args.lr,
                                examples=args.examples, eval_every=args.eval_every, callback=show)
    print(f"final train accuracy {result.final_accuracy:.3f}")
    if args.out:
        doc = {
            "final_accuracy": result.final_accuracy,
            "accuracy": [list(a) for a in result.accuracy],
            "losses": result.losses,
            "provenance": provenance("demo-model", _config(args, "mask_ratio", "seed", "steps", "lr", "examples"), []),
        }
        atomic_write(args.out, json.dumps(doc, indent=2) + "\n")
    if args.save_params:
        save_params(result.params, args.save_params)
    return EXIT_OK


def cmd_gen_corpus(args):
    out = Path(args.outdir)
    out.mkdir(parents=True, exist_ok=True)
    clips = parse_corpus(args.corpus, seed=args.corpus_seed)
    for n, clip in enumerate(clips):
        stem = out / f"clip{n:03d}"
        if args.format == "raw":
            write_raw(clip, stem.with_suffix(".raw"))
        else:
            # luma-only stream with neutral chroma: channel 0 becomes the gray level
            write_y4m(stem.with_suffix(".y4m"), clip.frames[..., 0], clip.source_fps)
    print(f"wrote {len(clips)} clips to {out}")
    return EXIT_OK


def cmd_verify(args):
    bad = []
    for prov_path in args.provenance:
        try:
            doc = json.loads(Path(prov_path).read_text())
        except json.JSONDecodeError as exc:
            raise FormatError(f"{prov_path}: not a provenance document ({exc})") from None
        for rec in doc.get("inputs", []):
            for item in (rec, rec.get("sidecar")):
                if item and "sha256" in item and sha256_file(item["path"]) != item["sha256"]:
                    bad.append(item["path"])
    if bad:
        raise VerificationError(f"input hash mismatch: {', '.join(bad)}")
    print(f"verified {len(args.provenance)} provenance file(s)")
    return EXIT_OK


def _add_clip_options(p):
    p.add_argument("--cube", default="2,16,16", help="cube shape c,p1,p2 (default 2,16,16)")
    p.add_argument("--fps", type=float, help="resample to this frame rate")
    p.add_argument("--frames", type=int, help="number of frames to sample")
    p.add_argument("--offset", type=int, default=0, help="first source frame")


def _add_corpus_options(p):
    p.add_argument("inputs", nargs="*", help=".y4m or raw clips (raw needs a <file>.json sidecar)")
    p.add_argument("--synthetic", help=f"synthetic corpus spec, e.g. {DEFAULT_CORPUS}")
    p.add_argument("--corpus-seed", type=int, default=0)


def build_parser():
    parser = argparse.ArgumentParser(prog="mgtc", description="Motion-guided token compression toolkit")
    parser.add_argument("--version", action="version", version=f"mgtc {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("mask", help="mask one clip and write the token mask")
    p.add_argument("input")
    p.add_argument("--sidecar", help="metadata JSON for raw input (default <input>.json)")
    p.add_argument("--strategy", choices=["mgtc", "random", "tube", "cell_running"], default="mgtc")
    p.add_argument("--ratio", type=float, required=True)
    p.add_argument("--mode", choices=["eval", "train"], default="eval")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    _add_clip_options(p)
    p.set_defaults(func=cmd_mask)

    p = sub.add_parser("flops", help="analytical encoder FLOPs and masking savings")
    p.add_argument("--preset", choices=["vit-b", "vit-l", "custom"], default="vit-b")
    p.add_argument("--depth", type=int)
    p.add_argument("--width", type=int)
    p.add_argument("--mlp-ratio", type=float)
    p.add_argument("--num-classes", type=int)
    p.add_argument("--tokens", type=int)
    p.add_argument("--frames", type=int, default=16)
    p.add_argument("--size", default="224", help="frame size H or HxW (used without --tokens)")
    p.add_argument("--cube", default="2,16,16")
    p.add_argument("--ratio", type=float, help="masking ratio for the savings report")
    p.add_argument("--views", help="clips x crops multiplier, e.g. 5x3")
    p.add_argument("--json", action="store_true", help="print JSON instead of the table")
    p.add_argument("--out", help="also write the JSON profile here")
    p.set_defaults(func=cmd_flops)

    p = sub.add_parser("stats", help="pooled residual histogram")
    _add_corpus_options(p)
    _add_clip_options(p)
    p.add_argument("--epsilon", type=float, default=1.0, help="near-zero threshold (squared intensity)")
    p.add_argument("--bins", type=int, default=24, help="log-spaced bins above the near-zero bin")
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=["csv", "json"])
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("compare", help="compare masking strategies")
    _add_corpus_options(p)
    _add_clip_options(p)
    p.add_argument("--ratios", default="0.1,0.25,0.5")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=["csv", "json"])
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("demo-model", help="train the toy encoder on MGTC-masked synthetic clips")
    p.add_argument("--mask-ratio", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--steps", type=int, default=DEMO_STEPS)
    p.add_argument("--lr", type=float, default=DEMO_LR)
    p.add_argument("--examples", type=int, default=DEMO_EXAMPLES)
    p.add_argument("--eval-every", type=int, default=25)
    p.add_argument("--out", help="write the loss/accuracy trajectory as JSON")
    p.add_argument("--save-params", help="snapshot stem for the trained parameters")
    p.set_defaults(func=cmd_demo_model)

    p = sub.add_parser("gen-corpus", help="write the synthetic corpus to disk")
    p.add_argument("outdir")
    p.add_argument("--corpus", default=DEFAULT_CORPUS)
    p.add_argument("--corpus-seed", type=int, default=0)
    p.add_argument("--format", choices=["y4m", "raw"], default="raw")
    p.set_defaults(func=cmd_gen_corpus)

    p = sub.add_parser("verify", help="recompute input hashes recorded in provenance files")
    p.add_argument("provenance", nargs="+")
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except MGTCError as exc:
        print(f"mgtc: {exc.category} error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"mgtc: io error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
