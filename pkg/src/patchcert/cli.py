"""Command-line front end: mask tooling, training, certification, reports.

Every run that writes an output also writes ``<output>.manifest.json`` with
the fully resolved parameters; ``patchcert replay --manifest FILE`` reruns
it and must reproduce the outputs byte for byte, for any ``--threads``.

Numeric formatting is fixed (accuracies to 0.1%, losses to 6 decimals) so
outputs are directly diffable.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .cache import CachedClassifier
from .data import (
    DatasetFormatError,
    LabeledDataset,
    SynthSpec,
    generate_synth,
    load_cifar10_binary,
)
from .defense import certify, evaluate
from .masks import (
    InfeasibleMaskConfigError,
    build_mask_set,
    load_mask_set,
    patch_side_from_fraction,
    save_mask_set,
    verify_r_covering,
)
from .models import load_model, mlp_init, saliency_from_gradient, save_model
from .oracle import attack_simulate, build_patch_dictionary
from .training import (
    STRATEGY_NAMES,
    TrainConfig,
    build_strategy_context,
    run_strategy,
    train,
)

USAGE_ERROR = 2
DOMAIN_ERROR = 1

MANIFEST_SKIP = {"manifest", "func", "masks_cmd"}


def pct(x: float) -> str:
    return f"{100.0 * x:.1f}%"


def loss6(x) -> str:
    return "" if x is None else f"{x:.6f}"


def manifest_path(out: str | Path) -> Path:
    return Path(str(out) + ".manifest.json")


def write_manifest(args: argparse.Namespace, outputs: list[str]) -> None:
    params = {k: v for k, v in vars(args).items() if k not in MANIFEST_SKIP}
    doc = {
        "tool": "patchcert",
        "version": __version__,
        "subcommand": args.subcommand,
        "params": params,
    }
    blob = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    for out in outputs:
        manifest_path(out).write_text(blob)


def write_csv(path: str | Path, header: list[str], rows: list[list],
              summary: list[str] | None = None) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
        if summary:
            for line in summary:
                fh.write(f"# {line}\n")


def resolve_patch_side(args, n: int) -> int:
    if getattr(args, "patch_size", None):
        return args.patch_size
    frac = getattr(args, "patch_frac", None) or 0.03
    return patch_side_from_fraction(n, n, frac)


def image_side(ds: LabeledDataset) -> int:
    height, width = ds.images.shape[1], ds.images.shape[2]
    if height != width:
        raise ValueError(f"mask sets assume square images, got {height}x{width}")
    return height


def load_dataset(args) -> LabeledDataset:
    if args.dataset == "synth":
        spec = SynthSpec(side=args.n, classes=args.classes, seed=args.seed,
                         grid=args.synth_grid)
        total = args.skip + args.count
        ds = generate_synth(spec, total)
        return ds.subset(np.arange(args.skip, total))
    if args.dataset == "cifar10":
        if not args.data_path:
            raise ValueError("--data-path is required for --dataset cifar10")
        ds = load_cifar10_binary(args.data_path)
        if args.count:
            stop = min(args.skip + args.count, len(ds))
            ds = ds.subset(np.arange(args.skip, stop))
        return ds
    raise ValueError(f"unknown dataset {args.dataset!r}")


def cmd_masks_gen(args) -> int:
    p = resolve_patch_side(args, args.n)
    ms = build_mask_set(args.n, p, args.k)
    print(f"s={ms.s} m={ms.m} positions {','.join(str(v) for v in ms.positions)}")
    if args.out:
        save_mask_set(ms, args.out)
        write_manifest(args, [args.out])
    return 0


def cmd_masks_verify(args) -> int:
    if args.mask_file:
        ms = load_mask_set(args.mask_file)
        p = args.patch_size or ms.p
    else:
        if args.n is None or args.k is None:
            raise ValueError("masks verify needs --from FILE or both --n and --k")
        p = resolve_patch_side(args, args.n)
        ms = build_mask_set(args.n, p, args.k)
    ok, witness = verify_r_covering(ms, p)
    if ok:
        print("covering: OK")
        return 0
    print(f"covering: FAIL at patch ({witness[0]},{witness[1]})")
    return DOMAIN_ERROR


def get_model(args, dataset: LabeledDataset):
    if args.model:
        return load_model(args.model)
    height, width = dataset.images.shape[1], dataset.images.shape[2]
    channels = dataset.images.shape[3]
    return mlp_init(height, width, channels, hidden=args.hidden,
                    classes=dataset.class_count, seed=args.seed)


def cmd_augment(args) -> int:
    ds = load_dataset(args)
    model = get_model(args, ds)
    n = image_side(ds)
    p = resolve_patch_side(args, n)
    ctx = build_strategy_context(args.strategy, n, p, fill=args.fill,
                                 cutout_side=args.cutout_side)
    rng = np.random.default_rng(args.seed)
    rows = []
    for i in range(len(ds)):
        image, label = ds.images[i], int(ds.labels[i])
        cache = CachedClassifier(model)
        image_id = cache.register(image)
        saliency = None
        if ctx.name == "saliency":
            saliency = saliency_from_gradient(model, image, label)
        outcome = run_strategy(ctx, image, label, rng, cache=cache,
                               image_id=image_id, saliency=saliency)
        if outcome is None:
            rows.append([i, "none", "", "", 0, 0])
            continue
        ids = ";".join(
            "-" if mid is None else ",".join(str(v) for v in mid)
            for mid in outcome.mask_ids
        )
        losses = ";".join(loss6(v) for v in outcome.losses)
        rows.append([i, outcome.name, ids, losses,
                     outcome.scheduled_evaluations, outcome.unique_evaluations])
    write_csv(args.out, ["image_id", "strategy", "mask_ids", "losses",
                         "scheduled_passes", "unique_passes"], rows)
    write_manifest(args, [args.out])
    print(f"augmented {len(ds)} images -> {args.out}")
    return 0


def cmd_train(args) -> int:
    ds = load_dataset(args)
    n = image_side(ds)
    cfg = TrainConfig(
        epochs=args.epochs, lr=args.lr, momentum=args.momentum,
        batch_size=args.batch, seed=args.seed, strategy=args.strategy,
        patch_side=resolve_patch_side(args, n), fill=args.fill,
        cutout_side=args.cutout_side, include_clean=args.include_clean,
        frozen_reference=args.frozen_reference,
    )
    model = mlp_init(n, ds.images.shape[2], ds.images.shape[3],
                     hidden=args.hidden, classes=ds.class_count, seed=args.seed)
    result = train(model, ds, cfg)
    save_model(result.model, args.out)
    outputs = [args.out]
    if args.log:
        rows = [[e.epoch, f"{e.lr:g}", loss6(e.mean_loss),
                 e.scheduled_passes, e.unique_passes] for e in result.epochs]
        write_csv(args.log, ["epoch", "lr", "mean_loss", "scheduled_passes",
                             "unique_passes"], rows)
        outputs.append(args.log)
    write_manifest(args, outputs)
    print(f"trained {cfg.epochs} epochs ({args.strategy}) "
          f"final loss {loss6(result.epochs[-1].mean_loss)} -> {args.out}")
    return 0


def cmd_certify(args) -> int:
    ds = load_dataset(args)
    model = get_model(args, ds)
    n = image_side(ds)
    p = resolve_patch_side(args, n)
    ms = build_mask_set(n, p, args.k)
    report = evaluate(list(ds.images), [int(v) for v in ds.labels], model, ms,
                      fill=args.fill, threads=args.threads)
    rows = []
    for i, (inf, cert) in enumerate(zip(report.inferences, report.certifications)):
        wx, wy = ("", "") if cert.witness is None else cert.witness
        rows.append([i, int(ds.labels[i]), inf.label, inf.case,
                     int(cert.certified), wx, wy, report.per_image_unique[i]])
    summary = [
        f"clean_accuracy={pct(report.clean_accuracy)} "
        f"certified_robust_accuracy={pct(report.certified_robust_accuracy)}",
        f"cases I={report.cases['I']} II={report.cases['II']} III={report.cases['III']} "
        f"unique_passes={report.unique_passes}",
    ]
    write_csv(args.out, ["image_id", "true_label", "defended_label", "case",
                         "certified", "witness_i", "witness_j", "unique_passes"],
              rows, summary)
    write_manifest(args, [args.out])
    print(f"clean {pct(report.clean_accuracy)} certified "
          f"{pct(report.certified_robust_accuracy)} -> {args.out}")
    return 0


def cmd_attack_sim(args) -> int:
    ds = load_dataset(args)
    model = get_model(args, ds)
    n = image_side(ds)
    p = resolve_patch_side(args, n)
    ms = build_mask_set(n, p, args.k)
    channels = ds.images.shape[3]
    fills = build_patch_dictionary(p, channels=channels,
                                   random_fills=args.random_fills, seed=args.seed)

    def one(i):
        image, label = ds.images[i], int(ds.labels[i])
        cache = CachedClassifier(model)
        image_id = cache.register(image)
        cert = certify(cache, image_id, label, ms, fill=args.fill)
        rep = attack_simulate(image, label, model, ms, p, fills, fill=args.fill)
        return cert.certified, rep

    if args.threads > 1:
        with ThreadPoolExecutor(max_workers=args.threads) as pool:
            results = list(pool.map(one, range(len(ds))))
    else:
        results = [one(i) for i in range(len(ds))]

    rows = []
    total_violations = 0
    unsound = 0
    for i, (certified, rep) in enumerate(results):
        total_violations += len(rep.violations)
        if certified and not rep.sound:
            unsound += 1
        for v in rep.violations:
            rows.append([i, v.patch_x, v.patch_y, v.fill_name,
                         v.defended_label, v.true_label])
    variants = results[0][1].variants_checked if results else 0
    summary = [
        f"images={len(ds)} certified={sum(int(c) for c, _ in results)} "
        f"variants_per_image={variants} violations={total_violations} "
        f"certified_images_with_violations={unsound}",
        "certified_images=" + ",".join(
            str(i) for i, (c, _) in enumerate(results) if c
        ),
    ]
    write_csv(args.out, ["image_id", "patch_x", "patch_y", "fill",
                         "defended_label", "true_label"], rows, summary)
    write_manifest(args, [args.out])
    print(summary[0] + f" -> {args.out}")
    return 0 if unsound == 0 else DOMAIN_ERROR


def read_train_log(path: str):
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    header, body = rows[0], rows[1:]
    return header, body


def cmd_report(args) -> int:
    lines = ["| strategy | passes/batch | clean acc | certified acc |",
             "|---|---|---|---|"]
    for spec_str in args.runs:
        try:
            label, paths = spec_str.split("=", 1)
            train_log, cert_csv = paths.split(":", 1)
        except ValueError:
            raise ValueError(
                f"run spec {spec_str!r} must look like label=trainlog.csv:cert.csv"
            )
        _, body = read_train_log(train_log)
        scheduled = sum(int(r[3]) for r in body)
        mpath = manifest_path(train_log)
        images = None
        if mpath.exists():
            params = json.loads(mpath.read_text())["params"]
            images = params.get("count")
        if images:
            per_image = scheduled / (images * len(body))
            passes = f"{per_image:g}"
        else:
            passes = "n/a"
        clean, cert = "", ""
        with open(cert_csv) as fh:
            for line in fh:
                if line.startswith("# clean_accuracy"):
                    parts = dict(p.split("=") for p in line[2:].strip().split(" "))
                    clean = parts["clean_accuracy"]
                    cert = parts["certified_robust_accuracy"]
        lines.append(f"| {label} | {passes} | {clean} | {cert} |")
    table = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(table)
        write_manifest(args, [args.out])
    print(table, end="")
    return 0


def cmd_replay(args) -> int:
    doc = json.loads(Path(args.manifest).read_text())
    params = doc["params"]
    if doc["subcommand"].startswith("masks-"):
        argv = doc["subcommand"].split("-", 1)
    else:
        argv = [doc["subcommand"]]
    for key, value in params.items():
        if key == "subcommand" or value is None or value is False:
            continue
        flag = "--" + key.replace("_", "-")
        if key == "runs":
            continue
        if value is True:
            argv.append(flag)
        else:
            argv.extend([flag, str(value)])
    if "runs" in params:
        argv.extend(params["runs"])
    if args.threads is not None:
        idx = argv.index("--threads") if "--threads" in argv else None
        if idx is not None:
            argv[idx + 1] = str(args.threads)
        else:
            argv.extend(["--threads", str(args.threads)])
    if args.out is not None and "--out" in argv:
        argv[argv.index("--out") + 1] = args.out
    return main(argv)


def add_dataset_flags(sub):
    sub.add_argument("--dataset", choices=["synth", "cifar10"], default="synth")
    sub.add_argument("--data-path", default=None, help="cifar10 binary file")
    sub.add_argument("--count", type=int, default=64,
                     help="number of images (synth: generated; cifar10: taken)")
    sub.add_argument("--skip", type=int, default=0,
                     help="images to drop from the front (train/test splits)")
    sub.add_argument("--n", type=int, default=32, help="synthetic image side")
    sub.add_argument("--classes", type=int, default=4)
    sub.add_argument("--synth-grid", type=int, default=None,
                     help="cue lattice step (default: uniform placement)")


def add_patch_flags(sub):
    sub.add_argument("--patch-frac", type=float, default=None,
                     help="patch area fraction (default 0.03)")
    sub.add_argument("--patch-size", type=int, default=None,
                     help="patch side in pixels (overrides --patch-frac)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="patchcert",
        description="Certified patch defense: covering masks, double-masking "
                    "inference, and worst-case cutout training.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    subs = parser.add_subparsers(dest="subcommand", required=True)

    masks = subs.add_parser("masks", help="mask-set tooling")
    mask_subs = masks.add_subparsers(dest="masks_cmd", required=True)

    gen = mask_subs.add_parser("gen", help="build and print a covering mask set")
    gen.add_argument("--n", type=int, required=True)
    gen.add_argument("--k", type=int, required=True)
    add_patch_flags(gen)
    gen.add_argument("--out", default=None, help="write descriptor file")
    gen.set_defaults(func=cmd_masks_gen, subcommand="masks-gen")

    ver = mask_subs.add_parser("verify", help="brute-force covering check")
    ver.add_argument("--n", type=int, default=None)
    ver.add_argument("--k", type=int, default=None)
    add_patch_flags(ver)
    ver.add_argument("--from", dest="mask_file", default=None,
                     help="verify a descriptor file instead")
    ver.set_defaults(func=cmd_masks_verify, subcommand="masks-verify")

    aug = subs.add_parser("augment", help="emit per-image strategy choices as CSV")
    add_dataset_flags(aug)
    add_patch_flags(aug)
    aug.add_argument("--strategy", choices=STRATEGY_NAMES, required=True)
    aug.add_argument("--model", default=None, help="model checkpoint (default: fresh init)")
    aug.add_argument("--hidden", type=int, default=64)
    aug.add_argument("--fill", type=float, default=0.0)
    aug.add_argument("--cutout-side", type=int, default=None)
    aug.add_argument("--seed", type=int, default=0)
    aug.add_argument("--out", required=True)
    aug.set_defaults(func=cmd_augment, subcommand="augment")

    tr = subs.add_parser("train", help="fine-tune the built-in MLP")
    add_dataset_flags(tr)
    add_patch_flags(tr)
    tr.add_argument("--strategy", choices=STRATEGY_NAMES, default="none")
    tr.add_argument("--epochs", type=int, default=10)
    tr.add_argument("--lr", type=float, default=0.01)
    tr.add_argument("--momentum", type=float, default=0.9)
    tr.add_argument("--batch", type=int, default=16)
    tr.add_argument("--hidden", type=int, default=64)
    tr.add_argument("--fill", type=float, default=0.0)
    tr.add_argument("--cutout-side", type=int, default=None)
    tr.add_argument("--include-clean", action="store_true")
    tr.add_argument("--frozen-reference", action="store_true",
                    help="select masks with the initial weights (ablation)")
    tr.add_argument("--seed", type=int, default=0)
    tr.add_argument("--out", required=True, help="model checkpoint path")
    tr.add_argument("--log", default=None, help="per-epoch CSV log")
    tr.set_defaults(func=cmd_train, subcommand="train")

    cert = subs.add_parser("certify", help="defended inference + certification CSV")
    add_dataset_flags(cert)
    add_patch_flags(cert)
    cert.add_argument("--model", default=None)
    cert.add_argument("--hidden", type=int, default=64)
    cert.add_argument("--k", type=int, default=3)
    cert.add_argument("--fill", type=float, default=0.0)
    cert.add_argument("--seed", type=int, default=0)
    cert.add_argument("--threads", type=int, default=1)
    cert.add_argument("--out", required=True)
    cert.set_defaults(func=cmd_certify, subcommand="certify")

    atk = subs.add_parser("attack-sim", help="exhaustive patch-attack soundness check")
    add_dataset_flags(atk)
    add_patch_flags(atk)
    atk.add_argument("--model", default=None)
    atk.add_argument("--hidden", type=int, default=64)
    atk.add_argument("--k", type=int, default=3)
    atk.add_argument("--fill", type=float, default=0.0)
    atk.add_argument("--random-fills", type=int, default=8)
    atk.add_argument("--seed", type=int, default=0)
    atk.add_argument("--threads", type=int, default=1)
    atk.add_argument("--out", required=True)
    atk.set_defaults(func=cmd_attack_sim, subcommand="attack-sim")

    rep = subs.add_parser("report", help="strategy comparison table from run outputs")
    rep.add_argument("runs", nargs="+",
                     help="label=trainlog.csv:certify.csv entries")
    rep.add_argument("--out", default=None, help="write Markdown table")
    rep.set_defaults(func=cmd_report, subcommand="report")

    replay = subs.add_parser("replay", help="re-run a saved manifest")
    replay.add_argument("--manifest", required=True)
    replay.add_argument("--threads", type=int, default=None)
    replay.add_argument("--out", default=None)
    replay.set_defaults(func=cmd_replay, subcommand="replay")

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (InfeasibleMaskConfigError, DatasetFormatError) as err:
        print(f"error: {err}", file=sys.stderr)
        return DOMAIN_ERROR
    except (ValueError, FileNotFoundError, KeyError) as err:
        print(f"error: {err}", file=sys.stderr)
        return DOMAIN_ERROR


if __name__ == "__main__":
    sys.exit(main())
