"""Command-line interface.

Subcommands: generate-data, train, eval, retrieve, predict-attributes,
export-embeddings. Global flags --config/--seed/--out/--force apply where
meaningful; any extra ``--section.field value`` pair is a dotted-path config
override (e.g. ``--model.shared_tokens 8``). Exit codes: 0 ok, 2 config
error, 3 data error, 4 numeric abort.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from pathlib import Path

from .checkpoint import load_checkpoint
from .config import (
    TrainConfig,
    apply_overrides,
    configs_from_document,
    load_config_document,
)
from .data import load_split
from .errors import ConfigError, DataError, NumericError
from .metrics import attribute_accuracy, predict_attribute_labels
from .synthetic import GenSpec, generate_dataset
from .train import (
    PROTOCOLS,
    apply_preset,
    encode_split,
    evaluate,
    load_dataset_info,
    rank_list_rows,
    train,
)

log = logging.getLogger("agreid")

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


def _collect_overrides(extras: list[str]) -> list[str]:
    """Turn leftover ``--a.b v`` / ``--a.b=v`` args into a.b=v override strings."""
    overrides = []
    i = 0
    while i < len(extras):
        arg = extras[i]
        if not arg.startswith("--") or "." not in arg.split("=", 1)[0]:
            raise ConfigError(f"unrecognized argument {arg!r}")
        body = arg[2:]
        if "=" in body:
            overrides.append(body)
            i += 1
        else:
            if i + 1 >= len(extras):
                raise ConfigError(f"override {arg!r} is missing a value")
            overrides.append(f"{body}={extras[i + 1]}")
            i += 2
    return overrides


def _refuse_overwrite(path: Path, force: bool) -> None:
    if path.exists() and not force:
        raise ConfigError(f"{path} exists; pass --force to overwrite")


def _load_configs(args, extras):
    overrides = _collect_overrides(extras)
    doc = load_config_document(args.config, overrides)
    model_cfg, train_cfg = configs_from_document(doc)
    if args.seed is not None:
        train_cfg = dataclasses.replace(train_cfg, seed=args.seed)
    if getattr(args, "preset", None):
        train_cfg = dataclasses.replace(train_cfg, preset=args.preset)
    model_cfg = apply_preset(model_cfg, train_cfg.preset)
    return model_cfg, train_cfg


def cmd_generate_data(args, extras):
    if extras:
        raise ConfigError(f"unrecognized arguments {extras}")
    if args.spec is not None:
        spec_path = Path(args.spec)
        if not spec_path.exists():
            raise DataError(f"spec file not found: {spec_path}")
        spec = GenSpec.from_dict(json.loads(spec_path.read_text()))
    else:
        spec = GenSpec()
    if args.seed is not None:
        spec = dataclasses.replace(spec, seed=args.seed)
    out = Path(args.out)
    _refuse_overwrite(out / "train.jsonl", args.force)
    paths = generate_dataset(spec, out)
    log.info("wrote %d manifests under %s", len(paths), out)
    return 0


def cmd_train(args, extras):
    model_cfg, train_cfg = _load_configs(args, extras)
    out = Path(args.out)
    _refuse_overwrite(out / "checkpoint.npz", args.force)
    ckpt = train(
        model_cfg,
        train_cfg,
        args.data,
        out,
        resume=args.resume,
        drop_attributes=args.drop_attributes,
    )
    log.info("checkpoint written to %s", ckpt)
    return 0


def _protocols(arg: str) -> list[str]:
    if arg == "both":
        return list(PROTOCOLS)
    if arg not in PROTOCOLS:
        raise ConfigError(f"protocol must be one of {PROTOCOLS + ('both',)}")
    return [arg]


def cmd_eval(args, extras):
    if extras:
        raise ConfigError(f"unrecognized arguments {extras}")
    ckpt = load_checkpoint(args.checkpoint)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for protocol in _protocols(args.protocol):
        path = out / f"metrics_{protocol}.json"
        _refuse_overwrite(path, args.force)
        report = evaluate(
            ckpt,
            args.data,
            protocol,
            max_rank=args.rank,
            drop_attributes=args.drop_attributes,
        )
        path.write_text(report.to_json() + "\n")
        log.info(
            "%s: mAP=%.4f rank1=%.4f (%d queries, %d skipped)",
            protocol,
            report.mean_ap,
            report.cmc[0],
            report.n_queries_evaluated,
            report.n_queries_skipped,
        )
    return 0


def cmd_retrieve(args, extras):
    if extras:
        raise ConfigError(f"unrecognized arguments {extras}")
    ckpt = load_checkpoint(args.checkpoint)
    out = Path(args.out)
    _refuse_overwrite(out, args.force)
    rows = rank_list_rows(ckpt, args.data, args.protocol, top_k=args.rank)
    with out.open("w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["query_id", "rank", "gallery_id", "distance", "is_match"])
        writer.writerows(rows)
    log.info("wrote %d rank-list rows to %s", len(rows), out)
    return 0


def _manifest_split(ckpt, data_dir, manifest):
    path = Path(manifest)
    if not path.is_absolute():
        path = Path(data_dir) / path
    return load_split(
        path,
        data_dir,
        ckpt.schema,
        ckpt.views,
        expected_size=ckpt.model_cfg.image_size,
    )


def cmd_predict_attributes(args, extras):
    if extras:
        raise ConfigError(f"unrecognized arguments {extras}")
    ckpt = load_checkpoint(args.checkpoint)
    if ckpt.model.attributes is None:
        raise ConfigError("this checkpoint has no attribute heads")
    split = _manifest_split(ckpt, args.data, args.manifest)
    feats = encode_split(ckpt.model, split)
    pred = predict_attribute_labels(feats["attr_logits"])
    out = Path(args.out)
    _refuse_overwrite(out, args.force)
    names = [name for name, _ in ckpt.schema.categories]
    records = []
    for i, sample in enumerate(split.samples):
        records.append(
            {
                "image_path": sample.image_path,
                "id": sample.identity,
                "predictions": {names[t]: int(pred[i, t]) for t in range(len(names))},
            }
        )
    payload = {"records": records}
    if split.attributes is not None:
        acc = attribute_accuracy(pred, split.attributes)
        payload["accuracy"] = {names[t]: float(acc[t]) for t in range(len(names))}
    out.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    log.info("wrote attribute predictions for %d images to %s", len(records), out)
    return 0


def cmd_export_embeddings(args, extras):
    if extras:
        raise ConfigError(f"unrecognized arguments {extras}")
    ckpt = load_checkpoint(args.checkpoint)
    split = _manifest_split(ckpt, args.data, args.manifest)
    feats = encode_split(ckpt.model, split)
    out = Path(args.out)
    _refuse_overwrite(out, args.force)
    emb = feats["retrieval"]
    with out.open("w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(
            ["image_path", "id", "view", "camera"]
            + [f"f{j}" for j in range(emb.shape[1])]
        )
        for i, sample in enumerate(split.samples):
            writer.writerow(
                [sample.image_path, sample.identity, sample.view_id, sample.camera_id]
                + [repr(float(v)) for v in emb[i]]
            )
    log.info("wrote %d embeddings to %s", len(split.samples), out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="agreid",
        description="Synthetic aerial-ground re-identification workbench",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_required=True):
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--force", action="store_true")
        p.add_argument("--out", required=out_required)

    p = sub.add_parser("generate-data", help="render a synthetic dataset")
    p.add_argument("--spec", default=None, help="GenSpec JSON file")
    common(p)
    p.set_defaults(func=cmd_generate_data)

    p = sub.add_parser("train", help="train a model on a dataset directory")
    p.add_argument("--data", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--preset", default=None, help="ablation preset tag")
    p.add_argument("--resume", default=None, help="checkpoint to resume from")
    p.add_argument(
        "--drop-attributes",
        action="store_true",
        help="ignore attribute labels (attribute-free training)",
    )
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score retrieval protocols for a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--protocol", default="both", help="A2G, G2A or both")
    p.add_argument("--rank", type=int, default=10)
    p.add_argument("--drop-attributes", action="store_true")
    common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("retrieve", help="export per-query rank lists as CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--protocol", default="A2G")
    p.add_argument("--rank", type=int, default=10)
    common(p)
    p.set_defaults(func=cmd_retrieve)

    p = sub.add_parser("predict-attributes", help="per-image attribute predictions")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--manifest", required=True)
    common(p)
    p.set_defaults(func=cmd_predict_attributes)

    p = sub.add_parser("export-embeddings", help="CSV of features and labels")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--manifest", required=True)
    common(p)
    p.set_defaults(func=cmd_export_embeddings)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    parser = build_parser()
    args, extras = parser.parse_known_args(argv)
    try:
        return args.func(args, extras)
    except ConfigError as e:
        log.error("config error: %s", e)
        return EXIT_CONFIG
    except DataError as e:
        log.error("data error: %s", e)
        return EXIT_DATA
    except NumericError as e:
        log.error("numeric abort: %s", e)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
