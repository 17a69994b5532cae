"""Command-line entry point.

Subcommands: gen-synthetic | build-masks | caption | train-toy | tryon |
evaluate. Configuration comes from documented defaults, an optional JSON
config file, and per-key flags (flags win). Every run writes a manifest
(config fingerprint, versions, seed, output digests) beside its outputs;
manifests carry no timestamps, so identical config + seed reproduces them
byte for byte.

Exit codes: 0 success, 1 usage or config error, 2 module error.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import platform
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
import torch

from . import __version__
from .captioning import (
    Exemplar,
    ExemplarSet,
    HTTPLMMClient,
    MockLMMClient,
    build_icl_request,
    caption_image,
    default_schema,
    render_main_prompt,
)
from .config import RunConfig, config_from_sources
from .data import (
    CaptionRecord,
    cache_captions,
    index_dataset,
    load_sample,
    lookup_captions,
    save_image_rgb,
    save_mask_png,
)
from .diffusion import (
    HashTextEncoder,
    PatchCodec,
    make_schedule,
    make_unet_pair,
    train_loop,
)
from .diffusion.checkpoint import load_model_pair, save_model_pair
from .diffusion.training import prepare_example
from .errors import ConfigError, TryOnError
from .evaluation import (
    AlignmentTask,
    MetricReport,
    alignment_accuracy,
    base_ratio,
    ssim,
)
from .labels import GARMENT_CLASS, PARSE_LABELS
from .masks import build_coarse_mask, build_fine_mask, square_element
from .pmg import PMGConfig, ThresholdSegmenter, TryOnPipeline
from .synthetic import generate_dataset


# ---------------------------------------------------------------------------
# wiring helpers
# ---------------------------------------------------------------------------

def _make_client(cfg: RunConfig, fixture_dir: Path | None = None):
    if cfg.lmm_mode == "http":
        if not cfg.lmm_endpoint:
            raise ConfigError("lmm_endpoint: required when lmm_mode is http")
        return HTTPLMMClient(cfg.lmm_endpoint, cfg.lmm_model_id,
                             api_key_env=cfg.lmm_api_key_env)
    return MockLMMClient(fixture_dir=fixture_dir, model_id=cfg.lmm_model_id)


def _gt_dir(cfg: RunConfig, split: str) -> Path:
    return Path(cfg.dataset_root) / split / "captions-gt"


def _load_exemplars(cfg: RunConfig, subject: str, schema) -> ExemplarSet:
    """Human-labeled exemplars come from the train split's ground truth."""
    gt = _gt_dir(cfg, "train")
    stems = sorted(p.name[: -len(f"_{subject}.json")]
                   for p in gt.glob(f"*_{subject}.json"))[: cfg.exemplar_count]
    if not stems:
        raise TryOnError(f"no exemplar labels under {gt}")
    exemplars = []
    for stem in stems:
        captions = json.loads((gt / f"{stem}_{subject}.json").read_text(encoding="utf-8"))
        record = CaptionRecord(stem, subject, captions, lmm_model_id="human")
        image = Path(cfg.dataset_root) / "train" / ("image" if subject == "person" else "cloth")
        exemplars.append(Exemplar(str(image / f"{stem}.png"), record))
    return ExemplarSet(tuple(exemplars))


def _caption_one(cfg: RunConfig, client, subject: str, image_ref) -> CaptionRecord:
    schema = default_schema(subject, cfg.category)
    request = build_icl_request(schema, _load_exemplars(cfg, subject, schema), image_ref)
    return caption_image(client, request, retries=cfg.caption_retries)


def _prompts_for(cfg: RunConfig, client, index, entry_idx, sample, overrides=None):
    person_id, clothing_id = index.entries[entry_idx]
    base = index.base
    store = Path(cfg.output_dir) / "captions.ndjson"
    person = lookup_captions(person_id, "person", store) if store.exists() else None
    clothing = lookup_captions(clothing_id, "clothing", store) if store.exists() else None
    if person is None:
        person = _caption_one(cfg, client, "person", str(base / "image" / f"{person_id}.png"))
    if clothing is None:
        clothing = _caption_one(cfg, client, "clothing", str(base / "cloth" / f"{clothing_id}.png"))
    return render_main_prompt(person, clothing,
                              default_schema("person", cfg.category),
                              default_schema("clothing", cfg.category),
                              overrides=overrides)


def _build_pipeline(cfg: RunConfig) -> TryOnPipeline:
    codec = PatchCodec(cfg.latent_factor, cfg.latent_channels)
    schedule = make_schedule(cfg.schedule_T, cfg.beta_start, cfg.beta_end)
    if cfg.checkpoint:
        main, reference, _ = load_model_pair(cfg.checkpoint)
    else:
        main, reference = make_unet_pair(cfg.latent_channels, cfg.base_channels,
                                         cfg.text_dim, cfg.head_dim, seed=cfg.seed)
    segmenter = ThresholdSegmenter(PARSE_LABELS[GARMENT_CLASS[cfg.category]])
    return TryOnPipeline(main, reference, schedule, codec,
                         HashTextEncoder(cfg.text_dim), segmenter)


def _sha256_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_manifest(out_dir: Path, command: str, cfg: RunConfig,
                    outputs: list[Path], extra: dict | None = None) -> Path:
    manifest = {
        "command": command,
        "config": cfg.to_dict(),
        "config_fingerprint": cfg.fingerprint(),
        "seed": cfg.seed,
        "versions": {
            "tryonlab": __version__,
            "numpy": np.__version__,
            "torch": torch.__version__,
            "python": platform.python_version(),
        },
        "outputs": {str(p.relative_to(out_dir)): _sha256_file(p) for p in sorted(outputs)},
        "stats": extra or {},
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, sort_keys=True, indent=1), encoding="utf-8")
    return path


def _parse_overrides(pairs: list[str]) -> dict[str, str]:
    overrides = {}
    for item in pairs or []:
        if "=" not in item:
            raise ConfigError(f"override: expected attribute=caption, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.replace("_", " ").strip()] = value.strip()
    return overrides


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_gen_synthetic(cfg: RunConfig, args) -> int:
    root = Path(cfg.dataset_root)
    generate_dataset(root, cfg.n_train, cfg.n_test, cfg.category,
                     (cfg.image_height, cfg.image_width), cfg.seed)
    outputs = sorted(p for p in root.rglob("*") if p.is_file())
    manifest = {
        "command": "gen-synthetic",
        "config": cfg.to_dict(),
        "config_fingerprint": cfg.fingerprint(),
        "seed": cfg.seed,
        "n_files": len(outputs),
    }
    (root / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=1),
                                        encoding="utf-8")
    print(f"wrote synthetic dataset with {len(outputs)} files under {root}")
    return 0


def cmd_build_masks(cfg: RunConfig, args) -> int:
    index = index_dataset(cfg.dataset_root, cfg.split, cfg.pairing)
    out_dir = Path(cfg.output_dir)
    (out_dir / "masks").mkdir(parents=True, exist_ok=True)

    def one(entry_idx: int) -> list[Path]:
        sample = load_sample(index, entry_idx)
        person_id, _ = index.entries[entry_idx]
        fine_path = out_dir / "masks" / f"{person_id}_fine.png"
        coarse_path = out_dir / "masks" / f"{person_id}_coarse.png"
        save_mask_png(fine_path, build_fine_mask(sample))
        save_mask_png(coarse_path, build_coarse_mask(sample))
        return [fine_path, coarse_path]

    outputs: list[Path] = []
    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            for paths in pool.map(one, range(len(index))):
                outputs.extend(paths)
    else:
        for entry_idx in range(len(index)):
            outputs.extend(one(entry_idx))
    _write_manifest(out_dir, "build-masks", cfg, outputs,
                    {"entries": len(index)})
    print(f"wrote {len(outputs)} masks for {len(index)} entries under {out_dir}")
    return 0


def cmd_caption(cfg: RunConfig, args) -> int:
    index = index_dataset(cfg.dataset_root, cfg.split, cfg.pairing)
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    store = out_dir / "captions.ndjson"
    client = _make_client(cfg, fixture_dir=_gt_dir(cfg, cfg.split))
    base = index.base

    jobs = []
    seen = set()
    for person_id, clothing_id in index.entries:
        if ("person", person_id) not in seen:
            jobs.append(("person", person_id, base / "image" / f"{person_id}.png"))
            seen.add(("person", person_id))
        if ("clothing", clothing_id) not in seen:
            jobs.append(("clothing", clothing_id, base / "cloth" / f"{clothing_id}.png"))
            seen.add(("clothing", clothing_id))

    def one(job) -> CaptionRecord:
        subject, _, image = job
        return _caption_one(cfg, client, subject, str(image))

    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=min(cfg.workers, cfg.max_in_flight)) as pool:
            records = list(pool.map(one, jobs))
    else:
        records = [one(job) for job in jobs]
    for record in records:
        cache_captions(record, store)
    _write_manifest(out_dir, "caption", cfg, [store], {"records": len(records)})
    print(f"cached {len(records)} caption records in {store}")
    return 0


def cmd_train_toy(cfg: RunConfig, args) -> int:
    index = index_dataset(cfg.dataset_root, "train", "paired")
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    client = _make_client(cfg, fixture_dir=_gt_dir(cfg, "train"))
    codec = PatchCodec(cfg.latent_factor, cfg.latent_channels)
    schedule = make_schedule(cfg.schedule_T, cfg.beta_start, cfg.beta_end)
    main, reference = make_unet_pair(cfg.latent_channels, cfg.base_channels,
                                     cfg.text_dim, cfg.head_dim, seed=cfg.seed)
    encoder = HashTextEncoder(cfg.text_dim)

    examples = []
    for entry_idx in range(len(index)):
        sample = load_sample(index, entry_idx)
        prompts = _prompts_for(cfg, client, index, entry_idx, sample)
        examples.append(prepare_example(sample, prompts, codec))

    losses = train_loop(
        main, reference, schedule, encoder, examples,
        steps=cfg.train_steps, factor=cfg.latent_factor,
        batch_size=cfg.batch_size, optimizer_name=cfg.optimizer,
        lr=cfg.learning_rate, element=square_element(cfg.element_radius),
        n_max=cfg.effective_n_max(), seed=cfg.seed)

    ckpt = out_dir / "model.ckpt"
    save_model_pair(ckpt, main, reference, {
        "latent_channels": cfg.latent_channels, "base_channels": cfg.base_channels,
        "text_dim": cfg.text_dim, "head_dim": cfg.head_dim,
        "latent_factor": cfg.latent_factor, "schedule_T": cfg.schedule_T,
        "beta_start": cfg.beta_start, "beta_end": cfg.beta_end, "seed": cfg.seed,
    })
    losses_path = out_dir / "losses.json"
    losses_path.write_text(json.dumps(losses), encoding="utf-8")
    _write_manifest(out_dir, "train-toy", cfg, [ckpt, losses_path], {
        "train_steps": cfg.train_steps,
        "initial_loss": losses[0], "final_loss": losses[-1],
    })
    print(f"trained {cfg.train_steps} steps, loss {losses[0]:.4f} -> {losses[-1]:.4f}, "
          f"checkpoint at {ckpt}")
    return 0


def cmd_tryon(cfg: RunConfig, args) -> int:
    index = index_dataset(cfg.dataset_root, cfg.split, cfg.pairing)
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entry_idx = args.entry
    sample = load_sample(index, entry_idx)
    client = _make_client(cfg, fixture_dir=_gt_dir(cfg, cfg.split))
    overrides = _parse_overrides(args.override)
    prompts = _prompts_for(cfg, client, index, entry_idx, sample, overrides or None)
    pipeline = _build_pipeline(cfg)
    config = PMGConfig(sigma=cfg.sigma, steps=cfg.steps, composit=cfg.composit)

    person_id, clothing_id = index.entries[entry_idx]
    stem = f"{person_id}_{clothing_id}"
    outputs = []
    if args.pmg:
        result = pipeline.generate(sample, prompts, config, seed=cfg.seed)
        out_img = out_dir / f"{stem}_tryon.png"
        save_image_rgb(out_img, result.output)
        mask_path = out_dir / f"{stem}_refined_mask.png"
        save_mask_png(mask_path, result.refined_mask)
        outputs += [out_img, mask_path]
        stats = {"coarse_pass_steps": result.coarse_calls,
                 "final_pass_steps": result.final_calls,
                 "total_denoiser_calls": result.total_calls,
                 "prompt": prompts.main_prompt}
    else:
        # non-PMG baseline: one full-length pass under the fine mask
        raster, run = pipeline.inpaint(sample, build_fine_mask(sample), prompts,
                                       steps=cfg.steps, composit=cfg.composit,
                                       seed=cfg.seed)
        out_img = out_dir / f"{stem}_tryon.png"
        save_image_rgb(out_img, raster)
        outputs.append(out_img)
        stats = {"final_pass_steps": run.denoiser_calls,
                 "prompt": prompts.main_prompt}
    _write_manifest(out_dir, "tryon", cfg, outputs, stats)
    print(f"wrote {outputs[0]}")
    return 0


def cmd_evaluate(cfg: RunConfig, args) -> int:
    index = index_dataset(cfg.dataset_root, cfg.split, cfg.pairing)
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    client = _make_client(cfg, fixture_dir=_gt_dir(cfg, cfg.split))
    pipeline = _build_pipeline(cfg)
    config = PMGConfig(sigma=cfg.sigma, steps=cfg.steps, composit=cfg.composit)

    def generator(sample, overrides):
        entry_idx = next(i for i, (p, _) in enumerate(index.entries)
                         if p == sample.sample_id.split("+")[0])
        prompts = _prompts_for(cfg, client, index, entry_idx, sample, overrides)
        return pipeline.generate(sample, prompts, config, seed=cfg.seed).output

    metrics: dict = {}
    recon_scores = []
    for entry_idx in range(len(index)):
        sample = load_sample(index, entry_idx)
        prompts = _prompts_for(cfg, client, index, entry_idx, sample)
        result = pipeline.generate(sample, prompts, config, seed=cfg.seed)
        recon_scores.append(ssim(result.output, sample.person_image))
    metrics["ssim_mean"] = float(np.mean(recon_scores))

    if args.attribute:
        attribute = args.attribute.replace("_", " ")
        schema = default_schema("person", cfg.category)
        exemplars = _load_exemplars(cfg, "person", schema)

        def judge(raster: np.ndarray) -> str:
            request = build_icl_request(schema, exemplars, raster)
            record = caption_image(client, request, retries=cfg.caption_retries)
            return record.captions[attribute]

        unedited = []
        for entry_idx in range(len(index)):
            sample = load_sample(index, entry_idx)
            unedited.append(judge(sample.person_image))
        metrics["base_ratio"] = base_ratio(unedited, args.target)
        task = AlignmentTask(attribute, args.target, index, judge)
        metrics["alignment_accuracy"] = alignment_accuracy(task, generator)

    report = MetricReport(metrics, len(index), cfg.fingerprint())
    report_path = out_dir / "report.json"
    report_path.write_text(report.to_json(), encoding="utf-8")
    csv_path = out_dir / "report.csv"
    csv_path.write_text(report.to_csv(), encoding="utf-8")
    _write_manifest(out_dir, "evaluate", cfg, [report_path, csv_path], metrics)
    print(report.to_json())
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    for field in dataclasses.fields(RunConfig):
        parser.add_argument(f"--{field.name.replace('_', '-')}",
                            dest=field.name, default=None, metavar="V",
                            help=f"override config key {field.name}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tryonlab",
        description="Desk-scale text-editable virtual try-on toolkit")
    sub = parser.add_subparsers(dest="command")
    specs = [
        ("gen-synthetic", cmd_gen_synthetic, "write a procedural dataset tree"),
        ("build-masks", cmd_build_masks, "batch-produce fine/coarse masks"),
        ("caption", cmd_caption, "caption persons and garments into the cache"),
        ("train-toy", cmd_train_toy, "train the toy inpainting model"),
        ("tryon", cmd_tryon, "generate one try-on result"),
        ("evaluate", cmd_evaluate, "run the metric suite over a split"),
    ]
    for name, func, help_text in specs:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", default=None, help="JSON config file")
        _add_config_flags(p)
        if name == "tryon":
            p.add_argument("--entry", type=int, default=0, help="index entry to run")
            p.add_argument("--pmg", action="store_true",
                           help="use prompt-aware mask generation")
            p.add_argument("--override", action="append", metavar="ATTR=CAPTION",
                           help="caption override, e.g. tucking_style=untucked")
        if name == "evaluate":
            p.add_argument("--attribute", default=None,
                           help="attribute for the alignment protocol")
            p.add_argument("--target", default=None,
                           help="target caption for the alignment protocol")
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    if getattr(args, "func", None) is None:
        parser.print_help()
        return 1
    overrides = {f.name: getattr(args, f.name)
                 for f in dataclasses.fields(RunConfig)
                 if getattr(args, f.name, None) is not None}
    try:
        cfg = config_from_sources(args.config, overrides)
        return args.func(cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except TryOnError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
