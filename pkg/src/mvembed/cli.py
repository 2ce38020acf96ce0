"""Command line pipeline: synth -> render -> select -> train -> embed -> evaluate."""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from . import dataset, geometry, metrics, models, renderer, retrieval, view_select

# Every run-config key, its type, and its desk-preset default. Unknown keys
# in a config file are rejected.
SCHEMA: dict[str, tuple[type, object]] = {
    "n_views": (int, 30),
    "resolution": (int, 64),
    "elevation": (float, 30.0),
    "perturbed": (bool, False),
    "base_channels": (int, 8),
    "bottleneck_dim": (int, 128),
    "batch_size": (int, 1),
    "iterations_ae": (int, 2000),
    "iterations_cls": (int, 1000),
    "seed": (int, 0),
    "lr": (float, 1e-3),
    "lr_schedule": (str, "cosine"),
    "warmup": (float, 0.05),
    "avg_tail": (float, 0.25),
    "lam": (float, 5.0),
    "classes": (str, ",".join(dataset.PRIMITIVES)),
    "per_class": (int, 20),
    "scale_lo": (float, 0.45),
    "scale_hi": (float, 1.0),
    "noise": (float, 0.02),
    "tilt": (float, 90.0),
    "train_ratio": (float, 0.7),
    "val_ratio": (float, 0.1),
    "test_ratio": (float, 0.2),
    "eval_scope": (str, "test"),
}

PAPER_OVERRIDES = {
    "base_channels": 64,
    "batch_size": 100,
    "iterations_ae": 50_000,
    "iterations_cls": 20_000,
    "lr": 1e-4,
    "lr_schedule": "constant",
    "warmup": 0.0,
    "avg_tail": 0.0,
    "lam": 1.0,
}

KIND_ALIASES = {
    "ae": models.AUTOENCODER,
    "cls": models.CLASSIFICATION,
    "combined": models.COMBINED,
}


class ConfigError(ValueError):
    pass


def _coerce(key: str, raw: str):
    typ, _ = SCHEMA[key]
    if typ is bool:
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"{key}: bad boolean {raw!r}")
    try:
        return typ(raw)
    except ValueError:
        raise ConfigError(f"{key}: expected {typ.__name__}, got {raw!r}") from None


def load_config(path: str | None, preset: str, overrides: dict) -> dict:
    cfg = {k: d for k, (_, d) in SCHEMA.items()}
    if preset == "paper-faithful":
        cfg.update(PAPER_OVERRIDES)
    if path:
        for line_no, line in enumerate(Path(path).read_text().splitlines(), 1):
            line = line.split("#")[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{line_no}: expected key=value")
            key, _, raw = line.partition("=")
            key = key.strip()
            if key not in SCHEMA:
                raise ConfigError(f"{path}:{line_no}: unknown key {key!r}")
            cfg[key] = _coerce(key, raw.strip())
    for key, val in overrides.items():
        if val is not None:
            cfg[key] = val
    return cfg


def echo_config(cfg: dict, run_dir: Path, stage: str) -> None:
    lines = [f"{k}={cfg[k]}" for k in sorted(cfg)]
    (run_dir / f"config_{stage}.txt").write_text("\n".join(lines) + "\n")


def _layout(run_dir: Path) -> dict[str, Path]:
    dirs = {
        "meshes": run_dir / "meshes",
        "views": run_dir / "views",
        "checkpoints": run_dir / "checkpoints",
        "embeddings": run_dir / "embeddings",
        "reports": run_dir / "reports",
    }
    for d in dirs.values():
        d.mkdir(parents=True, exist_ok=True)
    return dirs


def _stack_dir(run_dir: Path, k: int) -> Path:
    d = run_dir / f"stacks_k{k}"
    d.mkdir(parents=True, exist_ok=True)
    return d


def _manifest_path(run_dir: Path) -> Path:
    return run_dir / "manifest.csv"


def _load_entries(run_dir: Path) -> list[dataset.ManifestEntry]:
    path = _manifest_path(run_dir)
    if not path.exists():
        raise ConfigError(f"missing manifest {path}; run `synth` first")
    return dataset.load_manifest(path)


# -- stages -------------------------------------------------------------------

def stage_synth(cfg: dict, run_dir: Path) -> None:
    dirs = _layout(run_dir)
    spec = dataset.SynthSpec(
        classes=tuple(cfg["classes"].split(",")),
        per_class=cfg["per_class"],
        seed=cfg["seed"],
        scale_range=(cfg["scale_lo"], cfg["scale_hi"]),
        noise=cfg["noise"],
        tilt=cfg["tilt"],
    )
    entries = dataset.generate_synthetic(spec, dirs["meshes"])
    entries = dataset.split_dataset(
        entries, (cfg["train_ratio"], cfg["val_ratio"], cfg["test_ratio"]), cfg["seed"]
    )
    dataset.write_manifest(entries, _manifest_path(run_dir))
    echo_config(cfg, run_dir, "synth")
    print(f"synth: {len(entries)} meshes in {dirs['meshes']}")


def stage_render(cfg: dict, run_dir: Path) -> None:
    dirs = _layout(run_dir)
    entries = _load_entries(run_dir)
    for e in entries:
        mesh = geometry.normalize_mesh(geometry.parse_obj(Path(e.mesh_path).read_text()))
        if cfg["perturbed"]:
            mesh = geometry.perturb_mesh(
                mesh, view_select.stack_seed(e.model_id, cfg["seed"])
            )
        vs = renderer.render_turntable(
            mesh, e.model_id, cfg["n_views"], cfg["resolution"], cfg["elevation"]
        )
        for i, view in enumerate(vs.views):
            renderer.write_pgm(view, dirs["views"] / renderer.view_filename(e.model_id, i))
    echo_config(cfg, run_dir, "render")
    print(f"render: {len(entries)} models x {cfg['n_views']} views")


def _load_viewset(run_dir: Path, model_id: str, cfg: dict) -> renderer.ViewSet:
    step = 360.0 / cfg["n_views"]
    views = []
    for i in range(cfg["n_views"]):
        path = run_dir / "views" / renderer.view_filename(model_id, i)
        if not path.exists():
            raise ConfigError(f"missing view {path}; run `render` first")
        views.append(renderer.read_pgm(path, azimuth=i * step))
    return renderer.ViewSet(model_id, tuple(views))


def stage_select(cfg: dict, run_dir: Path, k: int) -> None:
    entries = _load_entries(run_dir)
    out = _stack_dir(run_dir, k)
    for e in entries:
        vs = _load_viewset(run_dir, e.model_id, cfg)
        stack = view_select.select_representatives(vs, k, cfg["seed"])
        view_select.write_stack(stack, out / f"{e.model_id}.mvst")
    echo_config(cfg, run_dir, f"select_k{k}")
    print(f"select: k={k}, {len(entries)} stacks")


def _load_stacks(run_dir: Path, k: int, entries) -> np.ndarray:
    stacks = []
    for e in entries:
        path = _stack_dir(run_dir, k) / f"{e.model_id}.mvst"
        if not path.exists():
            raise ConfigError(f"missing stack {path}; run `select` first")
        stacks.append(view_select.read_stack(path, e.model_id).channels)
    return np.stack(stacks)


def _label_map(entries) -> dict[str, int]:
    return {c: i for i, c in enumerate(sorted({e.class_label for e in entries}))}


def _configs(cfg: dict, kind: str, k: int, seed: int):
    enc_cfg = models.EncoderConfig(
        in_channels=k,
        resolution=cfg["resolution"],
        base_channels=cfg["base_channels"],
        bottleneck_dim=cfg["bottleneck_dim"],
    )
    iters = (
        cfg["iterations_cls"] if kind == models.CLASSIFICATION else cfg["iterations_ae"]
    )
    train_cfg = models.TrainConfig(
        iterations=iters,
        batch_size=cfg["batch_size"],
        seed=seed,
        lr=cfg["lr"],
        lr_schedule=cfg["lr_schedule"],
        warmup=cfg["warmup"],
        avg_tail=cfg["avg_tail"],
        lam=cfg["lam"],
    )
    return enc_cfg, train_cfg


def _ckpt_base(run_dir: Path, kind: str, k: int) -> Path:
    return run_dir / "checkpoints" / f"{kind}_k{k}"


def stage_train(cfg: dict, run_dir: Path, kind: str, k: int) -> models.TrainedModel:
    entries = [e for e in _load_entries(run_dir) if e.split == "train"]
    stacks = _load_stacks(run_dir, k, entries)
    lmap = _label_map(_load_entries(run_dir))
    labels = np.array([lmap[e.class_label] for e in entries])
    enc_cfg, train_cfg = _configs(cfg, kind, k, cfg["seed"])
    t0 = time.time()
    model = models.train(kind, stacks, labels, train_cfg, enc_cfg, len(lmap))
    base = _ckpt_base(run_dir, kind, k)
    models.save_model(model, base.with_suffix(".mvnn"))
    with open(base.with_suffix(".loss.csv"), "w") as f:
        if model.accuracy_curve:
            f.write("iteration,loss,accuracy\n")
            for i, (l, a) in enumerate(zip(model.loss_curve, model.accuracy_curve)):
                f.write(f"{i},{l:.9g},{a:.9g}\n")
        else:
            f.write("iteration,loss\n")
            for i, l in enumerate(model.loss_curve):
                f.write(f"{i},{l:.9g}\n")
    sidecar = {
        "kind": kind, "k": k, "iterations": train_cfg.iterations,
        "batch_size": train_cfg.batch_size, "seed": train_cfg.seed,
        "lr": train_cfg.lr, "lam": train_cfg.lam,
        "base_channels": enc_cfg.base_channels,
        "bottleneck_dim": enc_cfg.bottleneck_dim,
        "resolution": enc_cfg.resolution,
    }
    base.with_suffix(".config.txt").write_text(
        "\n".join(f"{key}={val}" for key, val in sidecar.items()) + "\n"
    )
    echo_config(cfg, run_dir, f"train_{kind}_k{k}")
    print(
        f"train: {kind} k={k} final_loss={model.loss_curve[-1]:.4g} "
        f"({time.time() - t0:.0f}s)"
    )
    return model


def stage_embed(cfg: dict, run_dir: Path, kind: str, k: int) -> retrieval.EmbeddingIndex:
    entries = _load_entries(run_dir)
    enc_cfg, train_cfg = _configs(cfg, kind, k, cfg["seed"])
    lmap = _label_map(entries)
    ckpt = _ckpt_base(run_dir, kind, k).with_suffix(".mvnn")
    if not ckpt.exists():
        raise ConfigError(f"missing checkpoint {ckpt}; run `train` first")
    model = models.load_model(ckpt, kind, enc_cfg, train_cfg, len(lmap))
    stacks = _load_stacks(run_dir, k, entries)
    vectors = models.embed_many(model, stacks)
    index = retrieval.EmbeddingIndex()
    for e, vec in zip(entries, vectors):
        index.add(e.model_id, e.class_label, vec)
    retrieval.write_index(index, run_dir / "embeddings" / f"{kind}_k{k}.mvem")
    echo_config(cfg, run_dir, f"embed_{kind}_k{k}")
    print(f"embed: {kind} k={k}, {len(index)} vectors")
    return index


def stage_evaluate(cfg: dict, run_dir: Path, kind: str, k: int) -> metrics.MetricsReport:
    path = run_dir / "embeddings" / f"{kind}_k{k}.mvem"
    if not path.exists():
        raise ConfigError(f"missing embeddings {path}; run `embed` first")
    index = retrieval.read_index(path)
    entries = _load_entries(run_dir)
    if cfg["eval_scope"] == "test":
        keep = {e.model_id for e in entries if e.split == "test"}
    elif cfg["eval_scope"] == "all":
        keep = {e.model_id for e in entries}
    else:
        raise ConfigError(f"eval_scope must be test|all, got {cfg['eval_scope']!r}")
    scoped = retrieval.EmbeddingIndex()
    for i, mid in enumerate(index.ids):
        if mid in keep:
            scoped.add(mid, index.labels[i], index.vectors[i])
    rankings = [retrieval.rank_all(scoped, mid) for mid in scoped.ids]
    labels = dict(zip(scoped.ids, scoped.labels))
    result = metrics.evaluate_rankings(rankings, labels)
    retrieval.write_ranked_csv(
        rankings, run_dir / "reports" / f"ranked_{kind}_k{k}.csv"
    )
    r = result.report
    report_path = run_dir / "reports" / f"metrics_{kind}_k{k}.csv"
    with open(report_path, "w") as f:
        f.write("model,views,micro_dcg,micro_map,macro_dcg,macro_map,queries,skipped\n")
        f.write(
            f"{kind},{k},{r.micro_dcg:.9g},{r.micro_map:.9g},"
            f"{r.macro_dcg:.9g},{r.macro_map:.9g},{r.query_count},{r.skipped_queries}\n"
        )
    echo_config(cfg, run_dir, f"evaluate_{kind}_k{k}")
    print(metrics.REPORT_HEADER)
    print(metrics.format_report_row(kind, k, r))
    return r


def stage_pipeline(cfg: dict, run_dir: Path) -> dict[tuple[str, int], metrics.MetricsReport]:
    """Full grid: all stages, 3 model kinds x k in {2,3,4}."""
    stage_synth(cfg, run_dir)
    stage_render(cfg, run_dir)
    for k in (2, 3, 4):
        stage_select(cfg, run_dir, k)
    reports: dict[tuple[str, int], metrics.MetricsReport] = {}
    for kind in models.MODEL_KINDS:
        for k in (2, 3, 4):
            stage_train(cfg, run_dir, kind, k)
            stage_embed(cfg, run_dir, kind, k)
            reports[(kind, k)] = stage_evaluate(cfg, run_dir, kind, k)
    lines = [metrics.REPORT_HEADER]
    for (kind, k), r in reports.items():
        lines.append(metrics.format_report_row(kind, k, r))
    table = "\n".join(lines)
    (run_dir / "reports" / "summary.txt").write_text(table + "\n")
    echo_config(cfg, run_dir, "pipeline")
    print(table)
    return reports


# -- argument parsing ---------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mvembed",
        description="Multi-view 3D shape embedding pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, needs_k, needs_kind in [
        ("synth", False, False),
        ("render", False, False),
        ("select", True, False),
        ("train", True, True),
        ("embed", True, True),
        ("evaluate", True, True),
        ("pipeline", False, False),
    ]:
        p = sub.add_parser(name)
        p.add_argument("--out", required=True, help="run directory")
        p.add_argument("--config", help="key=value config file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument(
            "--preset", choices=["desk", "paper-faithful"], default="desk"
        )
        p.add_argument("--desk", dest="preset", action="store_const", const="desk")
        p.add_argument(
            "--paper-faithful", dest="preset", action="store_const",
            const="paper-faithful",
        )
        if name in ("render", "pipeline"):
            p.add_argument("--perturbed", action="store_true", default=None)
        if needs_k:
            p.add_argument("--k", type=int, required=True, choices=[2, 3, 4])
        if needs_kind:
            p.add_argument(
                "--kind", required=True, choices=sorted(KIND_ALIASES),
            )
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {"seed": args.seed}
    if getattr(args, "perturbed", None):
        overrides["perturbed"] = True
    try:
        cfg = load_config(args.config, args.preset, overrides)
        run_dir = Path(args.out)
        run_dir.mkdir(parents=True, exist_ok=True)
        if args.command == "synth":
            stage_synth(cfg, run_dir)
        elif args.command == "render":
            stage_render(cfg, run_dir)
        elif args.command == "select":
            stage_select(cfg, run_dir, args.k)
        elif args.command == "train":
            stage_train(cfg, run_dir, KIND_ALIASES[args.kind], args.k)
        elif args.command == "embed":
            stage_embed(cfg, run_dir, KIND_ALIASES[args.kind], args.k)
        elif args.command == "evaluate":
            stage_evaluate(cfg, run_dir, KIND_ALIASES[args.kind], args.k)
        elif args.command == "pipeline":
            stage_pipeline(cfg, run_dir)
    except (ConfigError, ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
