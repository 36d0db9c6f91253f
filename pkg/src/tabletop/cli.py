"""Command-line entry point: ``tabletop <subcommand> [options]``.

stdout carries only the primary artifact (layout JSON, report JSON or an
output path); logs go to stderr. Usage errors exit with 2, operational
failures with 1 and a JSON error ``{"code", "message", "context"}`` on
stderr. Options can come from ``--config file.json``; explicit flags win.
LLM credentials are read from the environment only (see
``tabletop.reasoner.llm``).
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import TabletopError
from .layout import LayoutScene, TableSpec, parse_layout, serialize_layout

log = logging.getLogger("tabletop")

SVG_SCALE = 500.0  # pixels per meter


# ---------------------------------------------------------------------------
# helpers


def _read_scene(path) -> LayoutScene:
    return parse_layout(Path(path).read_text())


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
        print(out)
    else:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")


def _settings(args, keys: Sequence[str]) -> dict:
    """Config file values overlaid with explicitly given flags."""
    conf = json.loads(Path(args.config).read_text()) if getattr(args, "config", None) else {}
    if not isinstance(conf, dict):
        raise ValueError("config file must hold a JSON object")
    for k in keys:
        v = getattr(args, k, None)
        if v is not None:
            conf[k] = v
    return conf


def _library(args):
    from .physics import GeometryLibrary
    return GeometryLibrary(cache_dir=args.cache_dir)


def _corrector(args, library):
    from .pipeline import identity_corrector
    if not getattr(args, "checkpoint", None):
        log.warning("no --checkpoint given: scenes are not physics-corrected")
        return identity_corrector
    from .corrector import FlowCorrector
    return FlowCorrector.from_checkpoint(args.checkpoint, library, steps=args.steps, solver=args.solver)


def _reasoner(args, catalog):
    if args.reasoner == "llm":
        from .reasoner import EndpointConfig, LLMReasoner
        return LLMReasoner(EndpointConfig.from_env(max_in_flight=max(args.jobs, 1)))
    from .reasoner import MockReasoner
    return MockReasoner(catalog, seed=args.seed, clutter=args.clutter)


def _set_threads(jobs: int) -> None:
    import torch
    torch.set_num_threads(max(jobs, 1))


# ---------------------------------------------------------------------------
# subcommands


def cmd_dataset(args) -> int:
    from .dataset import GeneratorConfig, make_dataset
    conf = _settings(args, ())
    cfg = GeneratorConfig.from_dict(conf.get("generator", conf))
    manifest = make_dataset(args.n, cfg, args.out, seed=args.seed, jobs=args.jobs)
    log.info("dataset stats: %s", manifest.stats)
    print(str(Path(args.out) / "manifest.json"))
    return 0


def cmd_train(args) -> int:
    from .corrector import TrainConfig, train
    from .corrector.flow import prepare_training_set
    from .dataset import load_dataset
    conf = _settings(args, ("epochs", "lr", "batch_size", "hidden_dim", "arch", "seed"))
    cfg = TrainConfig.from_dict(conf)
    _set_threads(args.jobs)
    library = _library(args)
    _, pairs = load_dataset(args.data)
    data = prepare_training_set([(coarse, gt) for gt, coarse in pairs], library, cfg.capacity)

    def progress(row):
        log.info("epoch %d flow %.5f physics %.6f (%.1fs)", row["epoch"], row["flow_loss"], row["physics"],
                 row["seconds"])

    train(data, cfg, args.out, progress=progress)
    print(str(Path(args.out) / "final.pt"))
    return 0


def cmd_gen(args) -> int:
    from .pipeline import StageSchedule, WorkerConfig, run_dual_system
    tasks = list(args.task or [])
    if args.tasks_file:
        tasks += [ln.strip() for ln in Path(args.tasks_file).read_text().splitlines() if ln.strip()]
    if not tasks:
        raise ValueError("give at least one --task or a --tasks-file")
    _set_threads(1)
    library = _library(args)
    reasoner = _reasoner(args, library.catalog)
    corrector = _corrector(args, library)
    table = TableSpec(args.table[0], args.table[1])
    failures: list = []
    out = run_dual_system([(t, table) for t in tasks], StageSchedule(tuple(args.stages.split(","))), reasoner,
                          corrector, WorkerConfig(max(args.jobs, 1), 1), library.catalog, failures)
    if failures and len(tasks) == 1:
        raise failures[0].error
    for f in failures:
        log.error("task %d (%r) failed at stage %s: %s", f.index, tasks[f.index], f.stage, f.error)
    if len(tasks) == 1:
        _emit(serialize_layout(out[0]), args.out)
    else:
        from .layout import scene_to_dict
        docs = [scene_to_dict(s) if s is not None else None for s in out]
        _emit(json.dumps(docs, indent=2), args.out)
    return 1 if failures else 0


def cmd_correct(args) -> int:
    _set_threads(args.jobs)
    library = _library(args)
    corrector = _corrector(args, library)
    _emit(serialize_layout(corrector(_read_scene(args.scene))), args.out)
    return 0


def cmd_optimize(args) -> int:
    from .corrector import optimize_poses
    from .physics import SceneInstance
    library = _library(args)
    scene, report = optimize_poses(SceneInstance.build(_read_scene(args.scene), library), budget=args.budget,
                                   lr=args.lr)
    log.info("optimizer: %d iterations, success=%s, bucket %s", report.iterations, report.success, report.bucket)
    if args.report:
        Path(args.report).write_text(json.dumps(report.to_dict(), indent=2))
    _emit(serialize_layout(scene), args.out)
    return 0


def validate_report(scene: LayoutScene, library) -> dict:
    from .metrics import FLOAT_THRESHOLD, float_rate, object_collision
    from .physics import SceneInstance, colliding_pairs, support_gaps
    inst = SceneInstance.build(scene, library)
    pairs = colliding_pairs(inst)
    gaps, _ = support_gaps(inst)
    ids = scene.ids
    floating = [ids[i] for i, g in enumerate(gaps) if g > FLOAT_THRESHOLD]
    return {"schema": "ok", "objects": len(scene), "oc": object_collision(inst), "float": float_rate(inst),
            "colliding_pairs": [[ids[i], ids[j]] for i, j in pairs], "floating": floating,
            "support_gaps": {str(ids[i]): float(g) for i, g in enumerate(gaps)},
            "valid": not pairs and not floating}


def cmd_validate(args) -> int:
    report = validate_report(_read_scene(args.scene), _library(args))
    _emit(json.dumps(report, indent=2), args.out)
    return 0 if report["valid"] or not args.strict else 1


def cmd_metrics(args) -> int:
    from .metrics import evaluate
    from .physics import SceneInstance
    if args.gt and len(args.gt) != len(args.scene):
        raise ValueError("--gt must be given once per --scene")
    library = _library(args)
    preds = [SceneInstance.build(_read_scene(p), library) for p in args.scene]
    gts = [SceneInstance.build(_read_scene(p), library) for p in args.gt] if args.gt else None
    _emit(json.dumps(evaluate(preds, gts).to_dict(), indent=2), args.out)
    return 0


def cmd_edit(args) -> int:
    from .pipeline import edit_scene
    _set_threads(1)
    library = _library(args)
    scene = edit_scene(_read_scene(args.scene), args.instruction, _reasoner(args, library.catalog),
                       _corrector(args, library), library.catalog)
    _emit(serialize_layout(scene), args.out)
    return 0


def scene_obj(scene: LayoutScene, catalog) -> str:
    """All objects plus the table slab merged into one OBJ, one group each."""
    from .assets import make_box, scale_mesh
    t = scene.table
    parts = [("table", scale_mesh(make_box(), (t.width, t.depth, t.thickness)).vertices
              + [0.0, 0.0, t.top_height - t.thickness / 2], make_box().triangles)]
    for o in scene.objects:
        m = catalog.mesh(o.asset_id, o.size)
        c, s = math.cos(o.yaw), math.sin(o.yaw)
        rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        parts.append((f"obj{o.id}_{o.category}", m.vertices @ rot.T + np.asarray(o.position), m.triangles))
    lines, base = [], 1
    for name, v, tri in parts:
        lines.append(f"o {name}")
        lines += [f"v {x:.6f} {y:.6f} {z:.6f}" for x, y, z in v]
        lines += [f"f {a + base} {b + base} {c + base}" for a, b, c in tri]
        base += len(v)
    return "\n".join(lines) + "\n"


def scene_svg(scene: LayoutScene, colliding: set[int] = frozenset()) -> str:
    """Top-down view: the table outline and one rect per object footprint,
    colliding objects filled red. +y points up in the picture."""
    t = scene.table
    k = SVG_SCALE
    w, h = t.width * k, t.depth * k
    pad = 0.1 * k
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w + 2 * pad:.1f}" height="{h + 2 * pad:.1f}" '
           f'viewBox="{-w / 2 - pad:.1f} {-h / 2 - pad:.1f} {w + 2 * pad:.1f} {h + 2 * pad:.1f}">',
           f'<path class="table" d="M{-w / 2:.1f},{-h / 2:.1f} h{w:.1f} v{h:.1f} h{-w:.1f} Z" '
           'fill="#f3ead8" stroke="#8a7050"/>']
    for o in scene.objects:
        sx, sy = o.size[0] * k, o.size[1] * k
        x, y = o.position[0] * k, -o.position[1] * k
        fill = "#e04040" if o.id in colliding else "#6a9bd1"
        out.append(f'<rect class="object" data-id="{o.id}" x="{-sx / 2:.2f}" y="{-sy / 2:.2f}" '
                   f'width="{sx:.2f}" height="{sy:.2f}" fill="{fill}" fill-opacity="0.6" stroke="#203040" '
                   f'transform="translate({x:.2f},{y:.2f}) rotate({-math.degrees(o.yaw):.3f})">'
                   f'<title>{o.id}: {o.description}</title></rect>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def cmd_export(args) -> int:
    if not args.svg and not args.obj:
        raise ValueError("give --svg and/or --obj")
    scene = _read_scene(args.scene)
    library = _library(args)
    if args.svg:
        from .physics import SceneInstance, colliding_pairs
        ids = scene.ids
        hit = {ids[i] for p in colliding_pairs(SceneInstance.build(scene, library)) for i in p}
        Path(args.svg).write_text(scene_svg(scene, hit))
        print(args.svg)
    if args.obj:
        Path(args.obj).write_text(scene_obj(scene, library.catalog))
        print(args.obj)
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--jobs", type=int, default=os.cpu_count() or 1, help="worker pool bound")
    common.add_argument("--cache-dir", default=None, help="directory for cached SDF grids")
    common.add_argument("--config", default=None, help="JSON file with defaults; flags override it")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="tabletop", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        sp = sub.add_parser(name, parents=[common], help=help_)
        sp.set_defaults(func=fn)
        return sp

    def corrector_flags(sp, required=False):
        sp.add_argument("--checkpoint", required=required)
        sp.add_argument("--steps", type=int, default=None, help="ODE steps (default from checkpoint)")
        sp.add_argument("--solver", choices=["euler", "rk4"], default=None)

    def reasoner_flags(sp):
        sp.add_argument("--reasoner", choices=["mock", "llm"], default="mock")
        sp.add_argument("--clutter", choices=["low", "medium", "high"], default="medium")

    sp = add("dataset", cmd_dataset, "generate a synthetic (ground truth, coarse) dataset")
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--out", required=True)

    sp = add("train", cmd_train, "train the flow corrector")
    sp.add_argument("--data", required=True, help="dataset directory")
    sp.add_argument("--out", required=True, help="checkpoint directory")
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--lr", type=float)
    sp.add_argument("--batch-size", type=int)
    sp.add_argument("--hidden-dim", type=int)
    sp.add_argument("--arch", choices=["mlp", "pairwise"])

    sp = add("gen", cmd_gen, "synthesize scenes from task instructions")
    sp.add_argument("--task", action="append")
    sp.add_argument("--tasks-file")
    sp.add_argument("--stages", default="t,B,b")
    sp.add_argument("--table", type=float, nargs=2, default=(1.0, 0.6), metavar=("WIDTH", "DEPTH"))
    sp.add_argument("--out")
    reasoner_flags(sp)
    corrector_flags(sp)

    sp = add("correct", cmd_correct, "run the flow corrector on one layout")
    sp.add_argument("--scene", required=True)
    sp.add_argument("--out")
    corrector_flags(sp, required=True)

    sp = add("optimize", cmd_optimize, "gradient-descent pose repair")
    sp.add_argument("--scene", required=True)
    sp.add_argument("--budget", type=int, default=5000)
    sp.add_argument("--lr", type=float, default=10.0)
    sp.add_argument("--report", help="write the optimizer report JSON here")
    sp.add_argument("--out")

    sp = add("validate", cmd_validate, "schema and physics check of a layout")
    sp.add_argument("--scene", required=True)
    sp.add_argument("--strict", action="store_true", help="exit 1 when the layout is not simulation-ready")
    sp.add_argument("--out")

    sp = add("metrics", cmd_metrics, "OC / Float / AwT / AwS report")
    sp.add_argument("--scene", action="append", required=True)
    sp.add_argument("--gt", action="append")
    sp.add_argument("--out")

    sp = add("edit", cmd_edit, "apply an instruction-driven edit")
    sp.add_argument("--scene", required=True)
    sp.add_argument("--instruction", required=True)
    sp.add_argument("--out")
    reasoner_flags(sp)
    corrector_flags(sp)

    sp = add("export", cmd_export, "write OBJ and/or top-down SVG")
    sp.add_argument("--scene", required=True)
    sp.add_argument("--svg")
    sp.add_argument("--obj")
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (TabletopError, OSError, ValueError, KeyError) as exc:
        err = {"code": type(exc).__name__, "message": str(exc), "context": {"command": args.command}}
        raw = getattr(exc, "raw", None)
        if raw is not None:
            err["context"]["raw"] = raw if isinstance(raw, (str, list)) else repr(raw)
        sys.stderr.write(json.dumps(err) + "\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
