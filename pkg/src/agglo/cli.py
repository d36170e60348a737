"""Command-line entry point: ``agglo <command> [<action>] ...``.

Results go to stdout as one JSON object; diagnostics go to stderr. Exit
status is 0 on success, 1 for invalid input and 2 for numerical failures.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import mosaic, phis, tome
from .errors import ValidationError
from .fileio import read_fmap, read_ppm, write_fmap, write_ppm
from .fmap import FeatureMap, bilinear_resize
from .scale_eq import equivariance_suite, scale_variance, tiled
from .viz import pca_image

log = logging.getLogger("agglo")


class Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def emit(obj) -> None:
    sys.stdout.write(json.dumps(obj, sort_keys=True, separators=(",", ":")) + "\n")


def load_json(path):
    with open(path) as f:
        return json.load(f)


def save_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, sort_keys=True, separators=(",", ":")) + "\n")


def read_map(path) -> FeatureMap:
    if Path(path).suffix.lower() in (".ppm", ".pgm", ".pnm"):
        return read_ppm(path)
    return read_fmap(path)


def write_map(path, fmap) -> None:
    if Path(path).suffix.lower() in (".ppm", ".pgm", ".pnm"):
        write_ppm(path, fmap)
    else:
        write_fmap(path, fmap)


# -- phis -------------------------------------------------------------------

def cmd_phis_fit(a):
    samples = np.concatenate([read_map(p).tokens() for p in a.input])
    t = phis.fit(samples, min_samples=a.min_samples)
    save_json(a.out, t.to_dict())
    emit({"channels": t.channels, "phi_sq": t.phi_sq, "samples": t.fitted_on})


def _transform_io(a, fn):
    t = phis.PhiSTransform.from_dict(load_json(a.transform))
    out = fn(t, read_map(a.input))
    write_fmap(a.out, out)
    emit({"out": a.out, "shape": list(out.shape)})


def cmd_phis_fidelity(a):
    if a.report:
        rows = []
        for item in a.report:
            try:
                name, p, m = item.split(":")
                rows.append((name, float(p), float(m)))
            except ValueError:
                raise ValidationError(f"--report expects name:phi_sq:mse, got {item!r}") from None
        rep = phis.fidelity_report(rows)
        emit({"geometric_mean": round(rep.geometric_mean, a.digits),
              "per_teacher": {r.teacher: round(r.fidelity, a.digits) for r in rep.per_teacher}})
        return
    phi_sq = a.phi_sq
    if a.transform:
        phi_sq = phis.PhiSTransform.from_dict(load_json(a.transform)).phi_sq
    if phi_sq is None:
        raise ValidationError("need --phi-sq or --transform")
    if a.mse is not None:
        f = phis.fidelity_from_mse(phi_sq, a.mse)
    elif a.student and a.teacher:
        f = phis.fidelity(phi_sq, read_map(a.student), read_map(a.teacher))
    else:
        raise ValidationError("need --mse or both --student and --teacher")
    emit({"fidelity": round(f, a.digits) if np.isfinite(f) else "inf"})


# -- tome -------------------------------------------------------------------

def _layout_and_r(a, rows, cols):
    if a.budget is not None:
        return tome.stride_for_budget(rows, cols, a.budget)
    if a.stride is None or a.r is None:
        raise ValidationError("need --budget or both --stride and --r")
    return tome.SinkLayout.square(a.stride, a.offset), a.r


def _plan_from_args(a, x):
    layout, r = _layout_and_r(a, x.height, x.width)
    crit = read_map(a.criterion) if a.criterion else None
    return tome.plan(x, layout, r, crit)


def _plan_summary(p):
    return {"rows": p.rows, "cols": p.cols, "stride": p.layout.stride_y, "r": p.r,
            "targets": p.layout.target_count(p.rows, p.cols), "survivors": p.survivors}


def cmd_tome_plan(a):
    if a.input:
        x = read_map(a.input)
    else:
        if a.rows is None or a.cols is None:
            raise ValidationError("need --input or both --rows and --cols")
        # no features: every affinity is zero and ties resolve by raster order
        x = FeatureMap(np.zeros((a.rows, a.cols, 1)))
    p = _plan_from_args(a, x)
    if a.out:
        save_json(a.out, p.to_dict())
    emit(_plan_summary(p))


def cmd_tome_compress(a):
    x = read_map(a.input)
    p = _plan_from_args(a, x)
    values, counts = tome.merge(x, p)
    write_fmap(a.out, FeatureMap(values[None]))
    save_json(a.plan_out, p.to_dict())
    emit({**_plan_summary(p), "error": tome.reconstruction_error(x, p), "max_count": int(counts.max())})


def cmd_tome_reconstruct(a):
    p = tome.MergePlan.from_dict(load_json(a.plan))
    values = read_fmap(a.input).data
    if values.shape[0] != 1:
        raise ValidationError("compressed tokens must be stored as a 1 x M map")
    out = tome.unmerge(values[0], p)
    write_fmap(a.out, out)
    emit({"out": a.out, "shape": list(out.shape)})


def cmd_tome_error(a):
    x = read_map(a.input)
    p = tome.MergePlan.from_dict(load_json(a.plan)) if a.plan else _plan_from_args(a, x)
    emit({**_plan_summary(p), "error": tome.reconstruction_error(x, p)})


# -- mosaic -----------------------------------------------------------------

def cmd_mosaic_layout(a):
    lay = mosaic.layout_for(a.res, a.canvas, a.patch, a.jitter_seed)
    if a.out:
        save_json(a.out, lay.to_dict())
    emit({**lay.to_dict(), "pad_after": lay.pad_after, "cost_ratio": mosaic.teacher_cost_ratio(lay.k)})


def cmd_mosaic_pack(a):
    images = [read_map(p) for p in a.images]
    lay = mosaic.layout_for(images[0].height, a.canvas, a.patch, a.jitter_seed)
    canvas = mosaic.pack(images, lay, a.pad_value)
    write_map(a.out, canvas)
    save_json(a.layout, lay.to_dict())
    emit({"out": a.out, "layout": a.layout, "k": lay.k, "cells": lay.cells})


def cmd_mosaic_crop(a):
    feats = read_map(a.features)
    if a.layout:
        lay = mosaic.MosaicLayout.from_dict(load_json(a.layout))
        out_dir = Path(a.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = []
        for i, f in enumerate(mosaic.unpack_features(feats, lay)):
            path = out_dir / f"cell_{i:03d}.fmap"
            write_fmap(path, f)
            paths.append(str(path))
        emit({"crops": paths})
    elif a.image_res:
        crop = mosaic.crop_features(feats, a.image_res, a.patch)
        write_fmap(a.out, crop)
        emit({"out": a.out, "shape": list(crop.shape)})
    else:
        raise ValidationError("need --layout (mosaic) or --image-res (padded canvas)")


# -- scale-eq ---------------------------------------------------------------

def _suite_from_manifest(m: dict):
    from .distill.images import image_stream
    from .distill.teachers import Teacher, TeacherSpec

    try:
        gen = Teacher(TeacherSpec(**m["teacher"]))
        fine, coarse = list(m["fine"]), list(m["coarse"])
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"bad scale-eq manifest: {exc}") from None

    def generator(image):
        return gen(image)[0]

    if m.get("tile"):
        generator = tiled(generator, int(m["tile"]))
    if "ppm" in m:
        sources = [read_ppm(p) for p in m["ppm"]]
        renders = [lambda res, s=s: bilinear_resize(s, res, res) for s in sources]
    elif "images" in m:
        spec = m["images"]
        if "seed" not in spec:
            raise ValidationError("procedural images need a seed")
        stream = image_stream(int(spec["seed"]))
        renders = [next(stream).render for _ in range(int(spec.get("count", 8)))]
    else:
        raise ValidationError("manifest needs 'ppm' paths or 'images': {seed, count}")
    return generator, renders, fine, coarse


def cmd_scale_eq(a):
    if a.manifest:
        m = load_json(a.manifest)
        gen, renders, fine, coarse = _suite_from_manifest(m)
        f, c = equivariance_suite(gen, renders, fine, coarse, m.get("direction", a.direction))
        emit({"fine": f, "coarse": c})
    elif a.inputs:
        emit({"scale_variance": scale_variance([read_map(p) for p in a.inputs], a.direction, a.ddof)})
    else:
        raise ValidationError("need --inputs or --manifest")


# -- train ------------------------------------------------------------------

def _train_config(a):
    from .distill.config import TrainConfig, default_config

    if a.config:
        cfg = replace(TrainConfig.from_dict(load_json(a.config)), seed=a.seed)
    else:
        cfg = default_config(seed=a.seed, iterations=a.iterations, schedule=a.schedule)
    if a.lr is not None:
        cfg = replace(cfg, lr=a.lr)
    return cfg


def cmd_train_run(a):
    from .distill.train import Trainer, write_log

    cfg = _train_config(a)
    trainer = Trainer(cfg)
    records = trainer.run()
    if a.log:
        write_log(records, a.log)
    if a.params:
        np.savez(a.params, **{k: trainer.student.params[k] for k in sorted(trainer.student.params)})
    out = {"iterations": len(records)}
    if records:
        out.update(first_total=records[0]["total"], final_total=records[-1]["total"],
                   final_fidelity=records[-1]["fidelity"])
    emit(out)


def cmd_train_grad_check(a):
    from .distill.train import Trainer, check_gradients

    res = check_gradients(Trainer(_train_config(a)), n=a.n, seed=a.seed)
    ok = res.passed(a.tol)
    name, idx, an, num = res.worst
    emit({"checked": res.checked, "max_rel_error": res.max_rel_error, "passed": ok,
          "worst": {"param": name, "index": list(idx), "analytic": an, "numeric": num}})
    return 0 if ok else 2


def cmd_train_mode_switch(a):
    from .distill.experiment import ModeSwitchConfig, mode_switch_experiment

    kw = {"seed": a.seed}
    if a.iterations is not None:
        kw["iterations"] = a.iterations
    if a.lr is not None:
        kw["lr"] = a.lr
    report = mode_switch_experiment(ModeSwitchConfig(**kw))
    if a.out:
        save_json(a.out, report)
    emit(report)


# -- viz --------------------------------------------------------------------

def cmd_viz(a):
    img, warnings = pca_image(read_map(a.input), a.scale)
    for w in warnings:
        log.warning(w)
    write_ppm(a.out, img)
    emit({"out": a.out, "height": img.height, "width": img.width})


def build_parser() -> argparse.ArgumentParser:
    p = Parser(prog="agglo", description="Multi-teacher distillation toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    # phis
    ph = sub.add_parser("phis", help="PCA-Hadamard standardization").add_subparsers(dest="action", required=True)
    s = ph.add_parser("fit")
    s.add_argument("--input", nargs="+", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--min-samples", type=int)
    s.set_defaults(fn=cmd_phis_fit)
    for name, fn in (("apply", phis.apply), ("invert", phis.invert)):
        s = ph.add_parser(name)
        s.add_argument("--transform", required=True)
        s.add_argument("--input", required=True)
        s.add_argument("--out", required=True)
        s.set_defaults(fn=lambda a, fn=fn: _transform_io(a, fn))
    s = ph.add_parser("fidelity")
    s.add_argument("--phi-sq", type=float)
    s.add_argument("--mse", type=float)
    s.add_argument("--transform")
    s.add_argument("--student")
    s.add_argument("--teacher")
    s.add_argument("--report", nargs="+", metavar="NAME:PHI_SQ:MSE")
    s.add_argument("--digits", type=int, default=3)
    s.set_defaults(fn=cmd_phis_fidelity)

    # tome
    tm = sub.add_parser("tome", help="token merging").add_subparsers(dest="action", required=True)

    def merge_args(s, need_input):
        s.add_argument("--input", required=need_input)
        s.add_argument("--criterion")
        s.add_argument("--stride", type=int)
        s.add_argument("--offset", type=int, default=0)
        s.add_argument("--r", type=int)
        s.add_argument("--budget", type=int)

    s = tm.add_parser("plan")
    merge_args(s, False)
    s.add_argument("--rows", type=int)
    s.add_argument("--cols", type=int)
    s.add_argument("--out")
    s.set_defaults(fn=cmd_tome_plan)
    s = tm.add_parser("compress")
    merge_args(s, True)
    s.add_argument("--out", required=True)
    s.add_argument("--plan-out", required=True)
    s.set_defaults(fn=cmd_tome_compress)
    s = tm.add_parser("reconstruct")
    s.add_argument("--input", required=True)
    s.add_argument("--plan", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_tome_reconstruct)
    s = tm.add_parser("error")
    merge_args(s, True)
    s.add_argument("--plan")
    s.set_defaults(fn=cmd_tome_error)

    # mosaic
    mo = sub.add_parser("mosaic", help="mosaic packing").add_subparsers(dest="action", required=True)
    s = mo.add_parser("layout")
    s.add_argument("--res", type=int, required=True)
    s.add_argument("--canvas", type=int, required=True)
    s.add_argument("--patch", type=int, default=16)
    s.add_argument("--jitter-seed", type=int)
    s.add_argument("--out")
    s.set_defaults(fn=cmd_mosaic_layout)
    s = mo.add_parser("pack")
    s.add_argument("images", nargs="+")
    s.add_argument("--canvas", type=int, required=True)
    s.add_argument("--patch", type=int, default=16)
    s.add_argument("--jitter-seed", type=int)
    s.add_argument("--pad-value", type=float, default=0.0)
    s.add_argument("--out", required=True)
    s.add_argument("--layout", required=True, help="where to write the layout JSON")
    s.set_defaults(fn=cmd_mosaic_pack)
    s = mo.add_parser("crop")
    s.add_argument("--features", required=True)
    s.add_argument("--layout")
    s.add_argument("--image-res", type=int)
    s.add_argument("--patch", type=int, default=16)
    s.add_argument("--out", required=True, help="directory with --layout, file with --image-res")
    s.set_defaults(fn=cmd_mosaic_crop)

    # scale-eq
    s = sub.add_parser("scale-eq", help="scale-equivariance metric")
    s.add_argument("--inputs", nargs="+")
    s.add_argument("--manifest")
    s.add_argument("--direction", choices=("down", "up"), default="down")
    s.add_argument("--ddof", type=int, default=1)
    s.set_defaults(fn=cmd_scale_eq)

    # train
    tr = sub.add_parser("train", help="toy distillation").add_subparsers(dest="action", required=True)

    def train_args(s):
        s.add_argument("--seed", type=int, required=True)
        s.add_argument("--config")
        s.add_argument("--iterations", type=int, default=200)
        s.add_argument("--schedule", choices=("multires", "segregated"), default="multires")
        s.add_argument("--lr", type=float)

    s = tr.add_parser("run")
    train_args(s)
    s.add_argument("--log")
    s.add_argument("--params", help="write final parameters (.npz)")
    s.set_defaults(fn=cmd_train_run)
    s = tr.add_parser("grad-check")
    train_args(s)
    s.add_argument("--n", type=int, default=200)
    s.add_argument("--tol", type=float, default=1e-5)
    s.set_defaults(fn=cmd_train_grad_check)
    s = tr.add_parser("mode-switch")
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--iterations", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--out")
    s.set_defaults(fn=cmd_train_mode_switch)

    # viz
    s = sub.add_parser("viz", help="PCA false-color PPM of a feature map")
    s.add_argument("--input", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--scale", type=int, default=1)
    s.set_defaults(fn=cmd_viz)
    return p


def main(argv=None) -> int:
    level = os.environ.get("AGGLO_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args) or 0
    except ArithmeticError as exc:
        log.error("%s", exc)
        return 2
    except (ValueError, OSError, KeyError) as exc:
        log.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
