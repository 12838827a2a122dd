"""Command-line entry point.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numeric failure (non-finite loss).
"""

from __future__ import annotations

import argparse
import json
import sys

from . import pipeline
from .config import RunConfig, load_config
from .errors import ConfigError, DataError, NumericError, TactilePriorError


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on usage errors; usage errors here share code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON run configuration (defaults for missing keys)")
    p.add_argument("--seed", type=int, help="master seed (overrides config and RETRO_SEED)")
    p.add_argument("--force", action="store_true",
                   help="load checkpoints even when their config hash differs")
    p.add_argument("--emit-plot-data", metavar="DIR",
                   help="also write (x, y) series CSVs and PNG figures to DIR")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tactile-prior",
                     description="Material-prior visuo-tactile pretraining at desk scale.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="generate the synthetic dataset and material library")
    _common(p)
    p.add_argument("--out", required=True)

    p = sub.add_parser("render", help="render a directory of material maps under the canonical rig")
    _common(p)
    p.add_argument("--maps", required=True, help="directory with {diffuse,normal,...}.rten")
    p.add_argument("--out", required=True, help="output PNG (an .rten copy is written alongside)")
    p.add_argument("--lights", help="JSON light rig (default: the canonical two-light rig)")
    p.add_argument("--sphere", action="store_true")
    p.add_argument("--resolution", type=int)

    p = sub.add_parser("train-prior", help="train the material estimator")
    _common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--log")
    p.add_argument("--steps", type=int)

    p = sub.add_parser("adapt-prior", help="adversarial adaptation to the unlabeled pool")
    _common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--prior", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--unlabeled", help="RTEN stack of unlabeled images (default: dataset pool)")
    p.add_argument("--log")
    p.add_argument("--steps", type=int)

    p = sub.add_parser("extract-prior", help="cache frozen prior features for a split")
    _common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--prior", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="train")
    p.add_argument("--variant", choices=("F", "S"))

    p = sub.add_parser("train-tactile", help="contrastive touch-encoder pretraining")
    _common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=("A", "M", "C", "MA"))
    p.add_argument("--prior")
    p.add_argument("--prior-cache")
    p.add_argument("--log")
    p.add_argument("--steps", type=int)
    p.add_argument("--tau", type=float)

    p = sub.add_parser("probe", help="linear probe on frozen touch embeddings")
    _common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--task", action="append", choices=pipeline.TASKS,
                   help="probe task; repeatable (default: material)")

    p = sub.add_parser("retrieve", help="touch-to-vision and touch-to-library retrieval")
    _common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--k", type=int)

    p = sub.add_parser("eval-maps", help="per-map and rendering RMSE of the material estimator")
    _common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--prior")
    p.add_argument("--split", default="val")
    p.add_argument("--ground-truth", action="store_true",
                   help="score the ground-truth maps against themselves")

    p = sub.add_parser("ablation", help="pretraining mode x data mode x seed grid")
    _common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--prior", required=True)
    p.add_argument("--alt-prior", help="alternative prior for mode C (default: trained here)")
    p.add_argument("--out", required=True)
    p.add_argument("--seeds", type=int, nargs="+")

    p = sub.add_parser("verify", help="re-run the pipeline and compare file hashes")
    _common(p)
    p.add_argument("--reference", help="directory from `run` to compare against")
    p.add_argument("--workdir", help="scratch directory for the re-derived runs")

    p = sub.add_parser("run", help="run every stage into a fresh directory")
    _common(p)
    p.add_argument("--out", required=True)
    return parser


def resolve_config(args) -> RunConfig:
    run = load_config(args.config)
    if args.seed is not None:
        run.seed = args.seed
    sections = {}
    if getattr(args, "steps", None) is not None:
        key = {"train-prior": "prior", "adapt-prior": "adapt",
               "train-tactile": "tactile"}[args.command]
        sections[key] = _replace(getattr(run, key), steps=args.steps)
    if args.command == "train-tactile":
        t = sections.get("tactile", run.tactile)
        if args.mode:
            t = _replace(t, mode=args.mode)
        if args.tau is not None:
            t = _replace(t, tau=args.tau)
        sections["tactile"] = t
    if args.command == "ablation" and args.seeds:
        sections["ablation"] = _replace(run.ablation, seeds=list(args.seeds))
    if args.command == "extract-prior" and args.variant:
        sections["tactile"] = _replace(run.tactile, data_variant=args.variant)
    return run.replace(**sections).validate() if sections else run.validate()


def _replace(section, **changes):
    import dataclasses

    return dataclasses.replace(section, **changes)


def dispatch(args) -> dict:
    run = resolve_config(args)
    plots = args.emit_plot_data
    c = args.command
    if c == "gen-data":
        return {"manifest": str(pipeline.gen_data(run, args.out))}
    if c == "render":
        return {"image": str(pipeline.render_maps(args.maps, args.out, args.sphere,
                                                  args.resolution, args.lights))}
    if c == "train-prior":
        return pipeline.train_prior_stage(run, args.data, args.out, args.log, plots)
    if c == "adapt-prior":
        return pipeline.adapt_prior_stage(run, args.data, args.prior, args.out, args.unlabeled,
                                          args.log, args.force, plots)
    if c == "extract-prior":
        return pipeline.extract_prior_stage(run, args.data, args.prior, args.out, args.split,
                                            run.tactile.data_variant, args.force)
    if c == "train-tactile":
        return pipeline.train_tactile_stage(run, args.data, args.out, args.prior, args.prior_cache,
                                            args.log, args.force, plots)
    if c == "probe":
        return pipeline.probe_stage(run, args.data, args.ckpt, args.out,
                                    tuple(args.task or ("material",)), args.force)
    if c == "retrieve":
        return pipeline.retrieve_stage(run, args.data, args.ckpt, args.out, args.k, args.force)
    if c == "eval-maps":
        return pipeline.eval_maps_stage(run, args.data, args.out, args.prior, args.split,
                                        args.ground_truth, args.force, plots)
    if c == "ablation":
        return pipeline.ablation_stage(run, args.data, args.prior, args.out, args.alt_prior,
                                       args.force, plots)
    if c == "verify":
        result = pipeline.verify(run, args.reference, args.workdir)
        if not result["ok"]:
            raise DataError(f"verify: {len(result['mismatched'])} file(s) differ, "
                            f"first: {result['mismatched'][0]}")
        return result
    if c == "run":
        hashes = pipeline.run_pipeline(run, args.out)
        return {"out": args.out, "files": len(hashes)}
    raise ConfigError(f"unknown command {c!r}")


def _summary(command: str, result: dict) -> str:
    parts = [command]
    for k, v in result.items():
        if isinstance(v, float):
            parts.append(f"{k}={v:.6g}")
        elif isinstance(v, (str, int, bool)) or v is None:
            parts.append(f"{k}={v}")
        else:
            parts.append(f"{k}={json.dumps(v)}")
    return " ".join(parts)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        result = dispatch(args)
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return NumericError.exit_code
    except TactilePriorError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return type(exc).exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DataError.exit_code
    print(_summary(args.command, result))
    return 0


if __name__ == "__main__":
    sys.exit(main())
