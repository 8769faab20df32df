"""Command line entry point: ``hfmort <subcommand> [--config C] [--seed S] [--out D]``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric error.
"""

from __future__ import annotations

import argparse
import sys

from .errors import ConfigError, HFMortError
from .pipeline import RUN_STAGES, Run, load_config, load_ablation

SUBCOMMANDS = {
    "synth": ("synth",),
    "prep": ("prep",),
    "ttest": ("ttest",),
    "vif": ("vif",),
    "train": ("train",),
    "eval": ("eval",),
    "roc": ("roc",),
    "shap": ("shap",),
    "ablate": ("ablate",),
    "figures": ("figures",),
    "run": RUN_STAGES,
}

HELP = {
    "synth": "generate (or load) the cohort",
    "prep": "clean, split, impute, remove outliers",
    "ttest": "train/test Welch t-test table",
    "vif": "iterative VIF filter on continuous features",
    "train": "grid search and refit every configured model family",
    "eval": "train/test AUC and accuracy with bootstrap intervals",
    "roc": "per-model ROC points and an overlay plot",
    "shap": "TreeSHAP ranking, beeswarm export and direction signs",
    "ablate": "feature-ablation study on the boosted model",
    "figures": "SVG figures plus their CSV data",
    "run": "every stage end to end (ablation excluded)",
}


def _global_flags(p: argparse.ArgumentParser, suppress: bool) -> None:
    default = argparse.SUPPRESS if suppress else None
    p.add_argument("--config", default=default, help="run configuration JSON (or a manifest.json)")
    p.add_argument("--seed", type=int, default=default, help="master seed (overrides the config)")
    p.add_argument("--out", default=default, help="run directory (overrides the config)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hfmort", description="ICU heart-failure mortality modelling toolkit")
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        sp = sub.add_parser(name, help=HELP[name])
        _global_flags(sp, suppress=True)
        if name == "ablate":
            sp.add_argument("--candidate", action="append", default=None, metavar="F1,F2",
                            help="comma-separated feature set to remove (repeatable); baseline always added")
            sp.add_argument("--all-families", action="store_true", help="ablate every model family")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.command == "ablate" and (args.candidate is not None or args.all_families):
            d = cfg.to_dict()
            if args.candidate is not None:
                d["ablation"]["candidate_sets"] = [[f.strip() for f in c.split(",") if f.strip()]
                                                   for c in args.candidate]
            if args.all_families:
                d["ablation"]["all_families"] = True
            cfg = type(cfg).from_dict(d)
        cfg = cfg.with_overrides(seed=args.seed, out=args.out)
        run = Run(cfg, echo=print)
        run.run(SUBCOMMANDS[args.command])
        if args.command == "ablate":
            rep = load_ablation(run)
            for fam in rep.families:
                print(f"best configuration ({fam}): {rep.best(fam).label}")
        print(f"artifacts in {run.dir}")
    except HFMortError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return ConfigError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
