"""Command-line entry point: ``glaslab <subcommand> [flags]``."""

from __future__ import annotations

import argparse
import logging
import sys

from .config import FIELDS, KIND_DEFAULTS, ConfigError, ExperimentConfig, parse_alpha
from .experiments import ResourceError, audit_passed, run_experiment
from .records import emit_report, read_records

EXIT_OK, EXIT_USAGE, EXIT_AUDIT_FAILED = 0, 1, 2

SUBCOMMANDS = {
    "exact-audit": "exact-audit",
    "simulate": "simulate",
    "variance-scan": "variance-scan",
    "gg-scan": "gg-scan",
    "ibp-check": "ibp",
    "free-energy": "free-energy",
    "perturbation-audit": "perturbation-audit",
}

# flag -> (dotted key, parser)
OVERRIDES = {
    "seed": ("run.seed", int),
    "workers": ("run.workers", int),
    "out": ("run.out", str),
    "dim": ("lattice.dim", int),
    "n_list": ("lattice.n_list", lambda s: [int(v) for v in s.split(",") if v]),
    "beta": ("model.beta", float),
    "h": ("model.h", float),
    "u": ("model.u", float),
    "r": ("model.r", float),
    "disorders": ("ensemble.disorders", int),
    "replicas": ("mc.replicas", int),
    "sweeps": ("mc.sweeps", int),
    "burn_in": ("mc.burn_in", int),
    "thinning": ("mc.thinning", int),
    "alpha": ("perturbation.alpha", parse_alpha),
    "cn_exponent": ("perturbation.cn_exponent", float),
    "xi_law": ("perturbation.xi_law", str),
    "pert_mode": ("perturbation.mode", str),
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _defaults_epilog() -> str:
    lines = ["config keys (dotted JSON) and defaults:"]
    for key, _, _, default, help_text in FIELDS:
        lines.append(f"  {key} = {default!r}  ({help_text})")
    lines.append("per-kind defaults:")
    for kind, vals in KIND_DEFAULTS.items():
        lines.append(f"  {kind}: " + ", ".join(f"{k}={v!r}" for k, v in vals.items()))
    return "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="glaslab", description="Random field Ginzburg-Landau simulation lab",
                     epilog=_defaults_epilog(), formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name, help=f"run the {SUBCOMMANDS[name]} experiment",
                           epilog=_defaults_epilog(),
                           formatter_class=argparse.RawDescriptionHelpFormatter)
        p.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)
        p.add_argument("--config", metavar="PATH", help="JSON config with dotted keys")
        p.add_argument("--seed", metavar="U64")
        p.add_argument("--workers", metavar="N", help="threads (fallback: GLASLAB_THREADS)")
        p.add_argument("--out", metavar="DIR")
        p.add_argument("--dim")
        p.add_argument("--n-list", metavar="N[,N...]")
        for flag in ("beta", "h", "u", "r"):
            p.add_argument(f"--{flag}")
        p.add_argument("--disorders")
        p.add_argument("--replicas")
        p.add_argument("--sweeps")
        p.add_argument("--burn-in")
        p.add_argument("--thinning")
        p.add_argument("--alpha", metavar="p=v[,p=v]")
        p.add_argument("--cn-exponent")
        p.add_argument("--xi-law")
        p.add_argument("--pert-mode")
        p.add_argument("--no-figures", action="store_true", help="skip PNG rendering")
        p.add_argument("--no-checkpoint", action="store_true", help="do not read or write checkpoints")
    rep = sub.add_parser("report", help="render CSV/JSON/plot data/figures from a records file")
    rep.add_argument("records", metavar="RECORDS", help="records.json or records.csv")
    rep.add_argument("--out", metavar="DIR", help="output directory (default: next to RECORDS)")
    rep.add_argument("--no-figures", action="store_true")
    return parser


def config_from_args(args, kind: str) -> ExperimentConfig:
    import json
    from pathlib import Path

    data = {}
    if args.config:
        try:
            data = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError("--config", str(exc)) from None
        if not isinstance(data, dict):
            raise ConfigError("--config", "config must be a JSON object")
    if data.get("experiment.kind", kind) != kind:
        raise ConfigError("experiment.kind",
                          f"config says {data['experiment.kind']!r} but subcommand runs {kind!r}")
    data["experiment.kind"] = kind
    for attr, (key, parse) in OVERRIDES.items():
        raw = getattr(args, attr, None)
        if raw is None:
            continue
        try:
            data[key] = parse(raw)
        except ValueError as exc:
            raise ConfigError(key, f"cannot parse {raw!r}: {exc}") from None
    return ExperimentConfig.from_dict(data)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "report":
        from pathlib import Path

        try:
            records = read_records(args.records)
        except (OSError, ValueError) as exc:
            print(f"glaslab: cannot read records: {exc}", file=sys.stderr)
            return EXIT_USAGE
        paths = emit_report(records, args.out or Path(args.records).parent,
                            figures=not args.no_figures)
        print(f"wrote {paths['csv']}, {paths['json']}, {len(paths['plot_data'])} plot-data "
              f"files, {len(paths['figures'])} figures")
        return EXIT_OK

    kind = SUBCOMMANDS[args.command]
    try:
        cfg = config_from_args(args, kind)
        records = run_experiment(cfg, checkpoint=not args.no_checkpoint, write=False)
    except (ConfigError, ResourceError) as exc:
        print(f"glaslab: {exc}", file=sys.stderr)
        return EXIT_USAGE
    paths = emit_report(records, cfg.out, figures=not args.no_figures)
    for r in records:
        if r.n == 0 or kind != "exact-audit":
            print(f"{r.kind}\tn={r.n}\t{r.observable}\t{r.value:.6g}\t+- {r.stderr:.3g}")
    print(f"records: {paths['csv']} ({len(records)} rows); figures: {len(paths['figures'])}")
    if kind == "exact-audit" and not audit_passed(records):
        print("exact-audit: FAILED", file=sys.stderr)
        return EXIT_AUDIT_FAILED
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
