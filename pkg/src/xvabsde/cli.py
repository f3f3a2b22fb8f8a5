"""Command-line front end.

Every subcommand reads one JSON config holding ``schema_version``,
``market``, ``contract`` and ``numerics``; a few numerics can be overridden by
flags. Reports are JSON (sorted keys, resolved config and library version
embedded) with optional CSV tables.

Exit codes: 0 success, 1 a check came out negative, 2 bad configuration,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from dataclasses import dataclass
from importlib import resources

from . import __version__
from .errors import ConfigError, NumericError, XvaError
from .model import (
    contract_from_dict,
    market_from_dict,
    numerics_from_dict,
    validate_market,
)

SCHEMA_VERSION = "1"
EXIT_OK, EXIT_NEGATIVE, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


@dataclass
class RunConfig:
    market: object
    contract: object
    numerics: object
    schema_version: str
    raw: dict

    def resolved(self):
        return {
            "schema_version": self.schema_version,
            "market": self.market.to_dict(),
            "contract": self.contract.to_dict(),
            "numerics": self.numerics.to_dict(),
        }


def read_config_text(path):
    if path.startswith("fixture:"):
        name = path.split(":", 1)[1]
        try:
            return resources.files("xvabsde").joinpath("fixtures", f"{name}.json").read_text()
        except FileNotFoundError:
            raise ConfigError(f"no bundled fixture named {name!r}") from None
    try:
        with open(path, encoding="utf-8") as fh:
            return fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None


def parse_config(text, overrides=None):
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    version = raw.get("schema_version")
    if version is None:
        raise ConfigError("config is missing schema_version")
    if str(version) != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {version!r}; expected {SCHEMA_VERSION!r}")
    for key in ("market", "contract"):
        if key not in raw:
            raise ConfigError(f"config is missing {key}")
    num = dict(raw.get("numerics") or {})
    for k, v in (overrides or {}).items():
        if v is not None:
            num[k] = v
    try:
        market = market_from_dict(raw["market"])
        contract = contract_from_dict(raw["contract"])
        numerics = numerics_from_dict(num)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, XvaError):
            raise
        raise ConfigError(str(exc)) from None
    report = validate_market(market)
    if report.violations:
        raise ConfigError("invalid market: " + "; ".join(report.violations))
    return RunConfig(market, contract, numerics, str(version), raw)


def _clean(x):
    """JSON-safe copy: NaN and infinities become null, numpy scalars become floats."""
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if hasattr(x, "tolist"):
        return _clean(x.tolist())
    if isinstance(x, float) and not math.isfinite(x):
        return None
    return x


def _emit(args, command, cfg, result, table=None):
    doc = {"command": command, "version": __version__, "config": cfg.resolved() if cfg else None,
           "result": result}
    text = json.dumps(_clean(doc), indent=2, sort_keys=True) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    if table is not None and args.csv:
        header, rows = table
        with open(args.csv, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r in rows:
                w.writerow([_fmt(v) for v in r])


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def table_text(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


# ------------------------------------------------------------- subcommands


def cmd_validate(args, cfg):
    from .analysis import check_noarb

    rep = validate_market(cfg.market)
    _emit(args, "validate", cfg, {"market": rep.to_dict(), "noarb": check_noarb(cfg.market).to_dict()})
    return EXIT_OK


def cmd_price(args, cfg):
    from .bsde import price_bounds

    engine = args.engine or "lsmc"
    res = price_bounds(cfg.market, cfg.contract, cfg.numerics, engine=engine)
    d = res.to_dict()
    _emit(args, "price", cfg, d, (list(d), [list(d.values())]))
    return EXIT_OK


def cmd_xva(args, cfg):
    from .xva import compute_xva

    rep = compute_xva(cfg.market, cfg.contract, cfg.numerics)
    header, row = rep.csv_row()
    _emit(args, "xva", cfg, rep.to_dict(), (header, [row]))
    return EXIT_OK


def cmd_check_noarb(args, cfg):
    from .analysis import check_noarb

    rep = check_noarb(cfg.market)
    rows = [[r.condition, r.worst_margin, r.worst_time, r.passed] for r in rep.records]
    _emit(args, "check-noarb", cfg, rep.to_dict(), (["condition", "worst_margin", "worst_time", "passed"], rows))
    if not rep.passed:
        sys.stderr.write("no-arbitrage conditions failed: " + ", ".join(rep.failed()) + "\n")
        return EXIT_NEGATIVE
    return EXIT_OK


def _eps_list(text):
    if text is None:
        return [0.02, 0.01, 0.005, 0.0025]
    parts = [p for p in text.split(",") if p.strip()]
    if not parts:
        raise ConfigError("eps list is empty")
    try:
        return [float(p) for p in parts]
    except ValueError:
        raise ConfigError(f"bad eps list {text!r}") from None


def cmd_sweep(args, cfg):
    from .analysis import epsilon_sweep

    eps = _eps_list(args.eps)
    res = epsilon_sweep(cfg.market, cfg.contract, eps, order=args.order, engine=args.engine or "pde",
                        num=cfg.numerics, variant=args.variant)
    _emit(args, "sweep", cfg, res.to_dict(), res.rows())
    return EXIT_OK


def cmd_replicate(args, cfg):
    from .analysis import replicate

    rep = replicate(cfg.market, cfg.contract, cfg.numerics, n_eval_paths=args.eval_paths, side=args.side,
                    engine=args.engine or "auto")
    d = rep.to_dict()
    flat = {k: v for k, v in d.items() if k != "error_quantiles"}
    flat.update(d["error_quantiles"])
    _emit(args, "replicate", cfg, d, (list(flat), [list(flat.values())]))
    return EXIT_OK


def cmd_ordering(args, cfg):
    from .analysis import ordering_check

    rep = ordering_check(cfg.market, cfg.contract, cfg.numerics, engine=args.engine or "lsmc")
    rows = [[l["link"], l["gap"], l["tolerance"], l["passed"]] for l in rep.links + rep.grid_links]
    _emit(args, "ordering", cfg, rep.to_dict(), (["link", "gap", "tolerance", "passed"], rows))
    if not rep.passed:
        sys.stderr.write("ordering violated: " + ", ".join(rep.violated()) + "\n")
        return EXIT_NEGATIVE
    return EXIT_OK


COMMANDS = {
    "price": cmd_price,
    "xva": cmd_xva,
    "check-noarb": cmd_check_noarb,
    "sweep": cmd_sweep,
    "replicate": cmd_replicate,
    "ordering": cmd_ordering,
    "validate": cmd_validate,
}


def build_parser():
    p = argparse.ArgumentParser(prog="xva-bsde", description="BSDE pricing with funding, collateral and default risk")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("config", help="JSON config file, or fixture:NAME for a bundled one")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--paths", type=int)
        sp.add_argument("--steps", type=int)
        sp.add_argument("--workers", type=int)
        sp.add_argument("--engine")
        sp.add_argument("--out", help="write the JSON report here instead of stdout")
        sp.add_argument("--csv", help="also write a CSV table here")
        if name == "sweep":
            sp.add_argument("--eps", help="comma-separated half-spreads, decreasing")
            sp.add_argument("--order", type=int, choices=(0, 1), default=0)
            sp.add_argument("--variant", choices=("strict", "literal"), default="strict")
        if name == "replicate":
            sp.add_argument("--eval-paths", type=int)
            sp.add_argument("--side", choices=("+", "-"), default="+")
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        overrides = {"seed": args.seed, "n_paths": args.paths, "n_steps": args.steps, "workers": args.workers}
        cfg = parse_config(read_config_text(args.config), overrides)
        return COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        sys.stderr.write(f"config error: {exc}\n")
        return EXIT_CONFIG
    except NumericError as exc:
        sys.stderr.write(f"numeric error: {exc}\n")
        return EXIT_NUMERIC
    except XvaError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
