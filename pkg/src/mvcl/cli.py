"""Command-line harness: ``mvcl {sample,loss,optimize,sweep,verify}``.

Settings come from built-in defaults, then a JSON ``--config`` file, then
explicit flags, in increasing precedence.  Unknown config keys are rejected.
Every emitted file carries a provenance record (tool version, command, seed
and the effective config); MVE batches cannot hold comments, so they get a
``<path>.json`` sidecar instead.

Exit codes: 0 ok, 1 usage or invalid request, 2 unreadable input file,
3 numerical failure, 4 failed check.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .embedding import (
    SamplerConfig,
    ViewBatch,
    atomic_write_text,
    format_batch,
    instance_stream,
    read_batch,
    sample_multiview,
    sample_uniform_sphere,
)
from .errors import BadHeader, Diverged, MVCLError, NonFinite, ShapeMismatch, SvdFailure
from .losses import LOSS_NAMES, TWO_VIEW_LOSSES, LossSpec, evaluate, value_and_gradient
from .metrics import metric_report, normalized_uniformity_gap
from .optim import (
    LinearEncoder,
    OptConfig,
    encoder_gradient,
    finite_difference,
    finite_difference_gradient,
    max_relative_error,
    optimize_restarts,
)
from .oracle import agreement_error, naive_evaluate

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_BAD_INPUT = 2
EXIT_NUMERIC = 3
EXIT_CHECK = 4

U64 = 1 << 64
FAULTS = ("gradient-sign-flip",)

_DOMAIN_VERIFY_SHAPES = 21
_DOMAIN_VERIFY_ENCODER = 22


class UsageError(Exception):
    pass


class InputFileError(Exception):
    pass


def _str_list(text: str) -> list[str]:
    return [tok.strip() for tok in text.split(",") if tok.strip()]


def _int_list(text: str) -> list[int]:
    return [int(tok) for tok in _str_list(text)]


_OPT_KEYS = {
    "steps": 1000,
    "learning_rate": None,
    "momentum": 0.0,
    "tolerance_grad_norm": 1e-8,
}

DEFAULTS = {
    "sample": {"sampler": "multiview", "m": 8, "n": 2, "d": 3, "concentration": 1.0},
    "loss": {
        "losses": ["mv-infonce", "mv-dhel"],
        "tau": 0.5,
        "m": 8,
        "n": 2,
        "d": 3,
        "concentration": 1.0,
        "input": None,
    },
    "optimize": {
        "loss": "mv-dhel",
        "tau": 0.5,
        "m": 8,
        "n": 4,
        "d": 3,
        "concentration": 1.0,
        "input": None,
        **_OPT_KEYS,
        "log_every": 100,
        "restarts": 1,
        "t": 2.0,
        "epsilon": 1e-6,
    },
    "sweep": {
        "losses": ["mv-infonce", "mv-dhel"],
        "tau": 0.5,
        "n_values": [2, 3, 4],
        "m": 16,
        "budget": None,
        "d": 16,
        "concentration": 1.0,
        **_OPT_KEYS,
        "repeats": 1,
        "t": 2.0,
        "epsilon": 1e-6,
    },
    "verify": {
        "tau": 0.5,
        "oracle_batches": 20,
        "gradient_batches": 2,
        "gap_m": [64, 256, 1024],
        "gap_n": 3,
        "gap_d": 3,
        "fault_injection": None,
    },
}

# value kind per key: used for flag parsing and config type checks
_KINDS = {
    "sampler": "str",
    "loss": "str",
    "input": "str",
    "fault_injection": "str",
    "losses": "str_list",
    "n_values": "int_list",
    "gap_m": "int_list",
    "m": "int",
    "n": "int",
    "d": "int",
    "steps": "int",
    "log_every": "int",
    "restarts": "int",
    "repeats": "int",
    "budget": "int",
    "oracle_batches": "int",
    "gradient_batches": "int",
    "gap_n": "int",
    "gap_d": "int",
    "tau": "float",
    "concentration": "float",
    "learning_rate": "float",
    "momentum": "float",
    "tolerance_grad_norm": "float",
    "t": "float",
    "epsilon": "float",
}

_FLAG_TYPES = {"str": str, "str_list": _str_list, "int_list": _int_list, "int": int, "float": float}

_HELP = {
    "sample": "sample a synthetic multi-view batch and write it in MVE format",
    "loss": "evaluate losses on a batch and print a JSON report",
    "optimize": "optimise a batch directly on the spheres and report final metrics",
    "sweep": "optimise over a grid of view counts and write a CSV table",
    "verify": "run the self-checks; exit 4 if any fails",
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _add_globals(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="PATH", default=argparse.SUPPRESS, help="JSON config file")
    p.add_argument("--seed", metavar="U64", type=int, default=argparse.SUPPRESS, help="64-bit seed")
    p.add_argument("--out", metavar="PATH", default=argparse.SUPPRESS, help="output path")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mvcl", description="Multi-view contrastive loss harness.")
    parser.add_argument("--version", action="version", version=f"mvcl {__version__}")
    _add_globals(parser)
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    for cmd, defaults in DEFAULTS.items():
        p = sub.add_parser(cmd, help=_HELP[cmd], description=_HELP[cmd])
        _add_globals(p)
        for key, default in defaults.items():
            kind = _KINDS[key]
            hint = f"(default: {default})" if not isinstance(default, list) else f"(default: {','.join(map(str, default))})"
            p.add_argument(
                "--" + key.replace("_", "-"),
                dest=key,
                type=_FLAG_TYPES[kind],
                default=argparse.SUPPRESS,
                help=hint,
            )
    return parser


# --- config handling -------------------------------------------------------------


def _check_kind(key: str, value):
    kind = _KINDS[key]
    if value is None:
        return value
    if kind == "str" and isinstance(value, str):
        return value
    if kind == "int" and isinstance(value, int) and not isinstance(value, bool):
        return value
    if kind == "float" and isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if kind == "str_list":
        if isinstance(value, str):
            return [value]
        if isinstance(value, list) and all(isinstance(v, str) for v in value):
            return list(value)
    if kind == "int_list" and isinstance(value, list):
        if all(isinstance(v, int) and not isinstance(v, bool) for v in value):
            return list(value)
    raise UsageError(f"config key {key!r} has the wrong type ({type(value).__name__}, expected {kind})")


def _load_config_file(path: str) -> dict:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise InputFileError(f"cannot read config {path}: {exc.strerror or exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputFileError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise InputFileError(f"config {path} must hold a JSON object")
    return data


def _check_seed(seed) -> int:
    if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < U64:
        raise UsageError(f"seed must be an integer in [0, 2^64), got {seed!r}")
    return seed


def resolve_config(command: str, args: argparse.Namespace) -> tuple[dict, int, str | None]:
    """Merge defaults, config file and flags; returns (config, seed, out)."""
    cfg = dict(DEFAULTS[command])
    seed, out = 0, None
    if hasattr(args, "config"):
        raw = _load_config_file(args.config)
        allowed = set(cfg) | {"seed", "out"}
        unknown = sorted(set(raw) - allowed)
        if unknown:
            raise UsageError(f"unknown config key(s) for {command!r}: {', '.join(unknown)}")
        for key, value in raw.items():
            if key == "seed":
                seed = _check_seed(value)
            elif key == "out":
                if not isinstance(value, str):
                    raise UsageError("config key 'out' must be a string")
                out = value
            else:
                cfg[key] = _check_kind(key, value)
    for key in DEFAULTS[command]:
        if hasattr(args, key):
            cfg[key] = getattr(args, key)
    if hasattr(args, "seed"):
        seed = _check_seed(args.seed)
    if hasattr(args, "out"):
        out = args.out
    return cfg, seed, out


def provenance(command: str, cfg: dict, seed: int) -> dict:
    return {"tool": "mvcl", "version": __version__, "command": command, "seed": seed, "config": cfg}


def _csv_header(prov: dict) -> str:
    return "# provenance: " + json.dumps(prov, sort_keys=True, separators=(",", ":")) + "\n"


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=False) + "\n"


def _load_input(path: str) -> ViewBatch:
    try:
        return read_batch(path)
    except OSError as exc:
        raise InputFileError(f"cannot read batch {path}: {exc.strerror or exc}") from exc
    except (BadHeader, ShapeMismatch, NonFinite) as exc:
        raise InputFileError(f"bad batch file {path}: {exc}") from exc


def _initial_batch(cfg: dict, seed: int) -> ViewBatch:
    if cfg.get("input"):
        return _load_input(cfg["input"])
    return sample_multiview(SamplerConfig(cfg["m"], cfg["n"], cfg["d"], cfg["concentration"], seed))


def _opt_config(cfg: dict, seed: int, log_every: int) -> OptConfig:
    return OptConfig(
        steps=cfg["steps"],
        learning_rate=cfg["learning_rate"],
        momentum=cfg["momentum"],
        tolerance_grad_norm=cfg["tolerance_grad_norm"],
        seed=seed,
        log_every=log_every,
    )


def _restart_seed(seed: int, k: int) -> int:
    return (seed + k) % U64


def _write_batch_with_sidecar(batch: ViewBatch, path: Path, prov: dict) -> None:
    atomic_write_text(path, format_batch(batch))
    atomic_write_text(Path(str(path) + ".json"), _dump({"provenance": prov, "file": path.name}))


# --- commands --------------------------------------------------------------------


def cmd_sample(cfg: dict, seed: int, out: str | None) -> int:
    if cfg["sampler"] == "multiview":
        batch = sample_multiview(SamplerConfig(cfg["m"], cfg["n"], cfg["d"], cfg["concentration"], seed))
    elif cfg["sampler"] == "uniform":
        batch = sample_uniform_sphere(cfg["m"], cfg["n"], cfg["d"], seed)
    else:
        raise UsageError(f"sampler must be 'multiview' or 'uniform', got {cfg['sampler']!r}")
    if out is None:
        sys.stdout.write(format_batch(batch))
    else:
        _write_batch_with_sidecar(batch, Path(out), provenance("sample", cfg, seed))
    return EXIT_OK


def loss_report(name: str, tau: float, batch: ViewBatch) -> dict:
    bd = evaluate(LossSpec(name, tau), batch)
    return {
        "loss": name,
        "total": bd.total,
        "alignment_term": bd.alignment_term,
        "uniformity_term": bd.uniformity_term,
        "terms_per_instance": bd.terms_per_instance,
        "kernel_evals": bd.kernel_evals,
    }


def cmd_loss(cfg: dict, seed: int, out: str | None) -> int:
    if not cfg["losses"]:
        raise UsageError("losses must not be empty")
    batch = _initial_batch(cfg, seed)
    reports = [loss_report(name, cfg["tau"], batch) for name in cfg["losses"]]
    text = _dump({"provenance": provenance("loss", cfg, seed), "reports": reports})
    if out is not None:
        atomic_write_text(out, text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_optimize(cfg: dict, seed: int, out: str | None) -> int:
    if cfg["restarts"] < 1:
        raise UsageError("restarts must be >= 1")
    if cfg["input"] and cfg["restarts"] != 1:
        raise UsageError("restarts > 1 needs sampled starts, not an input file")
    spec = LossSpec(cfg["loss"], cfg["tau"])
    opt = _opt_config(cfg, seed, cfg["log_every"])
    inits = [_initial_batch(cfg, _restart_seed(seed, k)) for k in range(cfg["restarts"])]
    final, trace, best_k, finals = optimize_restarts(spec, inits, opt)
    report = metric_report(final, cfg["t"], cfg["epsilon"])
    prov = provenance("optimize", cfg, seed)
    doc = {
        "provenance": prov,
        "metrics": json.loads(report.to_json()),
        "final_loss": trace.final.loss,
        "steps_run": trace.final.step,
        "restart": best_k,
        "restart_final_losses": finals,
    }
    text = _dump(doc)
    if out is not None:
        outdir = Path(out)
        atomic_write_text(outdir / "trace.csv", _csv_header(prov) + trace.to_csv())
        _write_batch_with_sidecar(final, outdir / "final.mve", prov)
        atomic_write_text(outdir / "report.json", text)
    sys.stdout.write(text)
    return EXIT_OK


SWEEP_COLUMNS = ("loss", "n", "m", "repeats", "final_loss", "alignment", "uniformity_moment", "rankme", "numerical_rank")


def sweep_rows(cfg: dict, seed: int) -> list[dict]:
    if not cfg["losses"] or not cfg["n_values"]:
        raise UsageError("sweep needs at least one loss and one view count")
    if cfg["repeats"] < 1:
        raise UsageError("repeats must be >= 1")
    rows = []
    for name in cfg["losses"]:
        spec = LossSpec(name, cfg["tau"])
        for n in cfg["n_values"]:
            m = cfg["budget"] // n if cfg["budget"] is not None else cfg["m"]
            opt = _opt_config(cfg, seed, max(1, cfg["steps"]))
            cols = {k: [] for k in SWEEP_COLUMNS[4:]}
            for r in range(cfg["repeats"]):
                init = sample_multiview(SamplerConfig(m, n, cfg["d"], cfg["concentration"], _restart_seed(seed, r)))
                final, trace, _, _ = optimize_restarts(spec, [init], opt)
                rep = metric_report(final, cfg["t"], cfg["epsilon"])
                cols["final_loss"].append(trace.final.loss)
                cols["alignment"].append(rep.alignment)
                cols["uniformity_moment"].append(rep.uniformity_moment)
                cols["rankme"].append(rep.rankme)
                cols["numerical_rank"].append(rep.numerical_rank)
            row = {"loss": name, "n": n, "m": m, "repeats": cfg["repeats"]}
            row.update({k: float(np.median(v)) for k, v in cols.items()})
            rows.append(row)
    return rows


def format_sweep(rows: list[dict], prov: dict) -> str:
    lines = [_csv_header(prov).rstrip("\n"), ",".join(SWEEP_COLUMNS)]
    for row in rows:
        fields = []
        for key in SWEEP_COLUMNS:
            v = row[key]
            fields.append(f"{v:.17g}" if isinstance(v, float) else str(v))
        lines.append(",".join(fields))
    return "\n".join(lines) + "\n"


def cmd_sweep(cfg: dict, seed: int, out: str | None) -> int:
    if cfg["budget"] is not None and cfg["budget"] < 1:
        raise UsageError("budget must be positive")
    text = format_sweep(sweep_rows(cfg, seed), provenance("sweep", cfg, seed))
    if out is not None:
        atomic_write_text(out, text)
    sys.stdout.write(text)
    return EXIT_OK


# --- verify ----------------------------------------------------------------------


def _random_small_batch(rng: np.random.Generator, name: str, seed: int, k: int) -> ViewBatch:
    m = int(rng.integers(2, 7))
    n = 2 if name in TWO_VIEW_LOSSES else int(rng.integers(2, 5))
    d = int(rng.integers(1, 6))
    return sample_uniform_sphere(m, n, d, _restart_seed(seed, k))


def check_oracle(cfg: dict, seed: int) -> tuple[float, float]:
    rng = instance_stream(seed, 0, _DOMAIN_VERIFY_SHAPES)
    worst = 0.0
    k = 0
    for _ in range(cfg["oracle_batches"]):
        for name in LOSS_NAMES:
            batch = _random_small_batch(rng, name, seed, k)
            k += 1
            spec = LossSpec(name, cfg["tau"])
            fast = evaluate(spec, batch).total
            slow = naive_evaluate(spec, batch)
            worst = max(worst, agreement_error(fast, slow))
    return worst, 1e-12


def check_gradient(name: str, cfg: dict, seed: int, flip: bool) -> tuple[float, float]:
    rng = instance_stream(seed, 1 + LOSS_NAMES.index(name), _DOMAIN_VERIFY_SHAPES)
    worst = 0.0
    for k in range(cfg["gradient_batches"]):
        batch = _random_small_batch(rng, name, seed, 1000 + k)
        spec = LossSpec(name, cfg["tau"])
        _, grad = value_and_gradient(spec, batch)
        if flip:
            grad = -grad
        worst = max(worst, max_relative_error(grad, finite_difference_gradient(spec, batch)))
    return worst, 1e-6


def check_encoder(cfg: dict, seed: int) -> tuple[float, float]:
    rng = instance_stream(seed, 0, _DOMAIN_VERIFY_ENCODER)
    spec = LossSpec("mv-dhel", cfg["tau"])
    X = rng.standard_normal((4, 3, 5))
    W = rng.standard_normal((3, 5))
    analytic = encoder_gradient(LinearEncoder(W), X, spec)

    def f(w):
        Z = X @ w.T
        U = Z / np.linalg.norm(Z, axis=-1, keepdims=True)
        return evaluate(spec, ViewBatch(U), check_norm=False).total

    return max_relative_error(analytic, finite_difference(f, W, 1e-5)), 1e-6


def run_checks(cfg: dict, seed: int) -> list[dict]:
    fault = cfg["fault_injection"]
    if fault is not None and fault not in FAULTS:
        raise UsageError(f"unknown fault_injection {fault!r}; choose from {FAULTS}")
    results = []

    def record(name, value, threshold, passed=None):
        ok = value < threshold if passed is None else passed
        results.append({"check": name, "value": value, "threshold": threshold, "passed": bool(ok)})

    record("oracle_agreement", *check_oracle(cfg, seed))
    for i, name in enumerate(LOSS_NAMES):
        # the fault fixture corrupts exactly one loss's gradient
        flip = fault == "gradient-sign-flip" and i == LOSS_NAMES.index("mv-dhel")
        record(f"gradient_{name}", *check_gradient(name, cfg, seed, flip))
    record("gradient_encoder", *check_encoder(cfg, seed))
    for name in ("mv-infonce", "mv-dhel"):
        gaps = [
            normalized_uniformity_gap(name, m, cfg["gap_n"], cfg["gap_d"], cfg["tau"], seed) for m in cfg["gap_m"]
        ]
        rise = max([b - a for a, b in zip(gaps, gaps[1:])], default=0.0)
        record(f"asymptotic_gap_rise_{name}", rise, 0.01, rise <= 0.01)
        record(f"asymptotic_gap_{name}", gaps[-1], 0.05)
    return results


def cmd_verify(cfg: dict, seed: int, out: str | None) -> int:
    if cfg["oracle_batches"] < 1 or cfg["gradient_batches"] < 1 or not cfg["gap_m"]:
        raise UsageError("verify needs positive batch counts and a non-empty gap_m")
    t0 = time.perf_counter()
    results = run_checks(cfg, seed)
    for r in results:
        tag = "PASS" if r["passed"] else "FAIL"
        print(f"{tag} {r['check']} value={r['value']:.3e} threshold={r['threshold']:.1e}")
    failed = [r["check"] for r in results if not r["passed"]]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed in {time.perf_counter() - t0:.1f}s")
    if out is not None:
        atomic_write_text(out, _dump({"provenance": provenance("verify", cfg, seed), "checks": results}))
    return EXIT_CHECK if failed else EXIT_OK


COMMANDS = {
    "sample": cmd_sample,
    "loss": cmd_loss,
    "optimize": cmd_optimize,
    "sweep": cmd_sweep,
    "verify": cmd_verify,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help(sys.stderr)
            return EXIT_USAGE
        cfg, seed, out = resolve_config(args.command, args)
        return COMMANDS[args.command](cfg, seed, out)
    except UsageError as exc:
        print(f"mvcl: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InputFileError as exc:
        print(f"mvcl: error: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT
    except (Diverged, SvdFailure) as exc:
        print(f"mvcl: numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except MVCLError as exc:
        print(f"mvcl: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FloatingPointError as exc:
        print(f"mvcl: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
