"""Command-line entry point: ``thermalsim run`` and ``thermalsim list``.

Exit codes: 0 success, 1 runtime failure, 2 configuration error.  Failures
are reported on stderr as one line of JSON.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path
from typing import Any, Sequence

import pydantic

from . import __version__
from .experiments import EXPERIMENTS, FieldError, RunContext, write_json

SEED_ENV = "THERMALSIM_SEED"
TOP_LEVEL_KEYS = {"experiment", "seed", "output_dir", "parameters"}


class ConfigError(Exception):
    def __init__(self, key: str, message: str):
        super().__init__(message)
        self.key = key


def _emit_error(kind: str, message: str, key: str | None = None) -> None:
    doc: dict[str, Any] = {"error": kind, "message": message}
    if key is not None:
        doc["key"] = key
    sys.stderr.write(json.dumps(doc, sort_keys=True) + "\n")


def _parse_value(raw: str) -> Any:
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def apply_overrides(config: dict, overrides: Sequence[str]) -> dict:
    """Apply ``dotted.path=value`` overrides; bare keys address ``parameters``."""
    cfg = json.loads(json.dumps(config))
    for item in overrides:
        if "=" not in item:
            raise ConfigError(item, f"override {item!r} is not of the form key=value")
        path, raw = item.split("=", 1)
        keys = [k for k in path.split(".") if k]
        if not keys:
            raise ConfigError(item, "empty override key")
        if keys[0] not in TOP_LEVEL_KEYS:
            keys = ["parameters", *keys]
        node = cfg
        for k in keys[:-1]:
            child = node.setdefault(k, {})
            if not isinstance(child, dict):
                raise ConfigError(path, f"cannot descend into non-object key {k!r}")
            node = child
        node[keys[-1]] = _parse_value(raw)
    return cfg


def load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError("config", f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError("config", f"config is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config", "config document must be a JSON object")
    return doc


def resolve(config: dict, seed_flag: int | None, out_flag: str | None) -> tuple[str, Any, int, Path, dict]:
    unknown = set(config) - TOP_LEVEL_KEYS
    if unknown:
        key = sorted(unknown)[0]
        raise ConfigError(key, f"unknown top-level key {key!r}")
    name = config.get("experiment")
    if name not in EXPERIMENTS:
        raise ConfigError("experiment", f"experiment must be one of {sorted(EXPERIMENTS)}, got {name!r}")
    raw_params = config.get("parameters", {})
    if not isinstance(raw_params, dict):
        raise ConfigError("parameters", "parameters must be a JSON object")
    try:
        params = EXPERIMENTS[name].params.model_validate(raw_params)
    except pydantic.ValidationError as exc:
        err = exc.errors()[0]
        loc = [str(p) for p in err["loc"]]
        cause = err.get("ctx", {}).get("error")
        if isinstance(cause, FieldError):
            loc.append(cause.field)
            msg = str(cause)
        else:
            msg = f"{'.'.join(loc) or 'parameters'}: {err['msg']}"
        raise ConfigError(".".join(["parameters", *loc]), msg) from None

    if seed_flag is not None:
        seed = seed_flag
    elif "seed" in config:
        seed = config["seed"]
    elif os.environ.get(SEED_ENV):
        try:
            seed = int(os.environ[SEED_ENV])
        except ValueError:
            raise ConfigError(SEED_ENV, f"{SEED_ENV} must be an integer") from None
    else:
        seed = 0
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ConfigError("seed", f"seed must be a non-negative integer, got {seed!r}")

    out = out_flag if out_flag is not None else config.get("output_dir", "out")
    if not isinstance(out, str):
        raise ConfigError("output_dir", "output_dir must be a string")

    echo = {
        "experiment": name,
        "seed": seed,
        "output_dir": out,
        "parameters": params.model_dump(mode="json"),
    }
    return name, params, seed, Path(out), echo


def list_experiments() -> str:
    width = max(len(n) for n in EXPERIMENTS)
    return "\n".join(f"{n.ljust(width)}  {EXPERIMENTS[n].description}" for n in sorted(EXPERIMENTS)) + "\n"


def run(
    config_path: str | None,
    overrides: Sequence[str] = (),
    seed: int | None = None,
    out: str | None = None,
    threads: int | None = None,
    debug_dump: bool = False,
) -> int:
    start = time.perf_counter()
    try:
        cfg = apply_overrides(load_config(config_path), overrides)
        name, params, seed_val, out_dir, echo = resolve(cfg, seed, out)
    except ConfigError as exc:
        _emit_error("config", str(exc), exc.key)
        return 2

    n_threads = threads if threads is not None else (os.cpu_count() or 1)
    ctx = RunContext(seed=seed_val, out=out_dir, threads=max(1, n_threads), debug_dump=debug_dump)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        artifacts = EXPERIMENTS[name].runner(params, ctx)
    except Exception as exc:  # noqa: BLE001 - every engine failure maps to exit 1
        _emit_error("runtime", f"{type(exc).__name__}: {exc}")
        return 1

    manifest = {
        "config_echo": echo,
        "artifact_paths": [str(p.relative_to(out_dir)) for p in artifacts],
        "wall_time": time.perf_counter() - start,
        "version": __version__,
    }
    write_json(out_dir / "manifest.json", manifest)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="thermalsim", description="Numerical experiments on q-expectation dynamics and measurement.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one experiment from a JSON config")
    r.add_argument("config_file", nargs="?", help="config path (same as --config)")
    r.add_argument("--config", dest="config", help="config JSON path")
    r.add_argument("--overrides", nargs="*", default=[], metavar="KEY=VALUE", help="dotted-path overrides applied after loading")
    r.add_argument("--seed", type=int, help=f"master seed (falls back to the config, then ${SEED_ENV})")
    r.add_argument("--out", help="output directory")
    r.add_argument("--threads", type=int, help="worker threads for Monte Carlo engines (default: all cores)")
    r.add_argument("--debug-dump", action="store_true", help="also write per-run trajectories where supported")

    sub.add_parser("list", help="list available experiments")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "list":
        sys.stdout.write(list_experiments())
        return 0
    if args.config_file and args.config and args.config_file != args.config:
        _emit_error("config", "config given both positionally and via --config", "config")
        return 2
    return run(
        args.config or args.config_file,
        args.overrides,
        seed=args.seed,
        out=args.out,
        threads=args.threads,
        debug_dump=args.debug_dump,
    )


if __name__ == "__main__":
    raise SystemExit(main())
