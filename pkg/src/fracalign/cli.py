"""Command-line front end: ``fracalign <subcommand> --config run.yaml``.

Subcommands
-----------
design     build the configured precoders for one channel draw
check      report interference and joint subspace dimensions per receiver
optimize   run the conjugate-gradient design and emit its iteration trace
sweep      Monte Carlo BER sweep of every configured scheme
gradcheck  compare analytic gradients with central finite differences

Exit codes: 0 on success, 1 on invalid input (including unwritable
output and a failed gradient check), 2 on numerical-conditioning failure.
Every CSV starts with ``#`` comment lines carrying the package version,
the seed and a hash of the effective configuration.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import sys
import tempfile
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np
import yaml

from . import __version__
from .alignment import check_fia_constraints, random_precoders
from .constellation import enumerate_vectors, get_constellation
from .exceptions import ConditioningError, FracAlignError, ValidationError
from .gradient_opt import OptimizerOptions, finite_difference_check, optimize_multistart
from .metrics import OBJECTIVE_KINDS, ObjectiveSpec
from .scenario import Scenario, draw_channels
from .simulate import SCHEMES, RECEIVERS, SweepConfig, design_precoders, run_ber_sweep, write_sweep_csv

__all__ = ["ConfigError", "RunConfig", "SchemeConfig", "SweepSettings", "parse_config", "run", "main"]

SUBCOMMANDS = ("design", "check", "optimize", "sweep", "gradcheck")
GRADCHECK_TOL = 1e-4


class ConfigError(ValidationError):
    """Invalid configuration; the message starts with the offending key path."""


_SCENARIO_KEYS = {"num_users", "antennas", "streams", "symbol_extension", "noise_variance",
                  "interference_gain", "max_power", "channel_kind"}
_SCHEME_KEYS = {"name", "columns", "objective", "eta", "md_exponent", "optimizer", "baseline_iters"}
_SWEEP_KEYS = {"snr_db", "channel_realizations", "symbols_per_realization", "receiver", "constellation"}
_TOP_KEYS = {"scenario", "scheme", "sweep", "seed", "out", "threads"}
_OPTIMIZER_KEYS = set(OptimizerOptions.__dataclass_fields__)


@dataclass(frozen=True)
class SchemeConfig:
    name: str = "ia"
    columns: int | None = None
    objective: ObjectiveSpec = field(default_factory=ObjectiveSpec)
    optimizer: OptimizerOptions = field(default_factory=OptimizerOptions)
    baseline_iters: int = 500


@dataclass(frozen=True)
class SweepSettings:
    snr_db: tuple = (0.0, 5.0, 10.0, 15.0, 20.0)
    channel_realizations: int = 10
    symbols_per_realization: int = 1000
    receiver: str = "md"
    constellation: str = "qpsk"


@dataclass(frozen=True)
class RunConfig:
    """Validated configuration of one CLI run."""

    scenario: Scenario
    schemes: tuple
    sweep: SweepSettings
    seed: int = 0
    out: str | None = None
    threads: int = 1
    subcommand: str | None = None
    raw: dict = field(default_factory=dict, compare=False)

    def config_hash(self) -> str:
        """SHA-256 of the canonical JSON form of the effective configuration."""
        payload = dict(self.raw, seed=self.seed, threads=self.threads)
        payload.pop("out", None)
        text = json.dumps(payload, sort_keys=True, default=str)
        return hashlib.sha256(text.encode()).hexdigest()[:16]


def _check_keys(block: Any, allowed: set, path: str) -> dict:
    if block is None:
        return {}
    if not isinstance(block, dict):
        raise ConfigError(f"{path}: expected a mapping, got {type(block).__name__}")
    unknown = sorted(set(block) - allowed)
    if unknown:
        raise ConfigError(f"{path}.{unknown[0]}: unknown key (allowed: {', '.join(sorted(allowed))})")
    return block


def _wrap(path: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except ConfigError:
        raise
    except (ValidationError, TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from None


def _int(value, path: str, minimum: int | None = None) -> int:
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
        raise ConfigError(f"{path}: expected an integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise ConfigError(f"{path}: must be >= {minimum}, got {value}")
    return int(value)


def _parse_scheme(block: dict, path: str) -> SchemeConfig:
    block = _check_keys(block, _SCHEME_KEYS, path)
    name = block.get("name", "ia")
    if name not in SCHEMES:
        raise ConfigError(f"{path}.name: unknown scheme {name!r} (one of {', '.join(SCHEMES)})")
    kind = block.get("objective", "mi")
    kinds = [kind] if isinstance(kind, str) else list(kind)
    for k, kk in enumerate(kinds):
        if kk not in OBJECTIVE_KINDS:
            sub = f"{path}.objective" if isinstance(kind, str) else f"{path}.objective[{k}]"
            raise ConfigError(f"{sub}: unknown objective {kk!r} (one of {', '.join(OBJECTIVE_KINDS)})")
    objective = _wrap(path, ObjectiveSpec, kind if isinstance(kind, str) else tuple(kinds),
                      block.get("eta", 2.0), block.get("md_exponent", 8.0))
    opt_block = _check_keys(block.get("optimizer"), _OPTIMIZER_KEYS, f"{path}.optimizer")
    optimizer = _wrap(f"{path}.optimizer", OptimizerOptions, **opt_block)
    columns = block.get("columns")
    if columns is not None:
        columns = _int(columns, f"{path}.columns", 1)
    return SchemeConfig(name, columns, objective, optimizer,
                        _int(block.get("baseline_iters", 500), f"{path}.baseline_iters", 1))


def parse_config(text: str) -> RunConfig:
    """Parse and validate YAML configuration text.

    Raises
    ------
    ConfigError
        On malformed YAML, unknown keys or invalid values; the message
        names the key path, e.g. ``scenario.streams[1]``.
    """
    try:
        data = yaml.safe_load(text) if text.strip() else {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"<root>: malformed YAML: {exc}") from None
    data = _check_keys(data, _TOP_KEYS, "<root>")

    sc = dict(_check_keys(data.get("scenario"), _SCENARIO_KEYS, "scenario"))
    for key in ("num_users", "antennas"):
        if key not in sc:
            raise ConfigError(f"scenario.{key}: required")
    K = _int(sc["num_users"], "scenario.num_users", 2)
    M = _int(sc["antennas"], "scenario.antennas", 1)
    L = _int(sc.get("symbol_extension", 1), "scenario.symbol_extension", 1)
    streams = sc.get("streams", [max(M * L // 2, 1)] * K)
    if isinstance(streams, int):
        streams = [streams] * K
    if not isinstance(streams, list) or len(streams) != K:
        raise ConfigError(f"scenario.streams: expected a list of {K} integers")
    for i, n in enumerate(streams):
        n = _int(n, f"scenario.streams[{i}]")
        if not 1 <= n <= M * L:
            raise ConfigError(f"scenario.streams[{i}]: user {i} has {n} streams, "
                              f"must lie in [1, M*L = {M * L}]")
    nv = sc.get("noise_variance", 1.0)
    if not isinstance(nv, (int, float)) or isinstance(nv, bool) or not nv > 0:
        raise ConfigError(f"scenario.noise_variance: must be a positive number, got {nv!r}")
    max_power = sc.get("max_power")
    if max_power is not None:
        if not isinstance(max_power, list) or len(max_power) != K:
            raise ConfigError(f"scenario.max_power: expected a list of {K} positive numbers")
        for i, p in enumerate(max_power):
            if not isinstance(p, (int, float)) or not p > 0:
                raise ConfigError(f"scenario.max_power[{i}]: must be positive, got {p!r}")
    scenario = _wrap("scenario", Scenario, K, M, tuple(streams), L, float(nv),
                     float(sc.get("interference_gain", 1.0)), max_power,
                     sc.get("channel_kind", "mimo-dense"))

    raw_schemes = data.get("scheme", {"name": "ia"})
    if isinstance(raw_schemes, list):
        if not raw_schemes:
            raise ConfigError("scheme: list must not be empty")
        schemes = tuple(_parse_scheme(b, f"scheme[{k}]") for k, b in enumerate(raw_schemes))
    else:
        schemes = (_parse_scheme(raw_schemes, "scheme"),)

    sw = _check_keys(data.get("sweep"), _SWEEP_KEYS, "sweep")
    snr = sw.get("snr_db", list(SweepSettings.snr_db))
    if not isinstance(snr, list) or not snr or not all(isinstance(s, (int, float)) for s in snr):
        raise ConfigError("sweep.snr_db: expected a nonempty list of numbers")
    receiver = sw.get("receiver", "md")
    if receiver not in RECEIVERS:
        raise ConfigError(f"sweep.receiver: unknown receiver {receiver!r} (one of {', '.join(RECEIVERS)})")
    constellation = sw.get("constellation", "qpsk")
    _wrap("sweep.constellation", get_constellation, constellation)
    sweep = SweepSettings(tuple(float(s) for s in snr),
                          _int(sw.get("channel_realizations", 10), "sweep.channel_realizations", 1),
                          _int(sw.get("symbols_per_realization", 1000),
                               "sweep.symbols_per_realization", 1),
                          receiver, constellation)

    seed = _int(data.get("seed", 0), "seed", 0)
    threads = _int(data.get("threads", 1), "threads", 1)
    out = data.get("out")
    if out is not None and not isinstance(out, str):
        raise ConfigError(f"out: expected a path string, got {out!r}")
    return RunConfig(scenario, schemes, sweep, seed, out, threads, raw=data)


def _provenance(cfg: RunConfig) -> str:
    return (f"# fracalign version={__version__}\n# seed={cfg.seed}\n"
            f"# config_hash={cfg.config_hash()}\n# subcommand={cfg.subcommand}\n")


def _check_writable(path: str) -> None:
    directory = os.path.dirname(os.path.abspath(path)) or "."
    if not os.path.isdir(directory):
        raise ValidationError(f"output directory {directory!r} does not exist")
    if not os.access(directory, os.W_OK):
        raise ValidationError(f"output directory {directory!r} is not writable")
    if os.path.isdir(path):
        raise ValidationError(f"output path {path!r} is a directory")


def write_atomic(path: str, text: str) -> None:
    """Write ``text`` to a temporary file next to ``path`` and rename it over."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix=".fracalign-", suffix=".tmp", dir=directory)
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _csv_text(cfg: RunConfig, header: Sequence[str], rows: Sequence[Sequence]) -> str:
    buf = io.StringIO()
    buf.write(_provenance(cfg))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _sweep_config(cfg: RunConfig, scheme: SchemeConfig) -> SweepConfig:
    return SweepConfig(cfg.scenario, cfg.sweep.snr_db, cfg.sweep.channel_realizations,
                       cfg.sweep.symbols_per_realization, scheme.name, cfg.sweep.receiver, cfg.seed,
                       cfg.sweep.constellation, scheme.objective, scheme.optimizer, scheme.columns,
                       scheme.baseline_iters, cfg.threads)


def _design(cfg: RunConfig, scheme: SchemeConfig):
    channels = draw_channels(cfg.scenario, cfg.seed)
    rng = np.random.default_rng([cfg.seed, 1])
    return channels, design_precoders(_sweep_config(cfg, scheme), channels,
                                      cfg.scenario.noise_variance, rng)


def _cmd_design(cfg: RunConfig, out) -> str:
    rows = []
    for scheme in cfg.schemes:
        _, p = _design(cfg, scheme)
        for u, q in enumerate(p):
            for r in range(q.shape[0]):
                for c in range(q.shape[1]):
                    rows.append([scheme.name, u, r, c, f"{q[r, c].real:.17g}", f"{q[r, c].imag:.17g}"])
        print(f"{scheme.name}: streams={p.streams} spac={tuple(round(s, 4) for s in p.spac)} "
              f"powers={tuple(round(float(t), 6) for t in p.powers)}", file=out)
    return _csv_text(cfg, ["scheme", "user", "row", "col", "re", "im"], rows)


def _cmd_check(cfg: RunConfig, out) -> str:
    rows = []
    for scheme in cfg.schemes:
        channels, p = _design(cfg, scheme)
        for rep in check_fia_constraints(channels, p):
            row = [scheme.name, rep.receiver, rep.interference_dim, rep.joint_dim,
                   str(rep.signal_not_contained).lower()]
            rows.append(row)
            print(" ".join(str(v) for v in row), file=out)
    return _csv_text(cfg, ["scheme", "receiver", "interference_dim", "joint_dim",
                           "signal_not_contained"], rows)


def _cmd_optimize(cfg: RunConfig, out) -> str:
    rows = []
    for scheme in cfg.schemes:
        base = SchemeConfig("ia" if scheme.optimizer.init == "ia" else "fia-mimo", scheme.columns)
        if scheme.optimizer.init in ("ia", "fia"):
            channels, init = _design(cfg, base)
        else:
            channels = draw_channels(cfg.scenario, cfg.seed)
            init = random_precoders(cfg.scenario.dim, cfg.scenario.streams,
                                    np.random.default_rng([cfg.seed, 1]), cfg.scenario.max_power)
        const = get_constellation(cfg.sweep.constellation)
        spaces = [enumerate_vectors(const, n, i) for i, n in enumerate(init.streams)]
        res = optimize_multistart(channels, init, scheme.objective, spaces, cfg.scenario.noise_variance,
                                  scheme.optimizer, cfg.scenario.max_power,
                                  np.random.default_rng([cfg.seed, 2]))
        for k, (c, g) in enumerate(zip(res.trace, res.grad_norms)):
            rows.append([k, f"{c:.12g}", f"{g:.6g}"])
        print(f"objective {res.trace[0]:.6g} -> {res.trace[-1]:.6g} in {res.accepted_steps} steps"
              f"{' (stalled)' if res.stalled else ''}", file=out)
    return _csv_text(cfg, ["iter", "C", "grad_norm"], rows)


def _cmd_sweep(cfg: RunConfig, out) -> str:
    results = []
    for scheme in cfg.schemes:
        res = run_ber_sweep(_sweep_config(cfg, scheme))
        results.append(res)
        print(f"{scheme.name}: " + " ".join(f"{s:g}dB:{b:.3e}" for s, b in zip(res.snr_db, res.ber))
              + (f" skipped={res.skipped}" if res.skipped else ""), file=out)
    buf = io.StringIO()
    buf.write(_provenance(cfg))
    write_sweep_csv(buf, results)
    return buf.getvalue()


def _cmd_gradcheck(cfg: RunConfig, out):
    channels = draw_channels(cfg.scenario, cfg.seed)
    rng = np.random.default_rng([cfg.seed, 3])
    p = random_precoders(cfg.scenario.dim, cfg.scenario.streams, rng, cfg.scenario.max_power)
    const = get_constellation(cfg.sweep.constellation)
    spaces = [enumerate_vectors(const, n, i) for i, n in enumerate(p.streams)]
    eta = cfg.schemes[0].objective.eta
    r = cfg.schemes[0].objective.md_exponent
    rows, worst = [], 0.0
    for kind in OBJECTIVE_KINDS:
        err = finite_difference_check(channels, p, ObjectiveSpec(kind, eta, r), spaces,
                                      cfg.scenario.noise_variance, rng)
        worst = max(worst, err)
        rows.append([kind, f"{err:.3e}"])
        print(f"{kind}: max relative error {err:.3e}", file=out)
    print(f"max relative error {worst:.3e} ({'ok' if worst < GRADCHECK_TOL else 'FAILED'})", file=out)
    return _csv_text(cfg, ["kind", "max_rel_error"], rows), worst < GRADCHECK_TOL


_COMMANDS = {"design": _cmd_design, "check": _cmd_check, "optimize": _cmd_optimize,
             "sweep": _cmd_sweep, "gradcheck": _cmd_gradcheck}


def run(cfg: RunConfig, out=None, err=None) -> int:
    """Execute ``cfg.subcommand``; returns the process exit code."""
    out = out or sys.stdout
    err = err or sys.stderr
    if cfg.subcommand not in SUBCOMMANDS:
        print(f"error: unknown subcommand {cfg.subcommand!r}", file=err)
        return 1
    try:
        if cfg.out:
            _check_writable(cfg.out)
        result = _COMMANDS[cfg.subcommand](cfg, out)
        ok = True
        if isinstance(result, tuple):
            result, ok = result
        if cfg.out:
            write_atomic(cfg.out, result)
        return 0 if ok else 1
    except (ConditioningError, np.linalg.LinAlgError) as exc:
        print(f"error: numerical conditioning failure: {exc}", file=err)
        return 2
    except (FracAlignError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=err)
        return 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fracalign", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"fracalign {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="YAML configuration file")
        p.add_argument("--seed", type=int, help="master seed (overrides the config)")
        p.add_argument("--out", help="CSV output path (overrides the config)")
        p.add_argument("--threads", type=int, help="worker processes for sweeps")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        with open(args.config) as fh:
            text = fh.read()
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return 1
    try:
        cfg = parse_config(text)
        overrides = {"subcommand": args.subcommand}
        if args.seed is not None:
            if args.seed < 0 or args.seed >= 2 ** 64:
                raise ConfigError(f"--seed: must be an unsigned 64-bit integer, got {args.seed}")
            overrides["seed"] = args.seed
        if args.out is not None:
            overrides["out"] = args.out
        if args.threads is not None:
            if args.threads < 1:
                raise ConfigError(f"--threads: must be >= 1, got {args.threads}")
            overrides["threads"] = args.threads
        cfg = RunConfig(**{**{f: getattr(cfg, f) for f in cfg.__dataclass_fields__}, **overrides})
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return run(cfg)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
