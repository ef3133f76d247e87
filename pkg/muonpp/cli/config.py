"""
Run configuration for the command-line front end.

A run is one command plus a flat map of typed parameters. Values are resolved in three
layers: the command's defaults, then a ``key = value`` file given with ``--config``, then
``--key value`` flags.
"""

import argparse
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

from muonpp import __version__
from muonpp.cli.exceptions import ConfigError
from muonpp.conf import settings
from muonpp.seeding import SEED_RULE
from muonpp.services.linalg.implementations import MSIGN_MODES, SINGULAR_METHODS
from muonpp.services.rmt.implementations import RHO_LAWS, SIGMA_LAWS
from muonpp.services.training.dto import ACTIVATIONS, OPTIMIZER_KINDS

GLOBAL_KEYS = ("output_dir", "seed", "log_level")
LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR")
DEFAULT_OUTPUT_DIR = "muonpp-runs"
BOUNDARY_RULES = ("proposition", "proof")

REQUIRED = object()


def _parse_float(raw: str) -> float:
    value = float(raw)
    if not math.isfinite(value):
        raise ValueError("value must be finite")
    return value


def _parse_bool(raw: str) -> bool:
    lowered = raw.lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected true or false")


def _parse_list(item: Callable[[str], Any]) -> Callable[[str], Tuple[Any, ...]]:
    def parse(raw: str) -> Tuple[Any, ...]:
        return tuple(item(part.strip()) for part in raw.split(",") if part.strip())

    return parse


def _parse_dims(raw: str) -> Tuple[Tuple[int, int], ...]:
    dims = []
    for part in raw.split(","):
        rows, sep, cols = part.strip().lower().partition("x")
        if not sep:
            raise ValueError(f"expected MxN, got {part.strip()!r}")
        dims.append((int(rows), int(cols)))
    return tuple(dims)


KINDS: Dict[str, Callable[[str], Any]] = {
    "int": int,
    "float": _parse_float,
    "str": str,
    "bool": _parse_bool,
    "path": Path,
    "ints": _parse_list(int),
    "floats": _parse_list(_parse_float),
    "dims": _parse_dims,
}
LIST_KINDS = ("ints", "floats", "dims")


def format_value(value: Any) -> str:
    """Inverse of the parsers above, used for the manifest."""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple) and value and isinstance(value[0], tuple):
        return ",".join(f"{rows}x{cols}" for rows, cols in value)
    if isinstance(value, tuple):
        return ",".join(format_value(item) for item in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


@dataclass(frozen=True)
class Param:
    name: str
    kind: str
    default: Any = REQUIRED
    choices: Tuple[Any, ...] = ()
    help: str = ""

    @property
    def flag(self) -> str:
        return "--" + self.name.replace("_", "-")

    @property
    def required(self) -> bool:
        return self.default is REQUIRED

    def parse(self, raw: str) -> Any:
        try:
            value = KINDS[self.kind](raw.strip())
        except ValueError as exc:
            raise ConfigError(f"invalid {self.kind} value {raw!r} for {self.name}: {exc}", key=self.name) from exc
        if self.kind in LIST_KINDS and not value:
            raise ConfigError(f"{self.name} needs at least one value", key=self.name)
        if self.choices and value not in self.choices:
            raise ConfigError(
                f"{self.name} must be one of {', '.join(map(str, self.choices))}, got {value!r}", key=self.name
            )
        return value


@dataclass(frozen=True)
class Command:
    name: str
    description: str
    params: Tuple[Param, ...]


def _network(steps: int) -> Tuple[Param, ...]:
    return (
        Param("widths", "ints", help="layer widths n0,n1,...,nL"),
        Param("activation", "str", "relu", ACTIVATIONS),
        Param("batch_size", "int", 32),
        Param("steps", "int", steps),
    )


def _optimizer(msign_mode: str) -> Tuple[Param, ...]:
    return (
        Param("optimizer", "str", "muonpp", OPTIMIZER_KINDS),
        Param("mu", "float", settings.DEFAULT_MOMENTUM, help="momentum coefficient"),
        Param("nesterov", "bool", False),
        Param("match_scaling", "bool", False, help="muon only: scale by 0.2 sqrt(max(m, n))"),
        Param("msign_mode", "str", msign_mode, MSIGN_MODES),
    )


_WORKERS = Param("workers", "int", settings.EXPERIMENT_WORKERS, help="threads running trials")

COMMANDS: Dict[str, Command] = {
    command.name: command
    for command in (
        Command(
            "step",
            "apply optimizer steps to a MAT1 weight with a MAT1 gradient",
            (
                Param("weight", "path", help="MAT1 weight fixture"),
                Param("grad", "path", help="MAT1 gradient fixture"),
                Param("eta", "float"),
                Param("repeat", "int", 1, help="steps taken with the same gradient"),
            )
            + _optimizer(settings.MSIGN_MODE),
        ),
        Command(
            "train",
            "train a biasless MLP against a random reference network",
            _network(100)
            + (Param("eta", "float"), Param("trigger", "float", None, help="correlation trigger constant C"))
            + _optimizer(settings.TRAIN_MSIGN_MODE),
        ),
        Command(
            "sweep",
            "learning-rate sweep across width multipliers",
            _network(100)
            + (Param("multipliers", "ints", (1, 2, 4, 8)), Param("etas", "floats", help="ascending eta grid"))
            + _optimizer(settings.TRAIN_MSIGN_MODE),
        ),
        Command(
            "coordcheck",
            "width-normalized activation statistics across width multipliers",
            _network(5)
            + (
                Param("multipliers", "ints", (1, 2, 4, 8)),
                Param("eta", "float", 0.1),
                Param("after_step", "int", 3),
            )
            + _optimizer(settings.TRAIN_MSIGN_MODE),
        ),
        Command(
            "rmt-gap",
            "median top singular gap of Gaussian matrices as n grows",
            (
                Param("ns", "ints", (128, 512, 2048)),
                Param("trials", "int", 30),
                Param("method", "str", "lanczos", SINGULAR_METHODS),
                _WORKERS,
            ),
        ),
        Command(
            "rmt-preserve",
            "norm preservation of the projected update on random admissible instances",
            (
                Param("dims", "dims", ((8, 8), (24, 16), (64, 64))),
                Param("trials", "int", 500, help="total across all dims"),
                Param("eta_factor", "float", 0.9, help="eta as a multiple of the admissible bound"),
                _WORKERS,
            ),
        ),
        Command(
            "rmt-ratio",
            "empirical over predicted norms of correlated weights",
            (
                Param("c", "float", 1.0, help="aspect ratio m/n"),
                Param("sigma", "float", 1.0),
                Param("rho", "float", 0.0, help="used by rho_law=const"),
                Param("rho_law", "str", "inv_n2", tuple(sorted(RHO_LAWS))),
                Param("sigma_law", "str", "const", tuple(sorted(SIGMA_LAWS))),
                Param("ns", "ints", (512, 1024, 2048), help="the verdict uses the largest n"),
                Param("trials", "int", 30),
                _WORKERS,
            ),
        ),
        Command(
            "rmt-mom",
            "moment estimator against its per-draw oracle",
            (
                Param("m", "int", 256),
                Param("n", "int", 256),
                Param("sigma", "float", 1.0),
                Param("rho", "float", 0.05),
                Param("trials", "int", 50),
                _WORKERS,
            ),
        ),
        Command(
            "rmt-counterexample",
            "a step size below sigma1 that still breaks the spectral target",
            (Param("delta", "float", 0.1),),
        ),
        Command(
            "rmt-msign",
            "Newton-Schulz msign against the exact polar factor",
            (Param("trials", "int", 100), Param("steps", "int", settings.NEWTON_SCHULZ_STEPS), _WORKERS),
        ),
        Command(
            "rmt-dual",
            "dual subgradient solver against a grid-search oracle",
            (Param("trials", "int", 50), Param("iterations", "int", settings.DUAL_ITERATIONS), _WORKERS),
        ),
        Command(
            "corr-estimate",
            "moment estimate of rho for a MAT1 weight, optionally with the one-shot rescaling",
            (
                Param("weight", "path", help="MAT1 weight fixture"),
                Param("rescale", "bool", False),
                Param("C", "float", None, help="trigger constant, required with rescale"),
                Param("rho_prev", "float", None, help="previous estimate, required with rescale"),
            ),
        ),
        Command(
            "corr-sample",
            "draw one correlated weight and compare its norms with the predictions",
            (
                Param("m", "int"),
                Param("n", "int"),
                Param("sigma", "float", 1.0),
                Param("rho", "float"),
                Param("boundary_rule", "str", "proposition", BOUNDARY_RULES),
            ),
        ),
        Command(
            "budget",
            "steps and tokens before the cumulative update outgrows the init scale",
            (
                Param("eta", "float", help="peak learning rate"),
                Param("n", "int", help="hidden width"),
                Param("init_range", "float"),
                Param("base_width", "int"),
                Param("batch_size", "int", 1, help="tokens per step"),
            ),
        ),
    )
}


@dataclass(frozen=True)
class RunConfig:
    """
    Fully resolved run.

    Attributes:
        command (str): One of ``COMMANDS``.
        parameters (dict): Typed parameter values keyed by name, optional ones may be None.
        seed (int): Master seed.
        output_dir (Path): Directory every output file is written under.
        log_level (str): Root logger level.
    """
    command: str
    parameters: Dict[str, Any]
    seed: int = 0
    output_dir: Path = Path(DEFAULT_OUTPUT_DIR)
    log_level: str = "WARNING"

    def manifest_lines(self, created: str) -> List[str]:
        lines = [
            f"# muonpp {__version__} run manifest",
            f"# command: {self.command}",
            f"# created: {created}",
            f"# seed_rule: {SEED_RULE}",
            f"seed = {self.seed}",
            f"output_dir = {self.output_dir}",
            f"log_level = {self.log_level}",
        ]
        for name, value in self.parameters.items():
            if value is not None:
                lines.append(f"{name} = {format_value(value)}")
        return lines


def usage() -> str:
    width = max(len(name) for name in COMMANDS)
    lines = ["usage: muonpp COMMAND [--config FILE] [--output-dir DIR] [--seed N] [--key value ...]", "", "commands:"]
    lines.extend(f"  {name.ljust(width)}  {command.description}" for name, command in COMMANDS.items())
    return "\n".join(lines)


def read_config_file(path) -> Dict[str, str]:
    """Raw ``key = value`` pairs; ``#`` starts a comment, keys may use ``-`` or ``_``."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc.strerror or exc}", key="config") from exc
    values = {}
    for number, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        key, sep, value = stripped.partition("=")
        key = key.strip().replace("-", "_")
        if not sep or not key:
            raise ConfigError(f"{path}:{number}: expected 'key = value', got {stripped!r}")
        values[key] = value.strip()
    return values


def _flag_parser(command: Command) -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog=f"muonpp {command.name}",
        description=command.description,
        argument_default=argparse.SUPPRESS,
        allow_abbrev=False,
        exit_on_error=False,
    )
    run = parser.add_argument_group("run")
    run.add_argument("--config", metavar="FILE", help="flat 'key = value' file, flags override it")
    run.add_argument("--output-dir", dest="output_dir", metavar="DIR", help=f"default {DEFAULT_OUTPUT_DIR}")
    run.add_argument("--seed", metavar="N", help="master seed, default 0")
    run.add_argument("--log-level", dest="log_level", metavar="LEVEL", help="default WARNING")
    for param in command.params:
        if param.required:
            hint = "required"
        elif param.default is None:
            hint = "optional"
        else:
            hint = f"default {format_value(param.default)}"
        text = f"{param.help}; {hint}" if param.help else hint
        parser.add_argument(param.flag, dest=param.name, metavar=param.kind.upper(), help=text)
    return parser


def _flag_values(command: Command, argv: Sequence[str]) -> Dict[str, str]:
    parser = _flag_parser(command)
    try:
        namespace, unknown = parser.parse_known_args(list(argv))
    except argparse.ArgumentError as exc:
        key = (exc.argument_name or "").split("/")[0].lstrip("-").replace("-", "_") or None
        raise ConfigError(f"{command.name}: {exc.message}", key=key) from exc
    if unknown:
        offender = next((token for token in unknown if token.startswith("-")), unknown[0])
        key = offender.split("=", 1)[0].lstrip("-").replace("-", "_")
        raise ConfigError(f"unknown key {key!r} for command {command.name}", key=key)
    return vars(namespace)


def _parse_seed(raw: str) -> int:
    try:
        seed = int(raw)
    except ValueError as exc:
        raise ConfigError(f"seed must be an integer, got {raw!r}", key="seed") from exc
    if seed < 0:
        raise ConfigError(f"seed must be non-negative, got {seed}", key="seed")
    return seed


def _validate(command: str, parameters: Dict[str, Any]) -> None:
    if command == "corr-sample":
        m, n, rho = parameters["m"], parameters["n"], parameters["rho"]
        if m < 1 or n < 1 or m * n < 2:
            raise ConfigError(f"corr-sample needs m, n >= 1 with m * n >= 2, got m={m}, n={n}", key="m")
        lower = -1.0 / (m * n - 1)
        if not lower <= rho <= 1.0:
            raise ConfigError(
                f"rho={rho:g} is outside the admissible interval [{lower:g}, 1] for m={m}, n={n}", key="rho"
            )
    if command == "corr-estimate" and parameters["rescale"]:
        for key in ("C", "rho_prev"):
            if parameters[key] is None:
                raise ConfigError(f"corr-estimate with rescale = true needs {key}", key=key)


def parse_config(argv: Sequence[str], file: Optional[Path] = None) -> RunConfig:
    """
    Resolve ``argv`` (command first, then ``--key value`` flags) into a typed RunConfig.

    ``file`` is the configuration file to use when ``--config`` is absent from ``argv``.
    Raises ConfigError naming the first unknown, missing or invalid key.
    """
    argv = list(argv)
    if not argv or argv[0].startswith("-"):
        raise ConfigError(f"a command is required, one of: {', '.join(COMMANDS)}", key="command")
    name = argv[0]
    if name not in COMMANDS:
        raise ConfigError(f"unknown command {name!r}, expected one of: {', '.join(COMMANDS)}", key="command")
    command = COMMANDS[name]

    flags = _flag_values(command, argv[1:])
    file = flags.pop("config", None) or file
    known = {param.name for param in command.params} | set(GLOBAL_KEYS)
    raw: Dict[str, str] = {}
    if file:
        for key, value in read_config_file(file).items():
            if key not in known:
                raise ConfigError(f"unknown key {key!r} in {file} for command {name}", key=key)
            raw[key] = value
    raw.update(flags)

    seed = _parse_seed(raw.pop("seed", "0"))
    output_dir = Path(raw.pop("output_dir", DEFAULT_OUTPUT_DIR))
    log_level = raw.pop("log_level", "WARNING").upper()
    if log_level not in LOG_LEVELS:
        raise ConfigError(f"log_level must be one of {', '.join(LOG_LEVELS)}, got {log_level!r}", key="log_level")

    parameters: Dict[str, Any] = {}
    for param in command.params:
        if param.name in raw:
            parameters[param.name] = param.parse(raw[param.name])
        elif param.required:
            raise ConfigError(f"missing required key {param.name} ({param.flag}) for command {name}", key=param.name)
        else:
            parameters[param.name] = param.default
    _validate(name, parameters)
    return RunConfig(command=name, parameters=parameters, seed=seed, output_dir=output_dir, log_level=log_level)
