"""
Run configuration files.

INI-style text (`key = value` under `[section]` headers) describing the
system, the policy, the reward, the oracle and the experiment grid. A
config may start from a preset (`[run] preset = name`) and override it
key by key. Every error carries the line of the offending key; the key
schema is documented in docs/CONFIG_SCHEMA.md.
"""

import configparser
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Tuple

import numpy as np

from .analysis import LINEAR, NONLINEAR, BoundParams, estimate_assumption_constants
from .errors import ConfigError, SpecError
from .model import AvgL1Reward, LinearPolicy, SumNormReward, SystemSpec
from .noise import DiagonalGaussian, FiniteSupport, NoiseDistribution, point_mass
from .oracle import oracle_from_name
from .presets import preset_text

logger = logging.getLogger(__name__)

NOISE_KEYS = ("noise", "mean", "var", "atoms", "masses", "m", "lattice")

SCHEMA = {
    "run": {"preset", "seed", "seeds", "jobs", "n", "t", "out"},
    "system": {"a", "b", "c", "x0"} | {f"{side}_{key}" for side in ("transition", "obs") for key in NOISE_KEYS},
    "policy": {"g", "lipschitz"},
    "reward": {"kind", "lipschitz"},
    "oracle": {"kind", "max_paths", "max_support", "n_ref"},
    "bounds": {"l_r", "l_g", "c_a", "rho_a", "c_b", "c_ab", "rho_ab", "c_bg", "m", "d",
               "epsilon", "delta", "p", "variant"},
    "lowerbound": {"t", "n", "reps", "k"},
}

_SECTION_LINE = re.compile(r"^\s*\[(?P<section>[^\]]+)\]")
_KEY_LINE = re.compile(r"^(?P<key>[^\s=:#\[][^=:]*?)\s*[=:]")


@dataclass(frozen=True)
class Entry:
    """One config value and where it came from."""

    value: str
    lineno: Optional[int]
    origin: str


Sections = Dict[str, Dict[str, Entry]]


def _line_numbers(text: str) -> Dict[Tuple[str, str], int]:
    """(section, key) -> 1-based line of its assignment."""
    lines = {}
    section = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        header = _SECTION_LINE.match(line)
        if header:
            section = header.group("section").strip()
            continue
        key = _KEY_LINE.match(line)
        if key and section is not None:
            lines[(section, key.group("key").strip().lower())] = lineno
    return lines


def read_sections(text: str, origin: str = "<config>") -> Sections:
    """
    Parse config text into sections of Entry values.

    Raises:
        ConfigError: syntax errors, duplicate keys, unknown sections or keys
    """
    parser = configparser.ConfigParser(interpolation=None, comment_prefixes=("#",),
                                       inline_comment_prefixes=("#",))
    try:
        parser.read_string(text, source=origin)
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigError("content before the first [section] header", exc.lineno) from exc
    except (configparser.DuplicateOptionError, configparser.DuplicateSectionError) as exc:
        raise ConfigError(exc.message.splitlines()[0], exc.lineno) from exc
    except configparser.ParsingError as exc:
        lineno, line = exc.errors[0]
        raise ConfigError(f"cannot parse {line.strip()!r}", lineno) from exc

    lines = _line_numbers(text)
    sections: Sections = {}
    for name in parser.sections():
        if name not in SCHEMA:
            raise ConfigError(f"unknown section [{name}] (expected one of {', '.join(sorted(SCHEMA))})",
                              _section_line(text, name))
        for key, value in parser.items(name):
            lineno = lines.get((name, key))
            if key not in SCHEMA[name]:
                raise ConfigError(f"unknown key '{key}' in [{name}]", lineno)
            sections.setdefault(name, {})[key] = Entry(value.strip(), lineno, origin)
    return sections


def _section_line(text: str, name: str) -> Optional[int]:
    for lineno, line in enumerate(text.splitlines(), start=1):
        header = _SECTION_LINE.match(line)
        if header and header.group("section").strip() == name:
            return lineno
    return None


def merge_sections(base: Sections, override: Sections) -> Sections:
    merged = {name: dict(values) for name, values in base.items()}
    for name, values in override.items():
        merged.setdefault(name, {}).update(values)
    return merged


# --------------------------------------------------------------------------
# Value parsers
# --------------------------------------------------------------------------

def _float(entry: Entry, what: str) -> float:
    try:
        return float(entry.value)
    except ValueError:
        raise ConfigError(f"{what}: expected a number, got {entry.value!r}", entry.lineno) from None


def _int(entry: Entry, what: str) -> int:
    try:
        return int(entry.value)
    except ValueError:
        raise ConfigError(f"{what}: expected an integer, got {entry.value!r}", entry.lineno) from None


def _numbers(entry: Entry, what: str) -> List[float]:
    parts = [p for p in re.split(r"[,\s]+", entry.value) if p]
    try:
        return [float(p) for p in parts]
    except ValueError:
        raise ConfigError(f"{what}: expected numbers, got {entry.value!r}", entry.lineno) from None


def parse_int_list(value: str, what: str, lineno: Optional[int] = None) -> List[int]:
    """'10, 100, 1000' -> [10, 100, 1000]; must be nonempty, positive and ascending."""
    entry = Entry(value, lineno, "<cli>")
    parts = [p for p in re.split(r"[,\s]+", value) if p]
    if not parts:
        raise ConfigError(f"{what}: list is empty", lineno)
    try:
        numbers = [int(p) for p in parts]
    except ValueError:
        raise ConfigError(f"{what}: expected integers, got {entry.value!r}", lineno) from None
    if any(n < 1 for n in numbers):
        raise ConfigError(f"{what}: entries must be positive", lineno)
    if any(b <= a for a, b in zip(numbers, numbers[1:])):
        raise ConfigError(f"{what}: entries must be strictly ascending", lineno)
    return numbers


def _matrix(text: str, entry: Entry, what: str) -> np.ndarray:
    """'1, 0; 0, 1' -> 2x2; a bare number -> 1x1."""
    rows = [row for row in text.split(";")]
    try:
        parsed = [[float(x) for x in re.split(r"[,\s]+", row.strip()) if x] for row in rows]
    except ValueError:
        raise ConfigError(f"{what}: cannot read matrix {text.strip()!r}", entry.lineno) from None
    if not parsed or any(len(r) != len(parsed[0]) for r in parsed) or not parsed[0]:
        raise ConfigError(f"{what}: rows must be nonempty and of equal length", entry.lineno)
    return np.array(parsed, dtype=np.float64)


def _matrix_seq(entry: Entry, what: str) -> List[np.ndarray]:
    """One matrix, or one per step separated by '|'."""
    return [_matrix(part, entry, what) for part in entry.value.split("|")]


# --------------------------------------------------------------------------
# System description
# --------------------------------------------------------------------------

def _noise(values: Dict[str, Entry], side: str, dim: int) -> NoiseDistribution:
    kind_entry = values.get(f"{side}_noise")
    if kind_entry is None:
        raise ConfigError(f"[system] needs {side}_noise (gaussian | atoms | zero)")
    kind = kind_entry.value.lower()

    def get(key):
        return values.get(f"{side}_{key}")

    declared_m = _float(get("m"), f"{side}_m") if get("m") else None
    try:
        if kind == "zero":
            return point_mass(np.zeros(dim))
        if kind == "gaussian":
            mean = _numbers(get("mean"), f"{side}_mean") if get("mean") else [0.0]
            var = _numbers(get("var"), f"{side}_var") if get("var") else [1.0]
            mean = np.broadcast_to(np.array(mean), (dim,)) if len(mean) == 1 else np.array(mean)
            var = np.broadcast_to(np.array(var), (dim,)) if len(var) == 1 else np.array(var)
            return DiagonalGaussian(mean, var, subgaussian_m=declared_m)
        if kind == "atoms":
            if get("atoms") is None:
                raise ConfigError(f"{side}_noise = atoms needs {side}_atoms", kind_entry.lineno)
            points = _matrix(get("atoms").value, get("atoms"), f"{side}_atoms")
            if dim == 1 and points.shape[0] == 1:
                points = points.T
            if get("masses"):
                masses = np.array(_numbers(get("masses"), f"{side}_masses"))
            else:
                masses = np.full(points.shape[0], 1.0 / points.shape[0])
            lattice = _float(get("lattice"), f"{side}_lattice") if get("lattice") else 1.0
            return FiniteSupport(points, masses, lattice_scale=lattice, subgaussian_m=declared_m)
    except SpecError as exc:
        raise ConfigError(f"{side} noise: {exc}", kind_entry.lineno) from exc
    raise ConfigError(f"{side}_noise must be gaussian, atoms or zero, got {kind!r}", kind_entry.lineno)


@dataclass(frozen=True, eq=False)
class SystemDescription:
    """
    System matrices and noise laws as read from a config.

    Each matrix list holds either one matrix (repeated over the horizon) or
    one matrix per step.
    """

    A_list: Tuple[np.ndarray, ...]
    B_list: Tuple[np.ndarray, ...]
    C_list: Tuple[np.ndarray, ...]
    x0: np.ndarray
    transition_noise: NoiseDistribution
    obs_noise: NoiseDistribution

    @property
    def state_dim(self) -> int:
        return int(self.A_list[0].shape[0])

    def spec_for(self, horizon: int) -> SystemSpec:
        """SystemSpec for this horizon; lengths are not checked here (see validate_spec)."""

        def expand(seq):
            return tuple(seq) * horizon if len(seq) == 1 else tuple(seq)

        return SystemSpec(
            state_dim=self.state_dim,
            action_dim=int(self.B_list[0].shape[1]),
            obs_dim=int(self.C_list[0].shape[0]),
            horizon=horizon,
            A_seq=expand(self.A_list),
            B_seq=expand(self.B_list),
            C_seq=expand(self.C_list),
            transition_noise_seq=(self.transition_noise,) * horizon,
            obs_noise_seq=(self.obs_noise,) * horizon,
            x0=self.x0,
        )


def _system(values: Dict[str, Entry]) -> SystemDescription:
    for key in ("a", "b", "c"):
        if key not in values:
            raise ConfigError(f"[system] needs {key.upper()}")
    A_list = _matrix_seq(values["a"], "A")
    B_list = _matrix_seq(values["b"], "B")
    C_list = _matrix_seq(values["c"], "C")
    d = A_list[0].shape[0]
    x0 = np.array(_numbers(values["x0"], "x0")) if "x0" in values else np.zeros(d)
    if x0.shape == (1,) and d > 1:
        x0 = np.full(d, x0[0])
    return SystemDescription(
        A_list=tuple(A_list),
        B_list=tuple(B_list),
        C_list=tuple(C_list),
        x0=x0,
        transition_noise=_noise(values, "transition", d),
        obs_noise=_noise(values, "obs", C_list[0].shape[0]),
    )


# --------------------------------------------------------------------------
# Run config
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class LowerBoundGrid:
    t_list: List[int] = field(default_factory=lambda: [1, 3, 5, 8])
    n_list: List[int] = field(default_factory=lambda: [1, 2, 8, 64])
    reps: int = 10_000
    k: float = 2.0


@dataclass(frozen=True, eq=False)
class RunConfig:
    """A fully resolved run: system, controller, oracle and experiment grid."""

    source: str
    preset: Optional[str]
    master_seed: int
    seeds: int
    jobs: int
    n_list: List[int]
    t_list: List[int]
    out: Optional[str]
    system: SystemDescription
    policy: LinearPolicy
    reward_kind: str
    reward_lipschitz: float
    oracle_kind: object
    bounds: Dict[str, str] = field(default_factory=dict)
    lowerbound: LowerBoundGrid = field(default_factory=LowerBoundGrid)

    def spec_for(self, horizon: int) -> SystemSpec:
        return self.system.spec_for(horizon)

    def reward_for(self, horizon: int):
        if self.reward_kind == "avg_l1":
            return AvgL1Reward(self.system.state_dim, horizon)
        return SumNormReward(self.reward_lipschitz)

    def bound_params(self, horizon: int) -> BoundParams:
        """
        Bound constants for this horizon: estimated from the system, then
        overridden by any value given in [bounds].
        """
        overrides = {key: float(value) for key, value in self.bounds.items() if key not in ("variant", "p")}
        spec = self.spec_for(horizon)
        estimated = estimate_assumption_constants(
            spec, self.policy.G, rho_a=overrides.get("rho_a", 1.0), rho_ab=overrides.get("rho_ab", 1.0))
        values = {
            "L_r": self.reward_for(horizon).lipschitz,
            "L_g": self.policy.lipschitz,
            "C_a": estimated["C_a"],
            "rho_a": estimated["rho_a"],
            "C_b": estimated["C_b"],
            "C_ab": estimated["C_ab"],
            "rho_ab": estimated["rho_ab"],
            "C_bg": estimated["C_bg"],
            "subgaussian_m": declared_subgaussian_m(spec),
            "d": spec.state_dim,
            "T": horizon,
        }
        names = {"l_r": "L_r", "l_g": "L_g", "c_a": "C_a", "rho_a": "rho_a", "c_b": "C_b", "c_ab": "C_ab",
                 "rho_ab": "rho_ab", "c_bg": "C_bg", "m": "subgaussian_m", "d": "d",
                 "epsilon": "epsilon", "delta": "delta"}
        for key, value in overrides.items():
            values[names[key]] = int(value) if key == "d" else value
        p = self.bounds.get("p")
        if p is not None:
            values["p"] = 2.0 ** -horizon if p == "lowerbound" else float(p)
        return BoundParams(**values)

    @property
    def variant(self) -> str:
        return self.bounds.get("variant", NONLINEAR)


def declared_subgaussian_m(spec: SystemSpec) -> float:
    """
    Smallest sub-Gaussian parameter m over the transition noise.

    Declared values win; otherwise a Gaussian gives 1 / max variance, a
    finite-support law 4 / diameter^2, and a point mass infinity.
    """
    values = []
    for mu in spec.transition_noise_seq:
        if mu.subgaussian_m is not None:
            values.append(mu.subgaussian_m)
        elif isinstance(mu, DiagonalGaussian):
            values.append(1.0 / float(np.max(mu.variances)))
        elif mu.is_point_mass:
            values.append(float("inf"))
        else:
            diffs = mu.points[:, None, :] - mu.points[None, :, :]
            values.append(4.0 / float(np.max(np.sum(diffs ** 2, axis=-1))))
    return min(values)


def _entries(sections: Sections, name: str) -> Dict[str, Entry]:
    return sections.get(name, {})


def build_run_config(sections: Sections, source: str, defaults: Optional[Mapping[str, object]] = None) -> RunConfig:
    """
    Resolve parsed sections into a RunConfig.

    Args:
        sections (Sections): merged preset and user values
        source (str): where the values came from (for messages)
        defaults (Mapping, optional): process defaults for seed, seeds and jobs
    """
    defaults = dict(defaults or {})
    run = _entries(sections, "run")
    preset = run["preset"].value if "preset" in run else None

    master_seed = _int(run["seed"], "seed") if "seed" in run else int(defaults.get("seed", 0))
    seeds = _int(run["seeds"], "seeds") if "seeds" in run else int(defaults.get("seeds", 100))
    jobs = _int(run["jobs"], "jobs") if "jobs" in run else int(defaults.get("jobs", 1))
    if not 0 <= master_seed < 2 ** 64:
        lineno = run["seed"].lineno if "seed" in run else None
        raise ConfigError(f"seed must fit in 64 unsigned bits, got {master_seed}", lineno)
    if seeds < 1:
        raise ConfigError(f"seeds must be at least 1, got {seeds}", run["seeds"].lineno)
    if jobs < 1:
        raise ConfigError(f"jobs must be at least 1, got {jobs}", run["jobs"].lineno)
    if "n" not in run:
        raise ConfigError("[run] needs N (particle counts)")
    if "t" not in run:
        raise ConfigError("[run] needs T (horizons)")
    n_list = parse_int_list(run["n"].value, "N", run["n"].lineno)
    t_list = parse_int_list(run["t"].value, "T", run["t"].lineno)

    system = _system(_entries(sections, "system"))

    policy_values = _entries(sections, "policy")
    if "g" not in policy_values:
        raise ConfigError("[policy] needs G")
    gain = _matrix(policy_values["g"].value, policy_values["g"], "G")
    lipschitz = _float(policy_values["lipschitz"], "lipschitz") if "lipschitz" in policy_values else None
    try:
        policy = LinearPolicy(gain, lipschitz=lipschitz)
    except SpecError as exc:
        raise ConfigError(str(exc), policy_values["g"].lineno) from exc

    reward_values = _entries(sections, "reward")
    reward_kind = reward_values["kind"].value if "kind" in reward_values else "avg_l1"
    if reward_kind not in ("avg_l1", "sum_norm"):
        raise ConfigError(f"reward kind must be avg_l1 or sum_norm, got {reward_kind!r}", reward_values["kind"].lineno)
    reward_lipschitz = _float(reward_values["lipschitz"], "lipschitz") if "lipschitz" in reward_values else 1.0

    oracle_values = _entries(sections, "oracle")
    oracle_name = oracle_values["kind"].value if "kind" in oracle_values else "enumeration"
    limits = {key: _int(oracle_values[key], key) for key in ("max_paths", "max_support", "n_ref") if key in oracle_values}
    try:
        oracle_kind = oracle_from_name(oracle_name, **limits)
    except ValueError as exc:
        raise ConfigError(str(exc), oracle_values["kind"].lineno if "kind" in oracle_values else None) from exc

    bounds_values = _entries(sections, "bounds")
    bounds = {}
    for key, entry in bounds_values.items():
        if key == "variant":
            if entry.value not in (NONLINEAR, LINEAR):
                raise ConfigError(f"variant must be {NONLINEAR} or {LINEAR}, got {entry.value!r}", entry.lineno)
        elif not (key == "p" and entry.value == "lowerbound"):
            _float(entry, key)
        bounds[key] = entry.value

    lb_values = _entries(sections, "lowerbound")
    grid = LowerBoundGrid()
    lowerbound = LowerBoundGrid(
        t_list=parse_int_list(lb_values["t"].value, "T", lb_values["t"].lineno) if "t" in lb_values else grid.t_list,
        n_list=parse_int_list(lb_values["n"].value, "N", lb_values["n"].lineno) if "n" in lb_values else grid.n_list,
        reps=_int(lb_values["reps"], "reps") if "reps" in lb_values else grid.reps,
        k=_float(lb_values["k"], "k") if "k" in lb_values else grid.k,
    )

    return RunConfig(
        source=source,
        preset=preset,
        master_seed=master_seed,
        seeds=seeds,
        jobs=jobs,
        n_list=n_list,
        t_list=t_list,
        out=run["out"].value if "out" in run else None,
        system=system,
        policy=policy,
        reward_kind=reward_kind,
        reward_lipschitz=reward_lipschitz,
        oracle_kind=oracle_kind,
        bounds=bounds,
        lowerbound=lowerbound,
    )


def load_run_config_text(text: str, source: str = "<config>", preset: Optional[str] = None,
                         defaults: Optional[Mapping[str, object]] = None) -> RunConfig:
    """
    Parse config text, layered over a preset.

    The preset is the one named in `[run] preset`, else `preset`; with
    neither, the text must describe the whole run.
    """
    user = read_sections(text, source)
    name = user.get("run", {}).get("preset")
    preset_name = name.value if name is not None else preset
    sections = user
    if preset_name is not None:
        try:
            base = read_sections(preset_text(preset_name), f"preset:{preset_name}")
        except ConfigError as exc:
            raise ConfigError(str(exc), name.lineno if name is not None else None) from exc
        sections = merge_sections(base, user)
        sections.setdefault("run", {})["preset"] = Entry(preset_name, None, source)
    config = build_run_config(sections, source, defaults)
    logger.debug(f"loaded run config from {source} (preset {preset_name})")
    return config


def load_run_config(path, preset: Optional[str] = None,
                    defaults: Optional[Mapping[str, object]] = None) -> RunConfig:
    """
    Read a config file.

    Raises:
        ConfigError: unreadable file or invalid content (with line number)
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return load_run_config_text(text, str(path), preset=preset, defaults=defaults)


def load_preset(name: str, defaults: Optional[Mapping[str, object]] = None) -> RunConfig:
    return load_run_config_text("", f"preset:{name}", preset=name, defaults=defaults)


__all__ = [
    "Entry",
    "LowerBoundGrid",
    "RunConfig",
    "SCHEMA",
    "SystemDescription",
    "build_run_config",
    "declared_subgaussian_m",
    "load_preset",
    "load_run_config",
    "load_run_config_text",
    "merge_sections",
    "parse_int_list",
    "read_sections",
]
