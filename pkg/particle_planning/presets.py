"""
Named systems, stored as run-config text.

A preset is exactly what `--dump-preset` prints; loading one goes through
the same parser as a user config, and a user config naming a preset in
`[run] preset = ...` overrides it key by key.
"""

from typing import Dict, List

from .errors import ConfigError

RANDOM_WALK = """\
# Scalar random walk with uniform {0, 1} steps, observed in unit Gaussian noise,
# controlled by g(x) = -x. Regret is the average |x_t| gap to the exact-inference run.
[run]
seeds = 100
N = 10, 100, 1000
T = 40

[system]
A = 1
B = 1
C = 1
x0 = 0
transition_noise = atoms
transition_atoms = 0, 1
transition_m = 4
obs_noise = gaussian
obs_mean = 0
obs_var = 1

[policy]
G = -1

[reward]
kind = avg_l1

[oracle]
kind = lattice
"""

GAUSSIAN_SCALAR = """\
# Stable scalar system with Gaussian noise; the ideal process is a Kalman filter.
[run]
seeds = 100
N = 64, 4096
T = 5

[system]
A = 0.9
B = 1
C = 1
x0 = 0
transition_noise = gaussian
transition_mean = 0
transition_var = 1
obs_noise = gaussian
obs_mean = 0
obs_var = 1

[policy]
G = -0.5

[reward]
kind = avg_l1

[oracle]
kind = kalman
"""

ENUMERATION_2ATOM = """\
# +-1 steps with Gaussian observations; every noise path is enumerated exactly.
[run]
seeds = 100
N = 100, 1000, 100000
T = 6

[system]
A = 0.5
B = 1
C = 1
x0 = 0
transition_noise = atoms
transition_atoms = -1, 1
transition_m = 1
obs_noise = gaussian
obs_mean = 0
obs_var = 1

[policy]
G = -0.5

[reward]
kind = avg_l1

[oracle]
kind = enumeration
"""

LOWERBOUND = """\
# +-1 random walk observed without noise; survival of the record o_t = t has probability 2^-T.
[run]
seeds = 100
N = 1, 2, 8, 64
T = 3

[system]
A = 1
B = 0
C = 1
x0 = 0
transition_noise = atoms
transition_atoms = -1, 1
transition_m = 1
obs_noise = zero

[policy]
G = 0

[reward]
kind = avg_l1

[oracle]
kind = enumeration

# g = 0 and B = 0 give zero constants; 1 is a valid upper bound for each.
[bounds]
l_g = 1
c_b = 1
c_bg = 1
p = lowerbound

[lowerbound]
T = 1, 3, 5, 8
N = 1, 2, 8, 64
reps = 10000
k = 2
"""

ZERO_NOISE = """\
# Deterministic system: particles and the exact process coincide.
[run]
seeds = 10
N = 1
T = 10

[system]
A = 1
B = 1
C = 1
x0 = 1
transition_noise = zero
obs_noise = zero

[policy]
G = -0.5

[reward]
kind = avg_l1

[oracle]
kind = kalman
"""

PRESETS: Dict[str, str] = {
    "appendix-c": RANDOM_WALK,
    "gaussian-scalar": GAUSSIAN_SCALAR,
    "enumeration-2atom": ENUMERATION_2ATOM,
    "lowerbound": LOWERBOUND,
    "zero-noise": ZERO_NOISE,
}

PRESET_ALIASES: Dict[str, str] = {"random-walk": "appendix-c"}

DEFAULT_PRESET = "appendix-c"


def preset_names() -> List[str]:
    return sorted(PRESETS)


def preset_text(name: str) -> str:
    """Config text of a preset or alias; ConfigError for unknown names."""
    try:
        return PRESETS[PRESET_ALIASES.get(name, name)]
    except KeyError:
        raise ConfigError(f"unknown preset '{name}' (choose from {', '.join(preset_names())})") from None


__all__ = ["DEFAULT_PRESET", "PRESETS", "PRESET_ALIASES", "preset_names", "preset_text"]
