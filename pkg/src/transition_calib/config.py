"""YAML run configuration with defaults and line-numbered validation errors."""

import copy

import yaml

from .errors import ConfigError
from .simulate import HIGH_DEFAULT, LOW_DEFAULT, TWO_FACTOR

SECTIONS = ("model", "truth", "populations", "calibration", "pf", "gpr", "study")

DEFAULTS = {
    "model": {"family": "default_only", "periods": 150, "ratings": None},
    "calibration": {"method": "laplace", "tol": 1e-8, "renormalize": False},
    "pf": {"particles": 1000},
    "gpr": {"grid_count": 20, "grid_range": [0.1, 0.9]},
    "study": {"scenarios": 1000, "methods": ["laplace"], "renormalize": False},
}

PRESETS = {"high_default": HIGH_DEFAULT, "low_default": LOW_DEFAULT, "two_factor": TWO_FACTOR}

TRUTH_KEYS = {"default_only": ("pd", "a", "k"), "two_factor": ("pd", "nd", "a", "k", "rho")}

DEFAULTS_HELP = """\
configuration file (YAML), sections and defaults:
  model:        family: default_only | two_factor (default_only); periods: 150;
                ratings: list of labels, last is default (R1.., D)
  truth:        pd, a, k (+ nd, rho for two_factor); or preset: high_default |
                low_default | two_factor
  populations:  list of row populations (taken from the preset when omitted)
  calibration:  method: laplace | pf-gpr | stepwise (laplace); tol: 1e-8
  pf:           particles: 1000
  gpr:          grid_count: 20; grid_range: [0.1, 0.9]
  study:        scenarios: 1000; methods: [laplace]; renormalize: false
"""


def _line_of(node, path):
    """1-based line of the YAML node at ``path`` (deepest existing ancestor)."""
    line = node.start_mark.line + 1 if node is not None else 1
    for key in path:
        if not isinstance(node, yaml.MappingNode):
            break
        for k, v in node.value:
            if k.value == key:
                node = v
                line = k.start_mark.line + 1
                break
        else:
            break
    return line


def load_config(path):
    """Parse ``path`` and merge defaults; raises ConfigError with file:line."""
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        root = yaml.compose(text)
        raw = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"{path}:{mark.line + 1}" if mark is not None else str(path)
        raise ConfigError(f"{where}: invalid YAML ({getattr(exc, 'problem', exc)})") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}:1: top level must be a mapping of sections")
    return normalize_config(raw, path, root)


def normalize_config(raw, path="<config>", root=None):
    def fail(msg, *keys):
        raise ConfigError(f"{path}:{_line_of(root, keys)}: {msg}")

    for key in raw:
        if key not in SECTIONS:
            fail(f"unknown section {key!r}; expected one of {', '.join(SECTIONS)}", key)
    cfg = copy.deepcopy(DEFAULTS)
    for sec in ("model", "calibration", "pf", "gpr", "study"):
        given = raw.get(sec) or {}
        if not isinstance(given, dict):
            fail(f"section {sec!r} must be a mapping", sec)
        for k in given:
            if k not in cfg[sec]:
                fail(f"unknown key {k!r} in section {sec!r}", sec, k)
        cfg[sec].update(given)
    family = cfg["model"]["family"]
    if family not in TRUTH_KEYS:
        fail(f"model.family must be one of {', '.join(TRUTH_KEYS)}", "model", "family")
    truth = raw.get("truth")
    preset = None
    if isinstance(truth, dict) and "preset" in truth:
        name = truth["preset"]
        if name not in PRESETS:
            fail(f"unknown preset {name!r}; expected one of {', '.join(PRESETS)}",
                 "truth", "preset")
        preset = PRESETS[name]
        merged = {k: v for k, v in preset.items() if k != "populations"}
        merged.update({k: v for k, v in truth.items() if k != "preset"})
        truth = merged
    if truth is not None:
        if not isinstance(truth, dict):
            fail("section 'truth' must be a mapping", "truth")
        for k in TRUTH_KEYS[family]:
            if k not in truth:
                fail(f"section 'truth' is missing key {k!r}", "truth")
        cfg["truth"] = {k: truth[k] for k in TRUTH_KEYS[family]}
    else:
        cfg["truth"] = None
    pops = raw.get("populations")
    if pops is None and preset is not None:
        pops = preset["populations"]
    if pops is not None:
        if not isinstance(pops, list) or not all(isinstance(p, int) and p > 0 for p in pops):
            fail("populations must be a list of positive integers", "populations")
    cfg["populations"] = pops
    if cfg["calibration"]["method"] not in ("laplace", "pf-gpr", "stepwise"):
        fail("calibration.method must be laplace, pf-gpr or stepwise", "calibration", "method")
    if not isinstance(cfg["pf"]["particles"], int) or cfg["pf"]["particles"] < 1:
        fail("pf.particles must be a positive integer", "pf", "particles")
    if not isinstance(cfg["study"]["scenarios"], int) or cfg["study"]["scenarios"] < 1:
        fail("study.scenarios must be a positive integer", "study", "scenarios")
    if not isinstance(cfg["model"]["periods"], int) or cfg["model"]["periods"] < 3:
        fail("model.periods must be an integer >= 3", "model", "periods")
    return cfg


def require(cfg, path, *sections):
    """Raise ConfigError unless every named section is present."""
    for sec in sections:
        if cfg.get(sec) is None:
            raise ConfigError(f"{path}: missing required section {sec!r}")
