"""Experiment configuration: YAML with schema checks and line-anchored errors."""
import hashlib
import json
from dataclasses import asdict, dataclass, field
from fractions import Fraction

import yaml

from .errors import ConfigError
from .fields import CoefficientSpec, Reaction
from .grid import check_exponent
from .solver import BoundarySpec, SolveConfig

SPEC_KEYS = {"dim", "matrix_family", "eps", "constant_matrix", "weight_family", "weight_value", "weight_eps",
             "reaction", "m", "domain_halfwidth"}
REACTION_KEYS = {"family", "kappa", "capacity"}
SOLVE_KEYS = {"beta_schedule", "half_width", "h", "ncomp", "gamma", "boundary", "tol_residual", "max_outer",
              "armijo", "backtrack", "max_backtracks", "max_substeps"}
BOUNDARY_KEYS = {"kind", "amplitude", "third", "third_amplitude", "third_width"}
STAGE_KEYS = {
    "almgren": {"stage", "dims", "r_max", "ratio", "center", "pohozaev"},
    "acf": {"stage", "eta", "pair", "radius", "n_ang"},
    "blowup": {"stage", "radius", "holder_alphas", "cutoff_inner", "cutoff_outer"},
    "blowdown": {"stage", "rhos", "pair"},
    "spectral": {"stage", "caps", "stereo_res"},
}
TOP_KEYS = {"spec", "solve", "analyses", "output_dir", "seed"}


@dataclass(frozen=True)
class StageConfig:
    stage: str
    options: dict = field(default_factory=dict)

    def get(self, key, default=None):
        return self.options.get(key, default)


@dataclass(frozen=True)
class ExperimentConfig:
    spec: CoefficientSpec
    solve: SolveConfig
    analyses: tuple = ()
    output_dir: str = "out"
    seed: int = 0
    source: str = ""

    def as_dict(self):
        s = asdict(self.solve)
        s["beta_schedule"] = list(s["beta_schedule"])
        return {"spec": self.spec.as_dict(), "solve": s,
                "analyses": [{"stage": a.stage, **a.options} for a in self.analyses],
                "output_dir": self.output_dir, "seed": self.seed}

    def digest(self):
        blob = json.dumps(self.as_dict(), sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()


def _line(node):
    return node.start_mark.line + 1


def _fail(node, msg):
    raise ConfigError(f"line {_line(node)}: {msg}")


def _check_keys(node, allowed, where):
    if not isinstance(node, yaml.MappingNode):
        _fail(node, f"'{where}' must be a mapping")
    seen = set()
    for k, _ in node.value:
        if k.value not in allowed:
            _fail(k, f"unknown key '{k.value}' in '{where}' (allowed: {', '.join(sorted(allowed))})")
        if k.value in seen:
            _fail(k, f"duplicate key '{k.value}' in '{where}'")
        seen.add(k.value)
    return {k.value: v for k, v in node.value}


def _number(node, where):
    try:
        v = yaml.safe_load(yaml.serialize(node))
    except yaml.YAMLError:
        _fail(node, f"'{where}' is not a number")
    if isinstance(v, bool):
        _fail(node, f"'{where}' must be numeric")
    if isinstance(v, str):
        try:
            v = float(Fraction(v.replace(" ", "")))
        except (ValueError, ZeroDivisionError):
            _fail(node, f"'{where}' must be numeric or a fraction like 1/96, got {v!r}")
    if not isinstance(v, (int, float)):
        _fail(node, f"'{where}' must be numeric")
    return float(v)


def _value(node):
    return yaml.safe_load(yaml.serialize(node))


def _build(where_node, builder, *args, **kw):
    try:
        return builder(*args, **kw)
    except ConfigError as e:
        _fail(where_node, str(e))
    except (ValueError, TypeError) as e:
        _fail(where_node, str(e))


def _spec(node):
    m = _check_keys(node, SPEC_KEYS, "spec")
    if "dim" not in m or "matrix_family" not in m:
        _fail(node, "'spec' needs 'dim' and 'matrix_family'")
    kw = {"dim": int(_number(m["dim"], "spec.dim")), "matrix_family": _value(m["matrix_family"])}
    for k in ("eps", "weight_value", "weight_eps", "m", "domain_halfwidth"):
        if k in m:
            kw[k] = _number(m[k], f"spec.{k}")
    if "weight_family" in m:
        kw["weight_family"] = _value(m["weight_family"])
    if "constant_matrix" in m:
        kw["constant_matrix"] = tuple(tuple(float(x) for x in row) for row in _value(m["constant_matrix"]))
    if "reaction" in m:
        r = _check_keys(m["reaction"], REACTION_KEYS, "spec.reaction")
        rk = {}
        if "family" in r:
            rk["family"] = _value(r["family"])
        if "kappa" in r:
            rk["kappa"] = tuple(float(x) for x in _value(r["kappa"]))
        if "capacity" in r:
            rk["capacity"] = _number(r["capacity"], "spec.reaction.capacity")
        kw["reaction"] = _build(m["reaction"], Reaction, **rk)
    return _build(node, CoefficientSpec, **kw)


def _solve(node, dim):
    m = _check_keys(node, SOLVE_KEYS, "solve")
    if "beta_schedule" not in m:
        _fail(node, "'solve' needs 'beta_schedule'")
    betas = m["beta_schedule"]
    if not isinstance(betas, yaml.SequenceNode):
        _fail(betas, "'beta_schedule' must be a list")
    kw = {"beta_schedule": tuple(_number(b, "beta_schedule entry") for b in betas.value), "dim": dim}
    for k in ("half_width", "h", "tol_residual", "armijo", "backtrack", "gamma"):
        if k in m:
            kw[k] = _number(m[k], f"solve.{k}")
    for k in ("ncomp", "max_outer", "max_backtracks", "max_substeps"):
        if k in m:
            kw[k] = int(_number(m[k], f"solve.{k}"))
    if "gamma" in m:
        try:
            check_exponent(kw["gamma"], dim)
        except ConfigError as e:
            _fail(m["gamma"], str(e))
    if "boundary" in m:
        b = _check_keys(m["boundary"], BOUNDARY_KEYS, "solve.boundary")
        bk = {k: (_value(v) if k in ("kind", "third") else _number(v, f"solve.boundary.{k}")) for k, v in b.items()}
        kw["boundary"] = _build(m["boundary"], BoundarySpec, **bk)
    return _build(node, SolveConfig, **kw)


def _stage(node):
    if not isinstance(node, yaml.MappingNode):
        _fail(node, "each analysis must be a mapping with a 'stage' key")
    keys = {k.value: v for k, v in node.value}
    if "stage" not in keys:
        _fail(node, "analysis entry without 'stage'")
    name = _value(keys["stage"])
    if name not in STAGE_KEYS:
        _fail(keys["stage"], f"unknown stage '{name}' (allowed: {', '.join(sorted(STAGE_KEYS))})")
    m = _check_keys(node, STAGE_KEYS[name], f"analyses[{name}]")
    opts = {k: _value(v) for k, v in m.items() if k != "stage"}
    if name == "acf" and "eta" in opts and not 0 < float(opts["eta"]) < 0.25:
        _fail(m["eta"], "eta must lie in (0, 1/4)")
    if name == "almgren" and "dims" in opts and not set(opts["dims"]) <= {2, 3}:
        _fail(m["dims"], "dims must be a subset of [2, 3]")
    if name == "blowup" and "holder_alphas" in opts and not all(0 < a < 1 for a in opts["holder_alphas"]):
        _fail(m["holder_alphas"], "Hoelder exponents must lie in (0, 1)")
    return StageConfig(name, opts)


def parse_config(text):
    """Parse and validate an experiment config; errors carry the offending line."""
    try:
        root = yaml.compose(text)
    except yaml.YAMLError as e:
        raise ConfigError(f"YAML syntax error: {e}") from None
    if root is None:
        raise ConfigError("empty config")
    m = _check_keys(root, TOP_KEYS, "top level")
    for req in ("spec", "solve"):
        if req not in m:
            _fail(root, f"missing required section '{req}'")
    spec = _spec(m["spec"])
    solve = _solve(m["solve"], spec.dim)
    analyses = ()
    if "analyses" in m:
        if not isinstance(m["analyses"], yaml.SequenceNode):
            _fail(m["analyses"], "'analyses' must be a list")
        analyses = tuple(_stage(s) for s in m["analyses"].value)
    out = _value(m["output_dir"]) if "output_dir" in m else "out"
    seed = int(_number(m["seed"], "seed")) if "seed" in m else 0
    return ExperimentConfig(spec, solve, analyses, str(out), seed, text)


def load_config(path):
    with open(path) as fh:
        return parse_config(fh.read())
