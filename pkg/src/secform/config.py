"""Simulator configuration: INI-style ``key = value`` text with sections.

Grammar (all keys optional unless noted)::

    [graph]
    n_agents = 4                          # required
    edges = 1-2, 2-3, 1-3, 3-4, 1-4       # required, 1-based tail-head pairs
    distances = 1, 1, sqrt(2), 1, 1       # required; numbers or sqrt(<number>)
    target_positions = 0 0; 1 0; 1 1; 0 1 # required; one "x y" per agent

    [encryption]
    a = 10^11
    q = 10^22
    N = 30
    r = 4
    encrypt_scales = yes

    [quantizer]
    sigma_z = 4
    sigma_e = 4

    [simulation]
    mode = secure                         # secure | quantized | exact
    dt = 0.01
    t_end = 30
    initial = perturb                     # perturb | explicit
    perturbation = 0.3
    delta = 2.7
    initial_positions = ...               # required when initial = explicit
    seed = 1
    convergence_tol = 1e-6

    [output]
    directory = out                       # default: $SECFORM_OUTPUT_DIR or ./secform_out
    trace_steps = 0                       # record the first K secure steps

    [reference]                           # optional published values to compare against
    lambda_min = 0.058
"""

from __future__ import annotations

import configparser
import hashlib
import math
import os
import re
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .graph import FormationGraph
from .lwe import DEFAULT_PARAMS, LweParams

MODES = ("secure", "quantized", "exact")
OUTPUT_ENV = "SECFORM_OUTPUT_DIR"


@dataclass(frozen=True, eq=False)
class SimConfig:
    graph: FormationGraph
    target_positions: np.ndarray
    params: LweParams = DEFAULT_PARAMS
    encrypt_scales: bool = True
    sigma_z: int = 4
    sigma_e: int = 4
    mode: str = "secure"
    dt: float = 0.01
    t_end: float = 30.0
    initial: str = "perturb"
    perturbation: float = 0.3
    delta: float = 2.7
    initial_positions: np.ndarray | None = None
    seed: int = 1
    convergence_tol: float = 1e-6
    output_dir: Path | None = None
    trace_steps: int = 0
    reference: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not self.dt > 0:
            raise ConfigError("dt must be positive")
        if not self.t_end >= self.dt:
            raise ConfigError("t_end must be at least dt")
        if self.initial not in ("perturb", "explicit"):
            raise ConfigError("initial must be 'perturb' or 'explicit'")
        if self.initial == "explicit" and self.initial_positions is None:
            raise ConfigError("initial = explicit needs initial_positions")
        n = self.graph.n_agents
        if np.shape(self.target_positions) != (n, 2):
            raise ConfigError(f"target_positions must list {n} points")
        if self.initial_positions is not None and np.shape(self.initial_positions) != (n, 2):
            raise ConfigError(f"initial_positions must list {n} points")
        if self.sigma_z < 1 or self.sigma_e < 1:
            raise ConfigError("sigma_z and sigma_e must be >= 1")
        if self.delta <= 0:
            raise ConfigError("delta must be positive")
        if self.trace_steps < 0:
            raise ConfigError("trace_steps must be >= 0")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))

    def resolved_output_dir(self) -> Path:
        if self.output_dir is not None:
            return Path(self.output_dir)
        return Path(os.environ.get(OUTPUT_ENV, "secform_out"))

    def with_overrides(self, **kw) -> "SimConfig":
        kw = {k: v for k, v in kw.items() if v is not None}
        return replace(self, **kw) if kw else self

    def to_text(self) -> str:
        """Canonical config text; parses back to an equivalent config."""
        g = self.graph
        lines = [
            "[graph]",
            f"n_agents = {g.n_agents}",
            "edges = " + ", ".join(f"{t + 1}-{h + 1}" for t, h in g.edges),
            "distances = " + ", ".join(repr(float(d)) for d in g.desired_distances),
            "target_positions = " + _points_text(self.target_positions),
            "",
            "[encryption]",
            f"a = {self.params.a}",
            f"q = {self.params.q}",
            f"N = {self.params.N}",
            f"r = {self.params.r}",
            f"encrypt_scales = {'yes' if self.encrypt_scales else 'no'}",
            "",
            "[quantizer]",
            f"sigma_z = {self.sigma_z}",
            f"sigma_e = {self.sigma_e}",
            "",
            "[simulation]",
            f"mode = {self.mode}",
            f"dt = {self.dt!r}",
            f"t_end = {self.t_end!r}",
            f"initial = {self.initial}",
            f"perturbation = {self.perturbation!r}",
            f"delta = {self.delta!r}",
        ]
        if self.initial_positions is not None:
            lines.append("initial_positions = " + _points_text(self.initial_positions))
        lines += [
            f"seed = {self.seed}",
            f"convergence_tol = {self.convergence_tol!r}",
            "",
            "[output]",
            f"trace_steps = {self.trace_steps}",
        ]
        if self.reference:
            lines += ["", "[reference]"]
            lines += [f"{k} = {v!r}" for k, v in sorted(self.reference.items())]
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()


def _points_text(P) -> str:
    return "; ".join(f"{float(x)!r} {float(y)!r}" for x, y in np.asarray(P, dtype=float))


_SQRT = re.compile(r"^sqrt\((.+)\)$")


def parse_number(text: str) -> float:
    s = text.strip()
    m = _SQRT.match(s)
    try:
        if m:
            return math.sqrt(float(m.group(1)))
        return float(s)
    except ValueError:
        raise ConfigError(f"not a number: {text!r}") from None


def parse_int(text: str) -> int:
    s = text.strip().replace(" ", "")
    try:
        if "^" in s:
            base, exp = s.split("^")
            return int(base) ** int(exp)
        if "**" in s:
            base, exp = s.split("**")
            return int(base) ** int(exp)
        return int(s)
    except ValueError:
        raise ConfigError(f"not an integer: {text!r}") from None


def parse_points(text: str) -> np.ndarray:
    pts = []
    for chunk in text.split(";"):
        if not chunk.strip():
            continue
        xy = chunk.replace(",", " ").split()
        if len(xy) != 2:
            raise ConfigError(f"expected 'x y', got {chunk.strip()!r}")
        pts.append([parse_number(xy[0]), parse_number(xy[1])])
    return np.array(pts, dtype=float)


def parse_edges(text: str) -> list[tuple[int, int]]:
    edges = []
    for chunk in text.split(","):
        chunk = chunk.strip()
        if not chunk:
            continue
        try:
            t, h = chunk.split("-")
            edges.append((int(t) - 1, int(h) - 1))
        except ValueError:
            raise ConfigError(f"bad edge {chunk!r}; use tail-head, e.g. 1-2") from None
    return edges


def _bool(text: str) -> bool:
    v = text.strip().lower()
    if v in ("1", "yes", "true", "on"):
        return True
    if v in ("0", "no", "false", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def parse_config(text: str, base_dir: Path | None = None) -> SimConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",))
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    if not cp.has_section("graph"):
        raise ConfigError("missing [graph] section")
    gs = cp["graph"]
    try:
        n = parse_int(gs["n_agents"])
        edges = parse_edges(gs["edges"])
        dists = [parse_number(x) for x in gs["distances"].split(",") if x.strip()]
        target = parse_points(gs["target_positions"])
    except KeyError as exc:
        raise ConfigError(f"[graph] is missing {exc}") from None
    try:
        graph = FormationGraph(n, edges, dists)
    except ValueError as exc:
        raise ConfigError(f"invalid graph: {exc}") from None

    kw: dict = {}
    if cp.has_section("encryption"):
        es = cp["encryption"]
        try:
            kw["params"] = LweParams(
                a=parse_int(es.get("a", str(DEFAULT_PARAMS.a))),
                q=parse_int(es.get("q", str(DEFAULT_PARAMS.q))),
                r=parse_int(es.get("r", str(DEFAULT_PARAMS.r))),
                N=parse_int(es.get("n", str(DEFAULT_PARAMS.N))),
            )
        except ValueError as exc:
            raise ConfigError(f"invalid encryption parameters: {exc}") from None
        if "encrypt_scales" in es:
            kw["encrypt_scales"] = _bool(es["encrypt_scales"])
    if cp.has_section("quantizer"):
        qs = cp["quantizer"]
        for key in ("sigma_z", "sigma_e"):
            if key in qs:
                kw[key] = parse_int(qs[key])
    if cp.has_section("simulation"):
        ss = cp["simulation"]
        for key in ("dt", "t_end", "perturbation", "delta", "convergence_tol"):
            if key in ss:
                kw[key] = parse_number(ss[key])
        for key in ("mode", "initial"):
            if key in ss:
                kw[key] = ss[key].strip()
        if "seed" in ss:
            kw["seed"] = parse_int(ss["seed"])
        if "initial_positions" in ss:
            kw["initial_positions"] = parse_points(ss["initial_positions"])
    if cp.has_section("output"):
        os_ = cp["output"]
        if os_.get("directory", "").strip():
            d = Path(os_["directory"].strip())
            if base_dir is not None and not d.is_absolute():
                d = base_dir / d
            kw["output_dir"] = d
        if "trace_steps" in os_:
            kw["trace_steps"] = parse_int(os_["trace_steps"])
    if cp.has_section("reference"):
        kw["reference"] = {k: parse_number(v) for k, v in cp["reference"].items()}
    return SimConfig(graph=graph, target_positions=target, **kw)


def load_config(path) -> SimConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, base_dir=path.parent)


SQUARE_CONFIG_TEXT = """\
[graph]
n_agents = 4
edges = 1-2, 2-3, 1-3, 3-4, 1-4
distances = 1, 1, sqrt(2), 1, 1
target_positions = 0 0; 1 0; 1 1; 0 1

[encryption]
a = 10^11
q = 10^22
N = 30
r = 4
encrypt_scales = yes

[quantizer]
sigma_z = 4
sigma_e = 4

[simulation]
mode = secure
dt = 0.01
t_end = 30
initial = perturb
perturbation = 0.3
delta = 2.7
seed = 1
convergence_tol = 1e-6

[output]
trace_steps = 0

[reference]
c = 12.04
lambda_min = 0.058
lambda_max = 4.11
"""


def square_config() -> SimConfig:
    """Four agents converging to a unit square with one diagonal."""
    return parse_config(SQUARE_CONFIG_TEXT)
