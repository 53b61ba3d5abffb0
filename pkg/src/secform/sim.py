"""Closed-loop formation simulation in exact, quantized, or encrypted mode.

The plant is integrated with explicit Euler, ``p <- p + dt * u``.  All
randomness (initial perturbation, key, encryption noise) comes from separate
streams spawned off one :class:`numpy.random.SeedSequence`, so a given config
and seed always produce the same trajectory file.
"""

from __future__ import annotations

import io
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .config import SimConfig
from .errors import ConfigError, NonFiniteState, NotRigid
from .graph import FormationState, control_law_exact, control_law_quantized
from .lwe import keygen
from .pipeline import (EdgeServer, KeySession, StepExchange, check_precision, dump_key,
                       secure_control, write_trace_header, write_trace_step)
from .quantizer import MulqConfig
from .stability import StabilityReport, analyze, lyapunov

MAX_INIT_TRIES = 10_000
REFERENCE_RTOL = 0.01


@dataclass
class TrajectoryRecord:
    t: float
    p: np.ndarray
    e: np.ndarray
    V: float
    u: np.ndarray
    equiv: bool | None = None


@dataclass
class RunResult:
    config: SimConfig
    records: list[TrajectoryRecord]
    manifest: dict[str, str]
    report: StabilityReport | None
    paths: dict[str, Path] = field(default_factory=dict)

    @property
    def converged(self) -> bool:
        return self.manifest.get("converged") == "yes"

    @property
    def error_norms(self) -> np.ndarray:
        return np.array([np.linalg.norm(r.e) for r in self.records])


def initial_positions(config: SimConfig, rng) -> np.ndarray:
    """Explicit positions, or a uniform perturbation of the target inside the basin."""
    if config.initial == "explicit":
        return np.asarray(config.initial_positions, dtype=float)
    target = np.asarray(config.target_positions, dtype=float)
    for _ in range(MAX_INIT_TRIES):
        p0 = target + rng.uniform(-config.perturbation, config.perturbation, size=target.shape)
        if np.linalg.norm(config.graph.edge_errors(p0)) < config.delta:
            return p0
    raise ConfigError(f"no perturbation of size {config.perturbation} lands inside |e| < {config.delta}")


class Simulator:
    """Holds the per-run key material and advances one Euler step at a time."""

    def __init__(self, config: SimConfig):
        self.config = config
        self.cfg_z = MulqConfig(config.sigma_z)
        self.cfg_e = MulqConfig(config.sigma_e)
        init_ss, key_ss, noise_ss = np.random.SeedSequence(config.seed).spawn(3)
        self.init_rng = np.random.default_rng(init_ss)
        self.session = None
        self.edge = None
        if config.mode == "secure":
            check_precision(self.cfg_z, self.cfg_e, config.params)
            sk = keygen(config.params, np.random.default_rng(key_ss))
            self.session = KeySession(config.params, sk=sk, rng=np.random.default_rng(noise_ss))
            self.edge = EdgeServer(config.params)

    def initial_state(self) -> FormationState:
        return FormationState(initial_positions(self.config, self.init_rng), self.config.graph)

    def control(self, state: FormationState) -> tuple[np.ndarray, bool | None, StepExchange | None]:
        mode = self.config.mode
        if mode == "exact":
            return control_law_exact(state), None, None
        if mode == "quantized":
            return control_law_quantized(state, self.cfg_z, self.cfg_e), None, None
        ex = secure_control(state, self.cfg_z, self.cfg_e, self.session, self.edge,
                            self.config.encrypt_scales)
        ref = control_law_quantized(state, self.cfg_z, self.cfg_e)
        return ex.u, bool(np.array_equal(ex.u, ref)), ex

    def step(self, state: FormationState, t: float):
        """One Euler step; returns ``(next_state, record, exchange)``."""
        with np.errstate(over="ignore", invalid="ignore"):
            e = state.e
            V = lyapunov(e)
            if not math.isfinite(V):
                raise NonFiniteState(f"distance errors overflowed at t={t!r}")
            u, equiv, ex = self.control(state)
            if not np.all(np.isfinite(u)):
                raise NonFiniteState(f"non-finite control at t={t!r}")
            nxt = state.positions + self.config.dt * u
        if not np.all(np.isfinite(nxt)):
            raise NonFiniteState(f"non-finite positions at t={t!r}")
        rec = TrajectoryRecord(t=t, p=state.p.copy(), e=e, V=V, u=u, equiv=equiv)
        return state.moved(nxt), rec, ex


def step(state: FormationState, config: SimConfig, simulator: Simulator | None = None):
    sim = simulator if simulator is not None else Simulator(config)
    return sim.step(state, 0.0)


# ---------------------------------------------------------------------------
# outputs


def csv_header(n_agents: int, n_edges: int) -> str:
    cols = ["t"] + [f"e_{k + 1}" for k in range(n_edges)]
    for i in range(n_agents):
        cols += [f"p_{i + 1}x", f"p_{i + 1}y"]
    return ",".join(cols + ["V", "equiv"])


def _g(x: float) -> str:
    return format(float(x), ".12g")


def trajectory_csv(records: list[TrajectoryRecord], n_agents: int, n_edges: int) -> str:
    out = io.StringIO()
    out.write(csv_header(n_agents, n_edges) + "\n")
    for r in records:
        eq = "na" if r.equiv is None else ("1" if r.equiv else "0")
        fields = [_g(r.t)] + [_g(v) for v in r.e] + [_g(v) for v in r.p] + [_g(r.V), eq]
        out.write(",".join(fields) + "\n")
    return out.getvalue()


def fit_decay_rate(t, norms, floor: float = 1e-10) -> float | None:
    """Least-squares slope of ``-ln|e|`` against ``t`` over samples above ``floor``."""
    t = np.asarray(t, dtype=float)
    norms = np.asarray(norms, dtype=float)
    keep = norms > floor
    if np.count_nonzero(keep) < 2:
        return None
    slope, _ = np.polyfit(t[keep], np.log(norms[keep]), 1)
    return float(-slope)


def lyapunov_roundoff_allowance(e, d) -> float:
    """Largest change in ``V`` that float rounding alone can produce in one step.

    Each ``e_k = |z_k|^2 - d_k^2`` carries an evaluation error of a few units
    in the last place of ``|z_k|^2 + d_k^2``; with both endpoints of a step
    and the position update counted this is at most ``8 u (|e_k| + 2 d_k^2)``.
    Increases of ``V`` below this bound are indistinguishable from zero.
    """
    e = np.asarray(e, dtype=float)
    d2 = np.asarray(d, dtype=float) ** 2
    u = np.finfo(float).eps / 2
    eta = np.sqrt(e.size) * 8 * u * float(np.max(np.abs(e) + 2 * d2))
    return 0.5 * float(np.linalg.norm(e)) * eta + 0.25 * eta * eta


def manifest_text(manifest: dict[str, str]) -> str:
    return "".join(f"{k} = {v}\n" for k, v in manifest.items())


def _reference_lines(report: StabilityReport, reference: dict) -> dict[str, str]:
    out = {}
    for key, val in sorted(reference.items()):
        out[f"reference.{key}"] = repr(val)
        computed = getattr(report, key, None) if report is not None else None
        if computed is None:
            continue
        rel = abs(computed - val) / abs(val) if val else abs(computed)
        out[f"reference.{key}.relative_difference"] = _g(rel)
        out[f"reference.{key}.discrepancy"] = "yes" if rel > REFERENCE_RTOL else "no"
    return out


def run(config: SimConfig, write: bool = True, keep_records: bool = True) -> RunResult:
    """Simulate ``config`` from ``t = 0`` to ``t_end``; optionally write outputs."""
    t0 = time.perf_counter()
    sim = Simulator(config)
    g = config.graph
    warnings = []
    try:
        report = analyze(g, config.target_positions, config.delta, config.sigma_z, config.sigma_e)
        if not report.stable:
            warnings.append(f"k = {report.k:.6g} <= 0 for sigma_z={config.sigma_z}, "
                            f"sigma_e={config.sigma_e}; convergence is not guaranteed")
    except NotRigid as exc:
        report = None
        warnings.append(f"stability analysis skipped: {exc}")
    except ValueError as exc:
        report = None
        warnings.append(f"stability analysis incomplete: {exc}")

    out_dir = config.resolved_output_dir() if write else None
    trace_fh = None
    paths: dict[str, Path] = {}
    if write:
        out_dir.mkdir(parents=True, exist_ok=True)
        if config.trace_steps > 0 and config.mode == "secure":
            paths["trace"] = out_dir / "trace.txt"
            paths["key"] = out_dir / "session.key"
            paths["key"].write_text(dump_key(sim.session.sk))
            trace_fh = open(paths["trace"], "w")
            write_trace_header(trace_fh, config.params, g, sim.cfg_z, sim.cfg_e,
                               config.encrypt_scales)

    state = sim.initial_state()
    p_start_centroid = state.positions.mean(axis=0)
    records = []
    drift = 0.0
    try:
        for n in range(config.n_steps + 1):
            t = n * config.dt
            nxt, rec, ex = sim.step(state, t)
            records.append(rec)
            drift = max(drift, float(np.linalg.norm(state.positions.mean(axis=0) - p_start_centroid)))
            if trace_fh is not None and n < config.trace_steps:
                write_trace_step(trace_fh, n, t, state, ex)
            state = nxt
    finally:
        if trace_fh is not None:
            trace_fh.close()

    norms = np.array([np.linalg.norm(r.e) for r in records])
    ts = np.array([r.t for r in records])
    V = np.array([r.V for r in records])
    inside = norms < config.delta
    entry = int(np.argmax(inside)) if inside.any() else None
    if entry is not None:
        dV = np.diff(V[entry:])
        max_increase = float(dV.max()) if dV.size else 0.0
        d = g.desired_distances
        allow = np.array([lyapunov_roundoff_allowance(r.e, d) for r in records[entry:-1]])
        monotone = bool(np.all(dV <= allow))
        ups = np.flatnonzero(dV > 0)
        first_up_norm = float(norms[entry + ups[0]]) if ups.size else None
        rate = fit_decay_rate(ts[entry:], norms[entry:])
    else:
        max_increase, rate, monotone, first_up_norm = float("nan"), None, False, None
    converged = bool(norms[-1] < config.convergence_tol)
    first_below = int(np.argmax(norms < config.convergence_tol)) if (norms < config.convergence_tol).any() else None

    m: dict[str, str] = {
        "config_sha256": config.digest(),
        "mode": config.mode,
        "seed": str(config.seed),
        "backend": kernels.BACKEND,
        "dt": repr(config.dt),
        "t_end": repr(config.t_end),
        "steps": str(config.n_steps),
        "sigma_z": str(config.sigma_z),
        "sigma_e": str(config.sigma_e),
        "encrypt_scales": "yes" if config.encrypt_scales else "no",
        "initial_error_norm": _g(norms[0]),
        "final_error_norm": _g(norms[-1]),
        "convergence_tol": repr(config.convergence_tol),
        "converged": "yes" if converged else "no",
        "time_to_tolerance": _g(ts[first_below]) if first_below is not None else "never",
        "fitted_decay_rate": _g(rate) if rate is not None else "na",
        "basin_entry_step": str(entry) if entry is not None else "never",
        "lyapunov_max_increase": _g(max_increase),
        "lyapunov_nonincreasing": "yes" if monotone else "no",
        "lyapunov_first_increase_at_norm": _g(first_up_norm) if first_up_norm is not None else "never",
        "centroid_max_drift": _g(drift),
    }
    if config.mode == "secure":
        m["equivalence_all_steps"] = "yes" if all(r.equiv for r in records) else "no"
    if report is not None:
        for line in report.to_text("stability.").splitlines():
            k, v = line.split(" = ", 1)
            m[k] = v
    m.update(_reference_lines(report, config.reference))
    for i, w in enumerate(warnings):
        m[f"warning.{i + 1}"] = w
    m["runtime_seconds"] = f"{time.perf_counter() - t0:.3f}"

    if write:
        paths["trajectory"] = out_dir / "trajectory.csv"
        paths["trajectory"].write_text(trajectory_csv(records, g.n_agents, g.n_edges))
        paths["manifest"] = out_dir / "manifest.txt"
        paths["manifest"].write_text(manifest_text(m))
        paths["config"] = out_dir / "config.ini"
        paths["config"].write_text(config.to_text())
    return RunResult(config, records if keep_records else [], m, report, paths)

