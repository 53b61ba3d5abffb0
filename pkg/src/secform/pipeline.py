"""Three-party encrypted control dataflow.

Per edge ``k`` the sensor side quantizes ``z_k`` and ``e_k``, encrypts the
two position digit-integers with ``Enc2`` and the error digit-integer with
``Enc``, and (by default) encrypts the three scale exponents as well.  The
edge server, which only ever sees :class:`LweParams`, multiplies
``Z_j (*) E`` and adds exponent ciphertexts.  Each agent decrypts the
results for its incident edges, rescales per edge by ``10**-(exp sum)`` and
then sums with its incidence signs.

Because the digit products are exact integers, the agent side reproduces
:func:`secform.graph.control_law_quantized` bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import lwe
from .errors import BudgetExceeded, MissingEdgeResult, ShapeMismatch, TraceFormatError
from .graph import FormationGraph, FormationState, control_law_quantized
from .lwe import CipherMat, CipherVec, LweParams, SecretKey
from .quantizer import MulqConfig, rescale, to_plaintext


class KeySession:
    """Key-holding role (sensors and agents).  The edge never gets one."""

    def __init__(self, params: LweParams, sk: SecretKey | None = None, rng=None):
        self.params = params
        self.rng = lwe.as_rng(rng)
        self.sk = sk if sk is not None else lwe.keygen(params, self.rng)
        if self.sk.params != params:
            raise ValueError("secret key was generated for different parameters")

    def encrypt(self, m) -> CipherVec:
        return lwe.encrypt(m, self.sk, self.rng)

    def encrypt2(self, m: int) -> CipherMat:
        return lwe.encrypt2(m, self.sk, self.rng)

    def decrypt(self, C: CipherVec) -> list[int]:
        return lwe.decrypt(C, self.sk)


@dataclass(frozen=True)
class SensorPacket:
    edge_id: int
    Z1: CipherMat
    Z2: CipherMat
    E: CipherVec
    # CipherVec per exponent, or plain ints when scales travel unencrypted
    Sz1: CipherVec | int
    Sz2: CipherVec | int
    Se: CipherVec | int

    @property
    def encrypted_scales(self) -> bool:
        return isinstance(self.Se, CipherVec)


@dataclass(frozen=True)
class EdgeResult:
    edge_id: int
    U1: CipherVec
    U2: CipherVec
    Ssum1: CipherVec | int
    Ssum2: CipherVec | int


def check_precision(cfg_z: MulqConfig, cfg_e: MulqConfig, params: LweParams) -> None:
    """Raise :class:`BudgetExceeded` unless digit products fit and decrypt exactly."""
    prod = 10 ** (cfg_z.sigma + cfg_e.sigma)
    if not 2 * prod < params.a:
        raise BudgetExceeded(
            f"10^(sigma_z+sigma_e) = {prod} does not fit the plaintext space a={params.a}")
    budget = lwe.check_mult_budget(10**cfg_z.sigma, params)
    if not budget.ok:
        raise BudgetExceeded(f"multiplication noise bound {float(budget.worst_case):.3g} >= 1/2")


def sense_encrypt(edge_id: int, z_k, e_k: float, cfg_z: MulqConfig, cfg_e: MulqConfig,
                  session: KeySession, encrypt_scales: bool = True) -> SensorPacket:
    check_precision(cfg_z, cfg_e, session.params)
    qz1 = to_plaintext(float(z_k[0]), cfg_z)
    qz2 = to_plaintext(float(z_k[1]), cfg_z)
    qe = to_plaintext(float(e_k), cfg_e)
    if encrypt_scales:
        scales = [session.encrypt(q.scale_exp) for q in (qz1, qz2, qe)]
    else:
        scales = [qz1.scale_exp, qz2.scale_exp, qe.scale_exp]
    return SensorPacket(
        edge_id,
        session.encrypt2(qz1.digits),
        session.encrypt2(qz2.digits),
        session.encrypt(qe.digits),
        *scales,
    )


def _add_scale(a, b):
    if isinstance(a, CipherVec) and isinstance(b, CipherVec):
        return lwe.add(a, b)
    if isinstance(a, CipherVec) or isinstance(b, CipherVec):
        raise ShapeMismatch("cannot mix encrypted and plain scale exponents")
    return int(a) + int(b)


def edge_compute(packet: SensorPacket) -> EdgeResult:
    """Ciphertext-only work; needs nothing beyond the packet itself."""
    return EdgeResult(
        packet.edge_id,
        lwe.mult(packet.Z1, packet.E),
        lwe.mult(packet.Z2, packet.E),
        _add_scale(packet.Sz1, packet.Se),
        _add_scale(packet.Sz2, packet.Se),
    )


class EdgeServer:
    """Untrusted compute party.  Holds parameters only."""

    def __init__(self, params: LweParams):
        self.params = params

    def compute(self, packet: SensorPacket) -> EdgeResult:
        if packet.E.params != self.params:
            raise ShapeMismatch("packet encrypted under different parameters")
        return edge_compute(packet)

    def compute_all(self, packets: Iterable[SensorPacket]) -> dict[int, EdgeResult]:
        return {pk.edge_id: self.compute(pk) for pk in packets}


def _decrypt_scalar(C, session: KeySession) -> int:
    if isinstance(C, CipherVec):
        return session.decrypt(C)[0]
    return int(C)


def decrypt_edge_terms(result: EdgeResult, session: KeySession) -> tuple[float, float]:
    """Rescaled ``Q(z_k,j) Q(e_k)`` for ``j = 1, 2``."""
    out = []
    for U, S in ((result.U1, result.Ssum1), (result.U2, result.Ssum2)):
        out.append(rescale(session.decrypt(U)[0], _decrypt_scalar(S, session)))
    return out[0], out[1]


def agent_decrypt_rescale(results: Mapping[int, EdgeResult], incidence_row: Sequence[float],
                          session: KeySession) -> np.ndarray:
    """``u_i = -sum_k B_ik Q(z_k) Q(e_k)`` over the edges incident to one agent."""
    u = np.zeros(2)
    for k, b in enumerate(incidence_row):
        if b == 0:
            continue
        if k not in results:
            raise MissingEdgeResult(k)
        t1, t2 = decrypt_edge_terms(results[k], session)
        u[0] -= b * t1
        u[1] -= b * t2
    return u


@dataclass
class StepExchange:
    """Everything that crossed the wire in one control step."""

    packets: list[SensorPacket]
    results: dict[int, EdgeResult]
    u: np.ndarray


def secure_control(state: FormationState, cfg_z: MulqConfig, cfg_e: MulqConfig,
                   session: KeySession, edge: EdgeServer,
                   encrypt_scales: bool = True) -> StepExchange:
    """Run sense -> edge -> agent for every edge and agent of ``state``."""
    g = state.graph
    z, e = state.z, state.e
    packets = [sense_encrypt(k, z[k], e[k], cfg_z, cfg_e, session, encrypt_scales)
               for k in range(g.n_edges)]
    results = edge.compute_all(packets)
    B = g.incidence
    u = np.empty((g.n_agents, 2))
    for i in range(g.n_agents):
        mine = {k: results[k] for k in g.incident_edges(i)}
        u[i] = agent_decrypt_rescale(mine, B[i], session)
    return StepExchange(packets, results, u)


# ---------------------------------------------------------------------------
# record/replay trace
#
#   secform-trace 1
#   params <a> <q> <r> <N>
#   graph <n> <t-h,...> <d_1,...>
#   quantizer <sigma_z> <sigma_e> <encrypt_scales 0|1>
#   step <index> <t>
#   positions <2n floats>
#   u <2n floats>
#   packet <edge_id>   then Z1, Z2, E ciphertexts and 3 scale items
#   result <edge_id>   then U1, U2 ciphertexts and 2 scale items
#   end
#
# A scale item is either a single-row Enc record or a line "plain <int>".
# Floats are written with repr() so they round-trip exactly.

TRACE_MAGIC = "secform-trace 1"


def _floats(values) -> str:
    return " ".join(repr(float(v)) for v in np.ravel(values))


def _scale_text(S) -> str:
    return lwe.dumps(S) if isinstance(S, CipherVec) else f"plain {int(S)}\n"


def write_trace_header(fh, params: LweParams, graph: FormationGraph,
                       cfg_z: MulqConfig, cfg_e: MulqConfig, encrypt_scales: bool) -> None:
    edges = ",".join(f"{t}-{h}" for t, h in graph.edges)
    fh.write(TRACE_MAGIC + "\n")
    fh.write(f"params {params.a} {params.q} {params.r} {params.N}\n")
    fh.write(f"graph {graph.n_agents} {edges} {','.join(repr(float(x)) for x in graph.desired_distances)}\n")
    fh.write(f"quantizer {cfg_z.sigma} {cfg_e.sigma} {int(encrypt_scales)}\n")


def write_trace_step(fh, index: int, t: float, state: FormationState, ex: StepExchange) -> None:
    fh.write(f"step {index} {t!r}\n")
    fh.write(f"positions {_floats(state.positions)}\n")
    fh.write(f"u {_floats(ex.u)}\n")
    for pk in ex.packets:
        fh.write(f"packet {pk.edge_id}\n")
        fh.write(lwe.dumps(pk.Z1) + lwe.dumps(pk.Z2) + lwe.dumps(pk.E))
        fh.write(_scale_text(pk.Sz1) + _scale_text(pk.Sz2) + _scale_text(pk.Se))
    for k in sorted(ex.results):
        res = ex.results[k]
        fh.write(f"result {res.edge_id}\n")
        fh.write(lwe.dumps(res.U1) + lwe.dumps(res.U2))
        fh.write(_scale_text(res.Ssum1) + _scale_text(res.Ssum2))
    fh.write("end\n")


@dataclass
class TraceStep:
    index: int
    t: float
    positions: np.ndarray
    u: np.ndarray
    packets: list[SensorPacket]
    results: dict[int, EdgeResult]


@dataclass
class Trace:
    params: LweParams
    graph: FormationGraph
    cfg_z: MulqConfig
    cfg_e: MulqConfig
    encrypt_scales: bool
    steps: list[TraceStep]


class _Lines:
    def __init__(self, lines: Iterable[str]):
        self._it = (ln.rstrip("\n") for ln in lines)
        self._peek: str | None = None

    def __iter__(self):
        return self

    def __next__(self) -> str:
        if self._peek is not None:
            ln, self._peek = self._peek, None
            return ln
        while True:
            ln = next(self._it)
            if ln.strip():
                return ln

    def peek(self) -> str | None:
        if self._peek is None:
            try:
                self._peek = next(self)
            except StopIteration:
                return None
        return self._peek


def _expect(lines: _Lines, keyword: str) -> list[str]:
    try:
        parts = next(lines).split()
    except StopIteration:
        raise TraceFormatError(f"unexpected end of trace, wanted {keyword!r}") from None
    if not parts or parts[0] != keyword:
        raise TraceFormatError(f"expected {keyword!r}, got {' '.join(parts)!r}")
    return parts[1:]


def _read_scale(lines: _Lines, params: LweParams):
    head = lines.peek()
    if head is not None and head.startswith("plain "):
        next(lines)
        return int(head.split()[1])
    return lwe.read_record(lines, params)


def read_trace(lines: Iterable[str]) -> Trace:
    it = _Lines(lines)
    try:
        if next(it).strip() != TRACE_MAGIC:
            raise TraceFormatError("not a secform trace")
    except StopIteration:
        raise TraceFormatError("empty trace") from None
    a, q, r, N = map(int, _expect(it, "params"))
    params = LweParams(a=a, q=q, r=r, N=N)
    g = _expect(it, "graph")
    edges = [tuple(map(int, s.split("-"))) for s in g[1].split(",")]
    graph = FormationGraph(int(g[0]), edges, [float(x) for x in g[2].split(",")])
    sz, se, enc = map(int, _expect(it, "quantizer"))
    steps = []
    while it.peek() is not None:
        idx, t = _expect(it, "step")
        pos = np.array([float(x) for x in _expect(it, "positions")]).reshape(-1, 2)
        u = np.array([float(x) for x in _expect(it, "u")]).reshape(-1, 2)
        packets, results = [], {}
        while True:
            head = it.peek()
            if head == "end":
                next(it)
                break
            if head is None:
                raise TraceFormatError("step without end marker")
            kind, k = head.split()
            next(it)
            k = int(k)
            if kind == "packet":
                Z1 = lwe.read_record(it, params)
                Z2 = lwe.read_record(it, params)
                E = lwe.read_record(it, params)
                scales = [_read_scale(it, params) for _ in range(3)]
                packets.append(SensorPacket(k, Z1, Z2, E, *scales))
            elif kind == "result":
                U1 = lwe.read_record(it, params)
                U2 = lwe.read_record(it, params)
                s1, s2 = _read_scale(it, params), _read_scale(it, params)
                results[k] = EdgeResult(k, U1, U2, s1, s2)
            else:
                raise TraceFormatError(f"unknown trace record {kind!r}")
        steps.append(TraceStep(int(idx), float(t), pos, u, packets, results))
    return Trace(params, graph, MulqConfig(sz), MulqConfig(se), bool(enc), steps)


def _cipher_equal(a, b) -> bool:
    return a == b if isinstance(a, CipherVec) else (not isinstance(b, CipherVec) and a == b)


@dataclass
class VerifyFinding:
    step: int
    message: str


def verify_trace(trace: Trace, session: KeySession) -> list[VerifyFinding]:
    """Replay a trace; return every discrepancy found (empty means clean)."""
    findings = []
    for st in trace.steps:
        state = FormationState(st.positions, trace.graph)
        for pk in st.packets:
            res = st.results.get(pk.edge_id)
            if res is None:
                findings.append(VerifyFinding(st.index, f"missing edge result {pk.edge_id}"))
                continue
            again = edge_compute(pk)
            same = (again.U1 == res.U1 and again.U2 == res.U2
                    and _cipher_equal(again.Ssum1, res.Ssum1)
                    and _cipher_equal(again.Ssum2, res.Ssum2))
            if not same:
                findings.append(VerifyFinding(
                    st.index, f"edge {pk.edge_id}: recorded result differs from recomputation"))
        try:
            B = trace.graph.incidence
            # a tampered trace or a wrong key decrypts to arbitrary exponents
            with np.errstate(over="ignore", invalid="ignore"):
                u_pipe = np.array([agent_decrypt_rescale(
                    {k: st.results[k] for k in trace.graph.incident_edges(i) if k in st.results},
                    B[i], session) for i in range(trace.graph.n_agents)])
        except MissingEdgeResult as exc:
            findings.append(VerifyFinding(st.index, f"missing edge result {exc}"))
            continue
        u_ref = control_law_quantized(state, trace.cfg_z, trace.cfg_e)
        if not np.array_equal(u_pipe, u_ref):
            with np.errstate(invalid="ignore"):
                diff = np.max(np.abs(u_pipe - u_ref))
            findings.append(VerifyFinding(
                st.index, "equivalence violation: decrypted control differs from quantized law "
                          f"(max |diff| = {diff:.3e})"))
        if not np.array_equal(u_pipe, st.u):
            findings.append(VerifyFinding(st.index, "recorded control differs from decrypted control"))
    return findings


# ---------------------------------------------------------------------------
# key file: "secform-key 1", "<N> <q>", then the key entries


def dump_key(sk: SecretKey) -> str:
    return f"secform-key 1\n{sk.params.N} {sk.params.q}\n" + " ".join(map(str, sk.s)) + "\n"


def load_key(text: str, params: LweParams) -> SecretKey:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0].strip() != "secform-key 1" or len(lines) < 3:
        raise TraceFormatError("not a secform key file")
    N, q = map(int, lines[1].split())
    if N != params.N or q != params.q:
        raise TraceFormatError("key file does not match trace parameters")
    return SecretKey(tuple(int(x) for x in lines[2].split()), params)

