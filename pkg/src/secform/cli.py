"""Command-line entry point: ``secform run | analyze | verify | demo-square``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import MODES, SimConfig, load_config, square_config
from .errors import SecformError
from .pipeline import KeySession, load_key, read_trace, verify_trace
from .sim import run
from .stability import analyze


def _add_overrides(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int)
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--dt", type=float)
    p.add_argument("--t-end", type=float, dest="t_end")
    p.add_argument("--sigma-z", type=int, dest="sigma_z")
    p.add_argument("--sigma-e", type=int, dest="sigma_e")
    p.add_argument("--delta", type=float)
    p.add_argument("--out", type=Path, dest="output_dir", help="output directory")
    p.add_argument("--trace-steps", type=int, dest="trace_steps",
                   help="record the first K secure steps for `secform verify`")
    p.add_argument("--plain-scales", action="store_true",
                   help="send scale exponents unencrypted")


def _apply(config: SimConfig, args) -> SimConfig:
    kw = {k: getattr(args, k) for k in ("seed", "mode", "dt", "t_end", "sigma_z", "sigma_e",
                                         "delta", "output_dir", "trace_steps")}
    if args.plain_scales:
        kw["encrypt_scales"] = False
    return config.with_overrides(**kw)


def _do_run(config: SimConfig) -> int:
    res = run(config)
    m = res.manifest
    print(f"mode={m['mode']} steps={m['steps']} final |e|={m['final_error_norm']} "
          f"converged={m['converged']} runtime={m['runtime_seconds']}s")
    for key, val in m.items():
        if key.startswith("warning."):
            print(f"warning: {val}", file=sys.stderr)
        if key.endswith(".discrepancy") and val == "yes":
            name = key[len("reference."):-len(".discrepancy")]
            print(f"note: computed {name} differs from reference {m['reference.' + name]}",
                  file=sys.stderr)
    if m.get("equivalence_all_steps") == "no":
        print("error: encrypted control differed from the quantized law", file=sys.stderr)
        return 1
    for name, path in res.paths.items():
        print(f"{name}: {path}")
    return 0


def cmd_run(args) -> int:
    return _do_run(_apply(load_config(args.config), args))


def cmd_demo_square(args) -> int:
    return _do_run(_apply(square_config(), args))


def cmd_analyze(args) -> int:
    config = load_config(args.config) if args.config else square_config()
    config = config.with_overrides(delta=args.delta, sigma_z=args.sigma_z, sigma_e=args.sigma_e)
    rep = analyze(config.graph, config.target_positions, config.delta,
                  config.sigma_z, config.sigma_e)
    sys.stdout.write(rep.to_text())
    return 0


def cmd_verify(args) -> int:
    trace_path = Path(args.trace)
    key_path = Path(args.key) if args.key else trace_path.with_name("session.key")
    try:
        with open(trace_path) as fh:
            trace = read_trace(fh)
        sk = load_key(key_path.read_text(), trace.params)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    findings = verify_trace(trace, KeySession(trace.params, sk=sk))
    for f in findings:
        print(f"step {f.step}: {f.message}")
    if findings:
        print(f"FAIL: {len(findings)} finding(s) in {len(trace.steps)} step(s)")
        return 1
    print(f"OK: {len(trace.steps)} step(s) verified")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="secform",
                                 description="Encrypted distance-based formation control")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="simulate a config file")
    p.add_argument("config")
    _add_overrides(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("demo-square", help="simulate the built-in 4-agent square")
    _add_overrides(p)
    p.set_defaults(func=cmd_demo_square)

    p = sub.add_parser("analyze", help="print stability constants")
    p.add_argument("config", nargs="?")
    p.add_argument("--delta", type=float)
    p.add_argument("--sigma-z", type=int, dest="sigma_z")
    p.add_argument("--sigma-e", type=int, dest="sigma_e")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("verify", help="replay a recorded trace")
    p.add_argument("trace")
    p.add_argument("--key", help="key file (default: session.key next to the trace)")
    p.set_defaults(func=cmd_verify)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except SecformError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
