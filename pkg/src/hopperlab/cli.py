"""Command-line interface: episode runner, rollout server, checks, kinematics utility."""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from hopperlab.config import ConfigError, load_config


def _add_config_arg(parser):
    parser.add_argument("--config", default=None, help="config file path (default: $HOPPER_CONFIG or built-ins)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hopperlab", description=__doc__)
    sub = parser.add_subparsers(dest="cmd", required=True)

    sim = sub.add_parser("sim", help="run one episode and write a trajectory log")
    _add_config_arg(sim)
    sim.add_argument("--controller", choices=["raibert", "policy"], default="raibert")
    sim.add_argument("--weights", default=None, help="policy weights file (for --controller policy)")
    sim.add_argument("--terrain", default="flat", help="flat or slope:DEG")
    sim.add_argument("--vx", type=float, default=0.0, help="commanded x velocity, m/s")
    sim.add_argument("--vy", type=float, default=0.0, help="commanded y velocity, m/s")
    sim.add_argument("--period", type=float, default=0.4, help="gait period, s")
    sim.add_argument("--duration", type=float, default=10.0, help="episode length, s")
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--conversion", choices=["torque", "joint-target"], default="torque")
    sim.add_argument("--no-randomize", action="store_true", help="disable domain randomization")
    sim.add_argument(
        "--perturb",
        action="append",
        default=[],
        metavar="T:DVX,DVY,DVZ",
        help="velocity impulse at time T (repeatable)",
    )
    sim.add_argument("--log", default=None, help="CSV trajectory output path")

    serve = sub.add_parser("serve", help="serve the rollout protocol")
    _add_config_arg(serve)
    mode = serve.add_mutually_exclusive_group(required=True)
    mode.add_argument("--stdio", action="store_true", help="speak the protocol on stdin/stdout")
    mode.add_argument("--port", type=int, default=None, help="listen on TCP port (0 = ephemeral)")
    serve.add_argument("--timeout", type=float, default=300.0, help="idle timeout, s")
    serve.add_argument("--once", action="store_true", help="exit after the first connection closes")

    check = sub.add_parser("check", help="run invariant check suites")
    _add_config_arg(check)
    check.add_argument("suite", nargs="?", default="all", help="kinematics|jacobians|conversion|sim|determinism|config|all")

    kin = sub.add_parser("kin", help="kinematics utility")
    _add_config_arg(kin)
    kin.add_argument("op", choices=["fk", "ik"], help="forward or inverse kinematics")
    kin.add_argument("values", help="comma-separated: fk takes q1,q2,q3 (rad); ik takes x,y,z (m)")
    kin.add_argument("--serial", action="store_true", help="use the serial template instead of the parallel leg")

    policy = sub.add_parser("policy", help="batch policy evaluation over JSON lines on stdin")
    _add_config_arg(policy)
    policy.add_argument("--weights", required=True)
    return parser


def cmd_sim(args) -> int:
    from hopperlab.control import Command
    from hopperlab.episode import EpisodeSpec, run_episode

    cfg = load_config(args.config)
    perturbations = []
    for spec in args.perturb:
        t_part, dv_part = spec.split(":", 1)
        dv = tuple(float(v) for v in dv_part.split(","))
        if len(dv) != 3:
            raise SystemExit(f"bad perturbation {spec!r}; expected T:DVX,DVY,DVZ")
        perturbations.append((float(t_part), dv))
    spec = EpisodeSpec(
        seed=args.seed,
        terrain=args.terrain,
        command=Command(vx=args.vx, vy=args.vy, period=args.period),
        duration=args.duration,
        controller=args.controller,
        weights_path=args.weights,
        conversion={"torque": "torque", "joint-target": "joint-target"}[args.conversion],
        perturbations=perturbations,
        randomize=not args.no_randomize,
    )
    result = run_episode(cfg, spec, log_path=args.log)
    print(json.dumps(result.metrics, indent=2))
    return 0


def cmd_serve(args) -> int:
    from hopperlab.server import serve_stdio, serve_tcp

    cfg = load_config(args.config)
    if args.stdio:
        serve_stdio(cfg)
    else:
        serve_tcp(cfg, args.port, timeout=args.timeout, once=args.once)
    return 0


def cmd_check(args) -> int:
    from hopperlab.checks import run_checks

    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(json.dumps({"suite": args.suite, "checks": [
            {"suite": "config", "name": "config_valid", "passed": False, "detail": str(exc)}
        ], "passed": False}, indent=2))
        return 1
    report = run_checks(cfg, args.suite)
    print(json.dumps(report, indent=2))
    return 0 if report["passed"] else 1


def cmd_kin(args) -> int:
    from hopperlab.kinematics import fk_parallel, fk_serial, ik_parallel, ik_serial

    cfg = load_config(args.config)
    values = np.array([float(v) for v in args.values.split(",")])
    if values.shape != (3,):
        raise SystemExit("expected three comma-separated values")
    ops = {
        (False, "fk"): ("foot", fk_parallel),
        (False, "ik"): ("q", ik_parallel),
        (True, "fk"): ("foot", fk_serial),
        (True, "ik"): ("q", ik_serial),
    }
    label, fn = ops[(args.serial, args.op)]
    print(json.dumps({label: fn(cfg.geometry, values).tolist()}))
    return 0


def cmd_policy(args) -> int:
    """Reads {"history": [[...]x5], "obs": [...]} lines, writes forward outputs."""
    from hopperlab.policy import PolicyRuntime, PolicyWeights

    runtime = PolicyRuntime(PolicyWeights.load(args.weights))
    for line in sys.stdin:
        line = line.strip()
        if not line:
            continue
        msg = json.loads(line)
        action, vhat, chat, mu = runtime.forward(np.asarray(msg["history"]), np.asarray(msg["obs"]))
        print(
            json.dumps(
                {"action": action.tolist(), "vhat": vhat.tolist(), "chat": chat, "mu": mu.tolist()}
            ),
            flush=True,
        )
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {"sim": cmd_sim, "serve": cmd_serve, "check": cmd_check, "kin": cmd_kin, "policy": cmd_policy}
    try:
        return handlers[args.cmd](args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
