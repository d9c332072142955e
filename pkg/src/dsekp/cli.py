"""Command-line entry point: ``run``, ``compare`` and ``attack``.

Exit codes: 0 success, 2 configuration or I/O error, 3 invariant
violation detected during a run.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import adversary
from .edge import InvariantViolation
from .experiment import ConfigError, RunProfile, load_profile, run, run_attack, write_artifacts
from .metrics.logs import SchemaMismatch
from .metrics.summary import compare, dump_json, load_run, write_plot_series

log = logging.getLogger("dsekp")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INVARIANT = 3


def _add_profile_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--profile", help="key=value profile file; flags override it")
    p.add_argument("--mode", choices=("psk", "dsekp"))
    p.add_argument("--packets", type=int)
    p.add_argument("--interval-ms", type=int)
    p.add_argument("--devices", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--latency-base-ms", type=float)
    p.add_argument("--latency-jitter-ms", type=float)
    p.add_argument("--loss", type=float)
    p.add_argument("--dup", type=float)
    p.add_argument("--reboot-every", type=int)
    p.add_argument("--session-timeout-s", type=int)
    p.add_argument("--out", help="output directory")


def _profile(args: argparse.Namespace) -> RunProfile:
    overrides = {
        "mode": args.mode,
        "packets": args.packets,
        "interval_ms": args.interval_ms,
        "devices": args.devices,
        "seed": args.seed,
        "latency_base_ms": args.latency_base_ms,
        "latency_jitter_ms": args.latency_jitter_ms,
        "loss": args.loss,
        "dup": args.dup,
        "reboot_every": args.reboot_every,
        "session_timeout_s": args.session_timeout_s,
        "out": args.out,
    }
    if args.profile:
        return load_profile(args.profile, **overrides)
    return RunProfile(**{k: v for k, v in overrides.items() if v is not None})


def cmd_run(args: argparse.Namespace) -> int:
    profile = _profile(args)
    result = run(profile)
    out = write_artifacts(result, profile.out or f"runs/{profile.mode}-seed{profile.seed}")
    s = result.summary()
    metrics = s.get("metrics", {})
    print(f"{profile.mode}: sent={s['sent']} received={s['received']} "
          f"mean_latency_ms={metrics.get('mean_latency_ms', float('nan')):.3f} "
          f"reliability_pct={metrics.get('reliability_pct') or float('nan'):.2f} -> {out}")
    return EXIT_OK


def cmd_compare(args: argparse.Namespace) -> int:
    psk_server, psk_client = load_run(args.psk)
    dsekp_server, dsekp_client = load_run(args.dsekp)
    cmp = compare(psk_server, dsekp_server, psk_client, dsekp_client)
    print(cmp.format_table())
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        dump_json(cmp.as_dict(), out / "comparison.json")
        (out / "comparison.txt").write_text(cmp.format_table() + "\n", encoding="utf-8")
        write_plot_series(out, "psk", psk_server)
        write_plot_series(out, "dsekp", dsekp_server)
    return EXIT_OK


def cmd_attack(args: argparse.Namespace) -> int:
    profile = _profile(args)
    seed = profile.seed if args.attack_seed is None else args.attack_seed
    scenario = adversary.AttackScenario(args.kind, args.count, seed)
    result = run_attack(profile, scenario, concurrent=args.concurrent)
    out = write_artifacts(result, profile.out or f"runs/attack-{args.kind}-{profile.mode}-seed{profile.seed}")
    print(result.attack_report.to_json())
    log.info("artifacts written to %s", out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dsekp", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="simulate one protocol and write logs")
    _add_profile_flags(p_run)
    p_run.set_defaults(func=cmd_run)

    p_cmp = sub.add_parser("compare", help="compare a PSK run with a DSEKP run")
    p_cmp.add_argument("psk", help="PSK run directory or server_logs.csv")
    p_cmp.add_argument("dsekp", help="DSEKP run directory or server_logs.csv")
    p_cmp.add_argument("--out", help="directory for comparison.json and plot series")
    p_cmp.set_defaults(func=cmd_compare)

    p_att = sub.add_parser("attack", help="honest run plus a scripted attack")
    _add_profile_flags(p_att)
    p_att.add_argument("--kind", required=True, choices=adversary.KINDS)
    p_att.add_argument("--count", type=int, default=1000)
    p_att.add_argument("--attack-seed", type=int)
    p_att.add_argument("--concurrent", action="store_true", help="interleave attacks with honest traffic")
    p_att.set_defaults(func=cmd_attack)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except InvariantViolation as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except (ConfigError, SchemaMismatch, adversary.EmptyArchive, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
