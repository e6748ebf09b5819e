"""Command-line front end: run, certify, probe-decay."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .harness import (
    ConfigError,
    load_config,
    probe_case_decay,
    run_case,
    certify_case,
    write_case_outputs,
)


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("config", type=Path, help="experiment config (JSON)")
    p.add_argument("--out-dir", type=Path, default=None,
                   help="override the config's output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lagmpc",
        description="Lag-L one-Newton-step-per-horizon MPC experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a case and emit all figure CSVs")
    _add_common(p_run)

    p_cert = sub.add_parser("certify", help="model certificates only")
    _add_common(p_cert)

    p_probe = sub.add_parser("probe-decay", help="KKT inverse decay probe")
    _add_common(p_probe)
    p_probe.add_argument("--max-offset", type=int, default=20)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config)
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    out_dir = args.out_dir if args.out_dir is not None else config.out_dir

    try:
        if args.command == "run":
            result = run_case(config)
            paths = write_case_outputs(result, out_dir)
            for p in paths:
                print(f"wrote {p}")
            for name, cert in result.certificates.items():
                status = "PASS" if cert["pass"] else "FAIL"
                print(f"certificate {name}: {status} {cert}")
            for M, msg in result.failures.items():
                print(f"solver failure at M={M}: {msg}", file=sys.stderr)
            return 0 if result.ok else 1

        if args.command == "certify":
            certs = certify_case(config)
            ok = True
            for name, cert in certs.items():
                status = "PASS" if cert["pass"] else "FAIL"
                ok = ok and cert["pass"]
                print(f"certificate {name}: {status} {cert}")
            return 0 if ok else 1

        if args.command == "probe-decay":
            report = probe_case_decay(config, max_offset=args.max_offset)
            rows = sorted(report.block_norms.items())
            out_dir.mkdir(parents=True, exist_ok=True)
            path = out_dir / "decay_probe.csv"
            lines = ["part,i,j,offset,norm"]
            for (i, j, part), norm in rows:
                off = report.offset_of(i, j, part)
                lines.append(f"{part},{i},{j},{off},{format(norm, '.17e')}")
            path.write_text("\n".join(lines) + "\n")
            print(f"wrote {path}")
            print(
                f"fitted_rho={report.fitted_rho:.6f} "
                f"fitted_logK={report.fitted_logK:.6f} "
                f"r_squared={report.r_squared:.6f} "
                f"n_points={report.n_points}"
            )
            return 0 if 0.0 < report.fitted_rho < 1.0 else 1
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
