"""Command-line entry point.

Exit codes are shared by every subcommand: 0 on success, 1 on a domain error
(invalid model, infeasible constraints, unknown handler...), 2 on usage or
I/O errors (missing files, unreadable JSON, malformed documents).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

from .config import assemble, load_config
from .engine import Context, render_json
from .errors import ConfigError, MalformedDocument, PageOptError, StorageError
from .feedback import FeedbackLoop, load
from .layout import render_html
from .potl import parse_potl, validate_model
from .simulator import UserModel, simulate

EXIT_OK, EXIT_DOMAIN, EXIT_USAGE = 0, 1, 2


class _Usage(Exception):
    """Raised for usage / IO failures that map to exit code 2."""


def _read(path: str) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise _Usage(f"cannot read {path}: {exc.strerror or exc}") from None


def _config(path: str):
    try:
        return load_config(path)
    except (OSError, ValueError, ConfigError) as exc:
        raise _Usage(f"bad config {path}: {exc}") from None


def _write(path: str, text: str) -> None:
    try:
        Path(path).write_text(text, encoding="utf-8")
    except OSError as exc:
        raise _Usage(f"cannot write {path}: {exc.strerror or exc}") from None


def cmd_validate(args: argparse.Namespace) -> int:
    text = _read(args.model)
    try:
        model = parse_potl(text, strict=False)
    except MalformedDocument as exc:
        raise _Usage(f"{args.model}: {exc}") from None
    report = validate_model(model)
    if args.json:
        print(json.dumps(report.to_dict(), indent=1, sort_keys=True))
    else:
        for issue in report.issues:
            print(f"{issue.severity}: {issue.path}: {issue.message}")
        print("ok" if report.ok else f"{len(report.errors)} error(s)")
    if args.dump:
        print(model.dump_json())
    return EXIT_OK if report.ok else EXIT_DOMAIN


def cmd_instantiate(args: argparse.Namespace) -> int:
    cfg = _config(args.config)
    seed = cfg.seed if args.seed is None else args.seed
    a = assemble(cfg)
    instance = a.engine.instantiate(Context(args.request_id, now=cfg.now, seed=seed))
    _write(args.out, render_json(instance) + "\n")
    if args.html:
        if a.layout is None or a.binding is None:
            raise _Usage("--html needs a 'layout' in the config")
        _write(args.html, render_html(a.layout, a.binding, instance))
    return EXIT_OK


def cmd_simulate(args: argparse.Namespace) -> int:
    cfg = _config(args.config)
    user_path = args.user_model or cfg.user_model_path
    if user_path is None:
        raise _Usage("no user model: pass --user-model or set 'user_model' in the config")
    try:
        user = UserModel.load(user_path)
    except (OSError, ValueError) as exc:
        raise _Usage(f"bad user model {user_path}: {exc}") from None
    a = assemble(cfg, policy=args.policy)
    report = simulate(a.engine, user, args.serves, seed=cfg.seed if args.seed is None else args.seed,
                      now=cfg.now, sync_every=args.sync_every, window=args.window)
    try:
        json_path, csv_path = report.write(args.report)
    except OSError as exc:
        raise _Usage(f"cannot write report: {exc}") from None
    summary = {"serves": report.serves, "total_clicks": report.total_clicks,
               "final_regret": report.regret[-1], "violations": report.violations,
               "report": str(json_path), "series": str(csv_path)}
    for dof_id, log in report.choice_log.items():
        tail = log[-args.final_window:]
        if tail:
            summary.setdefault("final_window_share", {})[dof_id] = {a: tail.count(a) / len(tail)
                                                                   for a in sorted(set(tail))}
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK if report.violations == 0 else EXIT_DOMAIN


def cmd_stats(args: argparse.Namespace) -> int:
    try:
        store = load(args.snapshot)
    except StorageError as exc:
        raise _Usage(str(exc)) from None
    snap = store.snapshot()
    keys = snap.for_dof(args.dof) if args.dof else dict(sorted(snap.items()))
    print(json.dumps({"generation": snap.generation,
                      "arms": [{"key": list(k), **v.to_json()} for k, v in keys.items()]}, indent=1))
    return EXIT_OK


def cmd_serve(args: argparse.Namespace) -> int:
    from .service import PageOptService, make_server

    cfg = _config(args.config)
    a = assemble(cfg)
    loop = None
    if cfg.snapshot_path is not None and cfg.event_log is not None and cfg.snapshot_path.exists():
        loop = FeedbackLoop.recover(cfg.snapshot_path, cfg.event_log, index_capacity=cfg.index_capacity,
                                    dedup_window=cfg.dedup_window)
    service = PageOptService(a, loop)
    server = make_server(service, args.host, args.port)
    print(f"serving on http://{args.host}:{server.server_address[1]}", file=sys.stderr)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
        service.flush()
        if cfg.snapshot_path is not None:
            service.loop.checkpoint(cfg.snapshot_path)
        service.close()
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pageopt", description="Page-model optimisation engine.")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("validate", help="parse and validate a POTL model")
    v.add_argument("model")
    v.add_argument("--json", action="store_true", help="print the report as JSON")
    v.add_argument("--dump", action="store_true", help="print the parsed model as JSON")
    v.set_defaults(func=cmd_validate)

    i = sub.add_parser("instantiate", help="build one page instance")
    i.add_argument("--config", required=True)
    i.add_argument("--seed", type=int)
    i.add_argument("--request-id", default="cli")
    i.add_argument("--out", required=True)
    i.add_argument("--html", help="also write the layout-bound HTML here")
    i.set_defaults(func=cmd_instantiate)

    s = sub.add_parser("simulate", help="closed-loop simulation against synthetic users")
    s.add_argument("--config", required=True)
    s.add_argument("--serves", type=int, required=True)
    s.add_argument("--policy", help="override the policy of every degree of freedom")
    s.add_argument("--seed", type=int)
    s.add_argument("--user-model")
    s.add_argument("--report", required=True, help="report JSON path; the CSV series goes next to it")
    s.add_argument("--window", type=int, default=1000)
    s.add_argument("--sync-every", type=int, default=1)
    s.add_argument("--final-window", type=int, default=2000)
    s.set_defaults(func=cmd_simulate)

    st = sub.add_parser("stats", help="print a persisted arm table")
    st.add_argument("--snapshot", required=True)
    st.add_argument("--dof")
    st.set_defaults(func=cmd_stats)

    sv = sub.add_parser("serve", help="run the HTTP facade")
    sv.add_argument("--config", required=True)
    sv.add_argument("--host", default="127.0.0.1")
    sv.add_argument("--port", type=int, default=8080)
    sv.set_defaults(func=cmd_serve)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    if getattr(args, "serves", 1) < 1:
        parser.error("--serves must be at least 1")
    try:
        return args.func(args)
    except _Usage as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except MalformedDocument as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except PageOptError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DOMAIN


if __name__ == "__main__":
    sys.exit(main())
