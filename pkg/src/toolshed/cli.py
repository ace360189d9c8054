"""Command-line entry points.

toolshed serve   -- run the registry service from a YAML tool config
harness run      -- batched rollouts over a dataset, traces to JSONL
harness score    -- re-score an existing trace file
harness sessions -- interactive session service (what the console talks to)

Exit codes: 0 success, 2 config error, 3 registry unreachable, 4 dataset
or trace data invalid.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import yaml

from .engine import Policy, RemoteChatPolicy, RolloutConfig, ScriptedPolicy
from .errors import BadArgs, LoadError, ScoreError
from .fixtures import load_dataset
from .harness import balance_answers, local_session_factory, run_batch, score_traces
from .registry import Registry, specs_from_config
from .tools import DEFAULT_TOOL_CONFIG, build_toolbox

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_REGISTRY = 3
EXIT_DATA = 4


def _load_config(path_arg: str | None) -> dict:
    """YAML tool config; the TOOLSHED_CONFIG env var wins over the flag."""
    path = os.environ.get("TOOLSHED_CONFIG") or path_arg
    if not path:
        return dict(DEFAULT_TOOL_CONFIG)
    p = Path(path)
    if not p.is_file():
        raise BadArgs(f"config file not found: {p}")
    try:
        loaded = yaml.safe_load(p.read_text())
    except yaml.YAMLError as exc:
        raise BadArgs(f"config is not valid YAML: {exc}") from exc
    if loaded is None:
        loaded = {}
    if not isinstance(loaded, dict):
        raise BadArgs("config must be a mapping of tool name to settings")
    # partial configs override the defaults rather than disabling other tools
    merged = dict(DEFAULT_TOOL_CONFIG)
    merged.update(loaded)
    return merged


def build_registry(config: dict) -> Registry:
    specs = specs_from_config(config)
    toolbox = build_toolbox()
    registry = Registry()
    for spec in specs:
        if spec.name not in toolbox:
            raise BadArgs(f"config names unknown tool: {spec.name}")
        registry.register_tool(spec, toolbox[spec.name])
    return registry


def _parse_listen(addr: str) -> tuple[str, int]:
    host, _, port = addr.rpartition(":")
    if not port.isdigit():
        raise BadArgs(f"listen address must be host:port, got {addr!r}")
    return host or "127.0.0.1", int(port)


def _serve(app, listen: str) -> None:
    import uvicorn

    host, port = _parse_listen(listen)
    uvicorn.run(app, host=host, port=port, log_level="warning")


def _build_policy(spec: str) -> Policy:
    if spec.startswith("http://") or spec.startswith("https://"):
        return RemoteChatPolicy(spec)
    path = Path(spec)
    if not path.is_file():
        raise BadArgs(f"policy script not found: {path}")
    return ScriptedPolicy.from_jsonl(path)


# ---------------------------------------------------------------------------
# toolshed

def toolshed_main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="toolshed")
    sub = parser.add_subparsers(dest="cmd", required=True)
    serve = sub.add_parser("serve", help="run the registry service")
    serve.add_argument("--config", default=None, help="YAML tool config")
    serve.add_argument("--listen", default="127.0.0.1:8000")
    args = parser.parse_args(argv)

    if args.cmd == "serve":
        try:
            registry = build_registry(_load_config(args.config))
        except BadArgs as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        from .service import create_registry_app

        try:
            _serve(create_registry_app(registry), args.listen)
        except BadArgs as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        finally:
            registry.close()
        return EXIT_OK
    return EXIT_CONFIG


# ---------------------------------------------------------------------------
# harness

def _cmd_run(args) -> int:
    try:
        config = _load_config(args.config)
    except BadArgs as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        fixtures = load_dataset(args.dataset)
    except LoadError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_DATA
    if not fixtures:
        print("dataset is empty", file=sys.stderr)
        return EXIT_DATA

    if args.balance:
        choice = [f for f in fixtures if f.qa and f.qa.task == "choice"]
        rest = [f for f in fixtures if not (f.qa and f.qa.task == "choice")]
        try:
            kept = balance_answers(choice, seed=args.seed)
        except BadArgs as exc:
            print(f"cannot balance dataset: {exc}", file=sys.stderr)
            return EXIT_DATA
        kept_ids = {f.id for f in kept} | {f.id for f in rest}
        fixtures = [f for f in fixtures if f.id in kept_ids]

    try:
        policy = _build_policy(args.policy)
    except BadArgs as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    cfg = RolloutConfig(t_max=args.max_turns, n_group=args.rollouts, seed=args.seed)

    if args.registry:
        from .service import RemoteSession, registry_reachable

        if not registry_reachable(args.registry):
            print(f"registry unreachable: {args.registry}", file=sys.stderr)
            return EXIT_REGISTRY
        import httpx

        client = httpx.Client()
        try:
            def factory(fx, seed):
                return RemoteSession(args.registry, client, fixture=fx, seed=seed)

            report = run_batch(fixtures, policy, cfg, factory, args.out,
                               parallel=args.parallel)
        finally:
            client.close()
    else:
        try:
            registry = build_registry(config)
        except BadArgs as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        try:
            report = run_batch(fixtures, policy, cfg,
                               local_session_factory(registry), args.out,
                               parallel=args.parallel)
        finally:
            registry.close()

    print(report.to_json())
    return EXIT_OK


def _cmd_score(args) -> int:
    try:
        fixtures = load_dataset(args.dataset)
    except LoadError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_DATA
    try:
        report = score_traces(args.traces, fixtures)
    except FileNotFoundError:
        print(f"trace file not found: {args.traces}", file=sys.stderr)
        return EXIT_DATA
    except ScoreError as exc:
        print(f"score error: {exc}", file=sys.stderr)
        return EXIT_DATA
    print(report.to_json())
    return EXIT_OK


def _cmd_sessions(args) -> int:
    try:
        config = _load_config(args.config)
        registry = build_registry(config)
    except BadArgs as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    fixtures = []
    if args.dataset:
        try:
            fixtures = load_dataset(args.dataset)
        except LoadError as exc:
            print(str(exc), file=sys.stderr)
            registry.close()
            return EXIT_DATA

    policy = None
    if args.policy:
        try:
            policy = _build_policy(args.policy)
        except BadArgs as exc:
            print(f"config error: {exc}", file=sys.stderr)
            registry.close()
            return EXIT_CONFIG

    from .service import SessionService, create_session_app

    cfg = RolloutConfig(t_max=args.max_turns, seed=args.seed)
    service = SessionService(registry, fixtures, policy=policy, cfg=cfg)
    try:
        _serve(create_session_app(service), args.listen)
    except BadArgs as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    finally:
        registry.close()
    return EXIT_OK


def harness_main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="harness")
    sub = parser.add_subparsers(dest="cmd", required=True)

    run = sub.add_parser("run", help="batched rollouts over a dataset")
    run.add_argument("--dataset", required=True)
    run.add_argument("--policy", required=True,
                     help="chat endpoint URL or scripted-policy JSONL path")
    run.add_argument("--rollouts", type=int, default=5, metavar="N")
    run.add_argument("--max-turns", type=int, default=10, metavar="T")
    run.add_argument("--seed", type=int, default=0, metavar="S")
    run.add_argument("--out", required=True, help="trace JSONL output path")
    run.add_argument("--balance", action="store_true")
    run.add_argument("--parallel", type=int, default=None)
    run.add_argument("--config", default=None)
    run.add_argument("--registry", default=None,
                     help="remote registry URL (default: in-process)")

    score = sub.add_parser("score", help="re-score a trace file")
    score.add_argument("--traces", required=True)
    score.add_argument("--dataset", required=True)

    sessions = sub.add_parser("sessions", help="serve the session API")
    sessions.add_argument("--listen", default="127.0.0.1:8080")
    sessions.add_argument("--dataset", default=None)
    sessions.add_argument("--policy", default=None,
                          help="drive rollouts with this policy; omit for manual mode")
    sessions.add_argument("--config", default=None)
    sessions.add_argument("--max-turns", type=int, default=10)
    sessions.add_argument("--seed", type=int, default=0)

    args = parser.parse_args(argv)
    if args.cmd == "run":
        return _cmd_run(args)
    if args.cmd == "score":
        return _cmd_score(args)
    if args.cmd == "sessions":
        return _cmd_sessions(args)
    return EXIT_CONFIG


def main() -> None:  # pragma: no cover
    sys.exit(toolshed_main())


if __name__ == "__main__":  # pragma: no cover
    sys.exit(toolshed_main())
