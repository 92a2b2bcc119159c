"""Command-line client for the toolkit.

Commands build the same request models the HTTP service consumes and
dispatch in-process by default; pass --url to target a running server.
"""
from __future__ import annotations

import argparse
import json
import sys
import urllib.error
import urllib.request

from .errors import NnoodkitError
from .service.app import (
    handle_calibrate,
    handle_evaluate,
    handle_generate,
    handle_inspect,
    handle_plan,
)
from .service.schemas import (
    CalibrateRequest,
    EvaluateRequest,
    GenerateRequest,
    InspectRequest,
    PlanRequest,
)

_ENDPOINTS = {
    "plan": (PlanRequest, handle_plan),
    "calibrate": (CalibrateRequest, handle_calibrate),
    "generate": (GenerateRequest, handle_generate),
    "evaluate": (EvaluateRequest, handle_evaluate),
    "inspect": (InspectRequest, handle_inspect),
}


def _post_remote(url: str, endpoint: str, payload: dict) -> dict:
    body = json.dumps(payload).encode("utf-8")
    request = urllib.request.Request(
        f"{url.rstrip('/')}/{endpoint}",
        data=body,
        headers={"Content-Type": "application/json"},
        method="POST",
    )
    with urllib.request.urlopen(request) as response:
        return json.loads(response.read().decode("utf-8"))


def _dispatch(endpoint: str, payload: dict, url: str | None) -> dict:
    if url:
        return _post_remote(url, endpoint, payload)
    model_cls, handler = _ENDPOINTS[endpoint]
    response = handler(model_cls(**payload))
    return response.model_dump()


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nnoodkit",
        description="Synthetic anomaly dataset planning, calibration, generation and scoring.",
    )
    parser.add_argument("--url", help="base URL of a running nnoodkit service", default=None)
    sub = parser.add_subparsers(dest="command", required=True)

    plan = sub.add_parser("plan", help="derive the experiment plan for a dataset")
    plan.add_argument("--dataset", required=True)
    plan.add_argument("--out", default=None)

    cal = sub.add_parser("calibrate", help="calibrate task parameters")
    cal.add_argument("--dataset", required=True)
    cal.add_argument("--task", required=True, choices=["fpi", "cutpaste", "pii", "nsa", "nsa-mixed"])
    cal.add_argument("--plan", required=True)
    cal.add_argument("--seed", type=int, default=0)
    cal.add_argument("--out", default=None)

    gen = sub.add_parser("generate", help="write an augmented dataset")
    gen.add_argument("--dataset", required=True)
    gen.add_argument("--task", required=True, choices=["fpi", "cutpaste", "pii", "nsa", "nsa-mixed"])
    gen.add_argument("--plan", required=True)
    gen.add_argument("--params", required=True)
    gen.add_argument("--count", type=int, required=True)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", required=True)
    gen.add_argument("--jobs", type=int, default=None)

    ev = sub.add_parser("evaluate", help="score prediction maps against ground truth")
    ev.add_argument("--pred", required=True)
    ev.add_argument("--gt", required=True)
    ev.add_argument("--out", default=None)

    ins = sub.add_parser("inspect", help="render side-by-side inspection panels")
    ins.add_argument("--dataset", required=True)
    ins.add_argument("--task", required=True, choices=["fpi", "cutpaste", "pii", "nsa", "nsa-mixed"])
    ins.add_argument("--plan", required=True)
    ins.add_argument("--params", required=True)
    ins.add_argument("--count", "-n", type=int, default=1, dest="count")
    ins.add_argument("--seed", type=int, default=0)
    ins.add_argument("--out", required=True)

    srv = sub.add_parser("serve", help="run the HTTP service")
    srv.add_argument("--host", default="127.0.0.1")
    srv.add_argument("--port", type=int, default=8080)
    return parser


def _payload(args: argparse.Namespace) -> tuple[str, dict]:
    if args.command == "plan":
        return "plan", {"dataset_dir": args.dataset, "out_path": args.out}
    if args.command == "calibrate":
        return "calibrate", {
            "dataset_dir": args.dataset,
            "task": args.task,
            "plan_path": args.plan,
            "seed": args.seed,
            "out_path": args.out,
        }
    if args.command == "generate":
        return "generate", {
            "dataset_dir": args.dataset,
            "task": args.task,
            "plan_path": args.plan,
            "params_path": args.params,
            "count": args.count,
            "seed": args.seed,
            "out_dir": args.out,
            "jobs": args.jobs,
        }
    if args.command == "evaluate":
        return "evaluate", {"pred_dir": args.pred, "gt_dir": args.gt, "out_path": args.out}
    return "inspect", {
        "dataset_dir": args.dataset,
        "task": args.task,
        "plan_path": args.plan,
        "params_path": args.params,
        "n": args.count,
        "seed": args.seed,
        "out_dir": args.out,
    }


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "serve":
        import uvicorn

        uvicorn.run("nnoodkit.service.app:app", host=args.host, port=args.port)
        return 0
    endpoint, payload = _payload(args)
    try:
        result = _dispatch(endpoint, payload, args.url)
    except NnoodkitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except urllib.error.HTTPError as exc:
        print(f"error: server returned {exc.code}: {exc.read().decode()}", file=sys.stderr)
        return 1
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(json.dumps(result, indent=2, sort_keys=True))
    if result.get("failures"):
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
