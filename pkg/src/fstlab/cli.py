"""Thin command-line client for the lab service.

Every subcommand builds an HTTP request; with ``--server`` it talks to a
running instance, otherwise it mounts the service in-process through an ASGI
transport so the commands work standalone. ``serve`` starts a real server.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import httpx


def make_client(server: str | None) -> httpx.Client:
    if server:
        return httpx.Client(base_url=server, timeout=None)
    from .service import create_app

    transport = httpx.ASGITransport(app=create_app())
    return httpx.Client(transport=transport, base_url="http://fstlab.internal", timeout=None)


def _fail(resp: httpx.Response) -> None:
    try:
        detail = resp.json().get("detail", resp.text)
    except ValueError:
        detail = resp.text
    print(f"error ({resp.status_code}): {detail}", file=sys.stderr)
    raise SystemExit(1)


def cmd_run(args) -> None:
    config_text = Path(args.config).read_text() if args.config else ""
    overrides: dict[str, str] = {}
    for key in ("variant", "k", "n", "mu", "mu_prime", "tau", "lr", "iters", "seed", "task", "batch_mode", "out"):
        value = getattr(args, key)
        if value is not None:
            overrides["seeds" if key == "seed" else key] = str(value)
    for item in args.set or []:
        if "=" not in item:
            print(f"--set expects key=value, got {item!r}", file=sys.stderr)
            raise SystemExit(1)
        k, v = item.split("=", 1)
        overrides[k.strip()] = v.strip()
    with make_client(args.server) as client:
        resp = client.post("/runs", json={"config_text": config_text, "overrides": overrides})
        if resp.status_code != 200:
            _fail(resp)
        body = resp.json()
    print(f"run {body['run_id']}")
    print(f"manifest {body['manifest_path']}")
    for seed, row in sorted(body["manifest"]["final"].items(), key=lambda kv: int(kv[0])):
        print(
            f"seed {seed}: student_eval={row['student_eval']:.4f} "
            f"teacher_eval={row['teacher_eval']:.4f} pseudo_error={row['pseudo_error']:.4f}"
        )


def cmd_compare(args) -> None:
    with make_client(args.server) as client:
        resp = client.post("/compare", json={"manifests": args.manifests})
        if resp.status_code != 200:
            _fail(resp)
        print(resp.json()["table"], end="")


def cmd_export_curves(args) -> None:
    with make_client(args.server) as client:
        resp = client.post("/curves", json={"manifests": [args.manifest], "out": args.out})
        if resp.status_code != 200:
            _fail(resp)
        print(resp.json()["path"])


def cmd_serve(args) -> None:
    import uvicorn

    uvicorn.run("fstlab.service:app", host=args.host, port=args.port)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fstlab", description=__doc__)
    p.add_argument("--server", default=None, help="base URL of a running service; default runs in-process")
    sub = p.add_subparsers(dest="command", required=True)

    pr = sub.add_parser("run", help="execute an experiment plan")
    pr.add_argument("--config", default=None, help="flat key=value config file")
    pr.add_argument("--variant", choices=["st", "naive", "improved", "fst-d", "fst-w"])
    pr.add_argument("--k", type=int)
    pr.add_argument("--n", type=int)
    pr.add_argument("--mu", type=float)
    pr.add_argument("--mu-prime", dest="mu_prime", type=float)
    pr.add_argument("--tau", type=float)
    pr.add_argument("--lr", type=float)
    pr.add_argument("--iters", type=int)
    pr.add_argument("--seed", type=int, help="single replicate seed (overrides the seeds list)")
    pr.add_argument("--task", choices=["two-moons", "grid-seg"])
    pr.add_argument("--batch-mode", dest="batch_mode", choices=["same", "different"])
    pr.add_argument("--out", help="output directory")
    pr.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any other config key")
    pr.set_defaults(func=cmd_run)

    pc = sub.add_parser("compare", help="summarize final scores across runs")
    pc.add_argument("manifests", nargs="+", help="manifest.json paths")
    pc.set_defaults(func=cmd_compare)

    pe = sub.add_parser("export-curves", help="write long-format plot data for a run")
    pe.add_argument("manifest", help="manifest.json path")
    pe.add_argument("--out", default=None)
    pe.set_defaults(func=cmd_export_curves)

    ps = sub.add_parser("serve", help="start the HTTP service")
    ps.add_argument("--host", default="127.0.0.1")
    ps.add_argument("--port", type=int, default=8000)
    ps.set_defaults(func=cmd_serve)
    return p


def main(argv: list[str] | None = None) -> None:
    args = build_parser().parse_args(argv)
    args.func(args)


if __name__ == "__main__":
    main()
