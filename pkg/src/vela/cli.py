"""Command line client.

The client assembles a :class:`RunConfig` from an optional INI file and
flag overrides, posts it to the service and prints the returned summary.
Without ``--url`` the service runs in process.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings

from .config import apply_overrides, load_config

# flag -> config key
SHORTCUTS = {
    "n": "grid.n",
    "L": "grid.L",
    "model": "material.kind",
    "c1": "material.c1",
    "nu": "material.nu",
    "dt": "solver.dt",
    "T": "solver.T",
    "cadence": "solver.cadence",
    "seed": "data.seed",
    "epsilon": "data.epsilon",
    "out": "output.directory",
}


class Client:
    """Minimal JSON client over an httpx-compatible transport."""

    def __init__(self, url: str | None = None):
        if url:
            import httpx

            self._http = httpx.Client(base_url=url, timeout=None)
        else:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                from fastapi.testclient import TestClient

            from .service import app

            self._http = TestClient(app)

    def post(self, path: str, payload: dict) -> dict:
        r = self._http.post(path, json=payload)
        if r.status_code >= 400:
            try:
                detail = r.json().get("detail", r.text)
            except ValueError:
                detail = r.text
            raise SystemExit(f"error: {detail}")
        return r.json()


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="INI configuration file")
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override a configuration key (repeatable)")
    for flag, key in SHORTCUTS.items():
        p.add_argument(f"--{flag}", dest=f"sc_{flag}", metavar="VALUE",
                       help=f"shortcut for --set {key}=VALUE")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="vela", description=__doc__.splitlines()[0])
    ap.add_argument("--url", help="service base URL; default runs the service in process")
    ap.add_argument("--json", action="store_true", help="print the raw JSON summary")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run one simulation with diagnostics")
    _add_common(p)
    p = sub.add_parser("sweep", help="run a viscosity sweep on shared initial data")
    _add_common(p)
    p.add_argument("--nus", nargs="+", type=float, required=True, metavar="NU")
    p = sub.add_parser("nullcheck", help="check the shear-wave null condition")
    _add_common(p)
    p = sub.add_parser("inequalities", help="Hardy and weighted Sobolev batteries")
    _add_common(p)
    p.add_argument("--hardy-count", type=int)
    p.add_argument("--sobolev-count", type=int)
    p.add_argument("--lam", type=float, default=1.0)
    p = sub.add_parser("inspect", help="summarize a snapshot file")
    p.add_argument("snapshot")
    p = sub.add_parser("write-config", help="print the effective configuration as INI")
    _add_common(p)
    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    return ap


def _config(args):
    cfg = load_config(args.config)
    sets = list(args.set)
    for flag, key in SHORTCUTS.items():
        val = getattr(args, f"sc_{flag}", None)
        if val is not None:
            sets.append(f"{key}={val}")
    return apply_overrides(cfg, sets)


def _flatten(obj, prefix=""):
    if isinstance(obj, dict):
        for k, v in obj.items():
            yield from _flatten(v, f"{prefix}{k}.")
    elif isinstance(obj, list) and obj and isinstance(obj[0], dict):
        for i, v in enumerate(obj):
            yield from _flatten(v, f"{prefix}{i}.")
    else:
        yield prefix[:-1], obj


def _print(summary: dict, as_json: bool):
    if as_json:
        print(json.dumps(summary, indent=2, sort_keys=True))
        return
    for key, val in _flatten(summary):
        print(f"{key}: {val}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "serve":
        import uvicorn

        uvicorn.run("vela.service:app", host=args.host, port=args.port)
        return 0
    if args.command == "inspect":
        res = Client(args.url).post("/inspect", {"path": args.snapshot})
        _print(res["summary"], args.json)
        return res["exit_status"]
    try:
        cfg = _config(args)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if args.command == "write-config":
        sys.stdout.write(cfg.to_ini())
        return 0
    payload = {"config": cfg.model_dump()}
    client = Client(args.url)
    if args.command == "simulate":
        res = client.post("/simulate", payload)
    elif args.command == "sweep":
        res = client.post("/sweep", {**payload, "nu_list": args.nus})
    elif args.command == "nullcheck":
        res = client.post("/nullcheck", payload)
    else:
        res = client.post("/inequalities", {**payload, "hardy_count": args.hardy_count,
                                            "sobolev_count": args.sobolev_count,
                                            "lam": args.lam})
    _print(res["summary"], args.json)
    return int(res["exit_status"])


if __name__ == "__main__":
    sys.exit(main())
