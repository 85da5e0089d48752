"""Command-line interface.

Each subcommand builds a JSON request and posts it to the HTTP service:
by default an in-process ASGI instance (no socket, no server process),
or a running server when ``--server URL`` is given.  Rendering and exit
codes live here; all real work happens behind the service routes.

Exit codes: 0 success, 1 test or training failure, 2 usage error,
3 I/O or format error.  LGM_THREADS, when set, overrides --threads.
"""

from __future__ import annotations

import argparse
import asyncio
import base64
import json
import os
import sys
from typing import Optional

import httpx

from . import __version__

# service "error" kinds -> process exit codes
_ERROR_EXIT = {"config": 3, "weights": 3, "image": 3, "shape": 3,
               "training": 1, "internal": 1}


class _CliFailure(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _post(server: Optional[str], path: str, payload: dict) -> dict:
    try:
        if server:
            with httpx.Client(base_url=server, timeout=3600.0) as client:
                resp = client.post(path, json=payload)
        else:
            from .service import create_app

            async def _go():
                transport = httpx.ASGITransport(app=create_app())
                async with httpx.AsyncClient(transport=transport,
                                             base_url="http://lgm",
                                             timeout=3600.0) as client:
                    return await client.post(path, json=payload)

            resp = asyncio.run(_go())
    except httpx.HTTPError as e:
        raise _CliFailure(3, f"service request failed: {e}") from e
    if resp.status_code == 200:
        return resp.json()
    try:
        body = resp.json()
    except ValueError:
        body = {}
    if resp.status_code == 400 and "error" in body:
        code = _ERROR_EXIT.get(body["error"], 1)
        raise _CliFailure(code, f"{body['error']} error: {body.get('detail', '')}")
    if resp.status_code == 422:
        raise _CliFailure(2, f"invalid request: {json.dumps(body)}")
    raise _CliFailure(1, f"service returned HTTP {resp.status_code}: {body}")


def _read_json(path: str) -> dict:
    try:
        with open(path, "rb") as fh:
            return json.load(fh)
    except OSError as e:
        raise _CliFailure(3, f"cannot read {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise _CliFailure(3, f"{path}: invalid JSON ({e})") from e


def _read_b64(path: str) -> str:
    try:
        with open(path, "rb") as fh:
            return base64.b64encode(fh.read()).decode("ascii")
    except OSError as e:
        raise _CliFailure(3, f"cannot read {path}: {e}") from e


def _write_json(path: str, obj: dict) -> None:
    try:
        with open(path, "w") as fh:
            json.dump(obj, fh, indent=2)
            fh.write("\n")
    except OSError as e:
        raise _CliFailure(3, f"cannot write {path}: {e}") from e


def _parse_size(text: str) -> tuple[int, int]:
    """'WxH' (width first) -> (height, width) as the config stores it."""
    parts = text.lower().split("x")
    try:
        w, h = (int(p) for p in parts)
        if w < 1 or h < 1:
            raise ValueError
    except ValueError:
        raise _CliFailure(2, f"--input-size wants WxH (e.g. 192x256), "
                             f"got {text!r}") from None
    return h, w


def _threads(args) -> int:
    env = os.environ.get("LGM_THREADS")
    if env is not None:
        try:
            n = int(env)
            if n < 1:
                raise ValueError
        except ValueError:
            raise _CliFailure(2, f"LGM_THREADS must be a positive integer, "
                                 f"got {env!r}") from None
        return n
    return args.threads


def _common_payload(args) -> dict:
    payload = {}
    if args.config is not None:
        payload["config"] = _read_json(args.config)
    return payload


def _cmd_bench(args) -> int:
    payload = _common_payload(args)
    if args.input_size is not None:
        payload["input_size"] = list(_parse_size(args.input_size))
    payload.update(warmup=args.warmup, iters=args.iters,
                   threads=_threads(args), seed=args.seed)
    report = _post(args.server, "/bench", payload)
    h, w = report["input_size"]
    print(f"config {report['config_digest']}  input {w}x{h} (WxH)  "
          f"threads {report['threads']}  warmup {report['warmup']}  "
          f"iters {report['iters']}")
    print(f"params {report['params']:,}  macs {report['macs']:,}")
    print(f"forward  mean {report['mean_ms']:9.2f} ms   p50 {report['p50_ms']:9.2f} ms   "
          f"p95 {report['p95_ms']:9.2f} ms   fps {report['fps']:6.2f}")
    print(f"decode   mean {report['decode_mean_ms']:9.3f} ms")
    if args.out:
        _write_json(args.out, report)
    return 0


def _cmd_count(args) -> int:
    payload = _common_payload(args)
    if args.input_size is not None:
        payload["input_size"] = list(_parse_size(args.input_size))
    report = _post(args.server, "/count", payload)
    if args.per_layer:
        width = max(len(e["name"]) for e in report["layers"])
        for e in report["layers"]:
            print(f"{e['name']:<{width}}  {e['kind']:<12} "
                  f"params {e['params']:>12,}  macs {e['macs']:>15,}")
    h, w = report["input_size"]
    print(f"config {report['config_digest']}  input {w}x{h} (WxH)")
    print(f"params {report['params']:,} ({report['params'] / 1e6:.3f} M)")
    print(f"flops  {report['macs']:,} MACs ({report['macs'] / 1e9:.3f} G)")
    return 0


def _cmd_infer(args) -> int:
    payload = _common_payload(args)
    payload["image_b64"] = _read_b64(args.image)
    if args.weights is not None:
        payload["weights_b64"] = _read_b64(args.weights)
    payload.update(seed=args.seed, threads=_threads(args),
                   return_heatmaps=args.dump_heatmaps is not None)
    report = _post(args.server, "/infer", payload)
    if args.dump_heatmaps is not None:
        try:
            with open(args.dump_heatmaps, "wb") as fh:
                fh.write(base64.b64decode(report.pop("heatmaps_b64")))
        except OSError as e:
            raise _CliFailure(3, f"cannot write {args.dump_heatmaps}: {e}") from e
    else:
        report.pop("heatmaps_b64", None)
    report["image"] = args.image
    print(json.dumps(report, indent=2))
    return 0


def _cmd_train_toy(args) -> int:
    payload = _common_payload(args)
    payload.update(steps=args.steps, seed=args.seed, samples=args.samples)
    report = _post(args.server, "/train-toy", payload)
    print(f"config {report['config_digest']}  steps {report['steps']}  "
          f"seed {report['seed']}")
    print(f"loss {report['initial_loss']:.6f} -> {report['final_loss']:.6f}")
    pckh = report["pckh"]
    print(f"final pckh@0.5 {pckh if pckh is None else f'{pckh:.3f}'}  "
          f"within 2 cells {report['frac_within_2cells']:.3f}")
    if args.out:
        _write_json(args.out, report)
    return 0


def _cmd_selftest(args) -> int:
    report = _post(args.server, "/selftest",
                   {"corrupt_npt": args.corrupt_npt})
    for s in report["suites"]:
        status = "ok" if s["failed"] == 0 else "FAIL"
        print(f"{s['name']:<20} {status:<5} passed {s['passed']:>4}  "
              f"failed {s['failed']:>3}  {s['duration_ms']:9.1f} ms")
        for f in s["failures"]:
            print(f"    failed: {f}")
    print(f"total: {report['total_passed']} passed, "
          f"{report['total_failed']} failed")
    return 0 if report["ok"] else 1


def _cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app
    uvicorn.run(create_app(), host=args.host, port=args.port)
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lgm-pose",
        description="Pose-estimation model toolkit: benchmark, cost "
                    "accounting, inference, toy training, self-test.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, threads=True):
        p.add_argument("--config", help="model config JSON file "
                                        "(default: built-in)")
        p.add_argument("--server", help="URL of a running service "
                                        "(default: run in-process)")
        if threads:
            p.add_argument("--threads", type=int, default=1,
                           help="worker threads (LGM_THREADS overrides)")

    p = sub.add_parser("bench", help="time the forward pass")
    common(p)
    p.add_argument("--input-size", help="resolution as WxH, e.g. 192x256")
    p.add_argument("--warmup", type=int, default=2)
    p.add_argument("--iters", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="write the full JSON report here")
    p.set_defaults(fn=_cmd_bench)

    p = sub.add_parser("count", help="closed-form parameter and FLOP counts")
    common(p, threads=False)
    p.add_argument("--input-size", help="resolution as WxH, e.g. 192x256")
    p.add_argument("--per-layer", action="store_true",
                   help="print the per-layer breakdown")
    p.set_defaults(fn=_cmd_count)

    p = sub.add_parser("infer", help="run one image through the model")
    common(p)
    p.add_argument("--image", required=True,
                   help="binary PPM (P6) or (3,H,W) float .npy")
    p.add_argument("--weights", help="weight file (default: seeded init)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dump-heatmaps", metavar="FILE",
                   help="also write raw heatmaps as .npy")
    p.set_defaults(fn=_cmd_infer)

    p = sub.add_parser("train-toy", help="fit the toy config on synthetic data")
    common(p, threads=False)
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--samples", type=int, default=8)
    p.add_argument("--out", help="write the full JSON trace here")
    p.set_defaults(fn=_cmd_train_toy)

    p = sub.add_parser("selftest", help="run the built-in verification suites")
    common(p, threads=False)
    p.add_argument("--corrupt-npt", action="store_true",
                   help=argparse.SUPPRESS)  # negative-control hook
    p.set_defaults(fn=_cmd_selftest)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8321)
    p.set_defaults(fn=_cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except _CliFailure as e:
        print(f"error: {e}", file=sys.stderr)
        return e.code


if __name__ == "__main__":
    sys.exit(main())
