"""Command-line entry point: serve, simulate, generate, analyze, bench.

Machine-readable output (JSON/CSV) goes to stdout or ``--out``; logs go to
stderr.  Exit codes: 0 success, 1 runtime error, 2 usage error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import threading
import time
from pathlib import Path

log = logging.getLogger("vqn.cli")


def _write_output(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
        log.info("wrote %s", out)
    else:
        sys.stdout.write(text)


def cmd_serve(args) -> int:
    import uvicorn

    from .service.app import create_app
    from .service.config import load_config

    config = load_config(args.config)
    if args.host:
        config = dataclasses.replace(config, listen_host=args.host)
    if args.port is not None:
        config = dataclasses.replace(config, listen_port=args.port)
    app = create_app(config, static_dir=args.static)
    uvicorn.run(app, host=config.listen_host, port=config.listen_port, log_level="info")
    return 0


def cmd_simulate(args) -> int:
    from . import simulation

    if args.preset:
        result = simulation.preset(args.preset, seed=args.seed)
    else:
        doc = json.loads(Path(args.config).read_text())
        doc.setdefault("seed", args.seed)
        if args.policy:
            doc["policy"] = args.policy
        cfg = simulation.SimConfig.from_dict(doc)
        result = {"kind": "single", "x_label": "time", "metrics": simulation.run(cfg), "config": cfg}

    if result["kind"] == "sweep":
        text = simulation.rows_to_csv(result["rows"], x_label=result["x_label"])
    else:
        text = json.dumps(simulation.metrics_to_json_dict(result["metrics"]), indent=2) + "\n"
    _write_output(text, args.out)
    return 0


def cmd_generate(args) -> int:
    from .photon_source import SourceConfig, generate, testbed_preset
    from .tagcore import write_stream

    if args.config:
        doc = json.loads(Path(args.config).read_text())
        if args.seed is not None:
            doc["seed"] = args.seed
        if args.duration is not None:
            doc["duration_s"] = args.duration
        config = SourceConfig.from_dict(doc)
    else:
        config = testbed_preset(duration_s=args.duration or 60.0, seed=args.seed if args.seed is not None else 7)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    log.info("generating %.3f s of tags for %d pairs (seed %d)", config.duration_s, len(config.pairs), config.seed)
    streams = generate(config)
    manifest = {"seed": config.seed, "duration_s": config.duration_s, "channels": {}}
    for channel, stream in sorted(streams.items()):
        path = out_dir / f"ch{channel:02d}.vqtt"
        write_stream(stream, path)
        manifest["channels"][str(channel)] = {"path": str(path), "records": len(stream)}
    sys.stdout.write(json.dumps(manifest, indent=2) + "\n")
    return 0


def cmd_analyze(args) -> int:
    from .measurement import CoincidenceSpec, coincidence_count, delay_histogram
    from .tagcore import read_stream

    a = read_stream(args.a)
    b = read_stream(args.b)
    duration_ps = max(a.duration_ps, b.duration_ps)
    if duration_ps <= 0:
        raise SystemExit("streams carry no duration; cannot normalize rates")
    duration_s = duration_ps / 1e12
    spec = CoincidenceSpec(
        window_ps=args.window_ps,
        background_offset_ps=args.bg_offset_ps,
        background_width_ps=args.bg_width_ps,
    )
    result = coincidence_count(a, b, spec, duration_s)
    doc = {"a": args.a, "b": args.b, "duration_s": duration_s, "coincidence": result.to_dict()}
    if args.histogram:
        try:
            bin_width, n_bins = (int(x) for x in args.histogram.split(","))
        except ValueError:
            raise SystemExit("--histogram expects BINW,NBINS")
        hist = delay_histogram(a, b, bin_width, bin_width * n_bins, center_ps=result.peak_delay_ps)
        doc["histogram"] = hist.to_dict()
    sys.stdout.write(json.dumps(doc, indent=2) + "\n")
    return 0


def _bench_client(base_url: str, user: str, secret: str, stop_at: float, rng, args, report: dict, lock):
    import httpx

    poll_s = args.poll_ms / 1000.0
    with httpx.Client(base_url=base_url, timeout=10.0) as client:
        token = None
        while time.monotonic() < stop_at:
            try:
                if token is None:
                    r = client.post("/api/v1/auth/login", json={"user": user, "secret": secret})
                    r.raise_for_status()
                    token = r.json()["token"]
                headers = {"Authorization": f"Bearer {token}"}

                t0 = time.monotonic()
                r = client.post("/api/v1/pair-requests", headers=headers)
                if r.status_code == 409:
                    time.sleep(poll_s)
                    continue
                r.raise_for_status()
                request_id = r.json()["request_id"]
                with lock:
                    report["submitted"] += 1

                pair_id = None
                while time.monotonic() < stop_at + args.drain_s:
                    r = client.get(f"/api/v1/pair-requests/{request_id}", headers=headers)
                    r.raise_for_status()
                    doc = r.json()
                    if doc["status"] in ("processed", "completed") and doc.get("result_ref"):
                        pair_id = doc["result_ref"].split(":", 1)[1]
                        break
                    time.sleep(poll_s)
                if pair_id is None:
                    with lock:
                        report["abandoned"] += 1
                    break
                latency = time.monotonic() - t0

                if args.measure:
                    r = client.post("/api/v1/measurements", headers=headers, json={
                        "pair_id": pair_id, "function": "count_rate",
                        "params": {"duration_s": args.measure_s},
                    })
                    r.raise_for_status()

                r = client.post(f"/api/v1/pairs/{pair_id}/release", headers=headers)
                r.raise_for_status()
                with lock:
                    report["completed"] += 1
                    report["latencies_ms"].append(latency * 1000.0)
            except httpx.HTTPError as exc:
                with lock:
                    report["failures"] += 1
                log.warning("bench client %s: %s", user, exc)
                time.sleep(poll_s)
            time.sleep(rng.uniform(args.interarrival_lo_ms, args.interarrival_hi_ms) / 1000.0)


def cmd_bench(args) -> int:
    import numpy as np

    lo, hi = (float(x) for x in args.interarrival_ms.split(","))
    args.interarrival_lo_ms, args.interarrival_hi_ms = lo, hi
    root = np.random.SeedSequence(args.seed)
    report = {"submitted": 0, "completed": 0, "failures": 0, "abandoned": 0, "latencies_ms": []}
    lock = threading.Lock()
    stop_at = time.monotonic() + args.duration
    threads = []
    for k, child in enumerate(root.spawn(args.users)):
        rng = np.random.default_rng(child)
        user = f"{args.user_prefix}{k:03d}"
        t = threading.Thread(
            target=_bench_client,
            args=(args.url, user, args.secret, stop_at, rng, args, report, lock),
            daemon=True,
        )
        threads.append(t)
        t.start()
    for t in threads:
        t.join(timeout=args.duration + args.drain_s + 30)

    lat = sorted(report.pop("latencies_ms"))

    def pct(p):
        return lat[min(len(lat) - 1, int(p / 100 * len(lat)))] if lat else None

    report["latency_ms"] = {"p50": pct(50), "p90": pct(90), "p99": pct(99),
                            "max": lat[-1] if lat else None}
    report["users"] = args.users
    report["duration_s"] = args.duration
    sys.stdout.write(json.dumps(report, indent=2) + "\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vqn", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--config", required=True, help="service config JSON")
    p.add_argument("--host", default=None)
    p.add_argument("--port", type=int, default=None)
    p.add_argument("--static", default=None, help="directory with the browser console build")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("simulate", help="run queueing simulations")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--preset", choices=["fig5", "fig6", "fig7"])
    group.add_argument("--config", help="SimConfig JSON")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--policy", choices=["hungarian", "fcfs"], default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("generate", help="emit synthetic tag streams to files")
    group = p.add_mutually_exclusive_group()
    group.add_argument("--preset", choices=["testbed"], default="testbed")
    group.add_argument("--config", help="SourceConfig JSON")
    p.add_argument("--duration", type=float, default=None, help="seconds of acquisition")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("analyze", help="coincidence analysis of two tag files")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--window-ps", type=int, default=500)
    p.add_argument("--bg-offset-ps", type=int, default=1000)
    p.add_argument("--bg-width-ps", type=int, default=500)
    p.add_argument("--histogram", default=None, metavar="BINW,NBINS")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("bench", help="concurrent lifecycle load generator")
    p.add_argument("--url", required=True)
    p.add_argument("--users", type=int, default=20)
    p.add_argument("--interarrival-ms", default="10,50")
    p.add_argument("--duration", type=float, default=10.0)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--secret", default="bench")
    p.add_argument("--user-prefix", default="bench-")
    p.add_argument("--poll-ms", type=float, default=25.0)
    p.add_argument("--drain-s", type=float, default=15.0, help="grace period to finish in-flight lifecycles")
    p.add_argument("--measure", action="store_true", help="run a short count-rate measurement per lifecycle")
    p.add_argument("--measure-s", type=float, default=0.2)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SystemExit:
        raise
    except KeyboardInterrupt:
        return 1
    except Exception as exc:
        log.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
