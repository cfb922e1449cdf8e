"""Operator entry point: serve, simulate, replay, export, demo.

One binary for the whole stack. Reports go to stdout as JSON so scripts can
parse them; humans read stderr. Exit codes: 0 success, 1 runtime failure,
2 usage error. Every flag can also come from the environment as
TELECG_<FLAG> (flags beat env, env beats defaults).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import random
import string
import sys
import threading
import time
from pathlib import Path

import httpx

from .device import DeviceConfig, DeviceError, ReplaySource, TransportError, run_device
from .signals import AdcConfig, LeadEvent, NoiseConfig, SignalError, SynthParams, default_waves, quantize, read_analog_text
from .store import scan_segment

log = logging.getLogger("telecg.cli")

DEFAULT_LISTEN = "127.0.0.1:8080"
DEFAULT_SERVER = "http://127.0.0.1:8080"
DEFAULT_DATA = "./data"
DEFAULT_GAIN = 200.0  # front-end gain; unity leaves the waveform sub-LSB


def _env(name: str, default):
    return os.environ.get(f"TELECG_{name}", default)


def _env_float(name: str, default: float) -> float:
    raw = _env(name, None)
    return float(raw) if raw is not None else default


def _env_int(name: str, default: int) -> int:
    raw = _env(name, None)
    return int(raw) if raw is not None else default


class CliError(Exception):
    """Runtime failure; message goes to stderr, exit code 1."""


def _parse_lead_off(spec: str) -> LeadEvent:
    parts = spec.split(":")
    if len(parts) != 3:
        raise CliError(f"--lead-off expects start:end:which, got {spec!r}")
    try:
        start, end = float(parts[0]), float(parts[1])
    except ValueError as exc:
        raise CliError(f"--lead-off times must be numbers: {spec!r}") from exc
    which = parts[2].lower()
    if which not in ("plus", "minus", "both"):
        raise CliError(f"--lead-off polarity must be plus, minus, or both: {spec!r}")
    try:
        return LeadEvent(start_s=start, end_s=end, which=which)
    except SignalError as exc:
        raise CliError(str(exc)) from exc


def _parse_listen(listen: str) -> tuple[str, int]:
    host, _, port = listen.rpartition(":")
    if not host or not port.isdigit():
        raise CliError(f"--listen expects host:port, got {listen!r}")
    return host, int(port)


def _print_json(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True))


def _uvicorn_log_config() -> dict:
    # uvicorn's default config sends access logs to stdout, which would
    # corrupt the JSON reports; keep stdout machine-readable
    import copy

    from uvicorn.config import LOGGING_CONFIG

    config = copy.deepcopy(LOGGING_CONFIG)
    config["handlers"]["access"]["stream"] = "ext://sys.stderr"
    return config


def _synth_params(args) -> SynthParams:
    return SynthParams(
        heart_rate_bpm=args.hr,
        waves=default_waves(args.gain),
        noise=NoiseConfig(white_sigma_mv=args.noise_sigma),
        lead_events=tuple(_parse_lead_off(s) for s in args.lead_off or ()),
        seed=args.seed,
    )


def _upsert_patient(server: str, patient_id: str) -> None:
    try:
        resp = httpx.post(f"{server.rstrip('/')}/api/v1/patients",
                          json={"patient_id": patient_id,
                                "display_name": patient_id},
                          timeout=10)
    except httpx.HTTPError as exc:
        raise CliError(f"server unreachable at {server}: {exc}") from exc
    if resp.status_code != 200:
        raise CliError(f"patient upsert failed ({resp.status_code}): {resp.text}")


# -- subcommands -------------------------------------------------------------


def cmd_serve(args) -> int:
    import uvicorn

    from .backend import Backend
    from .server import create_app

    host, port = _parse_listen(args.listen)
    data = Path(args.data)
    try:
        backend = Backend(data, queue_bound=args.queue_bound)
    except OSError as exc:
        raise CliError(f"data dir {data} unusable: {exc}") from exc
    app = create_app(backend, ui_dir=Path(args.ui) if args.ui else None)
    log.info("serving on http://%s:%d (data: %s)", host, port, data)
    try:
        uvicorn.run(app, host=host, port=port,
                    log_level=args.log_level.lower(),
                    log_config=_uvicorn_log_config(),
                    timeout_graceful_shutdown=5)
    except SystemExit as exc:  # uvicorn exits 1 on bind failure
        if exc.code:
            raise CliError(f"server failed to start on {args.listen}") from exc
    return 0


def _run_one_device(args, device_id: str, source, duration_s: float) -> dict:
    cfg = DeviceConfig(
        device_id=device_id,
        server_url=args.server,
        sample_rate_hz=args.rate,
        batch_size=args.batch_size,
        buffer_capacity=args.buffer_samples,
        max_backoff_ms=args.max_backoff_ms,
    )
    report = run_device(cfg, source, duration_s,
                        patient_id=args.patient_id,
                        adc=AdcConfig(),
                        realtime=args.realtime,
                        drain_timeout_s=args.drain_timeout)
    return report.to_dict()


def cmd_simulate(args) -> int:
    params = _synth_params(args)
    _upsert_patient(args.server, args.patient_id)

    if args.fleet <= 1:
        report = _run_one_device(args, args.device_id, params, args.duration)
        _print_json(report)
        return 0 if report["batches_dropped"] == 0 else 1

    reports: dict[str, dict] = {}
    errors: list[str] = []
    lock = threading.Lock()

    def worker(k: int):
        device_id = f"{args.device_id}-{k}"
        try:
            report = _run_one_device(args, device_id, params, args.duration)
            with lock:
                reports[device_id] = report
        except (DeviceError, TransportError) as exc:
            with lock:
                errors.append(f"{device_id}: {exc}")

    threads = [threading.Thread(target=worker, args=(k,))
               for k in range(args.fleet)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()

    total_dropped = sum(r["batches_dropped"] for r in reports.values())
    _print_json({
        "devices": reports,
        "total": {
            "count": len(reports),
            "batches_sent": sum(r["batches_sent"] for r in reports.values()),
            "batches_dropped": total_dropped,
            "errors": errors,
        },
    })
    return 0 if not errors and total_dropped == 0 and len(reports) == args.fleet else 1


def _read_export_rows(fp) -> tuple[list[int], list[int], list[int]]:
    ts, codes, flags = [], [], []
    for line_no, line in enumerate(fp, start=1):
        parts = line.split()
        if not parts:
            continue
        if len(parts) != 3:
            raise CliError(f"line {line_no}: expected 'ts_us code flags'")
        try:
            ts.append(int(parts[0]))
            codes.append(int(parts[1]))
            flags.append(int(parts[2]))
        except ValueError as exc:
            raise CliError(f"line {line_no}: not integers: {line.strip()!r}") from exc
    return ts, codes, flags


def cmd_replay(args) -> int:
    path = Path(args.file)
    if not path.exists():
        raise CliError(f"no such file: {path}")

    corruption = None
    if path.suffix == ".tecg":
        scan = scan_segment(path)
        corruption = scan.corruption
        codes = [c for r in scan.records for c in r.codes]
        flags = [f for r in scan.records for f in r.flags]
        rate = scan.meta.sample_rate_hz
    else:
        with open(path) as fp:
            first = next((l for l in fp if l.split()), "")
            fp.seek(0)
            if len(first.split()) == 3:
                # exported session: codes/flags verbatim, rate from spacing
                ts, codes, flags = _read_export_rows(fp)
                steps = sorted(b - a for a, b in zip(ts, ts[1:]) if b > a)
                rate = (round(1_000_000 / steps[len(steps) // 2])
                        if steps else args.rate)
            else:
                # analog trace: quantize at the requested rate
                trace = read_analog_text(fp)
                codes = [int(c) for c in quantize(trace.value_mv, AdcConfig())]
                flags = [int(f) for f in trace.lead_state]
                rate = args.rate

    if not codes:
        raise CliError(f"{path}: nothing to replay")
    if corruption:
        log.warning("%s: %s; replaying the valid prefix (%d samples)",
                    path, corruption, len(codes))

    _upsert_patient(args.server, args.patient_id)
    args = argparse.Namespace(**{**vars(args), "rate": rate})
    report = _run_one_device(args, args.device_id,
                             ReplaySource(codes, flags), 0.0)
    _print_json(report)
    if report["batches_dropped"] != 0:
        return 1
    return 1 if corruption else 0


def cmd_export(args) -> int:
    from .store import WaveformStore

    store = WaveformStore(Path(args.data))
    if not store.segment_path(args.session).exists():
        raise CliError(f"no stored session {args.session!r} in {args.data}")
    out = open(args.out, "w") if args.out else sys.stdout
    try:
        result = store.export_text(args.session, out)
    finally:
        if args.out:
            out.close()
    if result.corruption:
        log.warning("session %s: %s; exported the valid prefix",
                    args.session, result.corruption)
        return 1
    return 0


def cmd_demo(args) -> int:
    import uvicorn

    from .backend import Backend
    from .server import create_app

    host, port = _parse_listen(args.listen)
    backend = Backend(Path(args.data))
    app = create_app(backend, ui_dir=Path(args.ui) if args.ui else None)
    config = uvicorn.Config(app, host=host, port=port,
                            log_level=args.log_level.lower(),
                            log_config=_uvicorn_log_config(),
                            timeout_graceful_shutdown=5)
    server = uvicorn.Server(config)
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    deadline = time.monotonic() + 10
    while not server.started:
        if time.monotonic() > deadline or not thread.is_alive():
            raise CliError(f"server failed to start on {args.listen}")
        time.sleep(0.05)

    report = None
    try:
        args.server = f"http://{host}:{port}"
        _print_json({"viewer_url": f"http://{host}:{port}/ui/",
                     "api_url": args.server})
        _upsert_patient(args.server, args.patient_id)
        report = _run_one_device(args, args.device_id,
                                 _synth_params(args), args.duration)
        _print_json(report)
        if not args.once:
            log.info("simulation done; still serving (Ctrl-C to stop)")
            while True:
                time.sleep(3600)
    except KeyboardInterrupt:
        pass
    finally:
        server.should_exit = True
        thread.join(5)
    return 0 if report is not None and report["batches_dropped"] == 0 else 1


# -- argument wiring ---------------------------------------------------------


def _add_device_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--server", default=_env("SERVER", DEFAULT_SERVER))
    p.add_argument("--device-id", default=_env("DEVICE_ID", "sim-0"))
    p.add_argument("--patient-id", default=_env("PATIENT_ID", "demo-patient"))
    p.add_argument("--rate", type=int, default=_env_int("RATE", 250))
    p.add_argument("--batch-size", type=int, default=_env_int("BATCH_SIZE", 50))
    p.add_argument("--buffer-samples", type=int,
                   default=_env_int("BUFFER_SAMPLES", 0),
                   help="ring buffer size in samples (0 = 60 s worth)")
    p.add_argument("--max-backoff-ms", type=int,
                   default=_env_int("MAX_BACKOFF_MS", 30_000))
    p.add_argument("--drain-timeout", type=float,
                   default=_env_float("DRAIN_TIMEOUT", 30.0),
                   help="seconds to keep retrying buffered batches after the run")
    p.add_argument("--realtime", action="store_true",
                   help="pace emission at the sample rate instead of virtual time")


def _add_synth_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--hr", type=float, default=_env_float("HR", 60.0))
    p.add_argument("--gain", type=float, default=_env_float("GAIN", DEFAULT_GAIN))
    p.add_argument("--noise-sigma", type=float,
                   default=_env_float("NOISE_SIGMA", 0.0),
                   help="white noise sigma in mV")
    p.add_argument("--lead-off", action="append", metavar="START:END:WHICH",
                   help="schedule a lead-off interval, e.g. 2:3:plus (repeatable)")
    p.add_argument("--seed", type=int, default=_env_int("SEED", 0))
    p.add_argument("--duration", type=float, default=_env_float("DURATION", 10.0))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="telecg",
        description="Tele-ECG monitoring stack: server, device simulator, tools.")
    parser.add_argument("--log-level", default=_env("LOG_LEVEL", "INFO"))
    sub = parser.add_subparsers(dest="subcommand", required=True)

    serve = sub.add_parser("serve", help="run the ingest server")
    serve.add_argument("--listen", default=_env("LISTEN", DEFAULT_LISTEN))
    serve.add_argument("--data", default=_env("DATA", DEFAULT_DATA))
    serve.add_argument("--queue-bound", type=int,
                       default=_env_int("QUEUE_BOUND", 256))
    serve.add_argument("--ui", default=_env("UI", None),
                       help="directory of built viewer assets to serve at /ui")
    serve.set_defaults(func=cmd_serve)

    simulate = sub.add_parser("simulate", help="run simulated device(s)")
    _add_device_flags(simulate)
    _add_synth_flags(simulate)
    simulate.add_argument("--fleet", type=int, default=_env_int("FLEET", 1),
                          help="number of concurrent simulated devices")
    simulate.set_defaults(func=cmd_simulate)

    replay = sub.add_parser("replay",
                            help="re-ingest a stored segment or analog text file")
    replay.add_argument("--file", required=True)
    _add_device_flags(replay)
    replay.set_defaults(func=cmd_replay)

    export = sub.add_parser("export", help="dump a stored session as text")
    export.add_argument("--data", default=_env("DATA", DEFAULT_DATA))
    export.add_argument("--session", required=True)
    export.add_argument("--out", default=None,
                        help="output file (default: stdout)")
    export.set_defaults(func=cmd_export)

    demo = sub.add_parser("demo", help="serve + one simulated device")
    demo.add_argument("--listen", default=_env("LISTEN", DEFAULT_LISTEN))
    demo.add_argument("--data", default=_env("DATA", DEFAULT_DATA))
    demo.add_argument("--ui", default=_env("UI", None))
    demo.add_argument("--once", action="store_true",
                      help="exit when the simulation completes")
    _add_device_flags(demo)
    _add_synth_flags(demo)
    demo.set_defaults(func=cmd_demo)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, str(args.log_level).upper(), logging.INFO),
        stream=sys.stderr,
        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        return args.func(args)
    except (CliError, DeviceError, SignalError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        return 1


if __name__ == "__main__":
    sys.exit(main())
