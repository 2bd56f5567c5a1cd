"""``ipu-ground``: mission planning reports and an operator console for payload nodes.

Exit codes::

    0 ok            2 bad input        3 partial (some rows/items failed)
    4 link timeout  5 storage error    6 parameter error
    7 transfer      8 inference test   9 workload or slot error
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import threading
from pathlib import Path

import numpy as np

from .. import planner
from ..backend import GoldenTable, MlpBackend, MlpWeights
from ..csp.params import ParamError
from ..services.ftp import CHUNK_SIZE_MAX, CHUNK_SIZE_UHF, MIN_CHUNK_SIZE, SessionStore
from ..tiling import TILE, run_inference, sidecar_path, write_frame
from .client import GroundClient, LinkTimeout, RemoteError, TransferAborted
from .topology import TopologyError, connect, load_topology

log = logging.getLogger("ipu-ground")

EXIT_OK, EXIT_INPUT, EXIT_PARTIAL, EXIT_TIMEOUT = 0, 2, 3, 4
EXIT_STORAGE, EXIT_PARAM, EXIT_TRANSFER, EXIT_INFER, EXIT_WORKLOAD = 5, 6, 7, 8, 9

_REMOTE_EXIT = {
    "NotFound": EXIT_STORAGE, "OutsideRoot": EXIT_STORAGE, "Exists": EXIT_STORAGE, "StorageError": EXIT_STORAGE,
    "UnknownParameter": EXIT_PARAM, "NotWritable": EXIT_PARAM, "TypeMismatch": EXIT_PARAM, "ParamError": EXIT_PARAM,
    "ChunkCrcMismatch": EXIT_TRANSFER, "FileCrcMismatch": EXIT_TRANSFER, "MissingChunk": EXIT_TRANSFER,
    "UnknownSession": EXIT_TRANSFER, "TransferError": EXIT_TRANSFER,
    "UnknownWorkload": EXIT_WORKLOAD, "SlotError": EXIT_WORKLOAD,
    "BadRequest": EXIT_INPUT,
}


class CliError(Exception):
    def __init__(self, code: int, message: str, body: dict | None = None):
        super().__init__(message)
        self.code = code
        self.body = body or {}


def _emit(args, summary: str, body) -> None:
    if args.json:
        print(json.dumps(body, indent=2, sort_keys=True, default=str))
    else:
        print(summary)


def _read_json(path: str, what: str):
    try:
        return json.loads(Path(path).read_text())
    except (OSError, ValueError) as exc:
        raise CliError(EXIT_INPUT, f"cannot read {what} {path}: {exc}") from exc


# -- planning --

def _scenarios(name: str) -> list[planner.Scenario]:
    return list(planner.Scenario) if name == "all" else [planner.Scenario(name)]


def _load_mission(args):
    camera = planner.camera_from_json(_read_json(args.camera, "camera"))
    orbit = planner.orbit_from_json(_read_json(args.orbit, "orbit"))
    params = planner.scenario_params_from_json(_read_json(args.params, "scenario params")) if args.params \
        else planner.ScenarioParams()
    return camera, orbit, params


def _budgets(args):
    camera, orbit, params = _load_mission(args)
    return camera, orbit, params, [planner.scenario_budget(s, camera, orbit, params, args.strict_margin)
                                   for s in _scenarios(args.scenario)]


def cmd_plan(args) -> int:
    camera, orbit, params, budgets = _budgets(args)
    quotient = planner.images_per_pass_quotient(params.greenland_extent_m, camera)
    rows = [b.to_json() for b in budgets]
    lines = [f"{'scenario':<10} {'latency_s':>10} {'images':>7} {'storage_MB':>11} {'P_nom_mW':>9} {'P_peak_mW':>9}"]
    for b in rows:
        lines.append(f"{b['scenario_id']:<10} {b['per_image_latency_s']:>10.2f} {b['buffered_images']:>7d} "
                     f"{b['storage_required_mb']:>11,.0f} {b['nominal_power_limit_mw']:>9.0f} "
                     f"{b['peak_power_limit_mw']:>9.0f}")
    lines.append(f"inter-image period {planner.inter_image_period(camera, orbit):.4f} s; "
                 f"images per Greenland pass {quotient:.2f} -> {planner.images_per_pass(params.greenland_extent_m, camera)}")
    body = {"budgets": rows, "inter_image_period_s": planner.inter_image_period(camera, orbit),
            "images_per_pass_quotient": quotient,
            "images_per_pass": planner.images_per_pass(params.greenland_extent_m, camera)}
    if args.json:
        _emit(args, "", body)
    else:
        print("\n".join(lines))
        print(json.dumps(body, sort_keys=True))
    return EXIT_OK


def cmd_evaluate(args) -> int:
    try:
        text = Path(args.devices).read_text()
    except OSError as exc:
        raise CliError(EXIT_INPUT, f"cannot read devices {args.devices}: {exc}") from exc
    devices, errors = planner.read_devices_csv(text)
    camera, orbit, params, budgets = _budgets(args)
    verdicts = [planner.evaluate_device(d, b) for b in budgets for d in devices]
    for line, msg in errors:
        print(f"{args.devices}:{line}: {msg}", file=sys.stderr)
    if args.csv_out:
        Path(args.csv_out).write_text(planner.verdicts_to_csv(verdicts))
    if args.json_out:
        Path(args.json_out).write_text(planner.verdicts_to_json(verdicts))
    body = {"verdicts": [planner.verdict_row(v) for v in verdicts],
            "errors": [{"line": line, "message": msg} for line, msg in errors]}
    if args.json:
        _emit(args, "", body)
    else:
        print(planner.verdicts_to_csv(verdicts), end="")
    return EXIT_PARTIAL if errors else EXIT_OK


# -- golden test data --

def cmd_golden(args) -> int:
    """Write a test frame, a small model and its reference logits."""
    if args.size < TILE:
        raise CliError(EXIT_INPUT, f"--size must be at least {TILE}")
    rng = np.random.default_rng(args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    frame = rng.integers(0, 256, (args.size, args.size, 3), dtype=np.uint8)
    weights = MlpWeights.random(rng)
    report = run_inference(frame, MlpBackend(weights))
    table = GoldenTable(dict(zip(report.grid.indices(), report.per_patch_logits)), dataset_id=f"seed-{args.seed}")
    write_frame(out / "frame.rgb", frame)
    (out / "table.json").write_text(table.to_json())
    body = {"frame": str(out / "frame.rgb"), "table": str(out / "table.json"), "patches": report.grid.n_patches}
    _emit(args, f"wrote {body['frame']} and {body['table']} ({body['patches']} patches)", body)
    return EXIT_OK


# -- satellite operations --

def _progress(args, label):
    if args.json or args.quiet:
        return None
    last = [-1]

    def show(done, total):
        pct = 100 if total == 0 else 100 * done // total
        if pct != last[0]:
            last[0] = pct
            print(f"\r{label}: {done}/{total} chunks ({pct}%)", end="", file=sys.stderr, flush=True)
            if done == total:
                print(file=sys.stderr)
    return show


def _parse_value(text: str):
    """Parameter values on the command line are JSON; bare words are strings."""
    try:
        return json.loads(text)
    except ValueError:
        return text


def _session(args):
    return int(args.session, 0) if args.session is not None else None


def sat_ping(c: GroundClient, args) -> tuple[str, dict]:
    rtts = [c.ping() for _ in range(args.count)]
    body = {"rtt_s": rtts, "min_s": min(rtts), "max_s": max(rtts), "mean_s": sum(rtts) / len(rtts)}
    lines = [f"reply from {args.addr}: rtt={r * 1000:.1f} ms" for r in rtts]
    return "\n".join(lines), body


def sat_get(c, args):
    if not args.param:
        ids = c.param_list()
        return "\n".join(ids), {"ids": ids}
    entry = c.param_get(args.param)
    return f"{args.param} = {json.dumps(entry['value'])}", entry


def sat_set(c, args):
    entry = c.param_set(args.param, _parse_value(args.value))
    return f"{args.param} = {json.dumps(entry['value'])}", entry


def sat_upload(c, args):
    try:
        data = Path(args.local).read_bytes()
    except OSError as exc:
        raise CliError(EXIT_INPUT, f"cannot read {args.local}: {exc}") from exc
    out = c.upload(data, args.remote, _session(args), args.chunk_size, overwrite=not args.no_overwrite,
                   progress=_progress(args, "upload"))
    body = out.to_json()
    return (f"uploaded {len(data)} bytes to {args.remote} in {out.rounds} round(s), "
            f"{out.chunks_sent} chunk sends, session {out.session_id}"), body


def _ground_store(ctx) -> SessionStore:
    return SessionStore(ctx.topology.ground.root / "sessions")


def sat_download(c, args, ctx=None):
    out = c.download(args.remote, _session(args), args.chunk_size, store=_ground_store(ctx),
                     progress=_progress(args, "download"))
    local = Path(args.local)
    local.parent.mkdir(parents=True, exist_ok=True)
    local.write_bytes(out.data)
    body = out.to_json()
    body["local"] = str(local)
    return (f"downloaded {len(out.data)} bytes to {local} in {out.rounds} round(s), "
            f"{out.chunks_sent} chunks received, session {out.session_id}"), body


def sat_ls(c, args):
    entries = c.fs("list", path=args.path)["entries"]
    lines = [f"{'d' if e['is_dir'] else '-'} {e['size']:>10d}  {e['name']}" for e in entries]
    return "\n".join(lines) or "(empty)", {"entries": entries}


def sat_mv(c, args):
    c.fs("move", src=args.src, dst=args.dst, overwrite=args.overwrite)
    return f"moved {args.src} -> {args.dst}", {"src": args.src, "dst": args.dst}


def sat_cp(c, args):
    c.fs("copy", src=args.src, dst=args.dst, overwrite=args.overwrite)
    return f"copied {args.src} -> {args.dst}", {"src": args.src, "dst": args.dst}


def sat_rm(c, args):
    c.fs("remove", path=args.path)
    return f"removed {args.path}", {"path": args.path}


def sat_infer_test(c, args):
    rec = c.infer_test(golden=args.golden, frame=args.frame, inject_fault=args.inject_fault)
    verdict = "PASS" if rec["passed"] else "FAIL"
    summary = (f"{verdict} digest={rec['digest']:#010x} latency={rec['total_latency_ms']:.1f} ms"
               + (f" ({rec['detail']})" if rec["detail"] else ""))
    if not rec["passed"]:
        raise CliError(EXIT_INFER, summary, rec)
    return summary, rec


def sat_ray_scan(c, args, ctx=None):
    resp = c.ray_scan(args.image, args.threshold)
    fetched = []
    if args.out:
        out = Path(args.out)
        for rel in resp["crops"]:
            for remote in (rel, str(sidecar_path(rel))):
                got = c.download(remote, chunk_size=args.chunk_size, store=_ground_store(ctx))
                target = out / Path(remote).name
                target.parent.mkdir(parents=True, exist_ok=True)
                target.write_bytes(got.data)
            fetched.append(str(out / Path(rel).name))
    resp = {k: v for k, v in resp.items() if k != "ok"}
    resp["downloaded"] = fetched
    lines = [f"threshold {resp['threshold']}{' (degenerate)' if resp['degenerate'] else ''}, "
             f"{resp['total']} cluster(s)"]
    for cl in resp["clusters"]:
        lines.append(f"  bbox={tuple(cl['bbox'])} pixels={cl['pixel_count']} peak={cl['peak_intensity']}")
    lines += [f"  crop -> {p}" for p in fetched]
    return "\n".join(lines), resp


def sat_slots(c, args):
    if args.op == "show":
        resp = c.slots("show")
    elif args.op == "stage":
        if args.slot is None or not args.bundle:
            raise CliError(EXIT_INPUT, "slots stage needs --slot and --bundle")
        resp = c.slots("stage", slot=args.slot, bundle_id=args.bundle, path=args.path)
    elif args.op == "confirm":
        resp = c.slots("confirm")
    else:
        resp = c.slots("boot", watchdog=args.watchdog)
    resp.pop("ok", None)
    table = resp.get("table") or c.slots("show")["table"]
    lines = [f"slot {i}: {s['status']:<9} {s['bundle_id'] or '-'}{'  <- boot' if i == table['boot_pointer'] else ''}"
             for i, s in enumerate(table["slots"])]
    if "slot" in resp:
        lines.insert(0, "booted SAFE MODE" if resp["safe_mode"] else f"booted slot {resp['slot']}")
    return "\n".join(lines), resp


def sat_run(c, args):
    wl_args = _parse_value(args.args) if args.args else {}
    res = c.run(args.entry, wl_args, args.time_limit)
    summary = f"{args.entry}: {res['exit_status']} in {res['runtime_s']:.3f} s; outputs {res['outputs']}"
    if res["exit_status"] != "ok":
        raise CliError(EXIT_WORKLOAD, summary, res)
    return summary, res


def sat_reboot(c, args):
    resp = c.reboot(args.watchdog)
    return ("booted SAFE MODE" if resp["safe_mode"] else f"booted slot {resp['slot']}"), resp


SAT_COMMANDS = {
    "ping": sat_ping, "get": sat_get, "set": sat_set, "upload": sat_upload, "download": sat_download,
    "ls": sat_ls, "mv": sat_mv, "cp": sat_cp, "rm": sat_rm, "infer-test": sat_infer_test,
    "ray-scan": sat_ray_scan, "slots": sat_slots, "run": sat_run, "reboot": sat_reboot,
}
_NEEDS_CTX = {"download", "ray-scan"}


def cmd_sat(args) -> int:
    if not MIN_CHUNK_SIZE <= args.chunk_size <= CHUNK_SIZE_MAX:
        raise CliError(EXIT_INPUT, f"--chunk-size must be in [{MIN_CHUNK_SIZE}, {CHUNK_SIZE_MAX}]")
    topo = load_topology(args.net, args.seed)
    spec = topo.satellite(args.addr)
    args.addr = spec.address
    ctx = connect(topo)
    client = GroundClient(ctx.channel, spec.address, topo.request_timeout(), topo.retries)
    fn = SAT_COMMANDS[args.sat_cmd]
    try:
        return _run_sat(fn, client, args, ctx)
    finally:
        for sat in ctx.satellites.values():
            sat.close()


def _run_sat(fn, client, args, ctx) -> int:
    try:
        summary, body = fn(client, args, ctx) if args.sat_cmd in _NEEDS_CTX else fn(client, args)
    except TransferAborted as exc:
        raise CliError(EXIT_TRANSFER, f"transfer aborted: {exc}", exc.outcome.to_json()) from exc
    except LinkTimeout as exc:
        raise CliError(EXIT_TIMEOUT, f"link: {exc}", {"virtual_time_s": ctx.channel.now()}) from exc
    except RemoteError as exc:
        raise CliError(_REMOTE_EXIT.get(exc.code, EXIT_PARTIAL), f"remote error {exc}",
                       {"error": exc.code, "detail": exc.detail}) from exc
    except ParamError as exc:
        raise CliError(EXIT_PARAM, f"parameter error {exc.code}: {exc}", {"error": exc.code}) from exc
    _emit(args, summary, body)
    return EXIT_OK


def cmd_bridge(args) -> int:
    """Serve the first satellite of the topology over KISS/TCP until interrupted."""
    topo = load_topology(args.net, args.seed)
    spec = topo.satellite(args.addr)
    from ..satellite import Satellite
    from .channel import serve_tcp

    sat = Satellite(spec.address, spec.root, topo.hmac_key, seed=topo.link.seed)
    stop = threading.Event()

    def ready(port):
        print(json.dumps({"listening": f"tcp://{args.host}:{port}", "address": spec.address}), flush=True)
    try:
        serve_tcp(sat.node, args.host, args.port, ready, stop)
    except KeyboardInterrupt:
        stop.set()
    return EXIT_OK


# -- argument parsing --

GLOBAL_DEFAULTS = {"json": False, "net": None, "seed": None, "session": None, "chunk_size": CHUNK_SIZE_UHF,
                   "quiet": False, "verbose": False}


def build_parser() -> argparse.ArgumentParser:
    # global flags are accepted at every level; SUPPRESS keeps a subcommand from
    # resetting a flag given earlier on the line
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--json", action="store_true", help="machine-readable JSON on stdout")
    common.add_argument("--net", help="topology JSON (default: in-process simulation under ./ipu-sim)")
    common.add_argument("--seed", type=int, help="override the link RNG seed")
    common.add_argument("--session", help="transfer session id, for resuming (default derived from the path)")
    common.add_argument("--chunk-size", type=int, help=f"transfer chunk size in bytes (default {CHUNK_SIZE_UHF})")
    common.add_argument("-q", "--quiet", action="store_true", help="no progress output")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="ipu-ground", description=__doc__.splitlines()[0], parents=[common],
                                formatter_class=argparse.RawDescriptionHelpFormatter,
                                epilog="\n".join(__doc__.splitlines()[2:]))
    sub = p.add_subparsers(dest="cmd", required=True)

    def mission(sp):
        sp.add_argument("--scenario", default="all", choices=["all"] + [s.value for s in planner.Scenario])
        sp.add_argument("--params", help="scenario constants JSON")
        sp.add_argument("--strict-margin", action="store_true", help="apply the 5%% design margin")

    sp = sub.add_parser("plan", parents=[common], help="scenario budgets from camera and orbit files")
    sp.add_argument("camera")
    sp.add_argument("orbit")
    mission(sp)
    sp.set_defaults(fn=cmd_plan)

    sp = sub.add_parser("evaluate", parents=[common], help="device verdicts against scenario budgets")
    sp.add_argument("devices")
    sp.add_argument("--camera", required=True)
    sp.add_argument("--orbit", required=True)
    sp.add_argument("--csv-out")
    sp.add_argument("--json-out")
    mission(sp)
    sp.set_defaults(fn=cmd_evaluate)

    sp = sub.add_parser("golden", parents=[common], help="generate an inference-test frame and golden table")
    sp.add_argument("--out", default="golden")
    sp.add_argument("--size", type=int, default=TILE)
    sp.set_defaults(fn=cmd_golden)

    sp = sub.add_parser("bridge", parents=[common], help="serve a satellite node over KISS/TCP")
    sp.add_argument("--addr", type=int)
    sp.add_argument("--host", default="127.0.0.1")
    sp.add_argument("--port", type=int, default=5252)
    sp.set_defaults(fn=cmd_bridge)

    sat = sub.add_parser("sat", parents=[common], help="operate a satellite node")
    sat.add_argument("--addr", type=int, help="satellite address (default: first in topology)")
    sat.set_defaults(fn=cmd_sat)
    ss = sat.add_subparsers(dest="sat_cmd", required=True)

    s = ss.add_parser("ping", parents=[common])
    s.add_argument("count", type=int, nargs="?", default=1)
    s = ss.add_parser("get", parents=[common], help="read a parameter (no id: list ids)")
    s.add_argument("param", nargs="?")
    s = ss.add_parser("set", parents=[common], help="write a parameter; VALUE is parsed as JSON")
    s.add_argument("param")
    s.add_argument("value")
    s = ss.add_parser("upload", parents=[common])
    s.add_argument("local")
    s.add_argument("remote")
    s.add_argument("--no-overwrite", action="store_true")
    s = ss.add_parser("download", parents=[common])
    s.add_argument("remote")
    s.add_argument("local")
    s = ss.add_parser("ls", parents=[common])
    s.add_argument("path", nargs="?", default=".")
    for name in ("mv", "cp"):
        s = ss.add_parser(name, parents=[common])
        s.add_argument("src")
        s.add_argument("dst")
        s.add_argument("--overwrite", action="store_true")
    s = ss.add_parser("rm", parents=[common])
    s.add_argument("path")
    s = ss.add_parser("infer-test", parents=[common])
    s.add_argument("--golden", default="golden/table.json")
    s.add_argument("--frame", default="golden/frame.rgb")
    s.add_argument("--inject-fault", action="store_true", help="corrupt one logit to exercise the failure path")
    s = ss.add_parser("ray-scan", parents=[common])
    s.add_argument("image")
    s.add_argument("--threshold", type=int)
    s.add_argument("--out", help="download crops into this directory")
    s = ss.add_parser("slots", parents=[common])
    s.add_argument("op", nargs="?", default="show", choices=["show", "stage", "confirm", "boot"])
    s.add_argument("--slot", type=int)
    s.add_argument("--bundle")
    s.add_argument("--path", help="uploaded bundle file to check before staging")
    s.add_argument("--watchdog", action="store_true")
    s = ss.add_parser("run", parents=[common])
    s.add_argument("entry")
    s.add_argument("--args", help="JSON object passed to the workload")
    s.add_argument("--time-limit", type=float, default=60.0)
    s = ss.add_parser("reboot", parents=[common])
    s.add_argument("--watchdog", action="store_true")
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    for k, v in GLOBAL_DEFAULTS.items():
        if not hasattr(args, k):
            setattr(args, k, v)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        if args.json:
            print(json.dumps({"error": str(exc), "exit_code": exc.code, **exc.body}, sort_keys=True, default=str))
        return exc.code
    except (planner.SchemaError, TopologyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        if args.json:
            print(json.dumps({"error": str(exc), "exit_code": EXIT_INPUT}))
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
