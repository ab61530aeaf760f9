"""Batch experiment runner: a thin client over the lab service.

Every subcommand reads a flat ``key = value`` config file, lets flags
override file values, sends the work to the service (in-process by default,
remote with --url), and persists the responses plus a manifest that pins the
exact configuration and master seed for re-runs.

Exit codes: 0 success, 2 configuration error (the offending key is named),
3 resource guard tripped.
"""

from __future__ import annotations

import argparse
import asyncio
import datetime
import json
import math
import os
import sys
from pathlib import Path
from typing import Any

import httpx

from . import __version__

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RESOURCE = 3

WORKERS_ENV = "VACANTLAB_WORKERS"


class CliError(Exception):
    def __init__(self, message: str, exit_code: int = EXIT_CONFIG):
        super().__init__(message)
        self.exit_code = exit_code


# ---------------------------------------------------------------------------
# Config handling
# ---------------------------------------------------------------------------

def _to_bool(raw: str) -> bool:
    v = raw.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _to_site(raw: str):
    return None if raw.strip().lower() == "uniform" else int(raw)


def _to_ints(raw: str) -> list[int]:
    return [int(x) for x in raw.split(",") if x.strip() != ""]


def _to_floats(raw: str) -> list[float]:
    return [float(x) for x in raw.split(",") if x.strip() != ""]


_CASTS = {
    "int": int,
    "float": float,
    "str": str,
    "bool": _to_bool,
    "site": _to_site,
    "ints": _to_ints,
    "floats": _to_floats,
}


def parse_config_file(path: str) -> dict[str, str]:
    """Flat ``key = value`` lines; blank lines and # comments are skipped."""
    values: dict[str, str] = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise CliError(f"cannot read config file {path}: {exc}")
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise CliError(f"{path}:{lineno}: expected 'key = value', got {stripped!r}")
        key, _, raw = stripped.partition("=")
        values[key.strip()] = raw.strip()
    return values


def resolve_options(schema: dict[str, tuple[str, Any]], file_values: dict[str, str],
                    flag_values: dict[str, str | None]) -> dict[str, Any]:
    """Merge config-file values and flag overrides against a typed schema."""
    for key in file_values:
        if key not in schema:
            raise CliError(f"unknown config key: {key}")
    merged: dict[str, Any] = {}
    for key, (kind, default) in schema.items():
        raw = flag_values.get(key)
        if raw is None:
            raw = file_values.get(key)
        if raw is None:
            if default is _REQUIRED:
                raise CliError(f"missing required config key: {key}")
            merged[key] = default
            continue
        try:
            merged[key] = _CASTS[kind](raw)
        except (ValueError, TypeError) as exc:
            raise CliError(f"invalid value for config key {key}: {exc}")
    return merged


_REQUIRED = object()


# ---------------------------------------------------------------------------
# Service client
# ---------------------------------------------------------------------------

class ServiceClient:
    """HTTP access to the lab service: remote with a URL, in-process otherwise."""

    def __init__(self, url: str | None):
        self.url = url

    def _raise_for(self, status: int, body: bytes) -> None:
        try:
            detail = json.loads(body).get("detail", body.decode())
        except Exception:
            detail = body.decode(errors="replace")
        if status == 422:
            raise CliError(f"rejected by the service: {detail}", EXIT_CONFIG)
        if status == 413:
            raise CliError(f"resource guard: {detail}", EXIT_RESOURCE)
        raise CliError(f"service error {status}: {detail}", 1)

    def request(self, method: str, path: str, payload: dict | None = None,
                params: dict | None = None) -> bytes:
        if self.url is not None:
            with httpx.Client(base_url=self.url, timeout=None) as client:
                r = client.request(method, path, json=payload, params=params)
                if r.status_code >= 400:
                    self._raise_for(r.status_code, r.content)
                return r.content

        async def _call() -> tuple[int, bytes]:
            from .service.app import app
            transport = httpx.ASGITransport(app=app)
            async with httpx.AsyncClient(transport=transport,
                                         base_url="http://vacantlab.local",
                                         timeout=None) as client:
                r = await client.request(method, path, json=payload, params=params)
                return r.status_code, r.content

        status, content = asyncio.run(_call())
        if status >= 400:
            self._raise_for(status, content)
        return content

    def request_json(self, method: str, path: str, payload: dict | None = None,
                     params: dict | None = None) -> Any:
        return json.loads(self.request(method, path, payload, params))


# ---------------------------------------------------------------------------
# Output helpers
# ---------------------------------------------------------------------------

def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def make_manifest(command: str, config: dict[str, Any]) -> dict[str, Any]:
    cfg = {k: v for k, v in sorted(config.items())}
    return {
        "command": command,
        "package_version": __version__,
        "created_utc": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "config": cfg,
    }


def csv_lines(header: list[str], rows: list[list[Any]]) -> str:
    out = [",".join(header)]
    for row in rows:
        out.append(",".join(str(x) for x in row))
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# Schemas
# ---------------------------------------------------------------------------

_WALK_KEYS: dict[str, tuple[str, Any]] = {
    "dim": ("int", _REQUIRED),
    "side": ("int", _REQUIRED),
    "seed": ("int", 0),
    "horizon": ("int", _REQUIRED),
    "start": ("site", None),
}

SIMULATE_SCHEMA = dict(_WALK_KEYS, out=("str", _REQUIRED), dump=("bool", True))

COMPONENTS_SCHEMA = dict(_WALK_KEYS, out=("str", _REQUIRED), t=("int", None),
                         seg_len=("int", None))

CONSTANTS_SCHEMA: dict[str, tuple[str, Any]] = {
    "dim": ("int", _REQUIRED),
    "side": ("int", None),
    "steps_per_site": ("float", 1.0),
    "count_exp": ("float", 0.5),
    "budget_coeff": ("float", 1.0),
    "out": ("str", None),
}

GREENFN_SCHEMA: dict[str, tuple[str, Any]] = {
    "dim": ("int", _REQUIRED),
    "side": ("int", _REQUIRED),
    "ball_center": ("int", None),
    "ball_radius": ("int", None),
    "domain_sites": ("ints", None),
    "target_sites": ("ints", None),
    "start": ("int", None),
    "tol": ("float", 1e-10),
    "out": ("str", _REQUIRED),
}

ESTIMATE_SCHEMA: dict[str, tuple[str, Any]] = {
    # experiment
    "dim": ("int", _REQUIRED),
    "side": ("int", _REQUIRED),
    "steps_per_site": ("float", None),
    "u_grid": ("floats", None),
    "seg_len": ("int", _REQUIRED),
    "giant_len": ("int", 1),
    "reach_exp": ("float", 0.5),
    "count_exp": ("float", 0.5),
    "budget_coeff": ("float", 1.0),
    "replications": ("int", 100),
    "master_seed": ("int", 0),
    "start": ("site", None),
    # event
    "event": ("str", _REQUIRED),
    "k": ("int", None),
    "t": ("int", None),
    "gap": ("int", None),
    "event_seg_len": ("int", None),
    "event_reach_exp": ("float", None),
    "window_len": ("int", None),
    "horizon": ("int", None),
    "anchors": ("ints", None),
    # survival / second-moment extras
    "anchor": ("int", None),
    "inner_radius": ("int", None),
    "outer_radius": ("int", None),
    "budgets": ("ints", None),
    # run control
    "out": ("str", _REQUIRED),
    "workers": ("int", None),
    "resume": ("bool", False),
    "chunk_size": ("int", None),
}


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_simulate(opts: dict[str, Any], client: ServiceClient) -> int:
    out = Path(opts["out"])
    payload = {k: opts[k] for k in ("dim", "side", "seed", "horizon", "start")}
    summary = client.request_json("POST", "/simulate", payload, params={"summary": True})
    write_text(out / "summary.json", canonical_json(summary))
    if opts["dump"]:
        blob = client.request("POST", "/simulate", payload)
        (out / "record.vrec").write_bytes(blob)
    write_text(out / "manifest.json", canonical_json(make_manifest("simulate", opts)))
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def cmd_components(opts: dict[str, Any], client: ServiceClient) -> int:
    out = Path(opts["out"])
    payload = {k: opts[k] for k in ("dim", "side", "seed", "horizon", "start",
                                    "t", "seg_len")}
    resp = client.request_json("POST", "/components", payload)
    write_text(out / "components.json", canonical_json(resp))
    rows = [[r["anchor_index"], " ".join(str(c) for c in r["anchor_coords"]),
             r["direction"], r["length"]] for r in resp["segment_records"]]
    write_text(out / "segments.csv",
               csv_lines(["anchor_index", "anchor_coords", "direction", "length"], rows))
    hist_rows = [[size, count] for size, count in
                 sorted(((int(s), c) for s, c in resp["histogram"].items()))]
    write_text(out / "histogram.csv", csv_lines(["size", "count"], hist_rows))
    write_text(out / "manifest.json", canonical_json(make_manifest("components", opts)))
    print(f"components: {resp['component_count']} "
          f"(largest {resp['largest']}, vacant {resp['vacant_sites']})")
    return EXIT_OK


def cmd_constants(opts: dict[str, Any], client: ServiceClient) -> int:
    resp = client.request_json("GET", f"/constants/q/{opts['dim']}")
    result = {"d": opts["dim"], "q": resp["q"], "d0_predicate": resp["d0_predicate"]}
    if opts["side"] is not None:
        result["scales"] = client.request_json("POST", "/constants/scales", {
            "side": opts["side"],
            "dim": opts["dim"],
            "steps_per_site": opts["steps_per_site"],
            "count_exp": opts["count_exp"],
            "budget_coeff": opts["budget_coeff"],
        })
    text = canonical_json(result)
    if opts["out"]:
        write_text(Path(opts["out"]), text)
    print(text, end="")
    return EXIT_OK


def cmd_greenfn(opts: dict[str, Any], client: ServiceClient) -> int:
    out = Path(opts["out"])
    payload: dict[str, Any] = {
        "dim": opts["dim"],
        "side": opts["side"],
        "start": opts["start"],
        "tol": opts["tol"],
        "target_sites": opts["target_sites"],
    }
    if opts["ball_center"] is not None or opts["ball_radius"] is not None:
        if opts["ball_center"] is None or opts["ball_radius"] is None:
            raise CliError("ball_center and ball_radius must be given together")
        payload["domain_ball"] = {"center": opts["ball_center"],
                                  "radius": opts["ball_radius"]}
    payload["domain_sites"] = opts["domain_sites"]
    resp = client.request_json("POST", "/greenfn", payload)
    rows = [[e["x_index"], e["y_index"], f"{e['g_value']:.12g}"] for e in resp["entries"]]
    write_text(out / "green.csv", csv_lines(["x_index", "y_index", "g_value"], rows))
    result = {k: resp[k] for k in ("domain_size", "bounds", "expected_exit_time")}
    write_text(out / "bounds.json", canonical_json(result))
    if resp["bounds"]:
        b = resp["bounds"]
        write_text(out / "bounds.csv", csv_lines(
            ["lower", "exact", "upper", "gap"],
            [[f"{b['lower']:.12g}", f"{b['exact']:.12g}",
              f"{b['upper']:.12g}", f"{b['gap']:.12g}"]]))
    write_text(out / "manifest.json", canonical_json(make_manifest("greenfn", opts)))
    print(json.dumps(result, sort_keys=True))
    return EXIT_OK


def _spec_payload(opts: dict[str, Any], steps_per_site: float) -> dict[str, Any]:
    return {
        "dim": opts["dim"],
        "side": opts["side"],
        "steps_per_site": steps_per_site,
        "seg_len": opts["seg_len"],
        "giant_len": opts["giant_len"],
        "reach_exp": opts["reach_exp"],
        "count_exp": opts["count_exp"],
        "budget_coeff": opts["budget_coeff"],
        "replications": opts["replications"],
        "master_seed": opts["master_seed"],
        "start": opts["start"],
    }


def _event_payload(opts: dict[str, Any]) -> dict[str, Any]:
    return {
        "kind": opts["event"],
        "k": opts["k"],
        "t": opts["t"],
        "gap": opts["gap"],
        "seg_len": opts["event_seg_len"],
        "reach_exp": opts["event_reach_exp"],
        "window_len": opts["window_len"],
        "horizon": opts["horizon"],
        "anchors": opts["anchors"],
    }


def _chunk_plan(replications: int, chunk_size: int | None, workers: int) -> list[tuple[int, int]]:
    if chunk_size is None:
        chunk_size = max(1, math.ceil(replications / max(4 * workers, 4)))
    plan = []
    offset = 0
    while offset < replications:
        count = min(chunk_size, replications - offset)
        plan.append((offset, count))
        offset += count
    return plan


def _run_estimate_grid(opts: dict[str, Any], client: ServiceClient,
                       out: Path) -> list[dict]:
    grid = opts["u_grid"] if opts["u_grid"] else [opts["steps_per_site"]]
    if any(u is None for u in grid):
        raise CliError("missing required config key: steps_per_site (or u_grid)")
    workers = opts["workers"]
    results = []
    for gi, u in enumerate(grid):
        spec = _spec_payload(opts, u)
        event = _event_payload(opts)
        chunk_reports: list[dict] = []
        for offset, count in _chunk_plan(opts["replications"], opts["chunk_size"], workers):
            chunk_path = out / "chunks" / f"u{gi}_off{offset:08d}.json"
            report = None
            if opts["resume"] and chunk_path.exists():
                cached = json.loads(chunk_path.read_text())
                if (cached.get("spec") == spec and cached.get("event") == event
                        and cached.get("replica_ranges") == [[offset, count]]):
                    report = cached
            if report is None:
                report = client.request_json("POST", "/estimate", {
                    "spec": spec,
                    "event": event,
                    "workers": workers,
                    "replica_offset": offset,
                    "replica_count": count,
                })
                write_text(chunk_path, canonical_json(report))
            chunk_reports.append(report)
        if len(chunk_reports) == 1:
            merged = chunk_reports[0]
        else:
            merged = client.request_json("POST", "/estimate/merge",
                                         {"reports": chunk_reports})
        results.append(merged)
    return results


def _run_survival(opts: dict[str, Any], client: ServiceClient) -> list[dict]:
    for key in ("anchor", "inner_radius", "outer_radius"):
        if opts[key] is None:
            raise CliError(f"missing required config key: {key}")
    budgets = opts["budgets"]
    if not budgets:
        raise CliError("missing required config key: budgets")
    if opts["steps_per_site"] is None:
        raise CliError("missing required config key: steps_per_site (or u_grid)")
    resp = client.request_json("POST", "/survival", {
        "spec": _spec_payload(opts, opts["steps_per_site"]),
        "anchor": opts["anchor"],
        "seg_len": opts["event_seg_len"] if opts["event_seg_len"] is not None else opts["seg_len"],
        "inner_radius": opts["inner_radius"],
        "outer_radius": opts["outer_radius"],
        "budgets": budgets,
    })
    return [resp[str(b)] for b in sorted(set(budgets))]


def _run_second_moment(opts: dict[str, Any], client: ServiceClient) -> list[dict]:
    for key in ("anchors", "inner_radius", "outer_radius"):
        if opts[key] is None:
            raise CliError(f"missing required config key: {key}")
    if opts["steps_per_site"] is None:
        raise CliError("missing required config key: steps_per_site (or u_grid)")
    resp = client.request_json("POST", "/second_moment", {
        "spec": _spec_payload(opts, opts["steps_per_site"]),
        "anchors": opts["anchors"],
        "seg_len": opts["event_seg_len"] if opts["event_seg_len"] is not None else opts["seg_len"],
        "inner_radius": opts["inner_radius"],
        "outer_radius": opts["outer_radius"],
    })
    return [resp]


def cmd_estimate(opts: dict[str, Any], client: ServiceClient) -> int:
    if opts["workers"] is None:
        opts["workers"] = int(os.environ.get(WORKERS_ENV, "1"))
    out = Path(opts["out"])
    kind = opts["event"]
    if kind == "SURVIVAL":
        results = _run_survival(opts, client)
    elif kind == "SECOND_MOMENT":
        results = _run_second_moment(opts, client)
    else:
        results = _run_estimate_grid(opts, client, out)

    spec_section = {k: opts[k] for k in (
        "dim", "side", "steps_per_site", "u_grid", "seg_len", "giant_len",
        "reach_exp", "count_exp", "budget_coeff", "replications",
        "master_seed", "start", "event", "k", "t", "gap", "event_seg_len",
        "event_reach_exp", "window_len", "horizon", "anchors", "anchor",
        "inner_radius", "outer_radius", "budgets")}
    manifest = make_manifest("estimate", opts)
    # wall clock is run metadata: it lives with the manifest so the canonical
    # spec/results sections are byte-stable across repeated runs
    manifest["wall_seconds_per_result"] = [r.pop("wall_seconds", None) for r in results]
    report = {
        "manifest": manifest,
        "spec": spec_section,
        "results": results,
    }
    write_text(out / "report.json", canonical_json(report))

    if kind not in ("SURVIVAL", "SECOND_MOMENT") and opts["u_grid"] and len(opts["u_grid"]) > 1:
        rows = []
        for u, res in zip(opts["u_grid"], results):
            rows.append([u, kind, res["successes"], res["trials"],
                         f"{res['estimate']:.10g}", f"{res['ci_low']:.10g}",
                         f"{res['ci_high']:.10g}"])
        write_text(out / "sweep.csv", csv_lines(
            ["u", "event", "successes", "trials", "estimate", "ci_low", "ci_high"], rows))
    for res in results:
        if "estimate" in res:
            print(f"{kind}: {res.get('estimate')} "
                  f"[{res.get('ci_low'):.4f}, {res.get('ci_high'):.4f}] "
                  f"({res.get('successes')}/{res.get('trials')})")
        else:
            print(f"{kind}: mean {res.get('mean')}, variance {res.get('variance')}")
    return EXIT_OK


def cmd_merge(paths: list[str], out: str | None, client: ServiceClient) -> int:
    if not paths:
        raise CliError("merge needs at least one report file")
    reports = []
    for p in paths:
        try:
            reports.append(json.loads(Path(p).read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            raise CliError(f"cannot read report {p}: {exc}")
    merged = client.request_json("POST", "/estimate/merge", {"reports": reports})
    text = canonical_json(merged)
    if out:
        write_text(Path(out), text)
    print(text, end="")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

_SUBCOMMANDS = {
    "simulate": (SIMULATE_SCHEMA, cmd_simulate),
    "components": (COMPONENTS_SCHEMA, cmd_components),
    "estimate": (ESTIMATE_SCHEMA, cmd_estimate),
    "constants": (CONSTANTS_SCHEMA, cmd_constants),
    "greenfn": (GREENFN_SCHEMA, cmd_greenfn),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vacantlab",
        description="Vacant-set laboratory for random walk on the discrete torus")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (schema, _) in _SUBCOMMANDS.items():
        p = sub.add_parser(name, help=f"{name} experiment")
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--url", help="service URL (default: in-process)")
        for key in schema:
            p.add_argument(f"--{key}", dest=f"opt_{key}", metavar="VALUE")
    pm = sub.add_parser("merge", help="merge shard reports")
    pm.add_argument("reports", nargs="+", help="report JSON files")
    pm.add_argument("--out", help="write the merged report here")
    pm.add_argument("--url", help="service URL (default: in-process)")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    client = ServiceClient(getattr(args, "url", None))
    try:
        if args.command == "merge":
            return cmd_merge(args.reports, args.out, client)
        schema, runner = _SUBCOMMANDS[args.command]
        file_values = parse_config_file(args.config) if args.config else {}
        flag_values = {key: getattr(args, f"opt_{key}") for key in schema}
        opts = resolve_options(schema, file_values, flag_values)
        return runner(opts, client)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
