#!/usr/bin/env python3
"""Validates live server traffic against docs/wire-schema.

Starts `infdbg serve` on a free port, replays a JSONL batch log into it over
HTTP and checks every request and response body against its schema.

usage: check_wire_schema.py INFDBG_BINARY SCHEMA_DIR BATCH_LOG
"""

import json
import pathlib
import re
import subprocess
import sys
import urllib.error
import urllib.request

import jsonschema
from referencing import Registry, Resource

BASE = "https://infdbg.invalid/wire-schema/"


class Checker:
    def __init__(self, schema_dir):
        resources = []
        for path in sorted(pathlib.Path(schema_dir).glob("*.json")):
            doc = json.loads(path.read_text())
            resources.append((doc["$id"], Resource.from_contents(doc)))
        self.registry = Registry().with_resources(resources)
        self.checked = 0

    def validate(self, instance, schema, what):
        validator = jsonschema.Draft202012Validator({"$ref": BASE + schema}, registry=self.registry)
        errors = sorted(validator.iter_errors(instance), key=lambda e: list(e.path))
        if errors:
            e = errors[0]
            path = "/".join(str(p) for p in e.absolute_path)
            raise SystemExit(f"FAIL {what}: {schema} at /{path}: {e.message}")
        self.checked += 1


def call(port, method, path, body=None):
    data = None if body is None else json.dumps(body).encode()
    req = urllib.request.Request(f"http://127.0.0.1:{port}{path}", data=data, method=method,
                                 headers={"Content-Type": "application/json"})
    try:
        with urllib.request.urlopen(req, timeout=30) as res:
            return res.status, res.read().decode(), res.headers
    except urllib.error.HTTPError as e:
        return e.code, e.read().decode(), e.headers


def main(binary, schema_dir, log_path):
    c = Checker(schema_dir)
    records = [json.loads(line) for line in open(log_path, encoding="utf-8") if line.strip()]
    for i, r in enumerate(records, 1):
        c.validate(r, "batch-log.json", f"log line {i}")

    server = subprocess.Popen([binary, "serve", "--port", "0", "--set", "max_interval_ms=50"],
                              stdout=subprocess.PIPE, text=True)
    try:
        m = re.search(r":(\d+)\s*$", server.stdout.readline())
        if not m:
            raise SystemExit("FAIL: server did not report its port")
        port = int(m.group(1))

        def expect(method, path, status, schema, body=None, request_schema=None):
            if request_schema:
                c.validate(body, request_schema, f"{method} {path} request")
            got, text, headers = call(port, method, path, body)
            if got != status:
                raise SystemExit(f"FAIL {method} {path}: status {got}, want {status}: {text}")
            if method == "GET":
                want = "no-store" if path.split("?")[0].endswith("/events") else "max-age="
                if not headers.get("Cache-Control", "").startswith(want):
                    raise SystemExit(f"FAIL {method} {path}: Cache-Control {headers.get('Cache-Control')!r}")
            doc = json.loads(text)
            c.validate(doc, schema, f"{method} {path} response")
            return doc

        env = lambda payload: {"protocol_version": 1, "payload": payload}
        run = records[0]
        create = env({"descriptor": run["descriptor"], "metadata": run["metadata"]})
        run_id = expect("POST", "/api/v1/runs", 201, "run-create.json#/$defs/response", create,
                        "run-create.json#/$defs/request")["run_id"]
        base = f"/api/v1/runs/{run_id}"

        first_batch = None
        for r in records[1:]:
            if r["record"] != "batch":
                continue
            payload = {k: v for k, v in r.items() if k not in ("record", "run_id")}
            first_batch = first_batch or payload
            expect("POST", base + "/batches", 200, "batch.json#/$defs/response", env(payload),
                   "batch.json#/$defs/request")

        expect("GET", "/api/v1/runs", 200, "runs.json#/$defs/list")
        expect("GET", base, 200, "runs.json#/$defs/run")
        expect("GET", base + "/model", 200, "model.json")
        expect("GET", base + "/stats", 200, "stats.json")
        expect("GET", base + "/stats?variable=z%5B1%5D&chain=ALL", 200, "stats.json")
        expect("GET", base + "/stats?variable=mu&chain=2&phase=all", 200, "stats.json")
        expect("GET", base + "/plots/trace?variable=mu&max_points=100", 200, "plots.json#/$defs/trace")
        expect("GET", base + "/plots/histogram?variable=sigma&bins=20", 200, "plots.json#/$defs/histogram")
        expect("GET", base + "/plots/rank?variable=mu", 200, "plots.json#/$defs/rank")
        expect("GET", base + "/plots/pair?x=sigma&y=z%5B0%5D&chain=1", 200, "plots.json#/$defs/pair")
        expect("GET", base + "/events?since=0&timeout_ms=0", 200, "events.json")
        expect("GET", base + "/control", 200, "control.json#/$defs/response")
        expect("POST", base + "/control", 200, "control.json#/$defs/response", env({"stop": True}),
               "control.json#/$defs/request")
        expect("POST", base + "/finish", 200, "finish.json#/$defs/response", env({"outcome": "finished"}),
               "finish.json#/$defs/request")
        expect("GET", base + "/warnings", 200, "warnings.json")
        expect("GET", base + "/report?format=json", 200, "report.json")

        expect("GET", "/api/v1/runs/nope/report", 404, "error.json")
        expect("POST", "/api/v1/runs", 422, "error.json", {"protocol_version": 2, "payload": {}})
        expect("POST", base + "/control", 422, "error.json", env({"stop": False}))
        expect("POST", base + "/batches", 409, "error.json", env(first_batch))
    finally:
        server.terminate()
        server.wait(timeout=10)
    print(f"PASS wire schema: {c.checked} documents valid")


if __name__ == "__main__":
    if len(sys.argv) != 4:
        sys.exit(__doc__)
    main(*sys.argv[1:])
