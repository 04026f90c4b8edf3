"""The line-protocol serving loop.

Requests arrive as one JSON object per line on stdin ({"id", "text"});
responses leave as one JSON object per line on stdout, in request order,
with spans in code points of the request text. Engine failures produce a
response with empty spans and an "error" field; the loop never dies on a
single note. Logs go to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import threading
import time
from concurrent.futures import ThreadPoolExecutor

from . import __version__
from .config import AdapterConfig
from .engines import EngineReply, build_engine, label_map

log = logging.getLogger("deidadapter")


class RateLimiter:
    """Minimum-interval limiter shared across worker threads."""

    def __init__(self, per_second: float | None):
        self.interval = 1.0 / per_second if per_second else 0.0
        self.lock = threading.Lock()
        self.next_allowed = 0.0

    def wait(self) -> None:
        if not self.interval:
            return
        with self.lock:
            now = time.monotonic()
            wait_for = max(0.0, self.next_allowed - now)
            self.next_allowed = max(now, self.next_allowed) + self.interval
        if wait_for > 0:
            time.sleep(wait_for)


def handle_request(engine, config: AdapterConfig, limiter: RateLimiter, request: dict) -> dict:
    request_id = request["id"]
    text = request["text"]
    try:
        limiter.wait()
        reply: EngineReply = engine(text)
        if reply.output is not None:
            return {"id": request_id, "output": reply.output}
        spans = label_map(reply.entities or [], config.label_filter, text)
        return {
            "id": request_id,
            "spans": [{"start": s, "end": e} for s, e in spans],
        }
    except Exception as exc:
        log.warning("request %s failed: %s", request_id, exc)
        return {"id": request_id, "spans": [], "error": f"{type(exc).__name__}: {exc}"}


def serve(config: AdapterConfig, stdin=None, stdout=None) -> None:
    """Read requests until EOF; write responses in request order."""
    stdin = stdin if stdin is not None else sys.stdin
    stdout = stdout if stdout is not None else sys.stdout
    engine = build_engine(config)
    limiter = RateLimiter(config.rate_limit)
    write_lock = threading.Lock()
    pending = []  # futures in request order

    def flush_ready(block: bool) -> None:
        # responses leave strictly in request order, under the write lock
        while pending and (block or pending[0].done()):
            future = pending.pop(0)
            with write_lock:
                stdout.write(json.dumps(future.result(), ensure_ascii=False) + "\n")
                stdout.flush()

    with ThreadPoolExecutor(max_workers=config.workers) as pool:
        for line in stdin:
            line = line.strip()
            if not line:
                continue
            try:
                request = json.loads(line)
            except json.JSONDecodeError as exc:
                log.warning("skipping unparseable request line: %s", exc)
                continue
            pending.append(
                pool.submit(handle_request, engine, config, limiter, request)
            )
            flush_ready(block=False)
        flush_ready(block=True)


def main(argv=None) -> int:
    logging.basicConfig(
        stream=sys.stderr, level=logging.INFO,
        format="deidadapter %(levelname)s: %(message)s",
    )
    parser = argparse.ArgumentParser(
        prog="deidadapter",
        description="Serve an NER engine over the de-identification line protocol.",
    )
    parser.add_argument("--version", action="version", version=json.dumps(
        {"name": "deidadapter", "version": __version__}
    ))
    parser.add_argument("--config", required=True, help="adapter config JSON")
    args = parser.parse_args(argv)
    config = AdapterConfig.from_file(args.config)
    log.info("serving engine=%s workers=%d", config.engine, config.workers)
    serve(config)
    return 0


if __name__ == "__main__":
    sys.exit(main())
