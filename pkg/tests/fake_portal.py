"""A local stand-in for a SODA-style open-data endpoint."""

import csv
import io
import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, urlparse


class FakePortal:
    def __init__(self, datasets):
        self.datasets = datasets  # dataset_id -> list of row dicts
        self.fail_next = 0  # number of upcoming requests answered with 503
        self.status_override = None
        self.requests = []
        self.tokens = []
        portal = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):
                pass

            def do_GET(self):
                url = urlparse(self.path)
                query = {k: v[0] for k, v in parse_qs(url.query).items()}
                portal.requests.append((url.path, query))
                portal.tokens.append(self.headers.get("X-App-Token"))
                if portal.status_override:
                    return self._send(portal.status_override, b"nope", "text/plain")
                if portal.fail_next > 0:
                    portal.fail_next -= 1
                    return self._send(503, b"busy", "text/plain")
                name = url.path.rsplit("/", 1)[-1]
                dataset, _, ext = name.partition(".")
                if dataset not in portal.datasets:
                    return self._send(404, b"no such dataset", "text/plain")
                rows = portal.datasets[dataset]
                if "$order" in query:
                    rows = sorted(rows, key=lambda r: str(r.get(query["$order"], "")))
                offset = int(query.get("$offset", 0))
                limit = int(query.get("$limit", 1000))
                page = rows[offset : offset + limit]
                if ext == "csv":
                    buf = io.StringIO()
                    cols = sorted({k for r in rows for k in r})
                    writer = csv.DictWriter(buf, cols)
                    writer.writeheader()
                    writer.writerows(page)
                    return self._send(200, buf.getvalue().encode(), "text/csv")
                self._send(200, json.dumps(page).encode(), "application/json")

            def _send(self, status, body, ctype):
                self.send_response(status)
                self.send_header("Content-Type", ctype)
                self.send_header("Content-Length", str(len(body)))
                self.end_headers()
                self.wfile.write(body)

        self.server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.thread = threading.Thread(target=self.server.serve_forever, kwargs={"poll_interval": 0.05}, daemon=True)

    @property
    def base_url(self):
        host, port = self.server.server_address
        return f"http://{host}:{port}/resource"

    def page_requests(self):
        return [(int(q["$offset"]), int(q["$limit"])) for _, q in self.requests]

    def __enter__(self):
        self.thread.start()
        return self

    def __exit__(self, *exc):
        self.server.shutdown()
        self.server.server_close()
