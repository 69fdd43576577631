"""Reference NDJSON model server: answers each input with its mean value.

Runs over stdin/stdout by default, or over HTTP with ``--http HOST:PORT``.
``--fault`` injects failures for exercising client error paths.

    python -m hsicattr.echo_server
    python -m hsicattr.echo_server --http 127.0.0.1:8765
"""

from __future__ import annotations

import argparse
import sys
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from . import protocol
from .model import row_means

FAULTS = ("none", "malformed", "nan", "hang", "exit", "bad-id", "short")


def respond(line: bytes, fault: str = "none") -> bytes:
    request_id, batch = protocol.decode_request(line)
    if fault == "malformed":
        return b'{"id": ' + str(request_id).encode() + b', "outputs": [[1.0\n'
    if fault == "nan":
        return f'{{"id":{request_id},"outputs":{[[float("nan")]] * len(batch)}}}\n'.replace("nan", "NaN").encode()
    if fault == "hang":
        time.sleep(3600)
    if fault == "exit":
        sys.exit(3)
    if fault == "bad-id":
        request_id += 1000
    out = row_means(batch)
    if fault == "short":
        out = out[:-1]
    return protocol.encode_response(request_id, out)


def serve_stdio(fault: str = "none") -> None:
    stdin, stdout = sys.stdin.buffer, sys.stdout.buffer
    for line in iter(stdin.readline, b""):
        stdout.write(respond(line, fault))
        stdout.flush()


def make_http_server(host: str, port: int, fault: str = "none") -> ThreadingHTTPServer:
    class Handler(BaseHTTPRequestHandler):
        def do_POST(self):
            body = self.rfile.read(int(self.headers.get("Content-Length", 0)))
            try:
                payload = respond(body, fault)
            except protocol.ProtocolError as exc:
                self.send_error(400, str(exc))
                return
            self.send_response(200)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(payload)))
            self.end_headers()
            self.wfile.write(payload)

        def log_message(self, *args):
            pass

    server = ThreadingHTTPServer((host, port), Handler)
    server.daemon_threads = True
    return server


def main(argv=None) -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--http", metavar="HOST:PORT")
    parser.add_argument("--fault", choices=FAULTS, default="none")
    args = parser.parse_args(argv)
    if args.http:
        host, _, port = args.http.rpartition(":")
        make_http_server(host or "127.0.0.1", int(port), args.fault).serve_forever()
    else:
        serve_stdio(args.fault)


if __name__ == "__main__":
    main()
