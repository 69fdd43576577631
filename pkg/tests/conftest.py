import socket
import sys
import threading

import numpy as np
import pytest

from hsicattr.echo_server import make_http_server

ACCEPTANCE_LINES = []


@pytest.fixture
def rng():
    return np.random.default_rng(20240617)


@pytest.fixture
def echo_cmd():
    return [sys.executable, "-m", "hsicattr.echo_server"]


def _free_port():
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


@pytest.fixture
def http_echo():
    """Start an in-process echo server; yields ``factory(fault) -> url``."""
    servers = []

    def start(fault="none"):
        server = make_http_server("127.0.0.1", _free_port(), fault)
        threading.Thread(target=server.serve_forever, daemon=True).start()
        servers.append(server)
        host, port = server.server_address
        return f"http://{host}:{port}/predict"

    yield start
    for server in servers:
        server.shutdown()
        server.server_close()


@pytest.fixture
def accept(request):
    """Record one PASS/FAIL line per acceptance criterion, then assert."""

    def record(label, ok, detail=""):
        line = f"[{'PASS' if ok else 'FAIL'}] {label}" + (f" :: {detail}" if detail else "")
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
