#!/usr/bin/env python3
# SPDX-License-Identifier: Apache-2.0
"""Execute the runnable examples embedded in the markdown documentation.

Every fenced block tagged ``console`` is a transcript: lines starting with
``$ `` are commands, the lines after a command are output that must appear
in what the command printed (substring match, one line at a time, in order).
An output line of ``...`` skips any amount of output. A command must exit 0;
write ``$ ! cmd`` for one that is expected to fail. Commands of one file
share a scratch directory and run in order with ``bash -e``; the ``clickseg``
executable on PATH is the one passed with ``--cli``. Background processes a
file starts are killed when the file finishes.
"""

import argparse
import os
import re
import select
import shutil
import signal
import subprocess
import sys
import tempfile
import time
from pathlib import Path

FENCE = re.compile(r"^```(\S*)\s*$")


def extract_blocks(text):
    """Yield (line_number, lines) for each console block."""
    lang, start, body = None, 0, []
    for i, line in enumerate(text.splitlines(), 1):
        m = FENCE.match(line)
        if m and lang is None:
            lang, start, body = m.group(1), i, []
        elif line.strip() == "```" and lang is not None:
            if lang == "console":
                yield start, body
            lang = None
        elif lang is not None:
            body.append(line)


def parse_transcript(lines):
    """Split a console block into (command, expected_lines) steps."""
    steps = []
    for line in lines:
        if line.startswith("$ "):
            steps.append([line[2:], []])
        elif steps:
            if line.strip():
                steps[-1][1].append(line.rstrip())
        elif line.strip():
            raise ValueError("output before the first command: " + line)
    return steps


def check_output(actual, expected):
    """Return None when every expected line occurs in order, else a message."""
    lines = actual.splitlines()
    pos = 0
    for want in expected:
        if want == "...":
            continue
        while pos < len(lines) and want not in lines[pos]:
            pos += 1
        if pos == len(lines):
            return "expected output line not found: " + want
        pos += 1
    return None


def read_until_exit(proc, timeout):
    """Collect output until the shell exits; background children may keep the pipe open."""
    chunks = []
    deadline = time.monotonic() + timeout
    fd = proc.stdout.fileno()
    os.set_blocking(fd, False)
    while True:
        ready, _, _ = select.select([fd], [], [], 0.05)
        if ready:
            data = os.read(fd, 65536)
            if data:
                chunks.append(data)
                continue
        if proc.poll() is not None:
            ready, _, _ = select.select([fd], [], [], 0.2)
            while ready:
                data = os.read(fd, 65536)
                if not data:
                    break
                chunks.append(data)
                ready, _, _ = select.select([fd], [], [], 0.05)
            break
        if time.monotonic() > deadline:
            os.killpg(proc.pid, signal.SIGKILL)
            proc.wait()
            chunks.append(b"\n[timed out]\n")
            break
    proc.stdout.close()
    return b"".join(chunks).decode(errors="replace")


def run_file(path, cli_dir, timeout, keep):
    text = path.read_text()
    failures = 0
    count = 0
    work = Path(tempfile.mkdtemp(prefix="clickseg_doc_"))
    env = dict(os.environ)
    env["PATH"] = str(cli_dir) + os.pathsep + env.get("PATH", "")
    env.pop("CLICKSEG_MODEL_DIR", None)
    groups = []
    try:
        for line_no, block in extract_blocks(text):
            for cmd, expected in parse_transcript(block):
                count += 1
                t0 = time.monotonic()
                proc = subprocess.Popen(
                    ["bash", "-e", "-o", "pipefail", "-c", cmd],
                    cwd=work, env=env, stdout=subprocess.PIPE, stderr=subprocess.STDOUT,
                    stdin=subprocess.DEVNULL, text=True, start_new_session=True)
                groups.append(proc.pid)
                out = read_until_exit(proc, timeout)
                elapsed = time.monotonic() - t0
                problem = None
                if proc.returncode != 0:
                    problem = "exit code %d" % proc.returncode
                else:
                    problem = check_output(out, expected)
                status = "ok" if problem is None else "FAIL"
                print("%s:%d: %s (%.1fs) $ %s" % (path.name, line_no, status, elapsed, cmd))
                if problem is not None:
                    failures += 1
                    print("  " + problem)
                    for l in out.splitlines()[-20:]:
                        print("  | " + l)
                    return count, failures
    finally:
        for pgid in groups:
            try:
                os.killpg(pgid, signal.SIGTERM)
            except ProcessLookupError:
                pass
        if keep:
            print("kept scratch directory " + str(work))
        else:
            shutil.rmtree(work, ignore_errors=True)
    return count, failures


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--cli", required=True, help="path to the clickseg executable")
    ap.add_argument("--docs", default="docs", help="directory of markdown files")
    ap.add_argument("--timeout", type=float, default=600, help="seconds per command")
    ap.add_argument("--keep", action="store_true", help="keep scratch directories")
    ap.add_argument("files", nargs="*", help="only these markdown files")
    args = ap.parse_args()

    cli = Path(args.cli).resolve()
    if not cli.is_file():
        sys.exit("no such executable: %s" % cli)
    cli_dir = Path(tempfile.mkdtemp(prefix="clickseg_bin_"))
    (cli_dir / "clickseg").symlink_to(cli)

    files = [Path(f) for f in args.files] or sorted(Path(args.docs).glob("*.md"))
    total = failed = 0
    try:
        for f in files:
            n, bad = run_file(f.resolve(), cli_dir, args.timeout, args.keep)
            total += n
            failed += bad
    finally:
        shutil.rmtree(cli_dir, ignore_errors=True)
    print("%d commands, %d failed" % (total, failed))
    return 1 if failed or total == 0 else 0


if __name__ == "__main__":
    sys.exit(main())
