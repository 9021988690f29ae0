"""Fake HDL simulator driven by magic substrings, for offline tests.

compile mode: concatenates source files into the output "binary".
  SYNTAXERR anywhere in a source  -> diagnostic on stderr, exit 1
  SLEEP_MS=<n>                    -> sleep n milliseconds first
run mode: inspects the "binary".
  FUNCFAIL        -> mismatch message, no pass marker, exit 0
  MARKER_BUT_FAIL -> pass marker printed but nonzero exit
  otherwise       -> pass marker, exit 0
"""

import re
import sys
import time


def _sleep_if_asked(text: str) -> None:
    m = re.search(r"SLEEP_MS=(\d+)", text)
    if m:
        time.sleep(int(m.group(1)) / 1000.0)


def do_compile(argv: list[str]) -> int:
    out = None
    sources = []
    i = 0
    while i < len(argv):
        if argv[i] == "-o":
            out = argv[i + 1]
            i += 2
        else:
            sources.append(argv[i])
            i += 1
    if out is None or not sources:
        print("usage: sim.py compile -o OUT SOURCE...", file=sys.stderr)
        return 2
    blob = []
    for path in sources:
        with open(path, encoding="utf-8", errors="replace") as fh:
            text = fh.read()
        _sleep_if_asked(text)
        if "SYNTAXERR" in text:
            print("%s: syntax error near SYNTAXERR" % path, file=sys.stderr)
            return 1
        blob.append(text)
    with open(out, "w", encoding="utf-8") as fh:
        fh.write("\n".join(blob))
    return 0


def do_run(argv: list[str]) -> int:
    if len(argv) != 1:
        print("usage: sim.py run BINARY", file=sys.stderr)
        return 2
    with open(argv[0], encoding="utf-8", errors="replace") as fh:
        text = fh.read()
    _sleep_if_asked(text)
    if "MARKER_BUT_FAIL" in text:
        print("ALL_TESTS_PASSED")
        print("simulation aborted after pass message", file=sys.stderr)
        return 1
    if "FUNCFAIL" in text:
        print("MISMATCH at t=40")
        return 0
    print("ALL_TESTS_PASSED")
    return 0


def main() -> int:
    if len(sys.argv) < 2:
        print("usage: sim.py {compile|run} ...", file=sys.stderr)
        return 2
    mode = sys.argv[1]
    if mode == "compile":
        return do_compile(sys.argv[2:])
    if mode == "run":
        return do_run(sys.argv[2:])
    print("unknown mode %r" % mode, file=sys.stderr)
    return 2


if __name__ == "__main__":
    sys.exit(main())
