"""External HDL simulation behind a two-command config.

The two scoring gates map onto a simulator's natural phases: the syntax
gate is the compile command, the functional gate compiles the candidate
with the golden testbench and runs it.  A run passes only when the process
exits 0 AND the pass marker appears in its output, because HDL testbenches
routinely exit 0 after printing mismatches.

Every invocation gets a private workspace directory, removed on success
and retained on failure only when configured, so concurrent evaluations
never collide.
"""

from __future__ import annotations

import os
import shlex
import shutil
import subprocess
import sys
import tempfile
import threading
import time
from dataclasses import dataclass, replace
from enum import Enum
from importlib import resources

from .backends import API_KEY_ENV
from .errors import InvariantViolationError, SimulatorUnavailableError, WorkspaceError

DEFAULT_PASS_MARKER = "ALL_TESTS_PASSED"
DEFAULT_TIMEOUT_MS = 10_000

LOG_CAP_BYTES = 64 * 1024
LOG_TAIL_BYTES = 8 * 1024


@dataclass(frozen=True)
class SimulatorConfig:
    compile_cmd: str
    run_cmd: str
    pass_marker: str = DEFAULT_PASS_MARKER
    workspace_root: str | None = None
    timeout_ms: int = DEFAULT_TIMEOUT_MS
    keep_failed_workspaces: bool = False
    max_concurrency: int | None = None

    def validate(self) -> None:
        if "{sources}" not in self.compile_cmd or "{out}" not in self.compile_cmd:
            raise InvariantViolationError(
                "compile_cmd needs {sources} and {out} placeholders"
            )
        if "{out}" not in self.run_cmd:
            raise InvariantViolationError("run_cmd needs an {out} placeholder")
        if not self.pass_marker:
            raise InvariantViolationError("pass_marker must be non-empty")
        if self.timeout_ms < 1:
            raise InvariantViolationError("timeout_ms must be positive")


class SimPhase(Enum):
    COMPILE = "compile"
    RUN = "run"


@dataclass(frozen=True)
class SimVerdict:
    phase: SimPhase
    passed: bool
    log: str
    duration_ms: int
    timed_out: bool = False


def truncate_log(log: str) -> str:
    """Cap log size while always preserving the tail, where failures live."""
    if len(log) <= LOG_CAP_BYTES:
        return log
    head = log[: LOG_CAP_BYTES - LOG_TAIL_BYTES]
    tail = log[-LOG_TAIL_BYTES:]
    return "%s\n...[log truncated]...\n%s" % (head, tail)


def _build_argv(template: str, sources: list[str], out: str) -> list[str]:
    argv: list[str] = []
    for token in shlex.split(template):
        if token == "{sources}":
            argv.extend(sources)
        else:
            argv.append(token.replace("{out}", out))
    return argv


class ExternalSimulator:
    def __init__(self, config: SimulatorConfig) -> None:
        config.validate()
        self.config = config
        limit = config.max_concurrency or os.cpu_count() or 4
        self._gate = threading.Semaphore(limit)

    # -- internals ---------------------------------------------------

    def _make_workspace(self) -> str:
        root = self.config.workspace_root
        try:
            if root:
                os.makedirs(root, exist_ok=True)
            return tempfile.mkdtemp(prefix="verimoa-sim-", dir=root)
        except OSError as exc:
            raise WorkspaceError("cannot create simulation workspace: %s" % exc)

    def _run(self, argv: list[str], cwd: str, timeout_ms: int) -> tuple[int, str, bool, int]:
        env = dict(os.environ)
        env.pop(API_KEY_ENV, None)
        started = time.monotonic()
        try:
            with self._gate:
                proc = subprocess.run(
                    argv,
                    cwd=cwd,
                    stdout=subprocess.PIPE,
                    stderr=subprocess.STDOUT,
                    timeout=timeout_ms / 1000.0,
                    env=env,
                )
            log = proc.stdout.decode("utf-8", errors="replace")
            code = proc.returncode
            timed_out = False
        except subprocess.TimeoutExpired as exc:
            log = (exc.output or b"").decode("utf-8", errors="replace")
            log += "\n[timeout after %d ms]" % timeout_ms
            code = -1
            timed_out = True
        except FileNotFoundError:
            raise SimulatorUnavailableError(
                "simulator command not found: %s" % argv[0]
            )
        except OSError as exc:
            raise SimulatorUnavailableError("cannot launch %s: %s" % (argv[0], exc))
        duration_ms = int((time.monotonic() - started) * 1000)
        return code, truncate_log(log), timed_out, duration_ms

    def _write_sources(self, workspace: str, problem, include_testbench: bool,
                       candidate_source: str) -> list[str]:
        paths = []
        candidate = os.path.join(workspace, "candidate.v")
        with open(candidate, "w", encoding="utf-8") as fh:
            fh.write(candidate_source)
        paths.append(candidate)
        for name, content in sorted(getattr(problem, "support_files", {}).items()):
            path = os.path.join(workspace, os.path.basename(name))
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(content)
            paths.append(path)
        if include_testbench:
            tb = os.path.join(workspace, "testbench.v")
            with open(tb, "w", encoding="utf-8") as fh:
                fh.write(problem.testbench_source)
            paths.append(tb)
        return paths

    def _cleanup(self, workspace: str, passed: bool) -> None:
        if passed or not self.config.keep_failed_workspaces:
            shutil.rmtree(workspace, ignore_errors=True)

    def _timeout_ms(self, problem) -> int:
        return getattr(problem, "timeout_ms", None) or self.config.timeout_ms

    def _marker(self, problem) -> str:
        return getattr(problem, "pass_marker", None) or self.config.pass_marker

    # -- the two gates -----------------------------------------------

    def syntax_test(self, candidate_source: str, problem) -> SimVerdict:
        workspace = self._make_workspace()
        passed = False
        try:
            sources = self._write_sources(workspace, problem, False, candidate_source)
            out = os.path.join(workspace, "design.out")
            argv = _build_argv(self.config.compile_cmd, sources, out)
            code, log, timed_out, duration = self._run(
                argv, workspace, self._timeout_ms(problem)
            )
            passed = code == 0 and not timed_out
            return SimVerdict(SimPhase.COMPILE, passed, log, duration, timed_out)
        finally:
            self._cleanup(workspace, passed)

    def function_test(self, candidate_source: str, problem) -> SimVerdict:
        workspace = self._make_workspace()
        passed = False
        try:
            sources = self._write_sources(workspace, problem, True, candidate_source)
            out = os.path.join(workspace, "sim.out")
            timeout_ms = self._timeout_ms(problem)
            argv = _build_argv(self.config.compile_cmd, sources, out)
            code, log, timed_out, duration = self._run(argv, workspace, timeout_ms)
            if code != 0 or timed_out:
                return SimVerdict(SimPhase.RUN, False, log, duration, timed_out)
            run_argv = _build_argv(self.config.run_cmd, [], out)
            code, run_log, timed_out, run_duration = self._run(
                run_argv, workspace, timeout_ms
            )
            passed = code == 0 and not timed_out and self._marker(problem) in run_log
            return SimVerdict(
                SimPhase.RUN, passed, run_log, duration + run_duration, timed_out
            )
        finally:
            self._cleanup(workspace, passed)


def iverilog_config(**overrides) -> SimulatorConfig:
    cfg = SimulatorConfig(
        compile_cmd="iverilog -g2012 -o {out} {sources}",
        run_cmd="vvp {out}",
    )
    return replace(cfg, **overrides) if overrides else cfg


def _stub_script(name: str) -> str:
    return str(resources.files("verimoa").joinpath("stubs", name))


def stub_script_cmd(name: str) -> str:
    """Shell-quoted interpreter + bundled stub script prefix."""
    return "%s -I %s" % (shlex.quote(sys.executable), shlex.quote(_stub_script(name)))


def stub_simulator(**overrides) -> ExternalSimulator:
    """Simulator wired to the bundled magic-substring stub."""
    prefix = stub_script_cmd("sim.py")
    cfg = SimulatorConfig(
        compile_cmd="%s compile -o {out} {sources}" % prefix,
        run_cmd="%s run {out}" % prefix,
    )
    if overrides:
        cfg = replace(cfg, **overrides)
    return ExternalSimulator(cfg)


@dataclass(frozen=True)
class _SampleProblem:
    id: str = "simcheck-sample"
    top_module: str = "simcheck_and2"
    timeout_ms: int = 20_000
    testbench_source: str = """
module simcheck_and2_tb;
  reg a, b;
  wire y;
  simcheck_and2 dut(.a(a), .b(b), .y(y));
  integer errors;
  initial begin
    errors = 0;
    a = 0; b = 0; #1 if (y !== 1'b0) errors = errors + 1;
    a = 1; b = 0; #1 if (y !== 1'b0) errors = errors + 1;
    a = 1; b = 1; #1 if (y !== 1'b1) errors = errors + 1;
    if (errors == 0) $display("ALL_TESTS_PASSED");
    else $display("FAILED: %0d mismatches", errors);
    $finish;
  end
endmodule
"""


SAMPLE_DESIGN = """
module simcheck_and2(input a, input b, output y);
  assign y = a & b;
endmodule
"""


def simcheck(sim: ExternalSimulator) -> tuple[bool, str]:
    """Compile and run a known-good sample through the configured simulator."""
    problem = _SampleProblem()
    verdict = sim.syntax_test(SAMPLE_DESIGN, problem)
    if not verdict.passed:
        return False, "compile failed:\n%s" % verdict.log
    verdict = sim.function_test(SAMPLE_DESIGN, problem)
    if not verdict.passed:
        return False, "run failed:\n%s" % verdict.log
    return True, "simulator ok"
