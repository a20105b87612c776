#!/usr/bin/env python3
"""
Development loop for the constrained inference engine

    python scripts/dev.py                                   # MCP server, restarted on source edits
    python scripts/dev.py --run "infer --task srl --input c.jsonl --output p.jsonl" \\
        --then "eval --task srl --pred p.jsonl --gold g.jsonl"

With --run, the CLI command (and the optional --then command) is re-run
whenever a source file or a JSONL/JSON file the commands name changes.
"""
import argparse
import os
import shlex
import subprocess
import sys
import threading
import time
from pathlib import Path

from watchdog.events import FileSystemEvent, FileSystemEventHandler
from watchdog.observers import Observer

ROOT = Path(__file__).parent.parent
SRC = ROOT / "src" / "constrained_inference"
WATCHED_SUFFIXES = (".py", ".jsonl", ".json")
# outputs written by the commands themselves must not retrigger a run
OUTPUT_FLAGS = ("--output", "--report")

EXIT_MEANINGS = {
    0: "ok",
    2: "invalid input, template or configuration",
    3: "file missing, unreadable or unwritable",
    4: "node budget reached, incumbent kept",
    5: "remote scoring failed",
}


def _env() -> dict[str, str]:
    env = os.environ.copy()
    env["CONSTRAINED_INFERENCE_LOG_LEVEL"] = "DEBUG"
    env["PYTHONPATH"] = os.pathsep.join(filter(None, [str(ROOT / "src"), env.get("PYTHONPATH")]))
    return env


def _named_paths(argv: list[str]) -> tuple[set[Path], set[Path]]:
    """(inputs, outputs) named by a CLI argument list"""
    inputs: set[Path] = set()
    outputs: set[Path] = set()
    for flag, value in zip(argv, argv[1:]):
        if not value.endswith(WATCHED_SUFFIXES):
            continue
        path = Path(value).resolve()
        (outputs if flag in OUTPUT_FLAGS else inputs).add(path)
    return inputs, outputs


class ServerReloader(FileSystemEventHandler):
    """Keeps one MCP server process running, restarting it on source edits"""

    def __init__(self):
        self.process: subprocess.Popen | None = None
        self.restart()

    def restart(self) -> None:
        if self.process:
            print("🔄 Restarting server...")
            self.process.terminate()
            self.process.wait()
        else:
            print("🚀 Starting Constrained Inference Server in development mode...")
        self.process = subprocess.Popen(
            [sys.executable, "-m", "constrained_inference.server"], env=_env(), cwd=ROOT
        )

    def on_modified(self, event: FileSystemEvent) -> None:
        if str(event.src_path).endswith(".py"):
            print(f"📝 Detected change in {event.src_path}")
            self.restart()

    def stop(self) -> None:
        if self.process:
            self.process.terminate()


class CommandRerunner(FileSystemEventHandler):
    """Re-runs CLI commands when sources or their input files change"""

    def __init__(self, commands: list[list[str]], settle: float = 0.3):
        self.commands = commands
        self.settle = settle
        self.inputs: set[Path] = set()
        self.outputs: set[Path] = set()
        for argv in commands:
            inputs, outputs = _named_paths(argv)
            self.inputs |= inputs
            self.outputs |= outputs
        self.inputs -= self.outputs
        self._timer: threading.Timer | None = None
        self._lock = threading.Lock()

    def watch_dirs(self) -> set[Path]:
        return {SRC} | {p.parent for p in self.inputs}

    def run(self) -> None:
        for argv in self.commands:
            print(f"▶️  constrained-inference {shlex.join(argv)}")
            started = time.monotonic()
            code = subprocess.call(
                [sys.executable, "-m", "constrained_inference.cli", *argv], env=_env()
            )
            meaning = EXIT_MEANINGS.get(code, "unexpected")
            print(f"{'✅' if code == 0 else '❌'} exit {code} ({meaning}) in {time.monotonic() - started:.2f}s")
            if code not in (0, 4):
                break

    def _relevant(self, path: Path) -> bool:
        if path in self.outputs or not path.name.endswith(WATCHED_SUFFIXES):
            return False
        return path.suffix == ".py" or path in self.inputs

    def on_any_event(self, event: FileSystemEvent) -> None:
        if event.is_directory or event.event_type not in ("modified", "created", "moved"):
            return
        path = Path(str(getattr(event, "dest_path", "") or event.src_path)).resolve()
        if not self._relevant(path):
            return
        print(f"📝 Detected change in {path}")
        with self._lock:
            # editors write in bursts; run once they settle
            if self._timer is not None:
                self._timer.cancel()
            self._timer = threading.Timer(self.settle, self.run)
            self._timer.start()

    def stop(self) -> None:
        with self._lock:
            if self._timer is not None:
                self._timer.cancel()


def parse_args(argv: list[str] | None = None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(description="Hot reload for the server, or re-run CLI commands on change")
    parser.add_argument("--run", help="CLI arguments to re-run, e.g. \"infer --task srl --input ...\"")
    parser.add_argument("--then", help="CLI arguments to run after --run succeeds")
    return parser.parse_args(argv)


def main(argv: list[str] | None = None) -> None:
    args = parse_args(argv)
    observer = Observer()

    if args.run:
        commands = [shlex.split(args.run)] + ([shlex.split(args.then)] if args.then else [])
        handler: ServerReloader | CommandRerunner = CommandRerunner(commands)
        handler.run()
        watched = handler.watch_dirs()
    else:
        handler = ServerReloader()
        watched = {SRC}

    for directory in sorted(watched):
        observer.schedule(handler, str(directory), recursive=directory == SRC)
        print(f"👁️ Watching {directory} for changes...")
    observer.start()
    print("Press Ctrl+C to stop")

    try:
        while True:
            time.sleep(1)
    except KeyboardInterrupt:
        observer.stop()
        handler.stop()
    observer.join()


if __name__ == "__main__":
    main()
