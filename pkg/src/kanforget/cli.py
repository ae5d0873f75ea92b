"""Command-line harness.

Subcommands: run a config, validate a config, fetch the MNIST IDX files,
or re-emit reports for a completed run directory.  Exit codes: 0 success,
2 config error, 3 numerical failure, 4 I/O failure.  The default output
root comes from the KANFORGET_OUT environment variable (fallback ./runs).
"""

from __future__ import annotations

import argparse
import gzip
import hashlib
import json
import os
import sys
import time
from pathlib import Path

from .errors import ConfigError, IdxFormatError, TrainingError
from .experiments import emit_reports, load_bundle, load_config, run_experiment

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4

MNIST_FILES = (
    "train-images-idx3-ubyte.gz",
    "train-labels-idx1-ubyte.gz",
    "t10k-images-idx3-ubyte.gz",
    "t10k-labels-idx1-ubyte.gz",
)
MNIST_MIRRORS = (
    "https://storage.googleapis.com/cvdf-datasets/mnist/",
    "https://ossci-datasets.s3.amazonaws.com/mnist/",
)


def _default_out_root() -> Path:
    return Path(os.environ.get("KANFORGET_OUT", "runs"))


def _cmd_validate(args) -> int:
    cfg, diagnostics = load_config(args.config)
    if diagnostics:
        for line in diagnostics:
            print(f"invalid: {line}", file=sys.stderr)
        return EXIT_CONFIG
    print(f"ok: {cfg['kind']} with seeds {cfg['seeds']}")
    return EXIT_OK


def _cmd_run(args) -> int:
    cfg, diagnostics = load_config(args.config)
    if diagnostics:
        for line in diagnostics:
            print(f"invalid: {line}", file=sys.stderr)
        return EXIT_CONFIG
    if args.out:
        out_dir = Path(args.out)
    else:
        stamp = time.strftime("%Y%m%d-%H%M%S")
        out_dir = _default_out_root() / f"{cfg['kind']}-{stamp}"
    try:
        manifest = run_experiment(
            cfg, out_dir, workers=args.workers, seed_offset=args.seed_offset
        )
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TrainingError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (OSError, FileExistsError) as exc:
        print(f"i/o failure: {exc}", file=sys.stderr)
        return EXIT_IO
    print(f"run complete: {out_dir} ({len(manifest.files)} files)")
    return EXIT_OK


def _cmd_report(args) -> int:
    run_dir = Path(args.run_dir)
    bundle_path = run_dir / "bundle.json"
    if not bundle_path.exists():
        print(f"i/o failure: no bundle.json under {run_dir}", file=sys.stderr)
        return EXIT_IO
    try:
        bundle = load_bundle(bundle_path)
        emit_reports(bundle, run_dir)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"i/o failure: {exc}", file=sys.stderr)
        return EXIT_IO
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(f"reports regenerated under {run_dir}")
    return EXIT_OK


def _verify_idx_pairing(directory: Path) -> None:
    from .tasks import load_mnist_idx

    load_mnist_idx(
        directory / "train-images-idx3-ubyte",
        directory / "train-labels-idx1-ubyte",
    )


def _cmd_fetch_mnist(args) -> int:
    """Download, verify, and decompress the four canonical IDX files.

    Verification: optional user-supplied SHA-256 digests (JSON file mapping
    file name to hex digest) plus a full structural parse of the decoded
    IDX payloads.  Computed digests are always printed for comparison
    against a trusted source.
    """
    import urllib.error
    import urllib.request

    directory = Path(args.dir)
    directory.mkdir(parents=True, exist_ok=True)
    expected = {}
    if args.sha256:
        try:
            with open(args.sha256, "r", encoding="utf-8") as fh:
                expected = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            print(f"config error: cannot read digest file: {exc}", file=sys.stderr)
            return EXIT_CONFIG

    for name in MNIST_FILES:
        target_gz = directory / name
        if not target_gz.exists():
            data = None
            last_error: Exception | None = None
            for mirror in MNIST_MIRRORS:
                try:
                    with urllib.request.urlopen(mirror + name, timeout=60) as resp:
                        data = resp.read()
                    break
                except (urllib.error.URLError, OSError) as exc:
                    last_error = exc
            if data is None:
                print(f"i/o failure: cannot fetch {name}: {last_error}",
                      file=sys.stderr)
                return EXIT_IO
            target_gz.write_bytes(data)
        digest = hashlib.sha256(target_gz.read_bytes()).hexdigest()
        print(f"{name}: sha256 {digest}")
        if name in expected and expected[name] != digest:
            print(f"i/o failure: digest mismatch for {name}", file=sys.stderr)
            return EXIT_IO
        decompressed = directory / name[: -len(".gz")]
        if not decompressed.exists():
            decompressed.write_bytes(gzip.decompress(target_gz.read_bytes()))
    try:
        _verify_idx_pairing(directory)
    except IdxFormatError as exc:
        print(f"i/o failure: downloaded files fail structural checks: {exc}",
              file=sys.stderr)
        return EXIT_IO
    print(f"mnist files ready under {directory}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kanforget",
        description="Sequential-training forgetting experiments for spline networks",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="execute an experiment config")
    run_p.add_argument("config")
    run_p.add_argument("--out", help="output run directory")
    run_p.add_argument("--workers", type=int, default=1)
    run_p.add_argument("--seed-offset", type=int, default=0)
    run_p.set_defaults(func=_cmd_run)

    val_p = sub.add_parser("validate", help="check a config without running")
    val_p.add_argument("config")
    val_p.set_defaults(func=_cmd_validate)

    fetch_p = sub.add_parser("fetch-mnist", help="download the MNIST IDX files")
    fetch_p.add_argument("dir")
    fetch_p.add_argument(
        "--sha256",
        help="JSON file mapping archive names to expected SHA-256 digests",
    )
    fetch_p.set_defaults(func=_cmd_fetch_mnist)

    rep_p = sub.add_parser("report", help="re-emit reports for a run directory")
    rep_p.add_argument("run_dir")
    rep_p.set_defaults(func=_cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
