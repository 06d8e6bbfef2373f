"""tcd-export: run an export session described by a JSON file."""
from __future__ import annotations

import argparse
import json
import sys

from .export import ExportError, engine_cli, export, load_session


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="tcd-export", description=__doc__)
    parser.add_argument("--session", required=True, help="JSON session config")
    parser.add_argument("--out", default=None, help="override the session output directory")
    parser.add_argument(
        "--validate", action="store_true", help="run the engine validator on the result"
    )
    args = parser.parse_args(argv)

    try:
        session = load_session(args.session)
        if args.out:
            session.out = args.out
        out = export(session)
        summary = {"out": str(out), "samples": len(session.samples), "steps": session.steps}
        if args.validate:
            proc = engine_cli(["trace", "validate", str(out)])
            summary["validator"] = json.loads(proc.stdout)
        print(json.dumps(summary, indent=2, sort_keys=True))
        return 0
    except FileNotFoundError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except ExportError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
