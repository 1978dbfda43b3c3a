#!/usr/bin/env python3
"""Regenerate docs/instruction_patterns.md from the live grammar."""

import pathlib
import sys

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parents[1] / "src"))

from fleetloop.grammar import reference_text  # noqa: E402


def main() -> int:
    out = pathlib.Path(__file__).resolve().parents[1] / "docs" / "instruction_patterns.md"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(reference_text(), encoding="utf-8")
    print(f"wrote {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
