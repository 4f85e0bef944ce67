#!/usr/bin/env python3
"""Regenerate the golden prompt/observation fixtures under tests/golden/.

Run after any deliberate change to template texts or canonical observation
phrasing, then review the diff before committing.
"""

from __future__ import annotations

import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "tests"))

from golden_cases import golden_renders  # noqa: E402


def main() -> int:
    out_dir = ROOT / "tests" / "golden"
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, content in golden_renders().items():
        path = out_dir / f"{name}.txt"
        path.write_text(content + "\n", encoding="utf-8")
        print(f"wrote {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
