"""Run the desk-scale pretraining experiment end to end.

Generates the 60-subject longitudinal cohort, trains the two-branch
network and writes checkpoint + history + verification report under
$LONGSPINE_OUT/desk_pretrain (default ./longspine_out/desk_pretrain).
"""

import os
import sys
from pathlib import Path

from longspine.cli import main
from longspine.config import save_config
from longspine.presets import desk_pretrain_config


def run() -> int:
    root = Path(os.environ.get("LONGSPINE_OUT", "longspine_out")) / "desk_pretrain"
    root.mkdir(parents=True, exist_ok=True)
    cfg_path = root / "config.txt"
    save_config(desk_pretrain_config(), cfg_path)
    rc = main(["synth", "--config", str(cfg_path), "--out", str(root / "data")])
    if rc:
        return rc
    return main([
        "pretrain",
        "--config", str(cfg_path),
        "--manifest", str(root / "data" / "manifest.jsonl"),
        "--out", str(root / "run"),
    ])


if __name__ == "__main__":
    sys.exit(run())
