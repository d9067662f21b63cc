"""Run the desk-scale transfer experiment: 200-subject graded cohort,
learning curve over all three transfer modes.

Expects the checkpoint produced by desk_pretrain.py (pass an explicit path
as the first argument to override).
"""

import os
import sys
from pathlib import Path

from longspine.cli import main
from longspine.config import save_config
from longspine.presets import desk_transfer_config


def run(checkpoint: str | None = None) -> int:
    out_root = Path(os.environ.get("LONGSPINE_OUT", "longspine_out"))
    ckpt = checkpoint or str(out_root / "desk_pretrain" / "run" / "checkpoint.lsckpt")
    if not Path(ckpt).exists():
        print(f"error: no checkpoint at {ckpt}; run desk_pretrain.py first", file=sys.stderr)
        return 1
    root = out_root / "desk_transfer"
    root.mkdir(parents=True, exist_ok=True)
    cfg_path = root / "config.txt"
    save_config(desk_transfer_config(), cfg_path)
    rc = main(["synth", "--config", str(cfg_path), "--out", str(root / "data")])
    if rc:
        return rc
    return main([
        "curve",
        "--config", str(cfg_path),
        "--manifest", str(root / "data" / "manifest.jsonl"),
        "--checkpoint", ckpt,
        "--out", str(root / "run"),
    ])


if __name__ == "__main__":
    sys.exit(run(sys.argv[1] if len(sys.argv) > 1 else None))
