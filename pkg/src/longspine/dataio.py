"""Scan records, the LSVOL1 volume container and the JSON-lines manifest.

LSVOL1 layout (little-endian): magic ``LSVOL1``, extents H/W/S as three
uint32, one anatomy byte (0 = vertebral body, 1 = disc), one level byte
(index into the level table), then H*W*S float32 voxels in C order.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .volumes import ANATOMY_IVD, ANATOMY_VB, DISC_LEVELS, VB_LEVELS, DataError, Volume

VOLUME_MAGIC = b"LSVOL1"
_ANATOMY_CODES = {ANATOMY_VB: 0, ANATOMY_IVD: 1}
_ANATOMY_NAMES = {v: k for k, v in _ANATOMY_CODES.items()}


@dataclass
class ScanRecord:
    """One scan of one subject: per-level volumes plus optional grades."""

    subject_id: str
    scan_time: float  # years since the subject's baseline
    scanner_tag: str
    vb: dict[str, Volume] = field(default_factory=dict)
    ivd: dict[str, Volume] = field(default_factory=dict)
    grades: dict[str, int] | None = None

    def __post_init__(self):
        if self.grades is not None:
            for level, g in self.grades.items():
                if level not in DISC_LEVELS:
                    raise DataError(f"grade attached to unknown disc level {level!r}")
                if g not in (1, 2, 3, 4):
                    raise DataError(f"grade must be in 1..4, got {g} at {level}")


def group_by_subject(records: list[ScanRecord]) -> dict[str, list[ScanRecord]]:
    out: dict[str, list[ScanRecord]] = {}
    for r in records:
        out.setdefault(r.subject_id, []).append(r)
    for scans in out.values():
        scans.sort(key=lambda r: r.scan_time)
        times = [s.scan_time for s in scans]
        if sorted(set(times)) != times:
            raise DataError(f"scan times must be strictly increasing for subject {scans[0].subject_id}")
    return out


def write_volume(path: str | Path, v: Volume) -> None:
    levels = VB_LEVELS if v.anatomy == ANATOMY_VB else DISC_LEVELS
    header = VOLUME_MAGIC + struct.pack(
        "<IIIBB", v.height, v.width, v.slices, _ANATOMY_CODES[v.anatomy], levels.index(v.level)
    )
    payload = np.ascontiguousarray(v.voxels, dtype="<f4").tobytes()
    Path(path).write_bytes(header + payload)


def read_volume(path: str | Path) -> Volume:
    blob = Path(path).read_bytes()
    if blob[: len(VOLUME_MAGIC)] != VOLUME_MAGIC:
        raise DataError(f"{path}: bad magic, not an LSVOL1 volume")
    off = len(VOLUME_MAGIC)
    try:
        h, w, s, anat_code, level_code = struct.unpack_from("<IIIBB", blob, off)
    except struct.error as e:
        raise DataError(f"{path}: truncated header ({e})") from e
    off += struct.calcsize("<IIIBB")
    if anat_code not in _ANATOMY_NAMES:
        raise DataError(f"{path}: unknown anatomy code {anat_code}")
    anatomy = _ANATOMY_NAMES[anat_code]
    levels = VB_LEVELS if anatomy == ANATOMY_VB else DISC_LEVELS
    if level_code >= len(levels):
        raise DataError(f"{path}: level code {level_code} out of range for {anatomy}")
    expected = h * w * s * 4
    if len(blob) - off != expected:
        raise DataError(f"{path}: truncated voxel payload, expected {expected} bytes, got {len(blob) - off}")
    voxels = np.frombuffer(blob, dtype="<f4", offset=off).reshape(h, w, s).astype(np.float64)
    return Volume(voxels, anatomy, levels[level_code])


def _volume_filename(subject_id: str, scan_index: int, anatomy: str, level: str) -> str:
    return f"{subject_id}_t{scan_index}_{anatomy}_{level.replace('-', '')}.lsvol"


def write_dataset(out_dir: str | Path, records: list[ScanRecord]) -> Path:
    """Write every volume as LSVOL1 plus a manifest.jsonl next to them.

    Manifest lines carry paths relative to the manifest's directory so the
    dataset directory can be moved wholesale.
    """
    out_dir = Path(out_dir)
    vol_dir = out_dir / "volumes"
    vol_dir.mkdir(parents=True, exist_ok=True)
    lines = []
    scan_counter: dict[str, int] = {}
    for rec in records:
        idx = scan_counter.get(rec.subject_id, 0)
        scan_counter[rec.subject_id] = idx + 1
        entry = {
            "subject_id": rec.subject_id,
            "scan_time_years": rec.scan_time,
            "scanner_tag": rec.scanner_tag,
            "vb_volumes": {},
            "ivd_volumes": {},
            "grades": rec.grades,
        }
        for level in VB_LEVELS:
            if level in rec.vb:
                name = _volume_filename(rec.subject_id, idx, ANATOMY_VB, level)
                write_volume(vol_dir / name, rec.vb[level])
                entry["vb_volumes"][level] = f"volumes/{name}"
        for level in DISC_LEVELS:
            if level in rec.ivd:
                name = _volume_filename(rec.subject_id, idx, ANATOMY_IVD, level)
                write_volume(vol_dir / name, rec.ivd[level])
                entry["ivd_volumes"][level] = f"volumes/{name}"
        lines.append(json.dumps(entry, sort_keys=True))
    manifest = out_dir / "manifest.jsonl"
    manifest.write_text("\n".join(lines) + "\n")
    return manifest


def read_manifest(manifest_path: str | Path) -> list[dict]:
    path = Path(manifest_path)
    entries = []
    for ln, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            entries.append(json.loads(line))
        except json.JSONDecodeError as e:
            raise DataError(f"{path}:{ln}: invalid manifest line ({e})") from e
    if not entries:
        raise DataError(f"{path}: empty manifest")
    return entries


def load_dataset(manifest_path: str | Path, anatomies: tuple[str, ...] = (ANATOMY_VB, ANATOMY_IVD)) -> list[ScanRecord]:
    """Load manifest entries into ScanRecords with volumes in memory."""
    path = Path(manifest_path)
    base = path.parent
    records = []
    for entry in read_manifest(path):
        rec = ScanRecord(
            subject_id=entry["subject_id"],
            scan_time=float(entry["scan_time_years"]),
            scanner_tag=entry.get("scanner_tag", ""),
            grades={k: int(v) for k, v in entry["grades"].items()} if entry.get("grades") else None,
        )
        if ANATOMY_VB in anatomies:
            rec.vb = {level: read_volume(base / rel) for level, rel in sorted(entry["vb_volumes"].items())}
        if ANATOMY_IVD in anatomies:
            rec.ivd = {level: read_volume(base / rel) for level, rel in sorted(entry["ivd_volumes"].items())}
        records.append(rec)
    return records
