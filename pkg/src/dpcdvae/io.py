"""Dataset ingestion (JSONL, P1 CIF) and checkpoint persistence.

JSONL dataset schema, one object per line:

    {"lattice": [[...3 floats...] x3], "frac_coords": [[...] x N],
     "atomic_numbers": [N ints], "energy_per_atom": float?, "id": str?}

Lattice rows are lattice vectors in Angstrom (right-handed); fractional
coordinates must already lie in [0, 1).  Floats survive a write/read
round trip bit-exactly.

Checkpoint binary layout (all integers little-endian):

    magic "DPCV" | u32 format version | u64 config length | config JSON
    | u64 tensor count | per tensor: u32 name length, name UTF-8,
      u32 rank, u64 dims[rank], float64 values (C order)
"""

from __future__ import annotations

import json
import re
import struct
from dataclasses import dataclass

import numpy as np

from .elements import number_for
from .errors import CheckpointError, DataError, GeometryError, UnsupportedSymmetryError
from .lattice import CrystalStructure, Lattice, wrap_pi

CHECKPOINT_MAGIC = b"DPCV"
CHECKPOINT_VERSION = 1

__all__ = [
    "DatasetRecord",
    "read_jsonl",
    "write_jsonl",
    "read_cif_p1",
    "save_checkpoint",
    "load_checkpoint",
    "CHECKPOINT_MAGIC",
    "CHECKPOINT_VERSION",
]


@dataclass(frozen=True)
class DatasetRecord:
    """One dataset entry: a structure plus optional per-atom energy (eV)
    and identifier."""

    structure: CrystalStructure
    energy_per_atom: float | None = None
    id: str | None = None


_RECORD_KEYS = {"lattice", "frac_coords", "atomic_numbers", "energy_per_atom", "id"}


def _record_from_obj(obj, where: str) -> DatasetRecord:
    if not isinstance(obj, dict):
        raise DataError(f"{where}: expected a JSON object")
    unknown = sorted(set(obj) - _RECORD_KEYS)
    if unknown:
        raise DataError(f"{where}: unknown keys {', '.join(unknown)}")
    for key in ("lattice", "frac_coords", "atomic_numbers"):
        if key not in obj:
            raise DataError(f"{where}: missing required key {key!r}")
    try:
        lattice = Lattice.from_matrix(np.asarray(obj["lattice"], dtype=np.float64))
        structure = CrystalStructure(
            lattice,
            np.asarray(obj["frac_coords"], dtype=np.float64),
            np.asarray(obj["atomic_numbers"]))
    except (GeometryError, ValueError, TypeError) as exc:
        raise DataError(f"{where}: {exc}") from exc
    energy = obj.get("energy_per_atom")
    if energy is not None and not isinstance(energy, (int, float)):
        raise DataError(f"{where}: energy_per_atom must be a number")
    rec_id = obj.get("id")
    if rec_id is not None and not isinstance(rec_id, str):
        raise DataError(f"{where}: id must be a string")
    return DatasetRecord(structure,
                         float(energy) if energy is not None else None, rec_id)


def read_jsonl(path) -> list[DatasetRecord]:
    """Read and strictly validate a JSONL dataset; failures name the line."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise DataError(f"cannot read dataset {path}: {exc}") from exc
    records = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
        records.append(_record_from_obj(obj, f"{path}:{lineno}"))
    if not records:
        raise DataError(f"dataset {path} is empty")
    return records


def write_jsonl(path, records) -> None:
    """Write records (DatasetRecord or CrystalStructure) as JSONL."""
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            if isinstance(rec, CrystalStructure):
                rec = DatasetRecord(rec)
            obj = {
                "lattice": rec.structure.lattice.matrix.tolist(),
                "frac_coords": rec.structure.frac_coords.tolist(),
                "atomic_numbers": rec.structure.atomic_numbers.tolist(),
            }
            if rec.energy_per_atom is not None:
                obj["energy_per_atom"] = rec.energy_per_atom
            if rec.id is not None:
                obj["id"] = rec.id
            fh.write(json.dumps(obj, sort_keys=True) + "\n")


# ----------------------------------------------------------------------
# P1 CIF reader

_CELL_TAGS = ("_cell_length_a", "_cell_length_b", "_cell_length_c",
              "_cell_angle_alpha", "_cell_angle_beta", "_cell_angle_gamma")
_SYMOP_TAGS = ("_symmetry_equiv_pos_as_xyz", "_space_group_symop_operation_xyz")
_IDENTITY_OP = re.compile(r"^\s*x\s*,\s*y\s*,\s*z\s*$", re.IGNORECASE)


def _cif_tokens(line: str) -> list[str]:
    tokens = []
    i, n = 0, len(line)
    while i < n:
        ch = line[i]
        if ch in " \t":
            i += 1
        elif ch == "#":
            break
        elif ch in "'\"":
            j = line.find(ch, i + 1)
            if j < 0:
                raise DataError(f"unterminated quote in CIF line: {line.rstrip()}")
            tokens.append(line[i + 1:j])
            i = j + 1
        else:
            j = i
            while j < n and line[j] not in " \t":
                j += 1
            tokens.append(line[i:j])
            i = j
    return tokens


def _cif_number(raw: str, what: str) -> float:
    # Strip a trailing standard-uncertainty suffix like 5.431(2).
    value = re.sub(r"\(\d+\)$", "", raw)
    try:
        return float(value)
    except ValueError:
        raise DataError(f"cannot parse CIF {what} value {raw!r}") from None


def _element_from_symbol(raw: str) -> int:
    symbol = re.match(r"[A-Za-z]{1,2}", raw)
    if not symbol:
        raise DataError(f"cannot parse element from CIF symbol {raw!r}")
    text = symbol.group(0)
    try:
        return number_for(text[0].upper() + text[1:].lower())
    except ValueError as exc:
        raise DataError(str(exc)) from exc


def read_cif_p1(path) -> CrystalStructure:
    """Read a CIF restricted to P1 (identity symmetry only).

    Requires the six cell tags and an atom-site loop with fractional
    coordinates and type symbols (falling back to labels).  A symmetry
    operation loop with anything beyond the identity raises
    ``UnsupportedSymmetryError``; richer CIF dialects are out of scope.
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise DataError(f"cannot read CIF {path}: {exc}") from exc

    scalars: dict[str, str] = {}
    loops: list[tuple[list[str], list[list[str]]]] = []
    i = 0
    while i < len(lines):
        tokens = _cif_tokens(lines[i])
        if not tokens:
            i += 1
            continue
        head = tokens[0]
        if head.lower() == "loop_":
            i += 1
            headers: list[str] = []
            while i < len(lines):
                toks = _cif_tokens(lines[i])
                if toks and toks[0].startswith("_") and len(toks) == 1:
                    headers.append(toks[0])
                    i += 1
                else:
                    break
            rows: list[list[str]] = []
            while i < len(lines):
                toks = _cif_tokens(lines[i])
                if not toks:
                    i += 1
                    continue
                if toks[0].startswith("_") or toks[0].lower() in ("loop_",) \
                        or toks[0].lower().startswith("data_"):
                    break
                rows.append(toks)
                i += 1
            loops.append((headers, rows))
        else:
            if head.startswith("_") and len(tokens) >= 2:
                scalars[head] = tokens[1]
            i += 1

    for headers, rows in loops:
        sym_cols = [h for h in headers if h in _SYMOP_TAGS]
        if sym_cols:
            col = headers.index(sym_cols[0])
            ops = [row[col] for row in rows if len(row) > col]
            non_identity = [op for op in ops if not _IDENTITY_OP.match(op)]
            if len(ops) > 1 or non_identity:
                raise UnsupportedSymmetryError(
                    f"{path}: CIF carries {len(ops)} symmetry operations; only "
                    "P1 (identity) input is supported")

    missing = [tag for tag in _CELL_TAGS if tag not in scalars]
    if missing:
        raise DataError(f"{path}: missing CIF tags: {', '.join(missing)}")
    cell = [_cif_number(scalars[tag], tag) for tag in _CELL_TAGS]

    site_loop = None
    for headers, rows in loops:
        if any(h.startswith("_atom_site_fract") for h in headers):
            site_loop = (headers, rows)
            break
    if site_loop is None:
        raise DataError(f"{path}: no atom-site loop with fractional coordinates")
    headers, rows = site_loop

    def column(name: str) -> int | None:
        return headers.index(name) if name in headers else None

    fx, fy, fz = (column(f"_atom_site_fract_{ax}") for ax in "xyz")
    if fx is None or fy is None or fz is None:
        raise DataError(f"{path}: atom-site loop lacks fractional coordinates")
    sym_col = column("_atom_site_type_symbol")
    if sym_col is None:
        sym_col = column("_atom_site_label")
    if sym_col is None:
        raise DataError(f"{path}: atom-site loop lacks type symbols and labels")

    coords, numbers = [], []
    for row in rows:
        if len(row) < len(headers):
            raise DataError(f"{path}: short atom-site row: {' '.join(row)}")
        coords.append([_cif_number(row[fx], "fract_x"),
                       _cif_number(row[fy], "fract_y"),
                       _cif_number(row[fz], "fract_z")])
        numbers.append(_element_from_symbol(row[sym_col]))
    if not coords:
        raise DataError(f"{path}: atom-site loop has no rows")

    try:
        lattice = Lattice.from_parameters(*cell)
    except GeometryError as exc:
        raise DataError(f"{path}: {exc}") from exc
    return CrystalStructure(lattice, wrap_pi(np.array(coords)),
                            np.array(numbers))


# ----------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, params: dict[str, np.ndarray], config: dict) -> None:
    """Serialize named float64 tensors plus a canonical-JSON config."""
    from .config import canonical_json

    config_bytes = canonical_json(config).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<Q", len(config_bytes)))
        fh.write(config_bytes)
        fh.write(struct.pack("<Q", len(params)))
        for name, values in params.items():
            arr = np.ascontiguousarray(values, dtype="<f8")
            name_bytes = name.encode("utf-8")
            fh.write(struct.pack("<I", len(name_bytes)))
            fh.write(name_bytes)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(arr.tobytes())


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    """Inverse of :func:`save_checkpoint`; returns (params, config)."""
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc

    view = memoryview(blob)
    offset = 0

    def take(n: int) -> memoryview:
        nonlocal offset
        if offset + n > len(view):
            raise CheckpointError(f"checkpoint {path} is truncated")
        chunk = view[offset:offset + n]
        offset += n
        return chunk

    if bytes(take(4)) != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint (bad magic bytes)")
    (version,) = struct.unpack("<I", take(4))
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path} has checkpoint format version {version}; this build "
            f"reads version {CHECKPOINT_VERSION}")
    (config_len,) = struct.unpack("<Q", take(8))
    try:
        config = json.loads(bytes(take(config_len)).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt config block: {exc}") from exc

    (count,) = struct.unpack("<Q", take(8))
    params: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<I", take(4))
        name = bytes(take(name_len)).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        dims = struct.unpack(f"<{rank}Q", take(8 * rank)) if rank else ()
        size = int(np.prod(dims, dtype=np.int64)) if dims else 1
        values = np.frombuffer(take(8 * size), dtype="<f8").reshape(dims)
        params[name] = values.copy()
    if offset != len(view):
        raise CheckpointError(f"checkpoint {path} has trailing bytes")
    return params, config
