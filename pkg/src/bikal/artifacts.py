"""On-disk formats: headered binaries, CSV tables, the model archive.

Every binary artifact starts with a 16-byte header (12-byte ASCII tag plus a
little-endian uint32 format version). CSV files are UTF-8 with header rows
and 17-significant-digit floats so reruns are byte-identical.
"""

from __future__ import annotations

import io
import json
import struct
import zipfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .bifidelity import BfModel, TrainingStep, gramian
from .enkf import InversionState, ObservationSet
from .grids import GridSpec, Snapshot
from .random_fields import KlBasis

FORMAT_VERSION = 1

SNAPSHOT_TAG = b"BIKALSNP"
MATRIX_TAG = b"BIKALMAT"
KLBASIS_TAG = b"BIKALKLB"
ARCHIVE_TAG = b"BIKALBFM"

# fixed zip entry timestamp so archives do not embed wall-clock state
_ZIP_DATE = (1980, 1, 1, 0, 0, 0)


class ArtifactError(RuntimeError):
    """Raised for unreadable, mistagged or version-mismatched artifact files."""


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _header(tag: bytes) -> bytes:
    if len(tag) > 12:
        raise ValueError("tag longer than 12 bytes")
    return tag.ljust(12, b"\0") + struct.pack("<I", FORMAT_VERSION)


def _check_header(blob: bytes, tag: bytes, path) -> None:
    if len(blob) < 16:
        raise ArtifactError(f"{path}: truncated header")
    found = blob[:12].rstrip(b"\0")
    if found != tag:
        raise ArtifactError(f"{path}: expected {tag.decode()} artifact, found {found!r}")
    (version,) = struct.unpack("<I", blob[12:16])
    if version != FORMAT_VERSION:
        raise ArtifactError(f"{path}: unsupported format version {version}")


# ---------------------------------------------------------------------------
# snapshots


def save_snapshot(snap: Snapshot, path) -> None:
    """Flat binary: 16-byte header, uint32 nx and ny, float64 row-major values."""
    with open(path, "wb") as fh:
        fh.write(_header(SNAPSHOT_TAG))
        fh.write(struct.pack("<II", snap.grid.nx, snap.grid.ny))
        fh.write(np.ascontiguousarray(snap.values, dtype="<f8").tobytes())


def load_snapshot(path) -> Snapshot:
    blob = Path(path).read_bytes()
    _check_header(blob, SNAPSHOT_TAG, path)
    nx, ny = struct.unpack("<II", blob[16:24])
    values = np.frombuffer(blob[24:], dtype="<f8")
    if values.size != nx * ny:
        raise ArtifactError(f"{path}: expected {nx * ny} values, found {values.size}")
    return Snapshot(values=values.copy(), grid=GridSpec(nx=nx, ny=ny))


def save_snapshot_csv(snap: Snapshot, path) -> None:
    """Grid CSV: a size comment line, then ny rows of nx comma-separated values."""
    lines = [f"# bikal-snapshot nx={snap.grid.nx} ny={snap.grid.ny}"]
    for row in snap.as_matrix():
        lines.append(",".join(_fmt(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_snapshot_csv(path) -> Snapshot:
    text = Path(path).read_text(encoding="utf-8").strip().splitlines()
    head = text[0]
    if not head.startswith("# bikal-snapshot"):
        raise ArtifactError(f"{path}: missing snapshot grid header line")
    fields = dict(part.split("=") for part in head.split()[2:])
    nx, ny = int(fields["nx"]), int(fields["ny"])
    values = np.array([[float(v) for v in line.split(",")] for line in text[1:]])
    if values.shape != (ny, nx):
        raise ArtifactError(f"{path}: grid shape {values.shape} does not match header {(ny, nx)}")
    return Snapshot(values=values.ravel(), grid=GridSpec(nx=nx, ny=ny))


def save_field_csv(snap: Snapshot, path) -> None:
    """Plot-ready long format: x, y, value with one row per cell."""
    xs = np.tile(snap.grid.cell_centers_x(), snap.grid.ny)
    ys = np.repeat(snap.grid.cell_centers_y(), snap.grid.nx)
    lines = ["x,y,value"]
    for x, y, v in zip(xs, ys, snap.values):
        lines.append(f"{_fmt(x)},{_fmt(y)},{_fmt(v)}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# dense matrices (archive members)


def _matrix_bytes(mat: np.ndarray) -> bytes:
    mat = np.atleast_2d(np.asarray(mat, dtype=float))
    out = io.BytesIO()
    out.write(_header(MATRIX_TAG))
    out.write(struct.pack("<II", mat.shape[0], mat.shape[1]))
    out.write(np.ascontiguousarray(mat, dtype="<f8").tobytes())
    return out.getvalue()


def _matrix_from_bytes(blob: bytes, path) -> np.ndarray:
    _check_header(blob, MATRIX_TAG, path)
    rows, cols = struct.unpack("<II", blob[16:24])
    data = np.frombuffer(blob[24:], dtype="<f8")
    if data.size != rows * cols:
        raise ArtifactError(f"{path}: expected {rows}x{cols} matrix, found {data.size} values")
    return data.reshape(rows, cols).copy()


# ---------------------------------------------------------------------------
# K-L basis


def save_kl_basis(basis: KlBasis, path) -> None:
    with open(path, "wb") as fh:
        fh.write(_header(KLBASIS_TAG))
        fh.write(struct.pack("<III", basis.n_points, basis.points.shape[1], basis.n_k))
        fh.write(np.ascontiguousarray(basis.points, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(basis.eigenvalues, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(basis.modes, dtype="<f8").tobytes())
        fh.write(struct.pack("<dd", basis.energy_fraction, basis.total_energy))


def load_kl_basis(path) -> KlBasis:
    blob = Path(path).read_bytes()
    _check_header(blob, KLBASIS_TAG, path)
    n_pts, pt_dim, n_k = struct.unpack("<III", blob[16:28])
    off = 28
    counts = (n_pts * pt_dim, n_k, n_k * n_pts)
    arrays = []
    for count in counts:
        arrays.append(np.frombuffer(blob[off: off + 8 * count], dtype="<f8").copy())
        off += 8 * count
    energy_fraction, total_energy = struct.unpack("<dd", blob[off: off + 16])
    return KlBasis(
        points=arrays[0].reshape(n_pts, pt_dim),
        eigenvalues=arrays[1],
        modes=arrays[2].reshape(n_k, n_pts),
        energy_fraction=energy_fraction,
        total_energy=total_energy,
    )


# ---------------------------------------------------------------------------
# training report


TRAINING_COLUMNS = "k,validation_index,max_lf_rel_dist,lf_rel_dist,hf_rel_dist,r_s,r_e,bound"


def training_report_lines(steps: list[TrainingStep]) -> list[str]:
    lines = [TRAINING_COLUMNS]
    for s in steps:
        lines.append(
            f"{s.k},{s.validation_index},{_fmt(s.max_lf_rel_dist)},{_fmt(s.lf_rel_dist)},"
            f"{_fmt(s.hf_rel_dist)},{_fmt(s.r_s)},{_fmt(s.r_e)},{_fmt(s.bound)}"
        )
    return lines


def save_training_report(steps: list[TrainingStep], path) -> None:
    Path(path).write_text("\n".join(training_report_lines(steps)) + "\n", encoding="utf-8")


def _parse_training_report(text: str) -> list[TrainingStep]:
    lines = text.strip().splitlines()
    if not lines or lines[0] != TRAINING_COLUMNS:
        raise ArtifactError("training report missing its header row")
    steps = []
    for line in lines[1:]:
        parts = line.split(",")
        steps.append(
            TrainingStep(
                k=int(parts[0]),
                validation_index=int(parts[1]),
                max_lf_rel_dist=float(parts[2]),
                lf_rel_dist=float(parts[3]),
                hf_rel_dist=float(parts[4]),
                r_s=float(parts[5]),
                r_e=float(parts[6]),
                bound=float(parts[7]),
            )
        )
    return steps


# ---------------------------------------------------------------------------
# BF model archive


def save_bf_model(model: BfModel, path) -> None:
    """Single-file archive: 16-byte header followed by a zip container.

    Members: selected parameter points (CSV), coarse/fine basis matrices
    (headered binary), the training report (CSV) and a JSON metadata record.
    """
    meta = {
        "format_version": FORMAT_VERSION,
        "n_basis": model.n_basis,
        "param_dim": int(model.selected_params.shape[1]),
        "truncated": bool(model.truncated),
        "lf_grid": [model.lf_grid.nx, model.lf_grid.ny],
        "hf_grid": [model.hf_grid.nx, model.hf_grid.ny],
        "final_bound": model.final_bound(),
    }
    param_lines = [",".join(f"z_{i}" for i in range(model.selected_params.shape[1]))]
    for row in model.selected_params:
        param_lines.append(",".join(_fmt(v) for v in row))

    buffer = io.BytesIO()
    with zipfile.ZipFile(buffer, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        def add(name: str, payload: bytes):
            info = zipfile.ZipInfo(name, date_time=_ZIP_DATE)
            info.compress_type = zipfile.ZIP_DEFLATED
            zf.writestr(info, payload)

        add("meta.json", json.dumps(meta, indent=2, sort_keys=True).encode())
        add("selected_params.csv", ("\n".join(param_lines) + "\n").encode())
        add("lf_basis.bin", _matrix_bytes(model.lf_basis))
        add("hf_basis.bin", _matrix_bytes(model.hf_basis))
        add("training_report.csv", ("\n".join(training_report_lines(model.steps)) + "\n").encode())

    with open(path, "wb") as fh:
        fh.write(_header(ARCHIVE_TAG))
        fh.write(buffer.getvalue())


def load_bf_model(path) -> BfModel:
    blob = Path(path).read_bytes()
    _check_header(blob, ARCHIVE_TAG, path)
    with zipfile.ZipFile(io.BytesIO(blob[16:])) as zf:
        meta = json.loads(zf.read("meta.json"))
        if meta.get("format_version") != FORMAT_VERSION:
            raise ArtifactError(f"{path}: unsupported archive version {meta.get('format_version')}")
        params_text = zf.read("selected_params.csv").decode().strip().splitlines()
        selected = np.array([[float(v) for v in line.split(",")] for line in params_text[1:]])
        lf_basis = _matrix_from_bytes(zf.read("lf_basis.bin"), f"{path}:lf_basis.bin")
        hf_basis = _matrix_from_bytes(zf.read("hf_basis.bin"), f"{path}:hf_basis.bin")
        steps = _parse_training_report(zf.read("training_report.csv").decode())

    if selected.shape[0] != meta["n_basis"]:
        raise ArtifactError(f"{path}: selected point count disagrees with metadata")
    return BfModel(
        selected_params=selected,
        lf_basis=lf_basis,
        hf_basis=hf_basis,
        gramian_lf=gramian(lf_basis),
        steps=steps,
        truncated=meta["truncated"],
        lf_grid=GridSpec(*meta["lf_grid"]),
        hf_grid=GridSpec(*meta["hf_grid"]),
    )


# ---------------------------------------------------------------------------
# observations and inversion histories


def save_observations(obs: ObservationSet, path) -> None:
    lines = ["index,y,noise_std"]
    for i, y, s in zip(obs.obs_indices, obs.y, obs.noise_std):
        lines.append(f"{i},{_fmt(y)},{_fmt(s)}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_observations(path) -> ObservationSet:
    text = Path(path).read_text(encoding="utf-8").strip().splitlines()
    if not text or text[0] != "index,y,noise_std":
        raise ArtifactError(f"{path}: missing observations header row")
    rows = [line.split(",") for line in text[1:]]
    return ObservationSet(
        y=np.array([float(r[1]) for r in rows]),
        obs_indices=np.array([int(r[0]) for r in rows]),
        noise_std=np.array([float(r[2]) for r in rows]),
    )


def inversion_csv_lines(state: InversionState) -> list[str]:
    d = state.param_means.shape[1]
    header = (
        "iter,misfit,e_literal,e_plain,"
        + ",".join(f"param_mean_{i + 1}" for i in range(d))
        + ","
        + ",".join(f"param_std_{i + 1}" for i in range(d))
    )
    lines = [header]
    for k in range(state.iterations):
        cells = [
            str(k + 1),
            _fmt(state.misfits[k]),
            _fmt(state.errors_literal[k]),
            _fmt(state.errors_plain[k]),
            *(_fmt(v) for v in state.param_means[k]),
            *(_fmt(v) for v in state.param_stds[k]),
        ]
        lines.append(",".join(cells))
    return lines


def save_inversion_csv(state: InversionState, path) -> None:
    Path(path).write_text("\n".join(inversion_csv_lines(state)) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# run manifest


@dataclass
class RunManifest:
    """Machine-readable record of one CLI run: config echo, artifacts, costs."""

    command: str
    config: dict
    artifacts: dict
    costs: dict
    version: str
    timestamp: str

    def save(self, path) -> None:
        payload = {
            "command": self.command,
            "version": self.version,
            "timestamp": self.timestamp,
            "config": self.config,
            "artifacts": self.artifacts,
            "costs": self.costs,
        }
        Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_manifest(path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))
