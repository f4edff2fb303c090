import os
import struct
import logging
import tempfile
from contextlib import contextmanager
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import pandas as pd
from PIL import Image

from errors import OutputError, ParseError
from kpm import DOSCurve
from sweep import DOS_FLOOR, Spectrum

logger = logging.getLogger(__name__)

BINARY_MAGIC = b"HBSPEC1\0"
HEADER = struct.Struct("<QQ")


# === Atomic output ===

@contextmanager
def staged_outputs():
    """
    Collects writes under temporary names and renames them into place only
    if the block finishes; otherwise the temporaries are removed.

        with staged_outputs() as stage:
            write_csv(spectrum, stage("run.csv"))
    """
    staged: list[tuple[str, str]] = []

    def stage(final_path) -> str:
        final_path = os.fspath(final_path)
        directory = os.path.dirname(os.path.abspath(final_path))
        os.makedirs(directory, exist_ok=True)
        fd, tmp = tempfile.mkstemp(prefix=".partial-", dir=directory)
        os.close(fd)
        staged.append((tmp, final_path))
        return tmp

    try:
        yield stage
        for tmp, final_path in staged:
            os.replace(tmp, final_path)
    except BaseException as e:
        for tmp, _ in staged:
            if os.path.exists(tmp):
                os.remove(tmp)
        if isinstance(e, OSError):
            raise OutputError(f"Cannot write outputs: {e}") from e
        raise


# === Spectrum writers ===

def spectrum_frame(spectrum: Spectrum) -> pd.DataFrame:
    n_b, n_e = spectrum.dos.shape
    return pd.DataFrame({
        "B_tesla": np.repeat(spectrum.b_values, n_e),
        "E_ev": np.tile(spectrum.energies, n_b),
        "dos": spectrum.dos.ravel(),
    })


def write_csv(spectrum: Spectrum, path):
    spectrum_frame(spectrum).to_csv(path, index=False, float_format="%.10g")
    logger.info(f"   [SUCCESS] Wrote CSV spectrum to {path}")


def write_dos_csv(curve: DOSCurve, path):
    pd.DataFrame({"E_ev": curve.energies, "dos": curve.density}).to_csv(
        path, index=False, float_format="%.10g")
    logger.info(f"   [SUCCESS] Wrote DOS curve to {path}")


def write_binary(spectrum: Spectrum, path):
    n_b, n_e = spectrum.dos.shape
    with open(path, "wb") as fh:
        fh.write(BINARY_MAGIC)
        fh.write(HEADER.pack(n_b, n_e))
        fh.write(np.ascontiguousarray(spectrum.b_values, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(spectrum.energies, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(spectrum.dos, dtype="<f8").tobytes())
    logger.info(f"   [SUCCESS] Wrote binary spectrum to {path}")


def read_binary(path) -> Spectrum:
    data = Path(path).read_bytes()
    if not data.startswith(BINARY_MAGIC):
        raise ParseError(f"{path} is not a spectrum file (bad magic).")
    offset = len(BINARY_MAGIC)
    if len(data) < offset + HEADER.size:
        raise ParseError(f"{path} is truncated.")
    n_b, n_e = HEADER.unpack_from(data, offset)
    offset += HEADER.size
    expected = offset + 8 * (n_b + n_e + n_b * n_e)
    if len(data) != expected:
        raise ParseError(f"{path} holds {len(data)} bytes, expected {expected}.")
    values = np.frombuffer(data, dtype="<f8", offset=offset).astype(float)
    return Spectrum(values[:n_b].copy(), values[n_b:n_b + n_e].copy(),
                    values[n_b + n_e:].reshape(n_b, n_e).copy())


def heatmap(spectrum: Spectrum) -> np.ndarray:
    """8-bit log-scaled image: rows are energies descending, columns fields ascending."""
    dos = np.maximum(spectrum.dos, 0.0)
    peak = float(dos.max()) if dos.size else 0.0
    if peak <= 0.0:
        return np.zeros((dos.shape[1], dos.shape[0]), dtype=np.uint8)
    level = np.log10(1.0 + dos / (DOS_FLOOR * peak))
    level /= level.max()
    return np.round(255.0 * level.T[::-1]).astype(np.uint8)


def write_pgm(spectrum: Spectrum, path):
    Image.fromarray(heatmap(spectrum)).save(path, format="PPM")
    logger.info(f"   [SUCCESS] Wrote PGM heatmap to {path}")


# === Run manifests ===

def write_manifest(path, entries: dict):
    """Plain `key = value` lines, keys sorted, plus a creation timestamp."""
    entries = dict(entries)
    entries.setdefault("created", datetime.now(timezone.utc).isoformat(timespec="seconds"))
    with open(path, "w") as fh:
        for key in sorted(entries):
            fh.write(f"{key} = {entries[key]}\n")


def read_manifest(path) -> dict[str, str]:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ParseError(f"cannot read manifest {path}: {e}")
    entries = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ParseError(f"expected 'key = value', got {line!r}", line_no)
        key, value = line.split("=", 1)
        entries[key.strip()] = value.strip()
    return entries
