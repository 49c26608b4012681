"""Read/write compressed blobs, checkpoints and line-delimited json records."""

import os
import bz2
import json
import typing as ty

import numpy as np
import zstd

import qstab

export, __all__ = qstab.exporter()
__all__.extend(["COMPRESSORS", "CHECKPOINT_FORMAT_VERSION"])

COMPRESSORS = dict(
    bz2=dict(compress=bz2.compress, decompress=bz2.decompress),
    zstd=dict(compress=zstd.compress, decompress=zstd.decompress),
)

# Bump when the checkpoint layout changes in a way old readers cannot handle
CHECKPOINT_FORMAT_VERSION = 1


@export
class DataCorrupted(Exception):
    pass


@export
class IncompatibleCheckpoint(Exception):
    pass


@export
def load_file(f, compressor="zstd") -> bytes:
    """Read and return decompressed bytes from file.

    :param f: file name or handle to read from
    :param compressor: compressor to use for decompressing.

    """
    if isinstance(f, (str, os.PathLike)):
        with open(f, mode="rb") as read_file:
            return _load_file(read_file, compressor)
    else:
        return _load_file(f, compressor)


def _load_file(f, compressor):
    try:
        data = f.read()
        if not len(data):
            return b""
        return COMPRESSORS[compressor]["decompress"](data)
    except Exception:
        raise DataCorrupted(
            f"Fatal Error while reading file {f}: " + qstab.utils.formatted_exception()
        )


@export
def save_file(f, data, compressor="zstd"):
    """Save data to file and return number of bytes written.

    :param f: file name or handle to save to
    :param data: bytes (or a numpy array, saved as its raw buffer) to save
    :param compressor: compressor to use

    """
    if isinstance(f, (str, os.PathLike)):
        final_fn = str(f)
        temp_fn = final_fn + "_temp"
        with open(temp_fn, mode="wb") as write_file:
            result = _save_file(write_file, data, compressor)
        os.replace(temp_fn, final_fn)
        return result
    else:
        return _save_file(f, data, compressor)


def _save_file(f, data, compressor="zstd"):
    if isinstance(data, np.ndarray):
        data = data.tobytes()
    assert isinstance(data, bytes), "Please pass bytes or a numpy array"
    d_comp = COMPRESSORS[compressor]["compress"](data)
    f.write(d_comp)
    return len(d_comp)


@export
def write_jsonl(path, records: ty.Iterable[ty.Mapping], mode="w"):
    """Write records as line-delimited json, return the number of records written."""
    n = 0
    with open(path, mode=mode) as f:
        for record in records:
            f.write(json.dumps(record, cls=qstab.NumpyJSONEncoder) + "\n")
            n += 1
    return n


@export
def read_jsonl(path) -> ty.List[dict]:
    with open(path) as f:
        return [json.loads(line) for line in f if line.strip()]


@export
def save_checkpoint(path, document: dict, compressor="zstd"):
    """Save a checkpoint document (json-able dict) as a compressed blob.

    The format and package version are stamped into the document.

    """
    document = dict(document)
    document["format_version"] = CHECKPOINT_FORMAT_VERSION
    document["qstab_version"] = qstab.__version__
    payload = json.dumps(document, cls=qstab.NumpyJSONEncoder).encode("utf-8")
    return save_file(path, payload, compressor=compressor)


@export
def load_checkpoint(path, compressor="zstd") -> dict:
    """Load a checkpoint document saved by save_checkpoint."""
    try:
        document = json.loads(load_file(path, compressor=compressor).decode("utf-8"))
    except (DataCorrupted, UnicodeDecodeError, json.JSONDecodeError) as e:
        raise IncompatibleCheckpoint(f"{path} is not a readable checkpoint: {e}") from e
    if not isinstance(document, dict):
        raise IncompatibleCheckpoint(f"{path} does not hold a checkpoint document")
    version = document.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise IncompatibleCheckpoint(
            f"{path} has checkpoint format {version}, "
            f"this qstab reads format {CHECKPOINT_FORMAT_VERSION}"
        )
    return document


@export
def matrix_to_json(a) -> dict:
    """Complex matrix as {"real": [[...]], "imag": [[...]]}."""
    a = np.asarray(a)
    return dict(real=np.real(a).tolist(), imag=np.imag(a).tolist())


@export
def matrix_from_json(doc) -> np.ndarray:
    """Inverse of matrix_to_json; plain nested lists are read as real matrices."""
    if isinstance(doc, ty.Mapping):
        return np.asarray(doc["real"], dtype=np.float64) + 1j * np.asarray(
            doc.get("imag", np.zeros_like(doc["real"])), dtype=np.float64
        )
    return np.asarray(doc, dtype=np.complex128)
