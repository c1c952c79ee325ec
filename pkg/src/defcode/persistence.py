"""Versioned binary model container.

Layout::

    8 bytes   magic b"DEFMODEL"
    4 bytes   format version, little-endian uint32
    8 bytes   header length N, little-endian uint64
    N bytes   UTF-8 JSON header (configs, metadata, array directory)
    ...       raw little-endian float64 array data, in directory order
    32 bytes  SHA-256 of everything above

Arrays are stored as raw IEEE-754 bytes, so weights round-trip bit-exactly.
The trailing digest doubles as the model fingerprint quoted in reports.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import cells
from .codec import DefCodec
from .config import code_config_from_dict, to_dict
from .decoder import DecoderModel, StateNormStats
from .encoder import CalibStats, EncoderModel
from .errors import ModelFileError

MAGIC = b"DEFMODEL"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<8sIQ")


@dataclass
class ModelFile:
    codec: DefCodec
    metadata: dict = field(default_factory=dict)
    version: int = FORMAT_VERSION
    digest: str = ""


def _arrays(codec: DefCodec) -> dict[str, np.ndarray]:
    arrays = dict(codec.parameters())
    if codec.encoder.calib is not None:
        arrays["calib.enc.mean"] = codec.encoder.calib.mean
        arrays["calib.enc.var"] = codec.encoder.calib.var
    if codec.decoder.state_norm is not None:
        arrays["calib.dec.mean"] = codec.decoder.state_norm.mean
        arrays["calib.dec.var"] = codec.decoder.state_norm.var
    return arrays


def serialize(mf: ModelFile) -> bytes:
    codec = mf.codec
    arrays = _arrays(codec)
    directory, blobs, offset = [], [], 0
    for name in sorted(arrays):
        data = np.ascontiguousarray(arrays[name], dtype="<f8")
        raw = data.tobytes()
        directory.append({"name": name, "shape": list(data.shape), "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = {
        "code_config": to_dict(codec.cfg),
        "encoder": {"kind": codec.encoder.kind},
        "decoder": {"kind": codec.decoder.kind, "layers": len(codec.decoder.layers)},
        "calib": {
            "encoder_count": None if codec.encoder.calib is None else codec.encoder.calib.count,
            "encoder_degenerate": None if codec.encoder.calib is None else codec.encoder.calib.degenerate,
            "decoder_count": None if codec.decoder.state_norm is None else codec.decoder.state_norm.count,
        },
        "metadata": mf.metadata,
        "arrays": directory,
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    body = _PREFIX.pack(MAGIC, FORMAT_VERSION, len(hbytes)) + hbytes + b"".join(blobs)
    return body + hashlib.sha256(body).digest()


def digest_of(payload: bytes) -> str:
    return payload[-32:].hex()


def save_model(path, mf: ModelFile) -> str:
    """Write ``mf`` to ``path`` atomically; returns the fingerprint."""
    payload = serialize(mf)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(payload)
    tmp.replace(path)
    mf.digest = digest_of(payload)
    return mf.digest


def deserialize(payload: bytes) -> ModelFile:
    if len(payload) < _PREFIX.size + 32:
        raise ModelFileError("model file is truncated")
    magic, version, hlen = _PREFIX.unpack_from(payload)
    if magic != MAGIC:
        raise ModelFileError("not a model file (bad magic header)")
    if version != FORMAT_VERSION:
        raise ModelFileError(f"unsupported model format version {version} (expected {FORMAT_VERSION})")
    body, trailer = payload[:-32], payload[-32:]
    if hashlib.sha256(body).digest() != trailer:
        raise ModelFileError("model file is corrupt or truncated (checksum mismatch)")
    start = _PREFIX.size
    try:
        header = json.loads(body[start:start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFileError(f"unreadable model header: {exc}") from exc
    data = body[start + hlen:]
    arrays = {}
    for entry in header["arrays"]:
        lo, n = entry["offset"], entry["nbytes"]
        if lo + n > len(data):
            raise ModelFileError(f"array {entry['name']!r} extends past the end of the file")
        arrays[entry["name"]] = np.frombuffer(data[lo:lo + n], dtype="<f8").reshape(entry["shape"]).astype(np.float64)

    cfg = code_config_from_dict(header["code_config"])
    enc_kind = header["encoder"]["kind"]
    dec_kind = header["decoder"]["kind"]
    enc_params = {k[4:]: v for k, v in arrays.items() if k.startswith("enc.")}
    enc = EncoderModel(enc_kind, {k[5:]: v for k, v in enc_params.items() if k.startswith("cell.")},
                       enc_params["A"], enc_params["c"], enc_params["w"], enc_params["a"])
    shell_layers = [(cells.zero_cell(dec_kind, 1, 1), cells.zero_cell(dec_kind, 1, 1))
                    for _ in range(header["decoder"]["layers"])]
    dec = DecoderModel(dec_kind, shell_layers, np.zeros((1, 2)), np.zeros(1)).with_parameters(
        {k[4:]: v for k, v in arrays.items() if k.startswith("dec.")})
    calib = header["calib"]
    if "calib.enc.mean" in arrays:
        enc.calib = CalibStats(arrays["calib.enc.mean"], arrays["calib.enc.var"],
                               calib["encoder_count"], list(calib["encoder_degenerate"] or []))
    if "calib.dec.mean" in arrays:
        dec.state_norm = StateNormStats(arrays["calib.dec.mean"], arrays["calib.dec.var"], calib["decoder_count"])
    return ModelFile(DefCodec(cfg, enc, dec), header["metadata"], version, digest_of(payload))


def load_model(path) -> ModelFile:
    try:
        payload = Path(path).read_bytes()
    except OSError as exc:
        raise ModelFileError(f"cannot read model file {path}: {exc}") from exc
    return deserialize(payload)
