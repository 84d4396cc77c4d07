"""Named-array checkpoint container.

Layout: one magic line, one JSON header line (array names/shapes in order,
config echo, full vocabularies and their hashes), then the raw little-endian
float64 array data concatenated in header order. Everything is deterministic,
so identical runs produce byte-identical files.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from . import __version__
from .corpus import Vocab, VocabSet
from .errors import CheckpointError
from .neural import LstmParams
from .nlu import NluParams
from .optim import named_arrays
from .sap import SapParams
from .training import JointParams, TrainConfig

MAGIC = b"DIALACT-CKPT 1\n"


def save_checkpoint(path, params: JointParams, cfg: TrainConfig, vocabs: VocabSet) -> None:
    pairs = named_arrays(params)
    header = {
        "format": "dialact-checkpoint",
        "version": 1,
        "tool_version": __version__,
        "arrays": [{"name": n, "shape": list(a.shape)} for n, a in pairs],
        "config": asdict(cfg),
        "vocab": {
            "words": vocabs.words.id_to_token,
            "tags": vocabs.tags.id_to_token,
            "intents": vocabs.intents.id_to_token,
            "actions": vocabs.actions.id_to_token,
        },
        "vocab_hashes": vocabs.digests(),
    }
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8"))
        fh.write(b"\n")
        for _, a in pairs:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


@dataclass
class LoadedCheckpoint:
    params: JointParams
    config: dict
    vocabs: VocabSet
    header: dict


def load_checkpoint(path) -> LoadedCheckpoint:
    with open(path, "rb") as fh:
        magic = fh.readline()
        if magic != MAGIC:
            raise CheckpointError(f"{path}: not a dialact checkpoint")
        try:
            header = json.loads(fh.readline().decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"{path}: corrupt header") from exc
        blob = fh.read()
    flat: dict[str, np.ndarray] = {}
    offset = 0
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        end = offset + 8 * count
        if end > len(blob):
            raise CheckpointError(f"{path}: truncated array data at {entry['name']}")
        flat[entry["name"]] = np.frombuffer(blob[offset:end], dtype="<f8").reshape(shape).copy()
        offset = end
    if offset != len(blob):
        raise CheckpointError(f"{path}: trailing bytes after array data")
    vocabs = VocabSet(
        words=Vocab.from_tokens(header["vocab"]["words"]),
        tags=Vocab.from_tokens(header["vocab"]["tags"]),
        intents=Vocab.from_tokens(header["vocab"]["intents"]),
        actions=Vocab.from_tokens(header["vocab"]["actions"]),
    )
    if vocabs.digests() != header["vocab_hashes"]:
        raise CheckpointError(f"{path}: vocab hashes do not match embedded vocabularies")
    return LoadedCheckpoint(
        params=_params_from_flat(flat),
        config=header["config"],
        vocabs=vocabs,
        header=header,
    )


def check_vocab_compatibility(loaded: LoadedCheckpoint, vocabs: VocabSet) -> None:
    """Refuse to pair a checkpoint with data whose train vocabularies differ."""
    if vocabs.digests() != loaded.header["vocab_hashes"]:
        raise CheckpointError(
            "vocab hash mismatch: checkpoint was trained on a different train split"
        )


def _params_from_flat(flat: dict[str, np.ndarray]) -> JointParams:
    def lstm(prefix: str) -> LstmParams:
        return LstmParams(
            w_x=flat[f"{prefix}.w_x"], u_h=flat[f"{prefix}.u_h"], b=flat[f"{prefix}.b"]
        )

    try:
        nlu = None
        if "nlu.embedding" in flat:
            nlu = NluParams(
                embedding=flat["nlu.embedding"],
                trunk_fwd=lstm("nlu.trunk_fwd"),
                trunk_bwd=lstm("nlu.trunk_bwd"),
                w_tag_fwd=flat["nlu.w_tag_fwd"],
                w_tag_bwd=flat["nlu.w_tag_bwd"],
                b_tag=flat["nlu.b_tag"],
                intent_lstm=lstm("nlu.intent_lstm"),
                w_int=flat["nlu.w_int"],
                b_int=flat["nlu.b_int"],
                feature_lstm=lstm("nlu.feature_lstm"),
            )
        sap = SapParams(
            fwd=lstm("sap.fwd"),
            bwd=lstm("sap.bwd"),
            w_act_fwd=flat["sap.w_act_fwd"],
            w_act_bwd=flat["sap.w_act_bwd"],
            b_act=flat["sap.b_act"],
        )
    except KeyError as exc:
        raise CheckpointError(f"checkpoint is missing array {exc.args[0]!r}") from exc
    return JointParams(nlu=nlu, sap=sap)
