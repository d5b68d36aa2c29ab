"""Versioned key -> array checkpoint archive.

A checkpoint is a zip file with one ``<name>.npy`` member per parameter
tensor and a ``meta.json`` member::

    {"format": "ecpe-checkpoint", "version": 1,
     "model": {...ModelConfig...}, "train": {...TrainConfig...},
     "vocab": {"min_count": 1, "tokens": [...]},
     "shapes": {"W_e": [2, 200], ...}, "extra": {...}}

Parameter names are canonical and independent of the module layout:
``word_embed``, ``word_rnn.fwd.weight_ih``, ``word_rnn.bwd.bias_hh``,
``attn.proj.weight``, ``attn.ctx``, ``emo_rnn.*``, ``cause_rnn.*``,
``W_e``, ``b_e``, ``W_c``, ``b_c``, ``pos_embed``, ``W_p1``, ``b_p1``,
``W_p2``, ``b_p2`` (``W_p``/``b_p`` for a single-layer pair head).
Member timestamps are fixed so identical parameters give identical bytes.
"""

from __future__ import annotations

import io
import json
import re
import zipfile
from pathlib import Path

import numpy as np
import torch

from .corpus import Vocabulary
from .model import E2EModel, ModelConfig

FORMAT = "ecpe-checkpoint"
VERSION = 1
_EPOCH = (1980, 1, 1, 0, 0, 0)

_FIXED = {
    "word.embed.weight": "word_embed",
    "word.attn.proj.weight": "attn.proj.weight",
    "word.attn.proj.bias": "attn.proj.bias",
    "word.attn.ctx": "attn.ctx",
    "emo_head.linear.weight": "W_e",
    "emo_head.linear.bias": "b_e",
    "cause_head.linear.weight": "W_c",
    "cause_head.linear.bias": "b_c",
    "pos.weight": "pos_embed",
    "pair.hidden.weight": "W_p1",
    "pair.hidden.bias": "b_p1",
}
_RNN = {"word.rnn": "word_rnn", "emo_rnn.rnn": "emo_rnn", "cause_rnn.rnn": "cause_rnn"}
_RNN_RE = re.compile(r"^(.*)\.(weight_ih|weight_hh|bias_ih|bias_hh)_l0(_reverse)?$")


class CheckpointError(ValueError):
    pass


def canonical_name(name: str, pair_depth: int = 2) -> str:
    if name in _FIXED:
        return _FIXED[name]
    if name.startswith("pair.out."):
        suffix = "W" if name.endswith("weight") else "b"
        return f"{suffix}_p2" if pair_depth == 2 else f"{suffix}_p"
    m = _RNN_RE.match(name)
    if m and m.group(1) in _RNN:
        return f"{_RNN[m.group(1)]}.{'bwd' if m.group(3) else 'fwd'}.{m.group(2)}"
    raise CheckpointError(f"no canonical name for parameter {name!r}")


def canonical_state(model: E2EModel) -> dict[str, np.ndarray]:
    depth = model.config.pair_depth
    return {canonical_name(k, depth): v.detach().cpu().numpy() for k, v in model.state_dict().items()}


def save_checkpoint(path: str | Path, model: E2EModel, vocab: Vocabulary, train_config: dict | None = None,
                    extra: dict | None = None) -> None:
    arrays = canonical_state(model)
    meta = {
        "format": FORMAT,
        "version": VERSION,
        "model": model.config.to_json(),
        "train": train_config or {},
        "vocab": vocab.to_json(),
        "shapes": {k: list(v.shape) for k, v in sorted(arrays.items())},
        "extra": extra or {},
    }
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        zf.writestr(zipfile.ZipInfo("meta.json", _EPOCH), json.dumps(meta, indent=1, sort_keys=True))
        for name, arr in sorted(arrays.items()):
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.ascontiguousarray(arr), allow_pickle=False)
            info = zipfile.ZipInfo(f"{name}.npy", _EPOCH)
            info.compress_type = zipfile.ZIP_DEFLATED
            zf.writestr(info, buf.getvalue())


def read_checkpoint(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    if not zipfile.is_zipfile(path):
        raise CheckpointError(f"{path}: not a checkpoint archive")
    with zipfile.ZipFile(path) as zf:
        try:
            meta = json.loads(zf.read("meta.json"))
        except KeyError:
            raise CheckpointError(f"{path}: missing meta.json") from None
        if meta.get("format") != FORMAT:
            raise CheckpointError(f"{path}: not an {FORMAT} archive")
        if meta.get("version") != VERSION:
            raise CheckpointError(f"{path}: unsupported version {meta.get('version')}")
        arrays = {}
        for info in zf.infolist():
            if info.filename.endswith(".npy"):
                arrays[info.filename[:-4]] = np.lib.format.read_array(
                    io.BytesIO(zf.read(info)), allow_pickle=False)
    return meta, arrays


def load_checkpoint(path: str | Path):
    """Return (model, vocab, meta) with the model in eval mode."""
    meta, arrays = read_checkpoint(path)
    config = ModelConfig(**meta["model"])
    model = E2EModel(config)
    state = {}
    for name, tensor in model.state_dict().items():
        key = canonical_name(name, config.pair_depth)
        if key not in arrays:
            raise CheckpointError(f"{path}: missing tensor {key}")
        if list(arrays[key].shape) != list(tensor.shape):
            raise CheckpointError(f"{path}: {key} has shape {arrays[key].shape}, expected {tuple(tensor.shape)}")
        state[name] = torch.from_numpy(arrays[key])
    dtype = next(iter(state.values())).dtype
    model = model.to(dtype)
    model.load_state_dict(state)
    model.eval()
    return model, Vocabulary.from_json(meta["vocab"]), meta
