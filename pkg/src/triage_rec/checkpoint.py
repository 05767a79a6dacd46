"""Model checkpoints: self-describing JSON that round-trips floats bit-exactly.

Floats are serialized through repr (shortest round-trip form), so loading
reproduces every float64 exactly and two identical models serialize to
identical bytes. Checkpoints carry the model payload, the training config
and the seed.
"""

from __future__ import annotations

import json

from .errors import DataError

FORMAT = "triage-rec-checkpoint-v1"


def save_checkpoint(path: str, model, train_config: dict | None = None, seed: int | None = None) -> None:
    doc = {
        "format": FORMAT,
        "model": model.to_payload(),
        "train_config": train_config or {},
        "seed": seed,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def load_checkpoint(path: str):
    """Returns (model, document). The model class comes from the payload kind."""
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != FORMAT:
        raise DataError(f"{path} is not a recognized checkpoint")
    payload = doc["model"]
    kind = payload.get("kind")
    if kind == "lr":
        from .learners import LrModel

        return LrModel.from_payload(payload), doc
    if kind == "mlp":
        from .learners import MlpModel

        return MlpModel.from_payload(payload), doc
    if kind == "joint":
        from .learners import JointModel

        return JointModel.from_payload(payload), doc
    if kind == "gbdt":
        from .gbdt import GbdtModel

        return GbdtModel.from_payload(payload), doc
    raise DataError(f"unknown model kind {kind!r} in {path}")
