"""Training and prediction over CoNLL sentences.

Training minimizes mean token-level cross-entropy of the true label's
probability, computed at each word's first subword piece only (remaining
pieces are masked from the loss). Decoding is plain argmax over the logits,
followed by BIO repair. All randomness (parameter init, batch order) derives
from the configured seed, so runs are exactly reproducible on CPU.
"""

from __future__ import annotations

import copy
import logging
import random
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import torch
import torch.nn.functional as F

from .data import DataError, Sentence, bio_labels, check_labels, micro_f1, repair_bio
from .model import RECIPES, TokenTagger
from .tokenizer import SubwordTokenizer

logger = logging.getLogger(__name__)

_OPTIMIZERS = ("adamw",)


@dataclass(frozen=True)
class TrainConfig:
    """Optimization knobs.

    ``encoder`` is either a named size recipe or the path of a previously
    saved model file to warm-start from. The optimization defaults — batch
    size 8, learning rate 3e-5, AdamW, 100 epochs — are the settings the
    package is validated with.
    """

    encoder: str = "tiny"
    batch_size: int = 8
    learning_rate: float = 3e-5
    optimizer: str = "adamw"
    epochs: int = 100
    seed: int = 0
    min_word_freq: int = 2

    def __post_init__(self):
        if self.encoder not in RECIPES and not Path(self.encoder).exists():
            raise ValueError(
                f"encoder must be one of {sorted(RECIPES)} or an existing model "
                f"file, got {self.encoder!r}"
            )
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.optimizer not in _OPTIMIZERS:
            raise ValueError(
                f"optimizer must be one of {_OPTIMIZERS}, got {self.optimizer!r}"
            )
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.min_word_freq < 1:
            raise ValueError(f"min_word_freq must be >= 1, got {self.min_word_freq}")

    def to_dict(self) -> dict:
        return {
            "encoder": self.encoder,
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "optimizer": self.optimizer,
            "epochs": self.epochs,
            "seed": self.seed,
            "min_word_freq": self.min_word_freq,
        }


@dataclass
class SpotCheck:
    """One training batch's logits, gold label ids, and the loss reported for
    it, kept so the loss can be recomputed and audited after the fact."""

    logits: torch.Tensor  # (n_supervised_tokens, n_labels), detached
    label_ids: list[int]
    loss: float


@dataclass
class ModelArtifact:
    """A trained tagger: encoder + classifier weights, the label inventory
    (index <-> label, bijective), the tokenizer, and the training trace."""

    model: TokenTagger
    tokenizer: SubwordTokenizer
    labels: list[str]
    dims: dict[str, int]
    config: dict
    epoch_losses: list[float] = field(default_factory=list)
    spot_check: SpotCheck | None = None
    dev_f1_history: list[float] = field(default_factory=list)

    def __post_init__(self):
        if len(set(self.labels)) != len(self.labels):
            raise ValueError("label list contains duplicates")

    def save(self, path: str | Path) -> None:
        payload = {
            "format_version": 1,
            "state_dict": self.model.state_dict(),
            "pieces": self.tokenizer.pieces,
            "labels": self.labels,
            "dims": self.dims,
            "config": self.config,
            "epoch_losses": self.epoch_losses,
            "dev_f1_history": self.dev_f1_history,
            "spot_check": None
            if self.spot_check is None
            else {
                "logits": self.spot_check.logits,
                "label_ids": self.spot_check.label_ids,
                "loss": self.spot_check.loss,
            },
        }
        torch.save(payload, str(path))

    @classmethod
    def load(cls, path: str | Path) -> "ModelArtifact":
        try:
            payload = torch.load(str(path), map_location="cpu", weights_only=True)
        except Exception as exc:
            reason = str(exc).strip().splitlines()[0] if str(exc).strip() else type(exc).__name__
            raise DataError(f"cannot load model file {path}: {reason}") from exc
        if not isinstance(payload, dict) or payload.get("format_version") != 1:
            raise DataError(f"model file {path} has an unrecognized format")
        dims = payload["dims"]
        model = TokenTagger(
            vocab_size=dims["vocab_size"],
            n_labels=dims["n_labels"],
            d_model=dims["d_model"],
            layers=dims["layers"],
            heads=dims["heads"],
            feedforward=dims["feedforward"],
        )
        model.load_state_dict(payload["state_dict"])
        model.eval()
        spot = payload.get("spot_check")
        return cls(
            model=model,
            tokenizer=SubwordTokenizer(payload["pieces"]),
            labels=list(payload["labels"]),
            dims=dict(dims),
            config=dict(payload["config"]),
            epoch_losses=list(payload["epoch_losses"]),
            spot_check=None
            if spot is None
            else SpotCheck(spot["logits"], list(spot["label_ids"]), float(spot["loss"])),
            dev_f1_history=list(payload["dev_f1_history"]),
        )


def _encode_corpus(
    sentences: Sequence[Sentence],
    tokenizer: SubwordTokenizer,
    labels: Sequence[str],
) -> list[tuple[torch.Tensor, list[int], list[int]]]:
    label_ids = {label: i for i, label in enumerate(labels)}
    encoded = []
    for surfaces, tags in sentences:
        ids, firsts = tokenizer.encode_sentence(surfaces)
        encoded.append(
            (torch.tensor(ids, dtype=torch.long), firsts, [label_ids[t] for t in tags])
        )
    return encoded


def _batchify(
    items: Sequence[tuple[torch.Tensor, list[int], list[int]]],
) -> tuple[torch.Tensor, torch.Tensor]:
    longest = max((len(ids) for ids, _, _ in items), default=0)
    longest = max(longest, 1)  # a batch of all-unencodable sentences still pads
    ids = torch.zeros(len(items), longest, dtype=torch.long)
    pad = torch.ones(len(items), longest, dtype=torch.bool)
    for row, (piece_ids, _, _) in enumerate(items):
        ids[row, : len(piece_ids)] = piece_ids
        pad[row, : len(piece_ids)] = False
    return ids, pad


def _gather_supervised(
    logits: torch.Tensor,
    batch: Sequence[tuple[torch.Tensor, list[int], list[int]]],
) -> tuple[torch.Tensor, torch.Tensor]:
    """Logits and gold ids at each word's first subword position."""
    rows: list[torch.Tensor] = []
    gold: list[int] = []
    for row, (_, firsts, label_ids) in enumerate(batch):
        for first, label_id in zip(firsts, label_ids):
            if first >= 0:
                rows.append(logits[row, first])
                gold.append(label_id)
    if not rows:
        return torch.empty(0, logits.shape[-1]), torch.empty(0, dtype=torch.long)
    return torch.stack(rows), torch.tensor(gold, dtype=torch.long)


def train(
    sentences: Sequence[Sentence],
    type_names: Sequence[str],
    config: TrainConfig | None = None,
    dev: Sequence[Sentence] | None = None,
) -> ModelArtifact:
    """Fit a tagger on BIO-tagged sentences.

    When ``dev`` is given, the weights restored at the end are those of the
    epoch with the best dev micro F1 (earliest on ties); otherwise training
    runs the full epoch budget and keeps the final weights.
    """
    config = config or TrainConfig()
    if not sentences:
        raise DataError("training corpus is empty")
    labels = bio_labels(type_names)
    check_labels(sentences, labels)
    if dev is not None:
        check_labels(dev, labels)

    torch.manual_seed(config.seed)
    if config.encoder in RECIPES:
        tokenizer = SubwordTokenizer.build(
            (surfaces for surfaces, _ in sentences), min_word_freq=config.min_word_freq
        )
        dims = dict(RECIPES[config.encoder])
        dims["vocab_size"] = len(tokenizer)
        dims["n_labels"] = len(labels)
        model = TokenTagger(**dims)
    else:  # warm start from a saved model: reuse its vocabulary and weights
        base = ModelArtifact.load(config.encoder)
        if base.labels != labels:
            raise DataError(
                f"warm-start model was trained for labels {base.labels}, "
                f"the schema requires {labels}"
            )
        tokenizer, dims, model = base.tokenizer, base.dims, base.model

    encoded = _encode_corpus(sentences, tokenizer, labels)
    if all(first < 0 for _, firsts, _ in encoded for first in firsts):
        raise DataError("no token in the corpus produced any subword pieces")

    model.train()
    optimizer = torch.optim.AdamW(model.parameters(), lr=config.learning_rate)
    order_rng = random.Random(config.seed)
    epoch_losses: list[float] = []
    dev_history: list[float] = []
    best_state: dict | None = None
    best_dev = -1.0
    spot_check: SpotCheck | None = None

    for epoch in range(config.epochs):
        indices = list(range(len(encoded)))
        order_rng.shuffle(indices)
        total, batches = 0.0, 0
        for start in range(0, len(indices), config.batch_size):
            batch = [encoded[i] for i in indices[start : start + config.batch_size]]
            ids, pad = _batchify(batch)
            logits = model(ids, pad)
            supervised, gold = _gather_supervised(logits, batch)
            if supervised.shape[0] == 0:
                continue
            loss = F.cross_entropy(supervised, gold)
            if epoch == config.epochs - 1 and batches == 0:
                spot_check = SpotCheck(
                    logits=supervised.detach().clone(),
                    label_ids=gold.tolist(),
                    loss=float(loss.item()),
                )
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            total += float(loss.item())
            batches += 1
        epoch_losses.append(total / batches if batches else 0.0)
        logger.info("epoch %d/%d loss %.6f", epoch + 1, config.epochs, epoch_losses[-1])

        if dev is not None:
            model.eval()
            artifact_view = ModelArtifact(model, tokenizer, labels, dims, config.to_dict())
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")  # dev-side unknown tokens
                dev_pred = predict(artifact_view, [s for s, _ in dev])
            _, _, f1 = micro_f1(list(dev), dev_pred)
            dev_history.append(f1)
            if f1 > best_dev:
                best_dev = f1
                best_state = copy.deepcopy(model.state_dict())
            model.train()

    if best_state is not None:
        model.load_state_dict(best_state)
    model.eval()
    return ModelArtifact(
        model=model,
        tokenizer=tokenizer,
        labels=labels,
        dims=dims,
        config=config.to_dict(),
        epoch_losses=epoch_losses,
        spot_check=spot_check,
        dev_f1_history=dev_history,
    )


def token_logits(
    artifact: ModelArtifact,
    sentences: Sequence[Sequence[str]],
    batch_size: int = 32,
) -> list[torch.Tensor]:
    """Per-sentence logits at each word's first subword, rows of zero-piece
    words filled with NaN (they carry no model opinion)."""
    tokenizer = artifact.tokenizer
    n_labels = len(artifact.labels)
    out: list[torch.Tensor] = []
    with torch.no_grad():
        for start in range(0, len(sentences), batch_size):
            chunk = sentences[start : start + batch_size]
            encoded = []
            for words in chunk:
                ids, firsts = tokenizer.encode_sentence(words)
                encoded.append((torch.tensor(ids, dtype=torch.long), firsts, []))
            ids, pad = _batchify(encoded)
            logits = artifact.model(ids, pad)
            for row, (words, (_, firsts, _)) in enumerate(zip(chunk, encoded)):
                rows = torch.full((len(words), n_labels), float("nan"))
                for i, first in enumerate(firsts):
                    if first >= 0:
                        rows[i] = logits[row, first]
                out.append(rows)
    return out


def predict(
    artifact: ModelArtifact,
    sentences: Sequence[Sequence[str]],
    batch_size: int = 32,
) -> list[Sentence]:
    """Tag sentences: argmax over each word's first-subword logits, then BIO
    repair. Words that produce zero subword pieces are tagged O with a
    warning. Read-only over the artifact, safe to call concurrently."""
    if not sentences:
        return []
    all_logits = token_logits(artifact, sentences, batch_size=batch_size)
    results: list[Sentence] = []
    for words, logits in zip(sentences, all_logits):
        tags: list[str] = []
        for i, word in enumerate(words):
            if torch.isnan(logits[i]).any():
                warnings.warn(
                    f"token {word!r} produced no subword pieces; tagged O",
                    stacklevel=2,
                )
                tags.append("O")
            else:
                tags.append(artifact.labels[int(torch.argmax(logits[i]))])
        results.append((list(words), repair_bio(tags)))
    return results


def compute_loss(artifact: ModelArtifact, sentences: Sequence[Sentence]) -> float:
    """Mean cross-entropy of the true label over every supervised token."""
    if not sentences:
        raise DataError("cannot compute a loss over zero sentences")
    check_labels(sentences, artifact.labels)
    encoded = _encode_corpus(sentences, artifact.tokenizer, artifact.labels)
    nll_sum, count = 0.0, 0
    with torch.no_grad():
        for start in range(0, len(encoded), 32):
            batch = encoded[start : start + 32]
            ids, pad = _batchify(batch)
            logits = artifact.model(ids, pad)
            supervised, gold = _gather_supervised(logits, batch)
            if supervised.shape[0] == 0:
                continue
            nll_sum += float(
                F.cross_entropy(supervised, gold, reduction="sum").item()
            )
            count += supervised.shape[0]
    if count == 0:
        raise DataError("no token in the corpus produced any subword pieces")
    return nll_sum / count
