"""Token tagging model: subword embeddings -> transformer encoder -> logits.

The classifier head starts at exactly zero (weights and bias), so an
untrained model emits all-zero logits and argmax decoding falls back to
label 0 ("O"). Starting the head at zero also makes small-learning-rate
fine-tuning effective: early optimizer steps push each class row toward its
class's mean hidden state, and argmax decisions depend only on the
directions, not the scale, of the accumulated updates.

Dropout is disabled throughout: this is a reference trainer whose runs must
be exactly reproducible, and the corpora it targets are small enough that
regularization is not the binding concern.
"""

from __future__ import annotations

import math

import torch
import torch.nn as nn

#: Named encoder sizes. Width matters: with zero-initialized heads and small
#: learning rates, attainable logit margins grow with the hidden dimension.
RECIPES: dict[str, dict[str, int]] = {
    "tiny": {"d_model": 256, "layers": 2, "heads": 4, "feedforward": 512},
    "small": {"d_model": 384, "layers": 4, "heads": 6, "feedforward": 768},
}


def sinusoidal_positions(length: int, d_model: int) -> torch.Tensor:
    """Classic fixed sine/cosine position encoding, shape (length, d_model)."""
    positions = torch.arange(length, dtype=torch.float32).unsqueeze(1)
    div = torch.exp(
        torch.arange(0, d_model, 2, dtype=torch.float32)
        * (-math.log(10000.0) / d_model)
    )
    table = torch.zeros(length, d_model)
    table[:, 0::2] = torch.sin(positions * div)
    table[:, 1::2] = torch.cos(positions * div)
    return table


class TokenTagger(nn.Module):
    def __init__(
        self,
        vocab_size: int,
        n_labels: int,
        d_model: int,
        layers: int,
        heads: int,
        feedforward: int,
    ):
        super().__init__()
        if vocab_size < 2 or n_labels < 1:
            raise ValueError("vocab_size must be >= 2 and n_labels >= 1")
        self.d_model = d_model
        self.embeddings = nn.Embedding(vocab_size, d_model, padding_idx=0)
        layer = nn.TransformerEncoderLayer(
            d_model, heads, feedforward, dropout=0.0, batch_first=True
        )
        self.encoder = nn.TransformerEncoder(layer, layers, enable_nested_tensor=False)
        self.classifier = nn.Linear(d_model, n_labels)
        nn.init.zeros_(self.classifier.weight)
        nn.init.zeros_(self.classifier.bias)

    @classmethod
    def from_recipe(cls, recipe: str, vocab_size: int, n_labels: int) -> "TokenTagger":
        if recipe not in RECIPES:
            raise ValueError(
                f"unknown encoder recipe {recipe!r}; expected one of {sorted(RECIPES)}"
            )
        return cls(vocab_size, n_labels, **RECIPES[recipe])

    def forward(self, piece_ids: torch.Tensor, pad_mask: torch.Tensor) -> torch.Tensor:
        """Logits of shape (batch, pieces, labels).

        ``pad_mask`` is True at padding positions, matching the encoder's
        ``src_key_padding_mask`` convention.
        """
        x = self.embeddings(piece_ids) * math.sqrt(self.d_model)
        x = x + sinusoidal_positions(piece_ids.shape[1], self.d_model).to(x.dtype)
        hidden = self.encoder(x, src_key_padding_mask=pad_mask)
        return self.classifier(hidden)
