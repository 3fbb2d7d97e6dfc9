"""Byte-level tokenizer, language-aware prompts, the causal decoder, loss, and greedy decoding."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

from .corpus import LanguageTag
from .nn.layers import AttentionBlock, LayerConfig, causal_mask, check_finite, sinusoidal_positions
from .projector import ProjectedSpeech

PAD, BOS, EOS = 256, 257, 258
VOCAB_SIZE = 259
PROMPT_TEMPLATE = "Please transcribe the following audio in {lang}:"
IGNORE = -100


def tokenize(text: str) -> list[int]:
    return list(text.encode("utf-8"))


def detokenize(tokens: Sequence[int]) -> str:
    return bytes(t for t in tokens if 0 <= t < 256).decode("utf-8", errors="replace")


@dataclass(frozen=True)
class PromptBundle:
    language: LanguageTag
    prompt_text: str
    prompt_tokens: tuple[int, ...]


def make_prompt(language: LanguageTag | str) -> PromptBundle:
    if isinstance(language, str):
        language = LanguageTag(language)
    text = PROMPT_TEMPLATE.format(lang=language.display_name)
    return PromptBundle(language, text, tuple(tokenize(text)))


class Decoder(nn.Module):
    """Causal transformer over input embeddings with a separate output projection."""

    def __init__(self, cfg: LayerConfig, embed_std: float = 1.0, qk_gain: float | None = None):
        super().__init__()
        self.cfg = cfg
        self.embed = nn.Embedding(VOCAB_SIZE, cfg.d_model)
        nn.init.normal_(self.embed.weight, std=embed_std)
        self.blocks = nn.ModuleList(AttentionBlock(cfg.d_model, cfg.n_heads, cfg.d_ff) for _ in range(cfg.n_layers))
        if qk_gain is not None:
            # Sharper-than-default attention for a frozen stand-in of a pretrained model.
            with torch.no_grad():
                for block in self.blocks:
                    for lin in (block.attn.wq, block.attn.wk):
                        lin.weight.normal_(0.0, qk_gain / cfg.d_model**0.5)
        self.ln = nn.LayerNorm(cfg.d_model)
        self.head = nn.Linear(cfg.d_model, VOCAB_SIZE)
        with torch.no_grad():
            self.head.bias.zero_()

    def embed_tokens(self, tokens: Sequence[int] | torch.Tensor) -> torch.Tensor:
        ids = torch.as_tensor(tokens, dtype=torch.long).reshape(-1)
        if ids.numel() and (ids.min() < 0 or ids.max() >= VOCAB_SIZE):
            raise ValueError(f"token id out of range [0, {VOCAB_SIZE})")
        return self.embed(ids)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """(B, L, d) input embeddings -> (B, L, vocab) logits. Positions span the whole sequence."""
        length = x.shape[1]
        h = x + sinusoidal_positions(length, self.cfg.d_model, x.dtype)
        mask = causal_mask(length)
        for block in self.blocks:
            h = block(h, mask)
        logits = self.head(self.ln(h))
        return check_finite(logits, "decoder logits")


@dataclass
class LlmInput:
    embeddings: torch.Tensor  # (L_p + T' + L_t, d)
    prompt_len: int
    speech_len: int
    text_len: int
    text_tokens: list[int] = field(default_factory=list)

    @property
    def boundaries(self) -> tuple[int, int, int]:
        return self.prompt_len, self.speech_len, self.text_len

    def __len__(self) -> int:
        return self.prompt_len + self.speech_len + self.text_len


def assemble_input(
    decoder: Decoder,
    prompt: PromptBundle,
    speech: ProjectedSpeech | torch.Tensor,
    target_tokens: Sequence[int] | None = None,
) -> LlmInput:
    """Concatenate prompt, speech and text rows. The text segment is BOS (+ targets when training)."""
    s = speech.embeddings if isinstance(speech, ProjectedSpeech) else speech
    if s.shape[0] == 0:
        raise ValueError("speech segment is empty")
    text = [BOS] + list(target_tokens or [])
    rows = torch.cat([decoder.embed_tokens(prompt.prompt_tokens), s, decoder.embed_tokens(text)])
    return LlmInput(rows, len(prompt.prompt_tokens), s.shape[0], len(text), text)


def supervision_targets(inp: LlmInput, target_tokens: Sequence[int]) -> torch.Tensor:
    """Next-token labels: text positions predict the following byte, the last one predicts EOS."""
    if len(target_tokens) == 0:
        raise ValueError("empty target transcription")
    labels = torch.full((len(inp),), IGNORE, dtype=torch.long)
    start = inp.prompt_len + inp.speech_len
    labels[start : start + len(target_tokens) + 1] = torch.tensor(list(target_tokens) + [EOS])
    return labels


def masked_cross_entropy(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Mean cross-entropy over positions whose label is not ``IGNORE``."""
    return F.cross_entropy(logits.reshape(-1, logits.shape[-1]), labels.reshape(-1), ignore_index=IGNORE)


def pad_inputs(inputs: Sequence[LlmInput]) -> torch.Tensor:
    """Right-pad to a common length. Causal masking keeps real positions blind to the padding."""
    length = max(len(i) for i in inputs)
    return torch.stack([F.pad(i.embeddings, (0, 0, 0, length - len(i))) for i in inputs])


def lm_loss_batch(decoder: Decoder, inputs: Sequence[LlmInput], targets: Sequence[Sequence[int]]) -> torch.Tensor:
    length = max(len(i) for i in inputs)
    labels = torch.stack(
        [F.pad(supervision_targets(i, t), (0, length - len(i)), value=IGNORE) for i, t in zip(inputs, targets)]
    )
    return masked_cross_entropy(decoder(pad_inputs(inputs)), labels)


def lm_loss(decoder: Decoder, inp: LlmInput, target_tokens: Sequence[int]) -> torch.Tensor:
    return lm_loss_batch(decoder, [inp], [target_tokens])


@dataclass
class DecodeResult:
    tokens: list[int]
    truncated: bool

    @property
    def text(self) -> str:
        return detokenize(self.tokens)


@torch.no_grad()
def greedy_decode(decoder: Decoder, prompt: PromptBundle, speech: ProjectedSpeech | torch.Tensor, max_len: int) -> DecodeResult:
    """Argmax continuation after (prompt, speech, BOS) until EOS or ``max_len`` tokens.

    Recomputes the full prefix each step; ties go to the lowest token id.
    """
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    prefix = assemble_input(decoder, prompt, speech).embeddings
    out: list[int] = []
    while len(out) < max_len:
        logits = decoder(prefix[None])[0, -1]
        nxt = int(torch.nonzero(logits == logits.max())[0, 0])
        if nxt == EOS:
            return DecodeResult(out, False)
        out.append(nxt)
        prefix = torch.cat([prefix, decoder.embed_tokens([nxt])])
    return DecodeResult(out, True)


def normalize_repetitions(text: str, max_ngram: int = 8, min_repeats: int = 3) -> str:
    """Collapse runs of >= ``min_repeats`` identical word n-grams to a single copy.

    Longer n-grams are tried first and the pass repeats until nothing changes. Text
    without such runs comes back untouched (whitespace included).
    """
    words = text.split()
    changed = False
    while True:
        collapsed = _collapse_once(words, max_ngram, min_repeats)
        if collapsed == words:
            break
        words, changed = collapsed, True
    return " ".join(words) if changed else text


def _collapse_once(words: list[str], max_ngram: int, min_repeats: int) -> list[str]:
    for n in range(max_ngram, 0, -1):
        out: list[str] = []
        i = 0
        while i < len(words):
            gram = words[i : i + n]
            k = 1
            while len(gram) == n and words[i + k * n : i + (k + 1) * n] == gram:
                k += 1
            if len(gram) == n and k >= min_repeats:
                out.extend(gram)
                i += k * n
            else:
                out.append(words[i])
                i += 1
        words = out
    return words
