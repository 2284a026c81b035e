"""Word-level contextual embeddings and the convolutional utterance encoder."""

from __future__ import annotations

import re
import zlib
from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn

from .errors import ShapeError

PAD, UNK, CLS, SEP, MASK = range(5)
N_SPECIAL = 5

_WORDPIECE_RE = re.compile(
    r"\[(?:URL|EMAIL|HTML|CODE|VERSION)\]"
    r"|:[a-z0-9_+\-&]+:"
    r"|[^\W_]+(?:['’\-.][^\W_]+)*"
    r"|[^\w\s]"
)


@dataclass
class EncoderConfig:
    """Contextual encoder settings.

    ``name_or_path`` points at a local pretrained BERT directory; when unset a
    randomly initialised BERT of the given shape is built from ``seed`` with a
    hashing tokenizer.
    """

    name_or_path: str | None = None
    vocab_size: int = 8192
    hidden_size: int = 768
    num_layers: int = 12
    num_heads: int = 12
    intermediate_size: int = 768
    max_tokens: int = 200
    seed: int = 0


class HashingTokenizer:
    """Word tokenizer mapping each token to a CRC32 bucket."""

    def __init__(self, vocab_size: int = 8192, max_tokens: int = 200):
        self.vocab_size = vocab_size
        self.max_tokens = max_tokens

    def words(self, text: str) -> list[str]:
        return [t if t.startswith("[") else t.lower() for t in _WORDPIECE_RE.findall(text)]

    def ids(self, text: str) -> list[int]:
        words = self.words(text)[: self.max_tokens]
        return [N_SPECIAL + zlib.crc32(w.encode("utf-8")) % (self.vocab_size - N_SPECIAL) for w in words]

    def batch(self, texts):
        """``(input_ids, attention_mask, n_words)`` with [CLS] ... [SEP] framing."""
        rows = [self.ids(t) for t in texts]
        width = max((len(r) for r in rows), default=0) + 2
        ids = torch.full((len(rows), width), PAD, dtype=torch.long)
        mask = torch.zeros((len(rows), width), dtype=torch.long)
        for b, r in enumerate(rows):
            seq = [CLS] + r + [SEP]
            ids[b, : len(seq)] = torch.tensor(seq)
            mask[b, : len(seq)] = 1
        return ids, mask, [len(r) for r in rows]


class _PretrainedTokenizer:
    def __init__(self, path, max_tokens):
        from transformers import AutoTokenizer

        self.tok = AutoTokenizer.from_pretrained(path)
        self.max_tokens = max_tokens

    def batch(self, texts):
        enc = self.tok(list(texts), padding=True, truncation=True,
                       max_length=self.max_tokens + 2, return_tensors="pt")
        n_words = (enc["attention_mask"].sum(dim=1) - 2).tolist()
        return enc["input_ids"], enc["attention_mask"], n_words


class ContextualEncoder(nn.Module):
    """A 12-layer BERT-style encoder with its tokenizer."""

    def __init__(self, cfg: EncoderConfig | None = None):
        super().__init__()
        from transformers import AutoModel, BertConfig, BertModel

        self.cfg = cfg or EncoderConfig()
        if self.cfg.name_or_path:
            self.bert = AutoModel.from_pretrained(self.cfg.name_or_path, add_pooling_layer=False)
            self.tokenizer = _PretrainedTokenizer(self.cfg.name_or_path, self.cfg.max_tokens)
        else:
            bert_cfg = BertConfig(
                vocab_size=self.cfg.vocab_size,
                hidden_size=self.cfg.hidden_size,
                num_hidden_layers=self.cfg.num_layers,
                num_attention_heads=self.cfg.num_heads,
                intermediate_size=self.cfg.intermediate_size,
                max_position_embeddings=self.cfg.max_tokens + 8,
            )
            with torch.random.fork_rng():
                torch.manual_seed(self.cfg.seed)
                self.bert = BertModel(bert_cfg, add_pooling_layer=False)
            self.tokenizer = HashingTokenizer(self.cfg.vocab_size, self.cfg.max_tokens)
        self.hidden_size = self.bert.config.hidden_size

    @property
    def layers(self):
        return self.bert.encoder.layer

    def forward(self, input_ids, attention_mask):
        return self.bert(input_ids=input_ids, attention_mask=attention_mask).last_hidden_state

    def embed_words_batch(self, texts, batch_size: int = 32) -> list[torch.Tensor]:
        """Last-layer token vectors per text, [CLS]/[SEP] dropped.

        Empty texts yield a single zero row.
        """
        was_training = self.training
        self.eval()
        out = []
        with torch.no_grad():
            for start in range(0, len(texts), batch_size):
                chunk = texts[start:start + batch_size]
                ids, mask, n_words = self.tokenizer.batch(chunk)
                hidden = self(ids, mask)
                for b, n in enumerate(n_words):
                    if n <= 0:
                        out.append(torch.zeros(1, self.hidden_size))
                    else:
                        out.append(hidden[b, 1:1 + n].clone())
        self.train(was_training)
        return out

    def embed_words(self, text: str) -> torch.Tensor:
        return self.embed_words_batch([text])[0]


def embed_words(utterance, encoder: ContextualEncoder) -> np.ndarray:
    """``L x hidden`` contextual word embeddings of an utterance's normalized text."""
    return encoder.embed_words(utterance.text).numpy()


class TextCNN(nn.Module):
    """Convolutions of several widths, max-pool over time, ReLU, concat, dense.

    Inputs shorter than the widest kernel are zero padded up to it; positions
    beyond a row's padded length are masked out of the max-pool so batched and
    single-row results agree.
    """

    def __init__(self, in_dim: int = 768, kernel_sizes=(2, 3, 4, 5), n_maps: int = 100, out_dim: int = 100):
        super().__init__()
        self.in_dim = in_dim
        self.kernel_sizes = tuple(kernel_sizes)
        self.convs = nn.ModuleList(nn.Conv1d(in_dim, n_maps, k) for k in self.kernel_sizes)
        self.dense = nn.Linear(n_maps * len(self.kernel_sizes), out_dim)

    def pooled(self, x: torch.Tensor, lengths=None) -> torch.Tensor:
        """Post-pool, pre-dense features ``[B, n_maps * n_kernels]`` (all >= 0)."""
        if x.dim() != 3 or x.shape[-1] != self.in_dim:
            raise ShapeError(f"expected [batch, length, {self.in_dim}] input, got {tuple(x.shape)}")
        B, L, _ = x.shape
        kmax = max(self.kernel_sizes)
        if lengths is None:
            lengths = torch.full((B,), L, dtype=torch.long)
        lengths = torch.as_tensor(lengths, dtype=torch.long).clamp(min=kmax)
        if L < kmax:
            x = torch.cat([x, x.new_zeros(B, kmax - L, self.in_dim)], dim=1)
        xt = x.transpose(1, 2)
        feats = []
        for k, conv in zip(self.kernel_sizes, self.convs):
            y = conv(xt)
            pos = torch.arange(y.shape[-1])
            valid = pos.unsqueeze(0) <= (lengths - k).unsqueeze(1)
            y = y.masked_fill(~valid.unsqueeze(1), float("-inf"))
            feats.append(torch.relu(y.max(dim=-1).values))
        return torch.cat(feats, dim=-1)

    def forward(self, x: torch.Tensor, lengths=None) -> torch.Tensor:
        return self.dense(self.pooled(x, lengths))


def pad_sequences(seqs, min_len: int = 1):
    """Stack ``[L_i, D]`` tensors into ``[B, max L, D]`` plus lengths."""
    lengths = torch.tensor([s.shape[0] for s in seqs], dtype=torch.long)
    width = max(int(lengths.max()) if len(seqs) else 0, min_len)
    dim = seqs[0].shape[1]
    out = seqs[0].new_zeros(len(seqs), width, dim)
    for b, s in enumerate(seqs):
        out[b, : s.shape[0]] = s
    return out, lengths


def encode_utterance(seq, cnn: TextCNN) -> torch.Tensor:
    """100-d utterance vector from one ``L x 768`` word-embedding matrix."""
    seq = torch.as_tensor(seq, dtype=next(cnn.parameters()).dtype)
    if seq.dim() != 2 or seq.shape[1] != cnn.in_dim:
        raise ShapeError(f"expected an L x {cnn.in_dim} matrix, got {tuple(seq.shape)}")
    if seq.shape[0] == 0:
        raise ShapeError("word-embedding sequence must have at least one row")
    return cnn(seq.unsqueeze(0))[0]


def save_vectors(path, ids, matrix) -> None:
    """Cache utterance vectors as one ``.npz`` holding ids and a float matrix."""
    with open(path, "wb") as fh:
        np.savez(fh, ids=np.asarray(ids, dtype=str), vectors=np.asarray(matrix, dtype=np.float32))


def load_vectors(path) -> dict:
    data = np.load(path)
    return {str(i): v for i, v in zip(data["ids"], data["vectors"])}


def encoder_manifest(cfg: EncoderConfig) -> dict:
    return asdict(cfg)
