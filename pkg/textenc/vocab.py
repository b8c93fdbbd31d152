"""Word and character vocabularies for the report LM and the name encoders."""
import re
import string
from typing import Dict, Iterable, List, Sequence, Tuple

import numpy as np

PAD, BOS, EOS, UNK = '<pad>', '<bos>', '<eos>', '<unk>'
UNK_NAME = 'unk'

_WORD = re.compile(r"[a-z0-9][a-z0-9\-+']*|[.,;:]")


def word_tokens(text: str) -> List[str]:
    return _WORD.findall(text.lower())


class WordVocab:
    def __init__(self, words: Sequence[str]):
        self.itos: List[str] = [PAD, BOS, EOS, UNK] + [w for w in words if w not in (PAD, BOS, EOS, UNK)]
        self.stoi: Dict[str, int] = {w: i for i, w in enumerate(self.itos)}

    @classmethod
    def build(cls, corpus: Iterable[str]) -> 'WordVocab':
        words = sorted({tok for text in corpus for tok in word_tokens(text)})
        return cls(words)

    def __len__(self) -> int:
        return len(self.itos)

    @property
    def pad_id(self) -> int:
        return self.stoi[PAD]

    def encode(self, text: str, max_len: int) -> List[int]:
        """<bos> tokens <eos>, truncated to ``max_len`` (the <eos> is kept)."""
        ids = [self.stoi.get(tok, self.stoi[UNK]) for tok in word_tokens(text)]
        ids = ids[:max_len - 2]
        return [self.stoi[BOS]] + ids + [self.stoi[EOS]]

    def batch(self, texts: Sequence[str], max_len: int) -> Tuple[np.ndarray, np.ndarray]:
        """Right-padded id matrix and padding mask (True at padding)."""
        encoded = [self.encode(t, max_len) for t in texts]
        width = max(len(e) for e in encoded)
        ids = np.full((len(texts), width), self.pad_id, dtype=np.int64)
        for row, e in enumerate(encoded):
            ids[row, :len(e)] = e
        return ids, ids == self.pad_id

    def to_dict(self) -> Dict:
        return {'itos': self.itos}

    @classmethod
    def from_dict(cls, data: Dict) -> 'WordVocab':
        vocab = cls([])
        vocab.itos = list(data['itos'])
        vocab.stoi = {w: i for i, w in enumerate(vocab.itos)}
        return vocab


class CharVocab:
    """Fixed character set; sequence and study names are short free text."""

    CHARS = string.ascii_uppercase + string.ascii_lowercase + string.digits + ' _-+/.()*'

    def __init__(self):
        self.itos = [PAD, UNK] + list(self.CHARS)
        self.stoi = {c: i for i, c in enumerate(self.itos)}

    def __len__(self) -> int:
        return len(self.itos)

    def batch(self, names: Sequence[str], max_len: int) -> Tuple[np.ndarray, np.ndarray]:
        ids = np.zeros((len(names), max_len), dtype=np.int64)
        for row, name in enumerate(names):
            chars = [self.stoi.get(c, self.stoi[UNK]) for c in name[:max_len]] or [self.stoi[UNK]]
            ids[row, :len(chars)] = chars
        return ids, ids == self.stoi[PAD]
