import logging
import math
import re
from collections import Counter
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict

from fincards_backend.config.config import CutoffPolicy, LexicalConfig
from fincards_backend.exceptions import EmptyCorpusError
from fincards_backend.services.corpus.service import ChunkStore

logger = logging.getLogger(__name__)

Tokenizer = Callable[[str], List[str]]

_TOKEN_RE = re.compile(r"[a-z0-9]+")


def tokenize(text: str) -> List[str]:
    """Lowercase, split on non-alphanumerics; digits kept, no stemming, no stopwords."""
    return _TOKEN_RE.findall(text.lower())


class ScoredCandidate(BaseModel):
    """A Stage-1 pool member."""

    model_config = ConfigDict(frozen=True)

    chunk_id: str
    chunk_index: int
    stage1_score: float
    stage1_rank: int


@dataclass(frozen=True, eq=False)
class Posting:
    ordinals: np.ndarray
    term_freqs: np.ndarray


@dataclass(frozen=True, eq=False)
class LexicalIndex:
    """Inverted index over one filing; immutable after build."""

    postings: Dict[str, Posting]
    doc_lengths: np.ndarray
    avg_doc_length: float
    chunk_ids: Tuple[str, ...]
    k1: float
    b: float
    tokenizer: Tokenizer

    @property
    def num_docs(self) -> int:
        return len(self.chunk_ids)

    @property
    def vocabulary_size(self) -> int:
        return len(self.postings)

    @property
    def total_tokens(self) -> int:
        return int(self.doc_lengths.sum())

    def idf(self, term: str) -> float:
        posting = self.postings.get(term)
        if posting is None:
            return 0.0
        df = len(posting.ordinals)
        return max(0.0, math.log((self.num_docs - df + 0.5) / (df + 0.5)))

    def score_all(self, query_text: str) -> np.ndarray:
        """Okapi BM25 score of every chunk; repeated query terms count repeatedly."""
        scores = np.zeros(self.num_docs, dtype=np.float64)
        avgdl = self.avg_doc_length if self.avg_doc_length > 0 else 1.0
        for term in self.tokenizer(query_text):
            posting = self.postings.get(term)
            if posting is None:
                continue
            idf = self.idf(term)
            if idf == 0.0:
                continue
            tf = posting.term_freqs
            norm = self.k1 * (1.0 - self.b + self.b * self.doc_lengths[posting.ordinals] / avgdl)
            scores[posting.ordinals] += idf * tf * (self.k1 + 1.0) / (tf + norm)
        return scores


def build_index(store: ChunkStore, tokenizer: Tokenizer = tokenize, config: Optional[LexicalConfig] = None) -> LexicalIndex:
    """
    Build the BM25 index of a filing.

    Args:
        store: the filing's chunks
        tokenizer: tokenization policy
        config: BM25 parameters (k1, b)

    Returns:
        LexicalIndex: postings, document lengths and average length
    """
    if store is None or store.length == 0:
        raise EmptyCorpusError("cannot index an empty store")
    config = config or LexicalConfig()

    collected: Dict[str, Tuple[List[int], List[int]]] = {}
    lengths = np.zeros(store.length, dtype=np.float64)
    for ordinal, chunk in enumerate(store):
        tokens = tokenizer(chunk.text)
        lengths[ordinal] = len(tokens)
        for term, count in Counter(tokens).items():
            ords, tfs = collected.setdefault(term, ([], []))
            ords.append(ordinal)
            tfs.append(count)

    postings = {
        term: Posting(np.asarray(ords, dtype=np.int64), np.asarray(tfs, dtype=np.float64))
        for term, (ords, tfs) in sorted(collected.items())
    }
    index = LexicalIndex(
        postings=postings,
        doc_lengths=lengths,
        avg_doc_length=float(lengths.mean()),
        chunk_ids=tuple(c.chunk_id for c in store),
        k1=config.k1,
        b=config.b,
        tokenizer=tokenizer,
    )
    logger.debug(f"Indexed {index.num_docs} chunks, {index.vocabulary_size} terms, {index.total_tokens} tokens")
    return index


def adaptive_cutoff(L: int, policy: Optional[CutoffPolicy] = None) -> int:
    """N = L below n_min, otherwise clamp(ceil(r*L), n_min, n_max)."""
    policy = policy or CutoffPolicy()
    if L < policy.n_min:
        return max(L, 0)
    # round() guards against float drift such as 0.1 * 30 = 3.0000000000000004
    n = math.ceil(round(policy.ratio * L, 9))
    return min(max(n, policy.n_min), policy.n_max)


def retrieve(index: LexicalIndex, query_text: str, policy: Optional[CutoffPolicy] = None) -> List[ScoredCandidate]:
    """
    Stage 1: top-N chunks by BM25.

    The pool always holds exactly adaptive_cutoff(L) members; zero-score chunks
    pad it in chunk_index order. Ties break by ascending chunk_index.
    """
    n = adaptive_cutoff(index.num_docs, policy)
    scores = index.score_all(query_text)
    ordinals = np.arange(index.num_docs)
    order = np.lexsort((ordinals, -scores))[:n]
    return [
        ScoredCandidate(
            chunk_id=index.chunk_ids[ordinal],
            chunk_index=int(ordinal),
            stage1_score=float(scores[ordinal]),
            stage1_rank=rank,
        )
        for rank, ordinal in enumerate(order, start=1)
    ]
