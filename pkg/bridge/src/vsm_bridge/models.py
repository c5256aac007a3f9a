"""Model loading and vector extraction for the embedding bridge.

Two embedding kinds are served:

* ``sentence`` - one vector per text line, mean-pooled over the final hidden
  layer and L2-normalized (sentence-encoder style).
* ``prompt_hidden`` - the final layer's activation at the last non-padding
  position of a prompt (or mean-pooled, per config), the feature used for
  behavior prediction.

Model ids starting with ``builtin:`` construct a small byte-level causal
transformer from a fixed configuration with seeded random weights. That keeps
the bridge fully runnable offline and deterministic; any hub model id can be
substituted when weights are available. Names that cannot be loaded raise
ModelLoadFailure.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
import torch


class BridgeError(Exception):
    pass


class ModelLoadFailure(BridgeError):
    pass


class IoFailure(BridgeError):
    pass


BUILTIN_PREFIX = "builtin:"
_BUILTIN_SEEDS = {"sentence": 1234, "causal": 4321}


@dataclass(frozen=True)
class BridgeConfig:
    sentence_model: str = "builtin:sentence"
    causal_model: str = "builtin:causal"
    device: str = "cpu"
    max_seq_len: int = 1024
    pooling: str = "last"  # prompt_hidden pooling: last non-padding position, or "mean"

    def __post_init__(self):
        if self.pooling not in ("last", "mean"):
            raise ValueError(f"pooling must be 'last' or 'mean', got {self.pooling!r}")
        if self.max_seq_len < 1:
            raise ValueError("max_seq_len must be >= 1")


def _build_builtin(name: str, device: str):
    """Tiny byte-level causal LM with seeded weights; deterministic on CPU."""
    from transformers import GPT2Config, GPT2LMHeadModel

    seed = _BUILTIN_SEEDS.get(name)
    if seed is None:
        raise ModelLoadFailure(f"unknown builtin model {name!r} (have {sorted(_BUILTIN_SEEDS)})")
    torch.manual_seed(seed)
    config = GPT2Config(
        vocab_size=256,
        n_positions=1024,
        n_embd=64,
        n_layer=2,
        n_head=4,
        bos_token_id=None,
        eos_token_id=None,
    )
    model = GPT2LMHeadModel(config).to(device).eval()
    return model


class _ByteTokenizer:
    """UTF-8 bytes as token ids; no vocabulary files needed."""

    def encode(self, text: str, max_len: int) -> List[int]:
        ids = list(text.encode("utf-8"))[:max_len]
        return ids or [0]


class EmbeddingModel:
    """One loaded model plus its pooling behaviour."""

    def __init__(self, model_id: str, config: BridgeConfig):
        self.model_id = model_id
        self.config = config
        torch.set_num_threads(1)  # keeps CPU matmuls bit-reproducible
        if model_id.startswith(BUILTIN_PREFIX):
            self._tokenizer = _ByteTokenizer()
            self._model = _build_builtin(model_id[len(BUILTIN_PREFIX):], config.device)
            self._hub = None
        else:
            self._tokenizer, self._model, self._hub = self._load_hub(model_id, config.device)
        self.dim = int(self._model.config.hidden_size if self._hub is None
                       else self._hub.get_sentence_embedding_dimension())

    @staticmethod
    def _load_hub(model_id: str, device: str):
        try:
            from sentence_transformers import SentenceTransformer

            hub = SentenceTransformer(model_id, device=device)
            return None, hub, hub
        except Exception:
            pass
        try:
            from transformers import AutoModel, AutoTokenizer

            tokenizer = AutoTokenizer.from_pretrained(model_id)
            model = AutoModel.from_pretrained(model_id).to(device).eval()
            return tokenizer, model, None
        except Exception as exc:
            raise ModelLoadFailure(f"cannot load model {model_id!r}: {exc}") from exc

    def _hidden_states(self, text: str) -> torch.Tensor:
        if isinstance(self._tokenizer, _ByteTokenizer):
            ids = torch.tensor([self._tokenizer.encode(text, self.config.max_seq_len)])
        else:
            ids = self._tokenizer(text, return_tensors="pt", truncation=True,
                                  max_length=self.config.max_seq_len)["input_ids"]
        with torch.no_grad():
            out = self._model(ids.to(self.config.device), output_hidden_states=True)
        return out.hidden_states[-1][0]  # seq_len x dim

    def sentence_vectors(self, texts: Sequence[str]) -> np.ndarray:
        if self._hub is not None:
            vectors = self._hub.encode(list(texts), convert_to_numpy=True, normalize_embeddings=True)
            return np.asarray(vectors, dtype=np.float64)
        rows = []
        for text in texts:
            hidden = self._hidden_states(text).mean(dim=0)
            vec = hidden.double().numpy()
            norm = np.linalg.norm(vec)
            rows.append(vec / norm if norm > 0 else vec)
        return np.vstack(rows)

    def prompt_hidden_vectors(self, texts: Sequence[str]) -> np.ndarray:
        if self._hub is not None:
            raise ModelLoadFailure(
                f"{self.model_id!r} is a sentence encoder; prompt_hidden needs a causal model"
            )
        rows = []
        for text in texts:
            hidden = self._hidden_states(text)
            if self.config.pooling == "last":
                vec = hidden[-1]  # last non-padding position (inputs are unpadded)
            else:
                vec = hidden.mean(dim=0)
            rows.append(vec.double().numpy())
        return np.vstack(rows)


class BridgeModels:
    """Lazy holder for the sentence and causal models of one bridge session."""

    def __init__(self, config: Optional[BridgeConfig] = None):
        self.config = config or BridgeConfig()
        self._sentence: Optional[EmbeddingModel] = None
        self._causal: Optional[EmbeddingModel] = None

    @property
    def sentence(self) -> EmbeddingModel:
        if self._sentence is None:
            self._sentence = EmbeddingModel(self.config.sentence_model, self.config)
        return self._sentence

    @property
    def causal(self) -> EmbeddingModel:
        if self._causal is None:
            self._causal = EmbeddingModel(self.config.causal_model, self.config)
        return self._causal

    def embed(self, texts: Sequence[str], kind: str = "sentence") -> tuple:
        """Returns (vectors, model_id) for a request kind."""
        if kind == "sentence":
            model = self.sentence
            return model.sentence_vectors(texts), model.model_id
        if kind == "prompt_hidden":
            model = self.causal
            return model.prompt_hidden_vectors(texts), model.model_id
        raise ValueError(f"unknown kind {kind!r} (expected 'sentence' or 'prompt_hidden')")
