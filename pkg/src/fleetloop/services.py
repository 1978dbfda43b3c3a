"""Optional external-service clients for the two pluggable model seams.

The built-in embedder and progress scorer are deterministic stubs; these
clients swap a remote encoder or reward model in behind the exact same
contracts (`MemoryStore(embedder=...)`, `Critic(scorer=...)`). Responses
must satisfy the same invariants the stubs do: unit-norm vectors, scores
in [0, 1].
"""

from __future__ import annotations

from typing import Optional

import httpx
import numpy as np

from .critic import StepProbe


class HttpEmbedder:
    """POSTs {"text": ..., "dim": ...} and expects {"embedding": [...]}."""

    def __init__(self, url: str, dim: int = 64, timeout: float = 5.0,
                 transport: Optional[httpx.BaseTransport] = None):
        self.url = url
        self.dim = dim
        self._client = httpx.Client(timeout=timeout, transport=transport)

    def __call__(self, text: str) -> np.ndarray:
        response = self._client.post(self.url, json={"text": text, "dim": self.dim})
        response.raise_for_status()
        vec = np.asarray(response.json()["embedding"], dtype=np.float64)
        if vec.shape != (self.dim,):
            raise ValueError(f"encoder returned shape {vec.shape}, expected ({self.dim},)")
        norm = float(np.linalg.norm(vec))
        if norm == 0.0:
            raise ValueError("encoder returned a zero vector")
        return vec / norm


class HttpScorer:
    """POSTs instruction plus probe fields, expects {"score": s} in [0, 1]."""

    def __init__(self, url: str, timeout: float = 5.0,
                 transport: Optional[httpx.BaseTransport] = None):
        self.url = url
        self._client = httpx.Client(timeout=timeout, transport=transport)

    def __call__(self, instruction: str, observation, probe: StepProbe) -> float:
        body = {
            "instruction": instruction,
            "skill": probe.skill,
            "start_distance": probe.start_distance,
            "current_distance": probe.current_distance,
            "gripper_distance": probe.gripper_distance,
            "object_held": probe.object_held,
            "recipient_has_object": probe.recipient_has_object,
            "effect_applied": probe.effect_applied,
            "observation": observation.to_doc() if observation is not None else None,
        }
        response = self._client.post(self.url, json=body)
        response.raise_for_status()
        return float(response.json()["score"])
