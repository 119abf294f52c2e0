"""Completion contract shared by every backend, plus the chat-completions wire format."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Protocol, Tuple


class BackendError(RuntimeError):
    """A completion could not be obtained."""


class AuthError(BackendError):
    pass


class RateLimitError(BackendError):
    pass


class MalformedResponseError(BackendError):
    pass


class TransientError(BackendError):
    pass


class MockPromptError(BackendError):
    """The simulator could not read product or price out of the prompt."""


@dataclass(frozen=True)
class CompletionRequest:
    model_id: str
    system: str
    user: str
    temperature: float = 1.0
    n_draws: int = 1
    seed: Optional[int] = None

    def __post_init__(self):
        if not isinstance(self.n_draws, int) or self.n_draws < 1:
            raise ValueError(f"n_draws must be a positive integer, got {self.n_draws!r}")
        if not 0 <= self.temperature <= 2:
            raise ValueError(f"temperature must be in [0, 2], got {self.temperature!r}")


@dataclass
class CompletionResponse:
    texts: List[str]
    backend_meta: Dict[str, Any] = field(default_factory=dict)

    @property
    def retries(self) -> int:
        return int(self.backend_meta.get("retries", 0))


class Backend(Protocol):
    def complete(self, request: CompletionRequest) -> CompletionResponse: ...


def to_body(request: CompletionRequest) -> Dict[str, Any]:
    messages = []
    if request.system:
        messages.append({"role": "system", "content": request.system})
    messages.append({"role": "user", "content": request.user})
    body: Dict[str, Any] = {
        "model": request.model_id,
        "messages": messages,
        "temperature": request.temperature,
        "n": request.n_draws,
    }
    if request.seed is not None:
        body["seed"] = request.seed
    return body


def from_body(body: Dict[str, Any]) -> CompletionRequest:
    system, user = "", None
    for msg in body.get("messages", []):
        if msg.get("role") == "system":
            system = msg["content"]
        elif msg.get("role") == "user":
            user = msg["content"]
    if user is None:
        raise ValueError("request body has no user message")
    return CompletionRequest(
        model_id=body["model"],
        system=system,
        user=user,
        temperature=body.get("temperature", 1.0),
        n_draws=body.get("n", 1),
        seed=body.get("seed"),
    )


def response_texts(payload: Any, expected: int) -> Tuple[List[str], Dict[str, Any]]:
    """Pull ``choices[*].message.content`` out of a decoded response body."""
    try:
        choices = payload["choices"]
        texts = [c["message"]["content"] for c in sorted(choices, key=lambda c: c.get("index", 0))]
    except (KeyError, TypeError, AttributeError) as exc:
        raise MalformedResponseError(f"response body lacks choices[*].message.content: {exc!r}") from None
    if len(texts) != expected or not all(isinstance(t, str) for t in texts):
        raise MalformedResponseError(f"expected {expected} string choices, got {len(texts)}")
    usage = payload.get("usage") if isinstance(payload, dict) else None
    return texts, (usage if isinstance(usage, dict) else {})
