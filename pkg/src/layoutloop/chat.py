"""Chat-completion client used for both controller roles.

The wire contract is a single-turn completion: request
{model_id, messages: [{role, content}], temperature, max_tokens}, response
{content}. Transports are injectable so tests and the simulated controller
can stand in for a live endpoint without HTTP.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import requests

from .errors import AuthError, TransportError
from .prompts import ChatExchange

# A transport takes the request payload and returns (reply content, latency ms).
Transport = Callable[[dict], tuple[str, int]]


@dataclass(frozen=True)
class ChatConfig:
    model_id: str = "controller-default"
    temperature: float = 0.0
    max_tokens: int = 2048
    max_retries: int = 3
    backoff_base_s: float = 0.5


class HttpChatTransport:
    """POSTs completion requests to a configured endpoint."""

    def __init__(self, endpoint: str, api_key: str | None = None, timeout_s: float = 60.0):
        self.endpoint = endpoint
        self.api_key = api_key
        self.timeout_s = timeout_s

    def __call__(self, payload: dict) -> tuple[str, int]:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        started = time.perf_counter()
        try:
            response = requests.post(
                self.endpoint, json=payload, headers=headers, timeout=self.timeout_s
            )
        except requests.RequestException as exc:
            raise TransportError(f"chat endpoint unreachable: {exc}") from exc
        latency_ms = int((time.perf_counter() - started) * 1000)
        if response.status_code in (401, 403):
            raise AuthError(f"chat endpoint rejected credentials (status {response.status_code})")
        if response.status_code >= 400:
            raise TransportError(f"chat endpoint returned status {response.status_code}")
        body = response.json()
        if "content" not in body:
            raise TransportError("chat reply missing 'content' field")
        return body["content"], latency_ms


class ChatClient:
    """Issues completions with bounded exponential-backoff retries.

    Transport failures are retried up to max_retries times; auth failures are
    not retried. Temperature defaults to 0 so identical prompts produce
    identical replies on compliant endpoints.
    """

    def __init__(self, transport: Transport, config: ChatConfig | None = None):
        self.transport = transport
        self.config = config or ChatConfig()

    def complete(self, prompt_text: str) -> ChatExchange:
        payload = {
            "model_id": self.config.model_id,
            "messages": [{"role": "user", "content": prompt_text}],
            "temperature": self.config.temperature,
            "max_tokens": self.config.max_tokens,
        }
        attempts = self.config.max_retries + 1
        last_error: TransportError | None = None
        for attempt in range(attempts):
            try:
                content, latency_ms = self.transport(payload)
            except AuthError:
                raise
            except TransportError as exc:
                last_error = exc
                if attempt < attempts - 1 and self.config.backoff_base_s > 0:
                    time.sleep(self.config.backoff_base_s * (2**attempt))
                continue
            return ChatExchange(
                prompt_text=prompt_text,
                reply_text=content,
                model_id=self.config.model_id,
                latency_ms=latency_ms,
                retries=attempt,
            )
        raise TransportError(f"retries exhausted after {attempts} attempts: {last_error}")
