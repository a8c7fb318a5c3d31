"""HTTP clients for the external judge and answer-generator services.

Both speak a chat-completion wire format: POST a JSON body with a messages
list, read the reply text from choices[0].message.content. Transient
failures (connection errors, timeouts, 5xx) are retried up to three
attempts with exponential backoff; 4xx and malformed replies are not, since
repeating them cannot help. The bearer token is taken from the
HULIRAG_API_TOKEN environment variable when present.

Tests exercise these clients with in-process session stubs only; nothing in
this module is contacted during the test suite.
"""

from __future__ import annotations

import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import requests

from .errors import ServiceError
from .evaluation import JudgeRequest, parse_rating

TOKEN_ENV_VAR = "HULIRAG_API_TOKEN"
MAX_ATTEMPTS = 3
DEFAULT_BACKOFF = 0.5
DEFAULT_TIMEOUT = 30.0


@dataclass
class ClientConfig:
    max_attempts: int = MAX_ATTEMPTS
    backoff: float = DEFAULT_BACKOFF
    timeout: float = DEFAULT_TIMEOUT
    max_in_flight: int = 4


def _auth_headers() -> dict[str, str]:
    token = os.environ.get(TOKEN_ENV_VAR)
    return {"Authorization": f"Bearer {token}"} if token else {}


def _post_chat(endpoint: str, payload: dict, config: ClientConfig, session=None) -> str:
    """POST with retries; returns the reply text. Session is injectable so
    tests can substitute an in-process stub."""
    http = session if session is not None else requests
    last_error: Exception | None = None
    for attempt in range(1, config.max_attempts + 1):
        try:
            resp = http.post(endpoint, json=payload, headers=_auth_headers(),
                             timeout=config.timeout)
            status = resp.status_code
            if status >= 500:
                raise ServiceError(f"server error {status} from {endpoint}")
            if status >= 400:
                # Client errors are permanent; retrying cannot change them.
                raise ServiceError(f"request rejected with {status} by {endpoint}",
                                   permanent=True)
            body = resp.json()
            return str(body["choices"][0]["message"]["content"])
        except ServiceError as exc:
            if exc.permanent:
                raise
            last_error = exc
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise ServiceError(f"malformed reply from {endpoint}: {exc}",
                               permanent=True) from exc
        except Exception as exc:  # connection/timeout errors from the session
            last_error = exc
        if attempt < config.max_attempts:
            time.sleep(config.backoff * (2 ** (attempt - 1)))
    raise ServiceError(
        f"{endpoint} failed after {config.max_attempts} attempts: {last_error}")


def judge_client(endpoint: str, request: JudgeRequest,
                 config: ClientConfig = ClientConfig(), session=None) -> int:
    """Send a rendered judging prompt; return the parsed integer rating."""
    payload = {"messages": [{"role": "user", "content": request.rendered_prompt}]}
    reply = _post_chat(endpoint, payload, config, session)
    return parse_rating(reply)


def judge_many(endpoint: str, requests_: Sequence[JudgeRequest],
               config: ClientConfig = ClientConfig(), session=None) -> list[int]:
    """Judge a batch with a bounded number of in-flight requests."""
    if not requests_:
        return []
    with ThreadPoolExecutor(max_workers=config.max_in_flight) as pool:
        return list(pool.map(
            lambda r: judge_client(endpoint, r, config, session), requests_))


def generator_client(endpoint: str, question: str, full_image_ref: str,
                     masked_image_ref: str | None = None,
                     config: ClientConfig = ClientConfig(), session=None) -> str:
    """Ask the generator service for an answer given both visual contexts.

    The full and masked image references travel in one request. When the
    masked reference is missing the request degrades to full-image-only and
    says so, rather than failing.
    """
    if not full_image_ref:
        raise ValueError("full_image_ref is required")
    images = [full_image_ref]
    degraded = masked_image_ref is None
    if not degraded:
        images.append(masked_image_ref)
    payload = {
        "messages": [{"role": "user", "content": question}],
        "images": images,
        "degraded": degraded,
    }
    return _post_chat(endpoint, payload, config, session)
