"""Wire protocol: newline-delimited JSON requests and responses.

Request keys: id, question, context, top_k, max_answer_len.
Response keys: id, answers (text/score/start/end, sorted by descending
score), optional error. Every request line gets exactly one response line.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field


class RequestError(ValueError):
    """Invalid request; carries the id to echo (or 'unknown')."""

    def __init__(self, message: str, request_id: str = "unknown"):
        super().__init__(message)
        self.request_id = request_id


@dataclass(frozen=True)
class ReadRequest:
    id: str
    question: str
    context: str
    top_k: int = 10
    max_answer_len: int = 15


@dataclass(frozen=True)
class ReadResponse:
    id: str
    answers: list[dict] = field(default_factory=list)
    error: str | None = None

    def to_json(self) -> str:
        payload: dict = {"id": self.id, "answers": self.answers}
        if self.error is not None:
            payload["error"] = self.error
        return json.dumps(payload, ensure_ascii=False)


def parse_request(line: str) -> ReadRequest:
    """Parse and validate one request line; RequestError on anything off."""
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise RequestError(f"malformed JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise RequestError("request must be a JSON object")
    request_id = str(obj.get("id", "unknown") if obj.get("id") is not None else "unknown")

    question = obj.get("question")
    if not isinstance(question, str) or not question.strip():
        raise RequestError("question must be a non-empty string", request_id)
    context = obj.get("context")
    if not isinstance(context, str) or not context:
        raise RequestError("context must be a non-empty string", request_id)

    top_k = obj.get("top_k", 10)
    max_answer_len = obj.get("max_answer_len", 15)
    if not isinstance(top_k, int) or isinstance(top_k, bool) or top_k < 1:
        raise RequestError("top_k must be a positive integer", request_id)
    if not isinstance(max_answer_len, int) or isinstance(max_answer_len, bool) or max_answer_len < 1:
        raise RequestError("max_answer_len must be a positive integer", request_id)

    return ReadRequest(
        id=request_id,
        question=question,
        context=context,
        top_k=top_k,
        max_answer_len=max_answer_len,
    )
