"""Reader process wrapping an extractive QA transformer.

Loads a SQuAD2-fine-tuned checkpoint, then answers one JSON request per
stdin line with one JSON response per stdout line, in order. All
diagnostics go to stderr; a model that fails to load aborts with a
nonzero exit before any request is read.
"""

from __future__ import annotations

import argparse
import sys

from .protocol import ReadRequest, ReadResponse, RequestError, parse_request

DEFAULT_MODEL = "deepset/bert-large-uncased-whole-word-masking-squad2"


class ExtractiveQAModel:
    """Span decoder over a fine-tuned question-answering transformer.

    Scores every context span up to max_answer_len tokens by the product of
    start/end probabilities and maps the best ones back to character offsets,
    so each answer text is exactly context[start:end].
    """

    def __init__(self, model_spec: str, device: str = "cpu"):
        import torch
        from transformers import AutoModelForQuestionAnswering, AutoTokenizer

        self._torch = torch
        self.tokenizer = AutoTokenizer.from_pretrained(model_spec, use_fast=True)
        self.model = AutoModelForQuestionAnswering.from_pretrained(model_spec)
        self.model.eval()
        if device == "accelerator":
            if not torch.cuda.is_available():
                raise RuntimeError("no accelerator available")
            self.model.to("cuda")
        self.device = "cuda" if device == "accelerator" else "cpu"
        max_positions = getattr(self.model.config, "max_position_embeddings", 512)
        self.max_length = min(int(self.tokenizer.model_max_length or max_positions), max_positions)

    def answer(self, question: str, context: str, top_k: int, max_answer_len: int) -> list[dict]:
        torch = self._torch
        enc = self.tokenizer(
            question,
            context,
            truncation="longest_first",
            max_length=self.max_length,
            return_offsets_mapping=True,
            return_tensors="pt",
        )
        sequence_ids = enc.sequence_ids(0)
        offsets = enc["offset_mapping"][0].tolist()
        inputs = {
            k: v.to(self.device)
            for k, v in enc.items()
            if k in ("input_ids", "attention_mask", "token_type_ids")
        }
        with torch.no_grad():
            out = self.model(**inputs)
        start_logits = out.start_logits[0].to("cpu")
        end_logits = out.end_logits[0].to("cpu")

        in_context = torch.tensor(
            [s == 1 and offsets[i][1] > offsets[i][0] for i, s in enumerate(sequence_ids)]
        )
        if not bool(in_context.any()):
            return []
        neg = torch.finfo(start_logits.dtype).min
        p_start = torch.softmax(start_logits.masked_fill(~in_context, neg), dim=-1)
        p_end = torch.softmax(end_logits.masked_fill(~in_context, neg), dim=-1)

        scores = p_start[:, None] * p_end[None, :]
        n = scores.shape[0]
        valid = in_context[:, None] & in_context[None, :]
        span = torch.arange(n)
        length_ok = (span[None, :] - span[:, None] >= 0) & (
            span[None, :] - span[:, None] < max_answer_len
        )
        scores = scores.masked_fill(~(valid & length_ok), -1.0)

        flat = scores.flatten()
        k = min(top_k * 4, flat.numel())  # oversample, then dedup identical char spans
        top = torch.topk(flat, k)
        answers: list[dict] = []
        seen: set[tuple[int, int]] = set()
        for score, idx in zip(top.values.tolist(), top.indices.tolist()):
            if score < 0 or len(answers) >= top_k:
                break
            i, j = divmod(idx, n)
            char_span = (offsets[i][0], offsets[j][1])
            if char_span in seen:
                continue
            seen.add(char_span)
            answers.append(
                {
                    "text": context[char_span[0] : char_span[1]],
                    "score": float(score),
                    "start": char_span[0],
                    "end": char_span[1],
                }
            )
        return answers


def handle_request(request: ReadRequest, model: ExtractiveQAModel) -> ReadResponse:
    """Answer one validated request; inference failures become error responses."""
    try:
        answers = model.answer(
            request.question, request.context, request.top_k, request.max_answer_len
        )
    except Exception as exc:  # inference failure must not kill the session
        return ReadResponse(id=request.id, error=f"inference failed: {exc}")
    return ReadResponse(id=request.id, answers=answers)


def serve(model: ExtractiveQAModel, stdin=None, stdout=None) -> None:
    """Request loop: one response line per request line, in request order."""
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    for line in stdin:
        if not line.strip():
            continue
        try:
            request = parse_request(line)
        except RequestError as exc:
            response = ReadResponse(id=exc.request_id, error=str(exc))
        else:
            response = handle_request(request, model)
        try:
            stdout.write(response.to_json() + "\n")
            stdout.flush()
        except BrokenPipeError:
            return


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="tsqa-adapter",
        description="Serve an extractive QA model over newline-delimited JSON stdio.",
    )
    parser.add_argument("--model", default=DEFAULT_MODEL,
                        help="checkpoint name or local path (SQuAD2-fine-tuned)")
    parser.add_argument("--device", choices=("cpu", "accelerator"), default="cpu")
    args = parser.parse_args(argv)

    try:
        model = ExtractiveQAModel(args.model, device=args.device)
    except Exception as exc:
        print(f"fatal: failed to load model {args.model!r}: {exc}", file=sys.stderr)
        return 2
    print(f"ready: serving {args.model} on {args.device}", file=sys.stderr)
    serve(model)
    return 0


if __name__ == "__main__":
    sys.exit(main())
