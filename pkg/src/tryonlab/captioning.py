"""Attribute-schema captioning through a multimodal chat model.

A schema fixes which attributes get captioned for person and clothing
images. Requests are assembled as few-shot exchanges (labeled exemplar
images first, query image last, answer demanded as JSON keyed by the
attribute names), sent through a pluggable client, validated, and retried
with a corrective note when the model strays from the schema.

Captioning person and clothing separately is the point: the clothing
record is a function of the clothing image alone, so prompts assembled for
a new garment carry no text about the person's original outfit.
"""

from __future__ import annotations

import base64
import hashlib
import json
import time
import urllib.error
import urllib.request
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Protocol

import numpy as np

from .data import CaptionRecord
from .errors import (
    ResponseSchemaViolation,
    SchemaMismatch,
    TokenBudgetExceeded,
    TransportError,
)
from .labels import CATEGORIES

MAX_PROMPT_TOKENS = 77

# ---------------------------------------------------------------------------
# schemas
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Attribute:
    name: str
    description: str
    example_values: tuple[str, ...] = ()


_PERSON_REQUIRED = {"body shape", "gender", "fit", "hand pose", "pose description"}
_CLOTHING_REQUIRED = {
    "upper_body": {"cloth category", "material", "sleeve", "neckline"},
    "lower_body": {"cloth category", "material", "length"},
    "dresses": {"cloth category", "material", "sleeve", "length", "neckline"},
}


@dataclass(frozen=True)
class AttributeSchema:
    """Ordered attribute list for one (subject, category) pair."""

    subject: str                  # "person" | "clothing"
    category: str
    attributes: tuple[Attribute, ...]

    def __post_init__(self):
        if self.subject not in ("person", "clothing"):
            raise ValueError(f"subject must be person|clothing, got {self.subject!r}")
        if self.category not in CATEGORIES:
            raise ValueError(f"unknown category {self.category!r}")
        names = [a.name for a in self.attributes]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate attribute names in schema: {names}")
        required = set(_PERSON_REQUIRED) if self.subject == "person" \
            else set(_CLOTHING_REQUIRED[self.category])
        if self.subject == "person" and self.category == "upper_body":
            required.add("tucking style")
        missing = required - set(names)
        if missing:
            raise ValueError(f"{self.subject}/{self.category} schema missing {sorted(missing)}")

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(a.name for a in self.attributes)

    @property
    def n(self) -> int:
        return len(self.attributes)

    def validate_captions(self, captions: dict[str, str]) -> None:
        """Key set must equal the schema's attribute names exactly."""
        got, want = set(captions), set(self.names)
        if got != want:
            extra, missing = sorted(got - want), sorted(want - got)
            raise SchemaMismatch(f"caption keys off schema (missing={missing}, extra={extra})")


_PERSON_ATTRS_BASE = (
    Attribute("body shape", "overall build of the person", ("slim", "average", "curvy")),
    Attribute("gender", "apparent gender presentation", ("woman", "man")),
    Attribute("fit", "how tightly the outfit sits", ("tight fit", "loose fit")),
    Attribute("pose description", "free-form description of the body pose",
              ("standing upright facing forward", "standing with weight on one leg")),
    Attribute("hand pose", "what the hands are doing",
              ("arms at sides", "hands on hips", "one hand in pocket")),
)
_TUCKING = Attribute("tucking style", "how the top meets the waistband",
                     ("fully tucked in", "untucked", "french tucked"))

_CLOTHING_ATTRS = {
    "upper_body": (
        Attribute("cloth category", "garment type", ("t-shirt", "shirt", "sweater")),
        Attribute("material", "dominant fabric", ("cotton", "denim", "wool", "linen")),
        Attribute("sleeve", "sleeve length", ("short sleeves", "long sleeves")),
        Attribute("neckline", "neckline shape", ("round neckline", "v neckline")),
    ),
    "lower_body": (
        Attribute("cloth category", "garment type", ("pants", "jeans", "trousers")),
        Attribute("material", "dominant fabric", ("cotton", "denim", "wool", "linen")),
        Attribute("length", "garment length", ("ankle-length", "knee-length")),
    ),
    "dresses": (
        Attribute("cloth category", "garment type", ("dress", "sundress")),
        Attribute("material", "dominant fabric", ("cotton", "linen", "silk")),
        Attribute("sleeve", "sleeve length", ("short sleeves", "long sleeves")),
        Attribute("length", "garment length", ("knee-length", "midi-length")),
        Attribute("neckline", "neckline shape", ("round neckline", "v neckline")),
    ),
}


def default_schema(subject: str, category: str = "upper_body") -> AttributeSchema:
    """Built-in schemas; hand pose deliberately last so it closes the prompt."""
    if subject == "person":
        attrs = list(_PERSON_ATTRS_BASE)
        if category == "upper_body":
            attrs.insert(2, _TUCKING)
        # keep hand pose as the final attribute
        attrs = [a for a in attrs if a.name != "hand pose"] + \
                [a for a in attrs if a.name == "hand pose"]
        return AttributeSchema("person", category, tuple(attrs))
    return AttributeSchema("clothing", category, _CLOTHING_ATTRS[category])


def schema_to_json(schema: AttributeSchema) -> str:
    return json.dumps({
        "subject": schema.subject,
        "category": schema.category,
        "attributes": [{"name": a.name, "description": a.description,
                        "example_values": list(a.example_values)}
                       for a in schema.attributes],
    }, indent=1)


def schema_from_json(doc: str) -> AttributeSchema:
    data = json.loads(doc)
    return AttributeSchema(
        data["subject"], data["category"],
        tuple(Attribute(a["name"], a.get("description", ""),
                        tuple(a.get("example_values", ()))) for a in data["attributes"]),
    )


# ---------------------------------------------------------------------------
# few-shot request assembly
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Exemplar:
    image_ref: str
    record: CaptionRecord


@dataclass(frozen=True)
class ExemplarSet:
    exemplars: tuple[Exemplar, ...]

    def __post_init__(self):
        if len(self.exemplars) < 1:
            raise ValueError("exemplar set needs at least one labeled image")

    @property
    def size(self) -> int:
        return len(self.exemplars)


DEFAULT_SYSTEM_PROMPT = (
    "You are a meticulous fashion annotator. You answer only with a JSON object "
    "whose keys are exactly the requested attribute names and whose values are "
    "short free-form captions."
)

_TASK_TEMPLATES = {
    "person": ("Describe the person in the image by filling in every attribute below. "
               "Focus on the body and how the outfit is worn, not on the face or "
               "background. Attributes: {attrs}."),
    "clothing": ("Describe the garment in the image by filling in every attribute "
                 "below. Mention only the garment itself. Attributes: {attrs}."),
}


def default_task_description(schema: AttributeSchema) -> str:
    attrs = "; ".join(f"{a.name} ({a.description})" for a in schema.attributes)
    return _TASK_TEMPLATES[schema.subject].format(attrs=attrs)


@dataclass(frozen=True)
class ICLRequest:
    """Deterministic few-shot request: exemplars first, query image last."""

    system_prompt: str
    task_description: str
    exemplars: ExemplarSet
    query_image: str | np.ndarray
    response_schema: AttributeSchema
    correction: str = ""

    def query_image_id(self) -> str:
        if isinstance(self.query_image, np.ndarray):
            return hashlib.sha256(np.ascontiguousarray(self.query_image).tobytes()).hexdigest()[:16]
        name = Path(self.query_image).name
        return Path(name).stem if "." in name else str(self.query_image)

    def answer_instruction(self) -> str:
        keys = ", ".join(f'"{n}"' for n in self.response_schema.names)
        text = f"Answer in JSON with exactly these keys: {keys}."
        if self.correction:
            text += " " + self.correction
        return text

    def messages(self) -> list[dict]:
        """Chat-message view: system, task, per-exemplar image/answer, query."""
        msgs: list[dict] = [{"role": "system", "content": self.system_prompt},
                            {"role": "user", "content": self.task_description}]
        for ex in self.exemplars.exemplars:
            msgs.append({"role": "user", "content": [{"type": "image", "image": ex.image_ref}]})
            msgs.append({"role": "assistant",
                         "content": json.dumps(
                             {n: ex.record.captions[n] for n in self.response_schema.names},
                             ensure_ascii=False)})
        msgs.append({"role": "user",
                     "content": [{"type": "image", "image": self.query_image_id()},
                                 {"type": "text", "text": self.answer_instruction()}]})
        return msgs

    def serialize(self) -> bytes:
        return json.dumps(self.messages(), ensure_ascii=False,
                          separators=(",", ":")).encode("utf-8")

    def with_correction(self, note: str) -> "ICLRequest":
        return replace(self, correction=note)


def build_icl_request(
    schema: AttributeSchema,
    exemplars: ExemplarSet,
    image: str | np.ndarray,
    system_prompt: str = DEFAULT_SYSTEM_PROMPT,
    task_description: str | None = None,
) -> ICLRequest:
    """Assemble a request, verifying every exemplar is labeled under schema."""
    for ex in exemplars.exemplars:
        if ex.record.subject != schema.subject:
            raise SchemaMismatch(
                f"exemplar {ex.image_ref!r} is a {ex.record.subject} record, "
                f"schema wants {schema.subject}")
        schema.validate_captions(ex.record.captions)
    return ICLRequest(
        system_prompt=system_prompt,
        task_description=task_description or default_task_description(schema),
        exemplars=exemplars,
        query_image=image,
        response_schema=schema,
    )


# ---------------------------------------------------------------------------
# clients
# ---------------------------------------------------------------------------

class LMMClient(Protocol):
    model_id: str

    def complete(self, request: ICLRequest) -> str: ...


class MockLMMClient:
    """Deterministic stand-in for a hosted multimodal model.

    Resolution order: scripted responses (consumed one per call), explicit
    fixtures (query image id -> captions dict), fixture directory written by
    the synthetic generator (<id>_<subject>.json), then a derived fallback
    that hashes (image id, attribute) into the attribute's example values.
    """

    def __init__(self, responses=None, fixtures=None, fixture_dir=None,
                 model_id: str = "mock-lmm"):
        self.model_id = model_id
        self._responses = list(responses) if responses is not None else None
        self._fixtures = dict(fixtures) if fixtures is not None else None
        self._fixture_dir = Path(fixture_dir) if fixture_dir else None
        self.calls = 0

    def complete(self, request: ICLRequest) -> str:
        self.calls += 1
        if self._responses is not None:
            if not self._responses:
                raise RuntimeError("scripted mock ran out of responses")
            return self._responses.pop(0)
        image_id = request.query_image_id()
        if self._fixtures is not None and image_id in self._fixtures:
            return json.dumps(self._fixtures[image_id], ensure_ascii=False)
        if self._fixture_dir is not None:
            path = self._fixture_dir / f"{image_id}_{request.response_schema.subject}.json"
            if path.exists():
                return path.read_text(encoding="utf-8")
        captions = {}
        for attr in request.response_schema.attributes:
            pool = attr.example_values or (f"plain {attr.name}",)
            digest = hashlib.sha256(f"{image_id}/{attr.name}".encode()).digest()
            captions[attr.name] = pool[int.from_bytes(digest[:4], "little") % len(pool)]
        return json.dumps(captions, ensure_ascii=False)


class HTTPLMMClient:
    """Chat-completions client over HTTPS JSON.

    The API key is read from an environment variable at call time; the
    transport is injectable so tests never open sockets.
    """

    def __init__(self, endpoint: str, model_id: str,
                 api_key_env: str = "TRYONLAB_API_KEY",
                 timeout: float = 60.0,
                 transport: Callable[[str, bytes, dict], bytes] | None = None):
        self.endpoint = endpoint
        self.model_id = model_id
        self.api_key_env = api_key_env
        self.timeout = timeout
        self._transport = transport or self._urllib_transport

    def _urllib_transport(self, url: str, body: bytes, headers: dict) -> bytes:
        req = urllib.request.Request(url, data=body, headers=headers, method="POST")
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                return resp.read()
        except (urllib.error.URLError, urllib.error.HTTPError, OSError) as exc:
            raise TransportError(str(exc)) from exc

    @staticmethod
    def _image_part(ref) -> dict:
        if isinstance(ref, np.ndarray):
            payload = base64.b64encode(np.ascontiguousarray(ref).tobytes()).decode()
            return {"type": "image_url", "image_url": {"url": f"data:image/raw;base64,{payload}"}}
        path = Path(ref)
        if path.exists():
            payload = base64.b64encode(path.read_bytes()).decode()
            return {"type": "image_url", "image_url": {"url": f"data:image/png;base64,{payload}"}}
        return {"type": "text", "text": f"[image: {ref}]"}

    def complete(self, request: ICLRequest) -> str:
        import os

        msgs = request.messages()
        messages = []
        for i, msg in enumerate(msgs):
            if isinstance(msg["content"], str):
                messages.append(msg)
                continue
            parts = []
            for part in msg["content"]:
                if part["type"] == "image":
                    # the final message carries the query image id; ship the payload
                    src = request.query_image if i == len(msgs) - 1 else part["image"]
                    parts.append(self._image_part(src))
                else:
                    parts.append(part)
            messages.append({"role": msg["role"], "content": parts})
        body = json.dumps({"model": self.model_id, "messages": messages}).encode()
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.api_key_env, "")
        if key:
            headers["Authorization"] = f"Bearer {key}"
        raw = self._transport(self.endpoint, body, headers)
        try:
            doc = json.loads(raw)
            return doc["choices"][0]["message"]["content"]
        except (json.JSONDecodeError, KeyError, IndexError, TypeError) as exc:
            raise TransportError(f"malformed completion payload: {exc}") from exc


# ---------------------------------------------------------------------------
# captioning + prompt rendering
# ---------------------------------------------------------------------------

def _strip_fences(text: str) -> str:
    text = text.strip()
    if text.startswith("```"):
        text = text.split("\n", 1)[1] if "\n" in text else ""
        if text.rstrip().endswith("```"):
            text = text.rstrip()[:-3]
    return text.strip()


def _parse_captions(text: str, schema: AttributeSchema) -> dict[str, str]:
    try:
        doc = json.loads(_strip_fences(text))
    except json.JSONDecodeError as exc:
        raise SchemaMismatch(f"response is not JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise SchemaMismatch(f"response JSON is a {type(doc).__name__}, expected object")
    captions = {k: str(v) for k, v in doc.items()}
    schema.validate_captions(captions)
    return {name: captions[name] for name in schema.names}


def caption_image(client: LMMClient, request: ICLRequest, retries: int = 2) -> CaptionRecord:
    """Query, validate against the schema, re-prompt on violation.

    retries counts re-prompts after the first attempt; a request that never
    yields schema-shaped JSON raises ResponseSchemaViolation.
    """
    req = request
    last: Exception | None = None
    for _ in range(retries + 1):
        text = client.complete(req)
        try:
            captions = _parse_captions(text, request.response_schema)
        except SchemaMismatch as exc:
            last = exc
            req = request.with_correction(
                f"The previous answer was rejected ({exc}). Reply again with valid JSON.")
            continue
        return CaptionRecord(
            image_id=request.query_image_id(),
            subject=request.response_schema.subject,
            captions=captions,
            lmm_model_id=client.model_id,
        )
    raise ResponseSchemaViolation(f"no schema-conforming answer after {retries} retries: {last}")


def caption_batch(
    client: LMMClient,
    requests: list[ICLRequest],
    max_in_flight: int = 4,
    retries: int = 2,
    transport_retries: int = 3,
    backoff: float = 0.5,
) -> list[CaptionRecord]:
    """Concurrent captioning with exponential backoff on transport errors."""

    def one(request: ICLRequest) -> CaptionRecord:
        for attempt in range(transport_retries + 1):
            try:
                return caption_image(client, request, retries=retries)
            except TransportError:
                if attempt == transport_retries:
                    raise
                time.sleep(backoff * (2 ** attempt))
        raise AssertionError("unreachable")

    with ThreadPoolExecutor(max_workers=max(1, max_in_flight)) as pool:
        return list(pool.map(one, requests))


@dataclass(frozen=True)
class PromptPair:
    """Rendered text conditioning: clothing-only reference, combined main."""

    reference_prompt: str
    main_prompt: str
    token_count_main: int
    token_count_ref: int


def count_tokens(text: str, tokenizer: Callable[[str], int] | None = None) -> int:
    """Whitespace word count, the desk-scale proxy for the encoder limit."""
    if tokenizer is not None:
        return tokenizer(text)
    return len(text.split())


def render_main_prompt(
    person: CaptionRecord,
    clothing: CaptionRecord,
    person_schema: AttributeSchema | None = None,
    clothing_schema: AttributeSchema | None = None,
    overrides: dict[str, str] | None = None,
    max_tokens: int = MAX_PROMPT_TOKENS,
    tokenizer: Callable[[str], int] | None = None,
) -> PromptPair:
    """Fill the fixed prompt template from two caption records.

    Template: "a {body shape} {gender} wears {clothing captions...},
    {remaining person captions...}, with {hand pose}."; every attribute
    appears exactly once, clothing captions first, in schema order. When
    schemas are omitted, the records' own key order stands in (records
    built by caption_image already carry schema order). The reference
    prompt is the comma-joined clothing captions alone.

    overrides swap in caller text for named attributes (the text-editing
    entry point); prompts over the token budget are refused, not truncated.
    """
    if person_schema is not None:
        person_schema.validate_captions(person.captions)
    if clothing_schema is not None:
        clothing_schema.validate_captions(clothing.captions)
    person_names = person_schema.names if person_schema else tuple(person.captions)
    clothing_names = clothing_schema.names if clothing_schema else tuple(clothing.captions)
    overrides = dict(overrides or {})
    unknown = set(overrides) - (set(person_names) | set(clothing_names))
    if unknown:
        raise SchemaMismatch(f"override keys not in any schema: {sorted(unknown)}")

    person_vals = {n: overrides.get(n, person.captions[n]) for n in person_names}
    clothing_vals = {n: overrides.get(n, clothing.captions[n]) for n in clothing_names}

    for needed in ("body shape", "gender", "hand pose"):
        if needed not in person_vals:
            raise SchemaMismatch(f"person captions lack {needed!r}, template cannot render")

    mid = [n for n in person_names if n not in ("body shape", "gender", "hand pose")]
    pieces = [clothing_vals[n] for n in clothing_names] + [person_vals[n] for n in mid]
    main = (f"a {person_vals['body shape']} {person_vals['gender']} wears "
            + ", ".join(pieces) + f", with {person_vals['hand pose']}.")
    ref = ", ".join(clothing_vals[n] for n in clothing_names)

    n_main = count_tokens(main, tokenizer)
    n_ref = count_tokens(ref, tokenizer)
    if n_main > max_tokens or n_ref > max_tokens:
        raise TokenBudgetExceeded(
            f"prompt over budget (main={n_main}, ref={n_ref}, limit={max_tokens})")
    return PromptPair(reference_prompt=ref, main_prompt=main,
                      token_count_main=n_main, token_count_ref=n_ref)
