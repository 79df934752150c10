"""Free-text caption -> canonical caption.

The offline default is a small rule table (number words, time phrases,
verb forms). An optional chat-completion endpoint can be used instead; its
reply must parse under the caption grammar, with one retry.
"""

from __future__ import annotations

import json
import logging
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import httpx

from .captions import CaptionError, parse_frequency_caption, parse_timestamp_caption

log = logging.getLogger(__name__)

TOKEN_ENV = "TEMPOAUDIO_LLM_TOKEN"

_NUMBER_WORDS = {
    "zero": 0, "one": 1, "two": 2, "three": 3, "four": 4, "five": 5, "six": 6, "seven": 7,
    "eight": 8, "nine": 9, "ten": 10, "eleven": 11, "twelve": 12, "thirteen": 13,
    "fourteen": 14, "fifteen": 15, "sixteen": 16, "seventeen": 17, "eighteen": 18,
    "nineteen": 19, "twenty": 20,
}

# surface forms -> canonical class name (subject words, verb forms)
_EVENT_FORMS = {
    "dog barking": ({"dog", "dogs"}, {"bark", "barks", "barked", "barking"}),
    "door knocking": ({"door", "doors"}, {"knock", "knocks", "knocked", "knocking"}),
    "door slamming": ({"door", "doors"}, {"slam", "slams", "slammed", "slamming"}),
    "gunshot": ({"gunshot", "gunshots", "gun"}, {"shot", "shots", "fires", "fired", "firing", ""}),
    "cow mooing": ({"cow", "cows"}, {"moo", "moos", "mooed", "mooing"}),
    "keyboard typing": ({"keyboard", "someone", "person"}, {"type", "types", "typed", "typing"}),
    "bird chirping": ({"bird", "birds"}, {"chirp", "chirps", "chirped", "chirping", "tweeting"}),
    "cat meowing": ({"cat", "cats"}, {"meow", "meows", "meowed", "meowing"}),
    "car horn": ({"car", "horn"}, {"horn", "honks", "honked", "honking", "honk"}),
    "church bell": ({"church", "bell", "bells"}, {"bell", "bells", "rings", "ringing", "tolls", "tolling"}),
    "clapping": ({"clapping", "people", "someone", "audience", "applause"}, {"clap", "claps", "clapped", "clapping", "applause"}),
    "coughing": ({"coughing", "someone", "person", "man", "woman"}, {"cough", "coughs", "coughed", "coughing"}),
    "duck quacking": ({"duck", "ducks"}, {"quack", "quacks", "quacked", "quacking"}),
    "explosion": ({"explosion", "explosions", "bomb"}, {"explodes", "exploded", "exploding", "explosion", ""}),
    "glass breaking": ({"glass"}, {"break", "breaks", "broke", "breaking", "shatters", "shattered", "shattering"}),
    "phone ringing": ({"phone", "telephone", "phones"}, {"ring", "rings", "rang", "ringing"}),
    "rooster crowing": ({"rooster", "roosters", "cock"}, {"crow", "crows", "crowed", "crowing"}),
    "whistling": ({"whistling", "someone", "person", "man", "woman", "whistle"}, {"whistle", "whistles", "whistled", "whistling", ""}),
}

_FILLER = {"a", "an", "the", "occurred", "occurs", "occurring", "is", "was", "are", "were",
           "heard", "can", "be", "sound", "sounds", "of", "there", "seconds", "second", "secs", "s"}

_BETWEEN = re.compile(r"\b(?:between|from)\s+(\d+(?:\.\d+)?)\s*(?:s|sec|secs|seconds?)?\s+(?:and|to)\s+(\d+(?:\.\d+)?)")
_DURING = re.compile(r"\b(?:during|at|in)\s+(\d+(?:\.\d+)?\s*-\s*\d+(?:\.\d+)?(?:\s*,\s*\d+(?:\.\d+)?\s*-\s*\d+(?:\.\d+)?)*)")
_COUNT = re.compile(r"\b(\d+)\s+times?\b|\b(once|twice|thrice)\b")


class NormalizationError(CaptionError):
    def __init__(self, message: str, replies: Sequence[str] = ()):
        self.replies = list(replies)
        super().__init__(message + (f"; replies: {self.replies!r}" if self.replies else ""))


@dataclass
class NormalizeResult:
    caption: str
    kind: str  # "timestamp" | "frequency"
    source: str  # "rule" | "llm"
    warning: str | None = None
    replies: list[str] = field(default_factory=list)


class ChatClient(Protocol):
    def complete(self, messages: list[dict]) -> str: ...


@dataclass
class HttpChatClient:
    """Minimal OpenAI-style chat-completion client; safe to share across threads."""

    endpoint: str
    model: str
    token_env: str = TOKEN_ENV
    timeout: float = 30.0
    transport: httpx.BaseTransport | None = None  # injectable for tests

    def complete(self, messages: list[dict]) -> str:
        token = os.environ.get(self.token_env, "")
        with httpx.Client(transport=self.transport, timeout=self.timeout) as client:
            resp = client.post(
                self.endpoint,
                json={"model": self.model, "messages": messages},
                headers={"Authorization": f"Bearer {token}"},
            )
        resp.raise_for_status()
        return resp.json()["choices"][0]["message"]["content"]


def classify(caption: str, class_names: Sequence[str] | None = None) -> str | None:
    """Which grammar ``caption`` parses under, or None."""
    try:
        parse_timestamp_caption(caption, class_names=class_names)
        return "timestamp"
    except CaptionError:
        pass
    try:
        parse_frequency_caption(caption, class_names=class_names)
        return "frequency"
    except CaptionError:
        return None


def _digits(text: str) -> str:
    return re.sub(r"\b(" + "|".join(_NUMBER_WORDS) + r")\b", lambda m: str(_NUMBER_WORDS[m.group(1)]), text)


def _event_name(phrase: str, class_names: Sequence[str] | None) -> str:
    words = [w for w in re.findall(r"[a-z']+", phrase) if w not in _FILLER]
    joined = " ".join(words)
    names = list(class_names) if class_names is not None else list(_EVENT_FORMS)
    if joined in names:
        return joined
    best, best_score = None, 0
    for name in names:
        subjects, verbs = _EVENT_FORMS.get(name, ({name.split()[0]}, {name.split()[-1]}))
        has_subject = any(w in subjects for w in words)
        has_verb = any(w in verbs for w in words) or "" in verbs
        score = 2 * has_subject + has_verb + (has_subject and any(w in verbs and w for w in words))
        if has_subject and has_verb and score > best_score:
            best, best_score = name, score
    if best is None:
        raise CaptionError(f"no known event in {phrase.strip()!r}")
    return best


def rule_normalize(text: str, class_names: Sequence[str] | None = None) -> NormalizeResult:
    """Rewrite simple English descriptions into a canonical caption."""
    raw = re.sub(r"\s+", " ", text.strip().lower()).rstrip(".!")
    kind = classify(raw, class_names)
    if kind:
        return NormalizeResult(raw, kind, "rule")
    t = _digits(raw)
    t = _BETWEEN.sub(lambda m: f" at {m.group(1)}-{m.group(2)}", t)
    t = re.sub(r"\bthen\b", "and", t)
    clauses = [c for c in re.split(r",?\s*\band\b\s*", t) if c.strip()]
    out, kinds = [], set()
    for clause in clauses:
        ts, cnt = _DURING.search(clause), _COUNT.search(clause)
        if ts:
            spans = re.sub(r"\s*-\s*", "-", ts.group(1))
            spans = re.sub(r"\s*,\s*", ", ", spans)
            name = _event_name(clause[: ts.start()] + " " + clause[ts.end():], class_names)
            out.append(f"{name} at {spans}")
            kinds.add("timestamp")
        elif cnt:
            k = int(cnt.group(1)) if cnt.group(1) else {"once": 1, "twice": 2, "thrice": 3}[cnt.group(2)]
            name = _event_name(clause[: cnt.start()] + " " + clause[cnt.end():], class_names)
            out.append(f"{name} {k} times")
            kinds.add("frequency")
        else:
            raise CaptionError(f"no timestamp or count in {clause.strip()!r}")
    if len(kinds) != 1:
        raise CaptionError(f"mixed or empty caption {text!r}")
    caption = " and ".join(out)
    kind = classify(caption, class_names)
    if kind is None:
        if caption[:1].isalpha() and " at " in caption:
            parse_timestamp_caption(caption, class_names=class_names)  # raises the precise error
        raise CaptionError(f"could not normalize {text!r} (got {caption!r})")
    return NormalizeResult(caption, kind, "rule")


_INSTRUCTIONS = (
    "Rewrite the user's audio description into exactly one canonical caption and nothing else. "
    "Timestamp form: '<event> at <on>-<off>, <on>-<off> and <event> at <on>-<off>' with times in seconds "
    "inside a {clip:g} s clip. Frequency form: '<event> <k> times and <event> <k> times'. "
    "If the description asks for counts, ordering, intervals, or durations, convert it to the timestamp form, "
    "choosing plausible durations as in the examples. Allowed events: {events}."
)


def build_messages(text: str, examples: Sequence[tuple[str, str]], class_names: Sequence[str],
                   clip_length: float = 10.0) -> list[dict]:
    messages = [{"role": "system", "content": _INSTRUCTIONS.format(clip=clip_length, events=", ".join(class_names))}]
    for raw, canonical in examples:
        messages.append({"role": "user", "content": raw})
        messages.append({"role": "assistant", "content": canonical})
    messages.append({"role": "user", "content": text})
    return messages


def llm_normalize(text: str, client: ChatClient | None = None,
                  examples: Sequence[tuple[str, str]] = (),
                  class_names: Sequence[str] | None = None,
                  clip_length: float = 10.0) -> NormalizeResult:
    if client is None:
        return rule_normalize(text, class_names)
    if not examples:
        raise ValueError("llm_normalize needs at least one few-shot example")
    names = list(class_names) if class_names is not None else list(_EVENT_FORMS)
    messages = build_messages(text, examples, names, clip_length)
    replies: list[str] = []
    for _ in range(2):
        try:
            reply = client.complete(messages)
        except (httpx.HTTPError, OSError, KeyError, ValueError) as exc:
            log.warning("LLM request failed (%s); using rule-based normalizer", exc)
            result = rule_normalize(text, class_names)
            result.warning = f"llm unavailable: {exc}"
            result.replies = replies
            return result
        reply = reply.strip().strip('"').strip()
        replies.append(reply)
        kind = classify(reply, class_names)
        if kind:
            return NormalizeResult(reply, kind, "llm", replies=replies)
        messages = messages + [
            {"role": "assistant", "content": reply},
            {"role": "user", "content": "That does not match either caption format. Reply with the caption only."},
        ]
    raise NormalizationError(f"unparseable LLM reply for {text!r}", replies)


def examples_from_manifest(path: str | Path, limit: int = 300) -> list[tuple[str, str]]:
    """Few-shot pairs (frequency caption -> timestamp caption) from a simulated manifest."""
    pairs = []
    with open(path) as fh:
        for line in fh:
            rec = json.loads(line)
            if rec.get("frequency_caption"):
                pairs.append((rec["frequency_caption"], rec["timestamp_caption"]))
            if len(pairs) >= limit:
                break
    return pairs
