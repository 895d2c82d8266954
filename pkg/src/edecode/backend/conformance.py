"""Golden-transcript conformance suite for protocol backends.

The corpus in backend/data/conformance_corpus.json pins the message-level
contract: shapes, ordering, positions, and error codes. Any backend
implementation — the in-process synthetic one, the same backend behind a
child process, or an external model adapter — must produce responses
matching every case.

Expected values in the corpus are either exact JSON values or small
matcher objects:

    {"$bind": name, "kind": "posint"|"int"|"bool"}   type-check and record
    "$name"                                          equality with a bound value
    {"$b64f32": n | "$name"}                         base64 float32 array of length n
    {"$intlist": true, "min_len": n}                 list of ints, at least n long
    {"$str": true}                                   any string
    {"$any": true}                                   anything

After a hello_ack, vocab_size/grid_side/layer_count/head_count/eos_token
are bound automatically, plus the derived $attn_values =
layer_count * head_count * grid_side^2.
"""

from __future__ import annotations

import base64
import json
from importlib import resources


def load_corpus() -> dict:
    text = resources.files("edecode").joinpath("backend/data/conformance_corpus.json").read_text()
    return json.loads(text)


def _resolve(expr, bindings):
    if isinstance(expr, str) and expr.startswith("$"):
        name = expr[1:]
        if name not in bindings:
            raise AssertionError(f"corpus references unbound ${name}")
        return bindings[name]
    return expr


def _match(expected, actual, bindings, path: str, errors: list[str]):
    if isinstance(expected, dict):
        if "$any" in expected:
            return
        if "$bind" in expected:
            kind = expected.get("kind", "int")
            ok = {
                "posint": lambda v: isinstance(v, int) and not isinstance(v, bool) and v > 0,
                "int": lambda v: isinstance(v, int) and not isinstance(v, bool),
                "bool": lambda v: isinstance(v, bool),
            }[kind](actual)
            if not ok:
                errors.append(f"{path}: expected {kind}, got {actual!r}")
            else:
                bindings[expected["$bind"]] = actual
            return
        if "$b64f32" in expected:
            want = _resolve(expected["$b64f32"], bindings)
            if not isinstance(actual, str):
                errors.append(f"{path}: expected base64 string, got {type(actual).__name__}")
                return
            try:
                raw = base64.b64decode(actual, validate=True)
            except Exception:
                errors.append(f"{path}: invalid base64")
                return
            if len(raw) != 4 * want:
                errors.append(f"{path}: {len(raw)} bytes, expected {4 * want} (f32 x {want})")
            return
        if "$intlist" in expected:
            if not isinstance(actual, list) or not all(
                isinstance(v, int) and not isinstance(v, bool) for v in actual
            ):
                errors.append(f"{path}: expected a list of ints, got {actual!r}")
                return
            if len(actual) < expected.get("min_len", 0):
                errors.append(f"{path}: list of {len(actual)} < min_len {expected['min_len']}")
            return
        if "$str" in expected:
            if not isinstance(actual, str):
                errors.append(f"{path}: expected a string, got {type(actual).__name__}")
            return
        if not isinstance(actual, dict):
            errors.append(f"{path}: expected an object, got {actual!r}")
            return
        for key, sub in expected.items():
            if key not in actual:
                errors.append(f"{path}.{key}: missing")
                continue
            _match(sub, actual[key], bindings, f"{path}.{key}", errors)
        return
    if isinstance(expected, str) and expected.startswith("$"):
        want = _resolve(expected, bindings)
        if actual != want:
            errors.append(f"{path}: expected {want!r} (={expected}), got {actual!r}")
        return
    if expected != actual:
        errors.append(f"{path}: expected {expected!r}, got {actual!r}")


def run_conformance(send) -> list[str]:
    """Drive one connection through the whole corpus; returns failures.

    `send` is a callable mapping one request dict to one response dict
    over a single live connection (the corpus opens with its own hello
    and finishes by closing the session).
    """
    corpus = load_corpus()
    bindings: dict = {}
    errors: list[str] = []
    for case in corpus["cases"]:
        for i, step in enumerate(case["steps"]):
            where = f"{case['name']}[{i}]"
            try:
                response = send(step["send"])
            except Exception as exc:
                errors.append(f"{where}: transport failure: {exc}")
                return errors
            if not isinstance(response, dict):
                errors.append(f"{where}: response is not an object: {response!r}")
                continue
            _match(step["expect"], response, bindings, where, errors)
            if response.get("type") == "hello_ack" and "grid_side" in bindings:
                bindings["attn_values"] = (
                    bindings["layer_count"]
                    * bindings["head_count"]
                    * bindings["grid_side"] ** 2
                )
    return errors


def check_determinism(make_send) -> list[str]:
    """Replay a short stream twice on fresh connections; logits must agree.

    Applies only to backends that advertise deterministic=true in their
    hello_ack; returns [] for non-deterministic backends.
    """
    corpus = load_corpus()
    hello = corpus["cases"][0]["steps"][0]["send"]
    stream = next(c for c in corpus["cases"] if c["name"] == "original_stream_lifecycle")

    def collect():
        send = make_send()
        ack = send(hello)
        if not ack.get("deterministic", False):
            return None
        outs = []
        for step in stream["steps"][:3]:  # init + prefill + one token
            outs.append(send(step["send"]))
        send({"type": "close"})
        return [o.get("logits") for o in outs if o.get("type") == "step_out"]

    first = collect()
    if first is None:
        return []
    second = collect()
    errors = []
    if first != second:
        errors.append("deterministic backend produced differing logits across runs")
    if not first:
        errors.append("determinism probe saw no step_out messages")
    return errors
