"""Synthetic multi-turn dialogue generator.

Utterances come from per-intent templates with slot values spliced in, so IOB
tags are positionally exact by construction. Gold system actions are computed
by a deterministic rule table over the current turn's intents and slot types
plus the previous turn's intents; the rule table is echoed into the manifest
so tests can replay it as an oracle. Dev/test splits draw slot values from a
held-out pool at a configured rate to exercise UNK handling.
"""

from __future__ import annotations

import copy
import json
import random
from pathlib import Path

from .corpus import Example, file_digest, write_corpus
from .errors import ValidationError

NULL_ACTION = "NULL"

# Default desk-scale spec: two domains, nine slot types, nine intents and a
# twelve-action inventory (NULL included) whose rules need one turn of history.
DEFAULT_SPEC: dict = {
    "domains": {
        "food": {
            "intents": {
                "greet": {
                    "templates": [
                        "hello there",
                        "good morning",
                        "hi guide",
                    ]
                },
                "thank": {
                    "templates": [
                        "thanks a lot",
                        "thank you so much",
                        "great thanks",
                    ]
                },
                "find_food": {
                    "templates": [
                        "any {dish} places in {area}",
                        "i want {dish} in {area}",
                        "looking for {dish} around {area}",
                        "where can i eat {dish}",
                    ]
                },
                "ask_price": {
                    "templates": [
                        "how much is {dish} at {restaurant}",
                        "what does {dish} cost at {restaurant}",
                        "price for {dish} please",
                    ]
                },
                "book_table": {
                    "templates": [
                        "book a table at {restaurant} on {day} at {time} for {count} people",
                        "reserve {restaurant} for {count} people on {day}",
                        "can you book {restaurant} at {time}",
                    ]
                },
                "ask_location": {
                    "templates": [
                        "where exactly is {restaurant}",
                        "how do i find {restaurant}",
                        "which street is {restaurant} on",
                    ]
                },
            }
        },
        "attraction": {
            "intents": {
                "find_attraction": {
                    "templates": [
                        "looking for {activity} near {area}",
                        "any {activity} options around {area}",
                        "we fancy {activity} in {area}",
                    ]
                },
                "ask_hours": {
                    "templates": [
                        "when does {place} open on {day}",
                        "what are opening hours for {place}",
                        "is {place} open on {day}",
                    ]
                },
                "ask_transport": {
                    "templates": [
                        "how do i get to {place} from {origin}",
                        "best route to {place} from {origin}",
                        "from {origin} to {place} how long",
                    ]
                },
            }
        },
    },
    "slots": {
        "dish": {
            "train_values": [
                "laksa",
                "satay",
                "chicken rice",
                "chilli crab",
                "fish soup",
                "roti prata",
                "nasi lemak",
            ],
            "eval_values": ["duck rice", "oyster omelette"],
        },
        "area": {
            "train_values": [
                "chinatown",
                "clarke quay",
                "orchard road",
                "little india",
                "marina bay",
                "bugis",
            ],
            "eval_values": ["tiong bahru", "holland village"],
        },
        "restaurant": {
            "train_values": [
                "maxwell centre",
                "lau pa sat",
                "newton circus",
                "tekka market",
                "food republic",
            ],
            "eval_values": ["amoy street", "golden mile"],
        },
        "day": {
            "train_values": [
                "monday",
                "tuesday",
                "wednesday",
                "friday",
                "next saturday",
                "this sunday",
            ],
            "eval_values": ["next tuesday"],
        },
        "time": {
            "train_values": ["noon", "seven pm", "eight thirty", "six pm", "nine am"],
            "eval_values": ["ten fifteen"],
        },
        "activity": {
            "train_values": [
                "hiking",
                "river cruise",
                "night safari",
                "bird watching",
                "street photography",
            ],
            "eval_values": ["kite flying"],
        },
        "place": {
            "train_values": [
                "sentosa island",
                "botanic gardens",
                "merlion park",
                "science centre",
                "night market",
            ],
            "eval_values": ["butterfly park"],
        },
        "origin": {
            "train_values": ["city hall", "changi airport", "harbour front", "hotel lobby"],
            "eval_values": ["raffles place"],
        },
        "count": {
            "train_values": ["two", "three", "four", "twenty two"],
            "eval_values": ["thirty five"],
        },
    },
    "actions": [
        "INFORM_FOOD",
        "ALTERNATIVE_FOOD",
        "INFORM_PRICE",
        "CONFIRM_BOOKING",
        "CHECK_AVAILABILITY",
        "INFORM_LOCATION",
        "INFORM_ATTRACTION",
        "RECOMMEND_COMBO",
        "INFORM_HOURS",
        "INFORM_ROUTE",
        "WELCOME",
        NULL_ACTION,
    ],
    # Deterministic mapping from semantics to the guide's action set: a turn's
    # actions are the union of every matching rule; no match means NULL.
    # prev_intent looks one turn back, so the predictor genuinely needs history.
    "rules": [
        {"intent": "find_food", "add": ["INFORM_FOOD"]},
        {"intent": "find_food", "prev_intent": "find_food", "add": ["ALTERNATIVE_FOOD"]},
        {"intent": "ask_price", "add": ["INFORM_PRICE"]},
        {"intent": "book_table", "add": ["CONFIRM_BOOKING"]},
        {"intent": "book_table", "slot": "count", "add": ["CHECK_AVAILABILITY"]},
        {"intent": "ask_location", "add": ["INFORM_LOCATION"]},
        {"intent": "find_attraction", "add": ["INFORM_ATTRACTION"]},
        {"intent": "find_attraction", "prev_intent": "find_food", "add": ["RECOMMEND_COMBO"]},
        {"intent": "ask_hours", "add": ["INFORM_HOURS"]},
        {"intent": "ask_transport", "add": ["INFORM_ROUTE"]},
        {"intent": "thank", "add": ["WELCOME"]},
    ],
    "follow_ups": {
        "greet": ["find_food", "find_attraction"],
        "find_food": ["ask_price", "book_table", "find_food", "find_attraction"],
        "ask_price": ["book_table", "find_food", "thank"],
        "book_table": ["ask_location", "thank"],
        "ask_location": ["thank", "find_attraction"],
        "find_attraction": ["ask_hours", "ask_transport", "find_attraction"],
        "ask_hours": ["ask_transport", "thank"],
        "ask_transport": ["thank", "find_food"],
        "thank": ["find_food", "find_attraction"],
    },
    "splits": {"train_sessions": 400, "dev_sessions": 80, "test_sessions": 80},
    "session_turns": [3, 7],
    "greet_prob": 0.6,
    "final_thank_prob": 0.5,
    "follow_up_prob": 0.55,
    "multi_intent_prob": 0.15,
    "unseen_word_rate": 0.07,
    "use_history_rules": True,
}


def default_spec() -> dict:
    return copy.deepcopy(DEFAULT_SPEC)


def _all_intents(spec: dict) -> dict[str, dict]:
    intents: dict[str, dict] = {}
    for domain in spec["domains"].values():
        intents.update(domain["intents"])
    return intents


def validate_spec(spec: dict) -> None:
    """Reject structurally inconsistent generator specs with field-level messages."""
    domains = spec.get("domains") or {}
    if len(domains) < 2:
        raise ValidationError("domains: at least 2 domains are required")
    intents = {}
    for dname, domain in domains.items():
        dintents = domain.get("intents") or {}
        if not dintents:
            raise ValidationError(f"domains.{dname}: no intents defined")
        for iname, intent in dintents.items():
            if iname in intents:
                raise ValidationError(f"domains.{dname}.intents.{iname}: duplicate intent name")
            if not intent.get("templates"):
                raise ValidationError(f"domains.{dname}.intents.{iname}: no templates")
            intents[iname] = intent
    slots = spec.get("slots") or {}
    for sname, slot in slots.items():
        if not slot.get("train_values"):
            raise ValidationError(f"slots.{sname}.train_values: must be non-empty")
    for iname, intent in intents.items():
        for ti, template in enumerate(intent["templates"]):
            for token in template.split():
                if token.startswith("{") and token.endswith("}"):
                    sname = token[1:-1]
                    if sname not in slots:
                        raise ValidationError(
                            f"intents.{iname}.templates[{ti}]: unknown slot {sname!r}"
                        )
    actions = spec.get("actions") or []
    if NULL_ACTION not in actions:
        raise ValidationError(f"actions: must include the waiting action {NULL_ACTION!r}")
    action_set = set(actions)
    for ri, rule in enumerate(spec.get("rules") or []):
        if rule.get("intent") not in intents:
            raise ValidationError(f"rules[{ri}].intent: unknown intent {rule.get('intent')!r}")
        if "prev_intent" in rule and rule["prev_intent"] not in intents:
            raise ValidationError(f"rules[{ri}].prev_intent: unknown intent {rule['prev_intent']!r}")
        if "slot" in rule and rule["slot"] not in slots:
            raise ValidationError(f"rules[{ri}].slot: unknown slot {rule['slot']!r}")
        for action in rule.get("add") or []:
            if action not in action_set:
                raise ValidationError(f"rules[{ri}].add: unknown action {action!r}")
    for iname, followers in (spec.get("follow_ups") or {}).items():
        if iname not in intents:
            raise ValidationError(f"follow_ups.{iname}: unknown intent")
        for f in followers:
            if f not in intents:
                raise ValidationError(f"follow_ups.{iname}: unknown follow-up intent {f!r}")
    splits = spec.get("splits") or {}
    for key in ("train_sessions", "dev_sessions", "test_sessions"):
        if int(splits.get(key, 0)) <= 0:
            raise ValidationError(f"splits.{key}: must be a positive integer")
    lo, hi = spec.get("session_turns", [0, 0])
    if not (1 <= int(lo) <= int(hi)):
        raise ValidationError("session_turns: expected [lo, hi] with 1 <= lo <= hi")
    for key in ("multi_intent_prob", "unseen_word_rate", "greet_prob", "follow_up_prob", "final_thank_prob"):
        v = float(spec.get(key, 0.0))
        if not 0.0 <= v < 1.0:
            raise ValidationError(f"{key}: must be in [0, 1)")


def replay_actions(
    rules: list[dict],
    cur_intents: set[str],
    cur_slot_types: set[str],
    prev_intents: set[str] | None,
    use_history: bool = True,
) -> set[str]:
    """Recompute a turn's gold actions from the rule table (the oracle mapping)."""
    fired: set[str] = set()
    for rule in rules:
        if rule["intent"] not in cur_intents:
            continue
        if "slot" in rule and rule["slot"] not in cur_slot_types:
            continue
        if "prev_intent" in rule:
            if not use_history:
                continue
            if prev_intents is None or rule["prev_intent"] not in prev_intents:
                continue
        fired.update(rule["add"])
    return fired or {NULL_ACTION}


def slot_types_of(tags: list[str]) -> set[str]:
    return {t[2:] for t in tags if t != "O"}


def _render_intent(
    intent_name: str,
    spec: dict,
    rng: random.Random,
    eval_split: bool,
) -> tuple[list[str], list[str]]:
    intents = _all_intents(spec)
    template = rng.choice(intents[intent_name]["templates"])
    words: list[str] = []
    tags: list[str] = []
    for token in template.split():
        if token.startswith("{") and token.endswith("}"):
            sname = token[1:-1]
            slot = spec["slots"][sname]
            pool = slot["train_values"]
            if eval_split and slot.get("eval_values") and rng.random() < spec["unseen_word_rate"]:
                pool = slot["eval_values"]
            value_tokens = rng.choice(pool).split()
            words.extend(value_tokens)
            tags.append(f"B-{sname}")
            tags.extend(f"I-{sname}" for _ in value_tokens[1:])
        else:
            words.append(token)
            tags.append("O")
    return words, tags


def _pick_intents(
    spec: dict,
    rng: random.Random,
    turn: int,
    n_turns: int,
    prev_intents: set[str] | None,
) -> list[str]:
    content = [i for i in _all_intents(spec) if i not in ("greet", "thank")]
    follow_ups = spec.get("follow_ups", {})
    if turn == 0 and rng.random() < spec["greet_prob"]:
        return ["greet"]
    if turn == n_turns - 1 and rng.random() < spec["final_thank_prob"]:
        return ["thank"]
    first: str | None = None
    if prev_intents and rng.random() < spec["follow_up_prob"]:
        anchor = rng.choice(sorted(prev_intents))
        options = follow_ups.get(anchor)
        if options:
            first = rng.choice(options)
    if first is None:
        first = rng.choice(content)
    picked = [first]
    if first in content and rng.random() < spec["multi_intent_prob"]:
        extra = rng.choice([i for i in content if i != first])
        picked.append(extra)
    return picked


def _gen_session(
    spec: dict, rng: random.Random, session_id: str, eval_split: bool
) -> list[Example]:
    lo, hi = spec["session_turns"]
    n_turns = rng.randint(int(lo), int(hi))
    use_history = bool(spec.get("use_history_rules", True))
    prev_intents: set[str] | None = None
    session: list[Example] = []
    for t in range(n_turns):
        intent_list = _pick_intents(spec, rng, t, n_turns, prev_intents)
        words: list[str] = []
        tags: list[str] = []
        for j, intent in enumerate(intent_list):
            if j > 0:
                words.append("and")
                tags.append("O")
            w, g = _render_intent(intent, spec, rng, eval_split)
            words.extend(w)
            tags.extend(g)
        intents = set(intent_list)
        actions = replay_actions(
            spec["rules"], intents, slot_types_of(tags), prev_intents, use_history=use_history
        )
        session.append(
            Example(
                session_id=session_id,
                turn_index=t,
                words=words,
                tags=tags,
                intents=intents,
                actions=actions,
            )
        )
        prev_intents = intents
    return session


def gen_synthetic(spec: dict | None, seed: int, out_dir) -> dict:
    """Generate train/dev/test corpus files plus a manifest; returns the manifest.

    Same (spec, seed) always produces byte-identical files.
    """
    spec = default_spec() if spec is None else copy.deepcopy(spec)
    validate_spec(spec)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = random.Random(seed)
    split_sessions = {
        "train": int(spec["splits"]["train_sessions"]),
        "dev": int(spec["splits"]["dev_sessions"]),
        "test": int(spec["splits"]["test_sessions"]),
    }
    manifest: dict = {
        "format": "dialact-corpus",
        "version": 1,
        "seed": seed,
        "null_action": NULL_ACTION,
        "use_history_rules": bool(spec.get("use_history_rules", True)),
        "rules": spec["rules"],
        "spec": spec,
        "splits": {},
        "files": {},
    }
    train_tags: set[str] = set()
    train_intents: set[str] = set()
    train_actions: set[str] = set()
    train_words: set[str] = set()
    for split, n_sessions in split_sessions.items():
        sessions = [
            _gen_session(spec, rng, f"{split}-{i:04d}", eval_split=(split != "train"))
            for i in range(n_sessions)
        ]
        path = out / f"{split}.jsonl"
        write_corpus(sessions, path)
        n_utts = sum(len(s) for s in sessions)
        manifest["splits"][split] = {"sessions": n_sessions, "utterances": n_utts}
        manifest["files"][path.name] = file_digest(path)
        if split == "train":
            for session in sessions:
                for ex in session:
                    train_tags.update(ex.tags)
                    train_intents.update(ex.intents)
                    train_actions.update(ex.actions)
                    train_words.update(ex.words)
    # +1 everywhere for the reserved UNK id (and one more reserved PAD id for words)
    manifest["vocab_sizes"] = {
        "words": len(train_words) + 2,
        "M_tags": len(train_tags) + 1,
        "N_intents": len(train_intents) + 1,
        "K_actions": len(train_actions) + 1,
    }
    manifest_path = out / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return manifest
