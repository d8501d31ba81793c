"""Shared test fixtures: toy corpora and scripted decoder stubs."""

import json

import numpy as np

from docqg import corpus

NAMES = ["acme", "borealis", "cascade", "dynamo", "everest", "fulcrum",
         "gemini", "horizon"]
PERSONS = ["alvarez", "bennett", "castillo", "dimitrov", "eriksen",
           "fontaine", "grimaldi", "holloway"]
PRODUCTS = ["engines", "telescopes", "turbines", "lanterns", "compasses",
            "pianos", "sailboats", "kettles"]
CITIES = ["lisbon", "oslo", "quito", "reykjavik", "sapporo", "tunis",
          "valencia", "windhoek"]
YEARS = ["1895", "1907", "1923", "1948", "1951", "1969", "1977", "1984"]

_QUESTIONS = [
    ("what year was the {name} company founded ?", "year"),
    ("who founded the {name} company ?", "person"),
    ("what does the {name} company make ?", "product"),
    ("where is the {name} company based ?", "city"),
]


def toy_records(n=32, seed=5):
    """Templated founder/product/city facts; every question token is either a
    frequent word or copyable from the document."""
    rng = np.random.default_rng(seed)
    records = []
    for i in range(n):
        name = NAMES[i % len(NAMES)]
        person = PERSONS[int(rng.integers(len(PERSONS)))]
        product = PRODUCTS[int(rng.integers(len(PRODUCTS)))]
        city = CITIES[int(rng.integers(len(CITIES)))]
        year = YEARS[int(rng.integers(len(YEARS)))]
        doc = (f"the {name} company was founded in {year} by {person} . "
               f"it makes {product} and is based in {city} .")
        template, slot = _QUESTIONS[i % len(_QUESTIONS)]
        question = template.format(name=name)
        answer = {"year": year, "person": person, "product": product,
                  "city": city}[slot]
        records.append({
            "id": f"toy{i}",
            "document": doc,
            "question": question,
            "answer_text": answer,
            "answer_char_start": doc.index(answer),
        })
    return records


def write_jsonl(records, path):
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")
    return path


def toy_examples(n=32, seed=5):
    return [corpus.parse_example(r) for r in toy_records(n=n, seed=seed)]


class ScriptedStepper:
    """Stub stepper emitting fixed per-step distributions (cycled when the
    script is shorter than the decode)."""

    def __init__(self, distributions, sos_id=0, eos_id=1):
        self.distributions = [np.asarray(d, dtype=np.float64)
                              for d in distributions]
        self.sos_id = sos_id
        self.eos_id = eos_id
        self.ext_size = len(self.distributions[0])

    def initial_state(self):
        return 0

    def step(self, prev_id, state):
        probs = self.distributions[min(state, len(self.distributions) - 1)]
        return probs, state + 1, None


class MarkovStepper:
    """Stub whose distribution depends on the previous token, so beam search
    genuinely has to look ahead."""

    def __init__(self, table, sos_id=0, eos_id=1):
        self.table = {k: np.asarray(v, dtype=np.float64)
                      for k, v in table.items()}
        self.sos_id = sos_id
        self.eos_id = eos_id
        self.ext_size = len(next(iter(self.table.values())))

    def initial_state(self):
        return None

    def step(self, prev_id, state):
        return self.table[prev_id], None, None


def enumerate_best(stepper, max_len, length_normalize=False):
    """Brute-force argmax over every sequence of length <= max_len, scoring
    exactly like beam search (EOS log-probability included)."""
    best = (None, -np.inf)

    def recurse(prefix, state, logp, prev):
        nonlocal best
        probs, nstate, _ = stepper.step(prev, state)
        with np.errstate(divide="ignore"):
            logs = np.log(probs)
        # finish here
        if np.isfinite(logs[stepper.eos_id]):
            total = logp + logs[stepper.eos_id]
            steps = len(prefix) + 1
            score = total / max(steps, 1) if length_normalize else total
            if score > best[1]:
                best = (list(prefix), score)
        if len(prefix) < max_len - 1:
            for tok in range(stepper.ext_size):
                if tok == stepper.eos_id or not np.isfinite(logs[tok]):
                    continue
                recurse(prefix + [tok], nstate, logp + logs[tok], tok)

    recurse([], stepper.initial_state(), 0.0, stepper.sos_id)
    return best
