#!/usr/bin/env python3
"""Brute-force recount of every filter preset over a document fixture.

Written from the filter definitions alone; shares no code with the Rust crate.
Usage: filter_oracle.py <english_words.txt> <fixture.jsonl> <out.json>
"""

import json
import math
import re
import sys
from collections import Counter

STOPWORDS = ["the", "be", "to", "of", "and", "that", "have", "with"]
ENGLISH_THRESHOLD = 0.5
STOPWORD_MIN = 2
QUALITY_KEEP = 0.16
GOPHER = {
    "duplicate_line": 0.30,
    "duplicate_paragraph": 0.30,
    "duplicate_line_char": 0.20,
    "duplicate_paragraph_char": 0.20,
    "top_2gram": 0.20,
    "top_3gram": 0.18,
    "top_4gram": 0.16,
    "dup_5gram": 0.15,
    "dup_6gram": 0.14,
    "dup_7gram": 0.13,
    "dup_8gram": 0.12,
    "dup_9gram": 0.11,
    "dup_10gram": 0.10,
}
EDGE = re.compile(r"^[^0-9A-Za-z]+|[^0-9A-Za-z]+$")


def norm_words(text):
    out = []
    for raw in text.split():
        w = EDGE.sub("", raw)
        if w:
            out.append(w.lower())
    return out


def english_score(text, wordset):
    ws = norm_words(text)
    if not ws:
        return 0.0
    return sum(1 for w in ws if w in wordset) / len(ws)


def quality_score(text, wordset):
    lines = [l.strip() for l in text.split("\n") if l.strip()]
    if not lines:
        return 0.0
    terminal = sum(1 for l in lines if l.endswith((".", "!", "?", '"', "'"))) / len(lines)
    words = text.split()
    mean_len = sum(len(w) for w in words) / max(len(words), 1)
    if 3.0 <= mean_len <= 7.0:
        length_term = 1.0
    elif mean_len < 3.0:
        length_term = min(max((mean_len - 1.0) / 2.0, 0.0), 1.0)
    else:
        length_term = min(max((12.0 - mean_len) / 5.0, 0.0), 1.0)
    return (english_score(text, wordset) + terminal + length_term) / 3.0


def seg_fracs(segs):
    if not segs:
        return 0.0, 0.0
    dup_n = dup_c = total_c = 0
    for i, s in enumerate(segs):
        total_c += len(s)
        if s in segs[:i]:
            dup_n += 1
            dup_c += len(s)
    return dup_n / len(segs), (dup_c / total_c if total_c else 0.0)


def paragraphs(text):
    paras, cur = [], []
    for line in text.split("\n"):
        line = line.strip()
        if not line:
            if cur:
                paras.append("\n".join(cur))
                cur = []
        else:
            cur.append(line)
    if cur:
        paras.append("\n".join(cur))
    return paras


def covered_chars(words, starts, n):
    cov = set()
    for s in starts:
        cov.update(range(s, s + n))
    return sum(len(words[i]) for i in cov)


def repetition(text):
    out = {}
    lines = [l.strip() for l in text.split("\n") if l.strip()]
    out["duplicate_line"], out["duplicate_line_char"] = seg_fracs(lines)
    out["duplicate_paragraph"], out["duplicate_paragraph_char"] = seg_fracs(paragraphs(text))
    words = text.split()
    total = sum(len(w) for w in words)
    grams = {}
    for n in range(2, 11):
        occ = {}
        for s in range(len(words) - n + 1):
            occ.setdefault(tuple(words[s:s + n]), []).append(s)
        grams[n] = occ
    for n in range(2, 5):
        occ = grams[n]
        top = max((len(v) for v in occ.values()), default=0)
        if total == 0 or top < 2:
            out["top_%dgram" % n] = 0.0
        else:
            out["top_%dgram" % n] = max(covered_chars(words, v, n) for v in occ.values() if len(v) == top) / total
    for n in range(5, 11):
        starts = [s for v in grams[n].values() if len(v) >= 2 for s in v]
        out["dup_%dgram" % n] = covered_chars(words, starts, n) / total if total else 0.0
    return out


def keep(stage, text, wordset):
    if stage == "english":
        return english_score(text, wordset) >= ENGLISH_THRESHOLD
    if stage == "repetition":
        f = repetition(text)
        return all(f[k] <= t for k, t in GOPHER.items())
    if stage == "stopword":
        return sum(1 for w in norm_words(text) if w in STOPWORDS) >= STOPWORD_MIN
    if stage == "word_count":
        return 50 <= len(text.split()) <= 100000
    if stage == "mean_word_length":
        ws = text.split()
        mean = sum(len(w) for w in ws) / len(ws) if ws else 0.0
        return 3.0 <= mean <= 10.0
    raise ValueError(stage)


PRESETS = {
    "english": ["english"],
    "repetition": ["repetition"],
    "stopword": ["stopword"],
    "refinedweb": ["word_count", "mean_word_length", "english", "repetition", "stopword"],
    "dclm_baseline": ["word_count", "mean_word_length", "english", "repetition", "stopword", "dedup", "quality"],
}


def tokens(doc):
    return len(doc["text"].split())


def run(stages, docs, wordset):
    report = []
    cur = docs
    for stage in stages:
        if stage == "dedup":
            seen, nxt = set(), []
            for d in cur:
                key = d["text"].strip()
                if key not in seen:
                    seen.add(key)
                    nxt.append(d)
        elif stage == "quality":
            n = len(cur)
            k = 0 if n == 0 else min(max(math.ceil(QUALITY_KEEP * n - 1e-9), 1), n)
            ranked = sorted(cur, key=lambda d: (-quality_score(d["text"], wordset), d["id"]))
            chosen = {d["id"] for d in ranked[:k]}
            nxt = [d for d in cur if d["id"] in chosen]
        else:
            nxt = [d for d in cur if keep(stage, d["text"], wordset)]
        report.append({
            "stage": stage,
            "docs_in": len(cur),
            "docs_kept": len(nxt),
            "tokens_in": sum(tokens(d) for d in cur),
            "tokens_kept": sum(tokens(d) for d in nxt),
        })
        cur = nxt
    return {"stages": report, "kept_ids": [d["id"] for d in cur]}


def main():
    words_path, fixture_path, out_path = sys.argv[1:4]
    with open(words_path) as f:
        wordset = {w.strip().lower() for w in f if w.strip()}
    with open(fixture_path) as f:
        docs = [json.loads(l) for l in f if l.strip()]
    out = {
        "fixture": fixture_path.rsplit("/", 1)[-1],
        "documents": len(docs),
        "counter": "whitespace",
        "pipelines": {name: run(stages, docs, wordset) for name, stages in PRESETS.items()},
    }
    with open(out_path, "w") as f:
        json.dump(out, f, indent=1)
        f.write("\n")


if __name__ == "__main__":
    main()
