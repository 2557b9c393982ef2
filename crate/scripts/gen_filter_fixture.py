#!/usr/bin/env python3
"""Writes the 1,000-document filter fixture (ASCII JSONL) used by the tests.

Usage: gen_filter_fixture.py <english_words.txt> <out.jsonl>
"""

import json
import random
import sys

SEED = 20240601
N_DOCS = 1000

STOPWORDS = ["the", "be", "to", "of", "and", "that", "have", "with"]
PUNCT = [".", ".", ".", "!", "?"]


def sentence(rng, vocab, n_words, stop_rate=0.25):
    words = []
    for _ in range(n_words):
        if rng.random() < stop_rate:
            words.append(rng.choice(STOPWORDS))
        else:
            words.append(rng.choice(vocab))
    words[0] = words[0].capitalize()
    return " ".join(words) + rng.choice(PUNCT)


def prose(rng, vocab, n_paragraphs, stop_rate=0.25):
    paras = []
    for _ in range(n_paragraphs):
        lines = []
        for _ in range(rng.randint(1, 4)):
            lines.append(" ".join(sentence(rng, vocab, rng.randint(6, 18), stop_rate) for _ in range(rng.randint(1, 3))))
        paras.append("\n".join(lines))
    return "\n\n".join(paras)


def gibberish_word(rng):
    return "".join(rng.choice("bcdfghjklmnpqrstvwxz") for _ in range(rng.randint(3, 9)))


def gibberish(rng, n_words):
    words = [gibberish_word(rng) for _ in range(n_words)]
    out, line = [], []
    for w in words:
        line.append(w)
        if len(line) >= rng.randint(8, 14):
            out.append(" ".join(line))
            line = []
    if line:
        out.append(" ".join(line))
    return "\n".join(out)


def repetitive_lines(rng, vocab):
    base = [sentence(rng, vocab, rng.randint(5, 10)) for _ in range(rng.randint(1, 3))]
    lines = [rng.choice(base) for _ in range(rng.randint(6, 20))]
    lines += [sentence(rng, vocab, 8) for _ in range(rng.randint(0, 3))]
    rng.shuffle(lines)
    return "\n".join(lines)


def repetitive_ngrams(rng, vocab):
    phrase = " ".join(rng.choice(vocab) for _ in range(rng.randint(2, 6)))
    parts = []
    for _ in range(rng.randint(8, 25)):
        parts.append(phrase)
        parts.append(" ".join(rng.choice(vocab + STOPWORDS) for _ in range(rng.randint(0, 6))))
    return " ".join(p for p in parts if p) + "."


def boilerplate(rng):
    items = []
    for _ in range(rng.randint(40, 120)):
        kind = rng.random()
        if kind < 0.4:
            items.append("https://www.example-%s.com/%s/%d" % (gibberish_word(rng), gibberish_word(rng), rng.randint(1, 9999)))
        elif kind < 0.7:
            items.append("%s_%s_%s" % (gibberish_word(rng), gibberish_word(rng), gibberish_word(rng)))
        else:
            items.append(rng.choice(["Home", "Login", "Cart", "|", "Menu", ">>", "(c)", "2024"]))
    return " ".join(items)


def noun_list(rng, vocab):
    content = [w for w in vocab if w not in STOPWORDS and len(w) > 3]
    lines = []
    for _ in range(rng.randint(6, 20)):
        lines.append(", ".join(rng.choice(content) for _ in range(rng.randint(3, 9))))
    return "\n".join(lines)


def short_note(rng, vocab):
    return sentence(rng, vocab, rng.randint(3, 30))


def mixed(rng, vocab):
    body = prose(rng, vocab, rng.randint(1, 3))
    junk = gibberish(rng, rng.randint(20, 120))
    return body + "\n\n" + junk if rng.random() < 0.5 else junk + "\n\n" + body


def main():
    words_path, out_path = sys.argv[1], sys.argv[2]
    with open(words_path) as f:
        vocab = [w.strip().lower() for w in f if w.strip()]
    rng = random.Random(SEED)

    kinds = [
        ("prose", 0.40),
        ("short", 0.07),
        ("gibberish", 0.08),
        ("replines", 0.07),
        ("repngram", 0.07),
        ("boilerplate", 0.06),
        ("nouns", 0.06),
        ("mixed", 0.09),
        ("dup", 0.10),
    ]
    docs = []
    for i in range(N_DOCS):
        r = rng.random()
        acc = 0.0
        kind = kinds[-1][0]
        for name, p in kinds:
            acc += p
            if r < acc:
                kind = name
                break
        if kind == "dup" and docs:
            # Exact copy, sometimes with extra outer whitespace.
            text = rng.choice(docs)["text"]
            if rng.random() < 0.5:
                text = "  \n" + text + "\n  "
        elif kind in ("prose", "dup"):
            text = prose(rng, vocab, rng.randint(1, 6), stop_rate=rng.choice([0.05, 0.25, 0.35]))
        elif kind == "short":
            text = short_note(rng, vocab)
        elif kind == "gibberish":
            text = gibberish(rng, rng.randint(30, 200))
        elif kind == "replines":
            text = repetitive_lines(rng, vocab)
        elif kind == "repngram":
            text = repetitive_ngrams(rng, vocab)
        elif kind == "boilerplate":
            text = boilerplate(rng)
        elif kind == "nouns":
            text = noun_list(rng, vocab)
        else:
            text = mixed(rng, vocab)
        docs.append({"id": "fx-%04d-%s" % (i, kind), "text": text, "source": "pool"})

    with open(out_path, "w") as f:
        for d in docs:
            f.write(json.dumps(d, ensure_ascii=True) + "\n")


if __name__ == "__main__":
    main()
