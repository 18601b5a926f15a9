#!/usr/bin/env python3
# Copyright 2026  The cngop Authors
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#  http://www.apache.org/licenses/LICENSE-2.0
#
# THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
# KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
# WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
# MERCHANTABLITY OR NON-INFRINGEMENT.
# See the Apache 2 License for the specific language governing permissions and
# limitations under the License.
"""Writes the seeded synthetic demo corpus into data/demo.

Every hypothesis is the true sentence corrupted independently (substitution
by a confusable word, deletion, insertion), with log scores drawn
independently of the corruption. The script also prints 1-best and
consensus-decode WER counts computed by its own reference implementations;
the acceptance suite freezes those numbers.

Usage: gen_demo_fixture.py [OUT_DIR]
"""

import json
import math
import os
import random
import sys

SEED = 20240611
N_HYPS = 8
P_SUB, P_DEL, P_INS = 0.16, 0.05, 0.05
FRAME_DIM = 4

LEXICON = {
    "a": ["AH"], "at": ["AE T"], "bat": ["B AE T"], "big": ["B IH G"],
    "birds": ["B ER D Z"], "by": ["B AY"], "cafe": ["K AE F EY"],
    "cat": ["K AE T"], "dog": ["D AO G"], "dogs": ["D AO G Z"],
    "dont": ["D OW N T"], "fat": ["F AE T"], "hat": ["HH AE T"],
    "i": ["AY"], "in": ["IH N"], "like": ["L AY K"], "mat": ["M AE T"],
    "nine": ["N AY N"], "on": ["AA N"], "opens": ["OW P AH N Z"],
    "park": ["P AA R K"], "rain": ["R EY N"], "ran": ["R AE N"],
    "red": ["R EH D"], "said": ["S EH D"], "sat": ["S AE T"],
    "sea": ["S IY"], "see": ["S IY"], "sells": ["S EH L Z"],
    "she": ["SH IY"], "sheep": ["SH IY P"], "shells": ["SH EH L Z"],
    "shore": ["SH AO R"], "sing": ["S IH NG"], "sit": ["S IH T"],
    "song": ["S AO NG"], "ten": ["T EH N"], "the": ["DH AH", "DH IY"],
    "three": ["TH R IY"], "to": ["T UW"], "was": ["W AA Z"],
}
# Weighted variants go through the prior column.
PRIORS = {"the": [0.7, 0.3]}
SUPPLEMENT = {
    "read": ["R IY D", "R EH D"],
    "tomato": ["T AH M EY T OW", "T AH M AA T OW"],
    # Shadowed by the main lexicon.
    "cat": ["K AA T"],
}

CONFUSABLE = {
    "cat": ["bat", "hat"], "sat": ["sit", "fat"], "mat": ["hat", "bat"],
    "on": ["in"], "in": ["on"], "the": ["a"], "a": ["the"],
    "dog": ["dogs"], "dogs": ["dog"], "ran": ["rain"], "rain": ["ran"],
    "sea": ["see", "she"], "she": ["sea", "see"], "sells": ["shells"],
    "shells": ["sells"], "sheep": ["she"], "sing": ["song"],
    "song": ["sing"], "red": ["read", "said"], "said": ["red"],
    "three": ["see"], "nine": ["i"], "ten": ["then"], "at": ["hat"],
    "bat": ["bat", "fat"], "big": ["pig"], "by": ["i"], "to": ["two"],
    "like": ["bike"], "fat": ["sat", "hat"], "read": ["red"],
    "was": ["as"],
}
# Hypothesis-only words: some are out of vocabulary.
INSERTABLE = ["the", "a", "uh", "and", "it", "so"]

# (surface tokens, normalized tokens)
SENTENCES = [
    ("The cat sat on the mat.", "the cat sat on the mat"),
    ("A dog ran in the park!", "a dog ran in the park"),
    ("She sells sea shells by the shore.", "she sells sea shells by the shore"),
    ("3 birds sing at 9.", "three birds sing at nine"),
    ("The Café opens at 10.", "the cafe opens at ten"),
    ("I don't like rain", "i dont like rain"),
    ("The big red bat sat on a hat.", "the big red bat sat on a hat"),
    ("She said the tomato was red", "she said the tomato was red"),
    ("Read the song to the sheep", "read the song to the sheep"),
    ("The fat cat ran by the sea.", "the fat cat ran by the sea"),
    ("A sheep sat in the rain.", "a sheep sat in the rain"),
    ("Nine big dogs", "nine big dogs"),
]

# Surface spellings that differ from the normalized token.
SURFACE = {"three": ["three", "3"], "nine": ["nine", "9"], "ten": ["ten", "10"],
           "cafe": ["café", "Café", "cafe"], "dont": ["don't", "dont"]}


def phones_inventory():
    inv = {"SIL"}
    for table in (LEXICON, SUPPLEMENT):
        for prons in table.values():
            for p in prons:
                inv.update(p.split())
    return sorted(inv)


def corrupt(rng, words):
    """Returns [(token, source index or None)]."""
    out = []
    for i, w in enumerate(words):
        if rng.random() < P_INS:
            out.append((rng.choice(INSERTABLE), None))
        r = rng.random()
        if r < P_DEL:
            continue
        if r < P_DEL + P_SUB:
            out.append((rng.choice(CONFUSABLE.get(w, INSERTABLE)), i))
        else:
            out.append((w, i))
    if rng.random() < P_INS:
        out.append((rng.choice(INSERTABLE), None))
    if not out:
        out.append((words[0], 0))
    return out


def surface(rng, token, first):
    s = rng.choice(SURFACE.get(token, [token]))
    if first and rng.random() < 0.6:
        s = s[0].upper() + s[1:]
    return s


def make_timings(rng, n):
    spans, t = [], rng.randint(5, 15)
    for _ in range(n):
        d = rng.randint(12, 45)
        spans.append((t, t + d))
        t += d + rng.randint(0, 4)
    return spans


def hyp_timings(corrupted, true_spans):
    out, cursor = [], 0
    for _, src in corrupted:
        if src is None:
            s, e = cursor, cursor + 6
        else:
            s, e = true_spans[src]
            s = max(s, cursor)
            e = max(e, s)
        out.append((s, e))
        cursor = e
    return out


# Reference implementations used to freeze expected WER numbers.

def wer_counts(hyp, ref):
    n, m = len(ref), len(hyp)
    d = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(n + 1):
        d[i][0] = i
    for j in range(m + 1):
        d[0][j] = j
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            d[i][j] = min(d[i - 1][j - 1] + (ref[i - 1] != hyp[j - 1]),
                          d[i - 1][j] + 1, d[i][j - 1] + 1)
    return d[n][m]


def consensus(seqs):
    """seqs: [(tokens, weight)] already in merge order."""
    slots, total = [], 0.0
    for toks, w in seqs:
        if w <= 0:
            continue
        m, n = len(slots), len(toks)

        def match(i, j):
            return 0.0 if slots[i].get(toks[j], 0) > 0 else 1.0

        def skip(i):
            return 1.0 - slots[i].get("<eps>", 0.0) / total

        memo = {}

        def cost(i, j):
            if (i, j) in memo:
                return memo[(i, j)]
            opts = []
            if i < m and j < n:
                opts.append(match(i, j) + cost(i + 1, j + 1))
            if i < m:
                opts.append(skip(i) + cost(i + 1, j))
            if j < n:
                opts.append(1.0 + cost(i, j + 1))
            memo[(i, j)] = min(opts) if opts else 0.0
            return memo[(i, j)]

        new, i, j = [], 0, 0
        while i < m or j < n:
            here = cost(i, j) + 1e-12
            if i < m and j < n and match(i, j) + cost(i + 1, j + 1) <= here:
                s = dict(slots[i])
                s[toks[j]] = s.get(toks[j], 0.0) + w
                new.append(s)
                i, j = i + 1, j + 1
            elif i < m and skip(i) + cost(i + 1, j) <= here:
                s = dict(slots[i])
                s["<eps>"] = s.get("<eps>", 0.0) + w
                new.append(s)
                i += 1
            else:
                s = {"<eps>": total} if total > 0 else {}
                s[toks[j]] = s.get(toks[j], 0.0) + w
                new.append(s)
                j += 1
        slots, total = new, total + w
    out = []
    for s in slots:
        best = min(s.items(), key=lambda kv: (-kv[1], kv[0]))[0]
        if best != "<eps>":
            out.append(best)
    return out


def main():
    out_dir = sys.argv[1] if len(sys.argv) > 1 else os.path.join(
        os.path.dirname(os.path.abspath(__file__)), "..", "data", "demo")
    os.makedirs(out_dir, exist_ok=True)
    rng = random.Random(SEED)

    def path(name):
        return os.path.join(out_dir, name)

    with open(path("lexicon.tsv"), "w") as f:
        for w in sorted(LEXICON):
            for k, p in enumerate(LEXICON[w]):
                if w in PRIORS:
                    f.write(f"{w}\t{PRIORS[w][k]}\t{p}\n")
                else:
                    f.write(f"{w}\t{p}\n")
    with open(path("supplement.tsv"), "w") as f:
        for w in sorted(SUPPLEMENT):
            for p in SUPPLEMENT[w]:
                f.write(f"{w}\t{p}\n")
    with open(path("phones.txt"), "w") as f:
        f.write("\n".join(phones_inventory()) + "\n")
    with open(path("rules.txt"), "w") as f:
        f.write("# Normalization rules for the demo corpus.\n"
                "numbers = english\n"
                "join = '’\n")

    nbest_lines, ref_lines, frame_lines = [], [], []
    one_best_err = cn_err = ref_words = 0
    per_utt = []
    for u, (text, norm) in enumerate(SENTENCES):
        utt = f"utt{u + 1:02d}"
        words = norm.split()
        spans = make_timings(rng, len(words))
        num_frames = spans[-1][1] + rng.randint(5, 12)
        scores = sorted((rng.gauss(-40.0, 1.2) for _ in range(N_HYPS)), reverse=True)
        hyps = []
        for rank in range(N_HYPS):
            c = corrupt(rng, words)
            times = hyp_timings(c, spans)
            surf = [surface(rng, tok, k == 0) for k, (tok, _) in enumerate(c)]
            text_out = " ".join(surf) + (rng.choice([".", "", "!", "?"]))
            rec = {"utt_id": utt, "rank": rank, "text": text_out,
                   "log_score": round(scores[rank], 4)}
            if rank != 1:  # one hypothesis arrives without timings
                rec["words"] = [{"w": s, "t_start": a, "t_end": b}
                                for s, (a, b) in zip(surf, times)]
            rec["frame_rate"] = 100.0
            nbest_lines.append(rec)
            hyps.append(([tok for tok, _ in c], scores[rank], rank))

        # De-duplicate and take posteriors (temperature 1).
        best = {}
        for toks, s, r in hyps:
            key = tuple(toks)
            if key not in best or s > best[key][0]:
                best[key] = (s, r)
        mx = max(s for s, _ in best.values())
        z = sum(math.exp(s - mx) for s, _ in best.values())
        merged = sorted(((list(k), math.exp(s - mx) / z, r) for k, (s, r) in best.items()),
                        key=lambda x: (-x[1], x[2]))
        one_best = merged[0][0]
        cn = consensus([(t, p) for t, p, _ in merged])
        e1, e2 = wer_counts(one_best, words), wer_counts(cn, words)
        one_best_err += e1
        cn_err += e2
        ref_words += len(words)
        per_utt.append((utt, e1, e2, len(words)))

        score = round(rng.uniform(2.0, 10.0), 1)
        ref_lines.append({"utt_id": utt, "text": text, "score": score})
        frames = [[round(rng.gauss(0.0, 1.0), 4) for _ in range(FRAME_DIM)]
                  for _ in range(num_frames)]
        frame_lines.append({"utt_id": utt, "frame_rate": 100.0, "frames": frames})

    # Input order is shuffled so grouping and sorting are exercised.
    order = list(range(len(nbest_lines)))
    rng.shuffle(order)
    with open(path("nbest.jsonl"), "w") as f:
        for k in order:
            f.write(json.dumps(nbest_lines[k], ensure_ascii=False) + "\n")
    with open(path("refs.jsonl"), "w") as f:
        for r in ref_lines:
            f.write(json.dumps(r, ensure_ascii=False) + "\n")
    with open(path("frames.jsonl"), "w") as f:
        for r in frame_lines:
            f.write(json.dumps(r) + "\n")

    # Hybrid-path example: a small posterior matrix and phone segments.
    inv = ["SIL", "AE", "K", "T"]
    segs = [("SIL", 0, 1), ("K", 2, 4), ("AE", 5, 9), ("T", 10, 11), ("SIL", 12, 13)]
    with open(path("posteriors.txt"), "w") as f:
        f.write("inventory " + " ".join(inv) + "\nframes 14\nframe_rate 100\n")
        for t in range(14):
            target = next(p for p, a, b in segs if a <= t <= b)
            logits = [rng.gauss(0.0, 1.0) + (3.0 if p == target else 0.0) for p in inv]
            m = max(logits)
            lse = m + math.log(sum(math.exp(v - m) for v in logits))
            f.write(" ".join(f"{v - lse:.12f}" for v in logits) + "\n")
    with open(path("segments.txt"), "w") as f:
        for p, a, b in segs:
            f.write(f"{p} {a} {b}\n")

    config = {
        "language": "en",
        "script_policy": "romanize_basic",
        "target_script": "Latin",
        "normalization_rules": "rules.txt",
        "lexicon": "lexicon.tsv",
        "supplement": "supplement.tsv",
        "phones": "phones.txt",
        "use_priors": True,
        "max_variants": 6,
        "oov_policy": "skip_word",
        "temperature": 1.0,
        "length_normalize": False,
        "log_floor": -20.0,
        "deletion_cost": 0.95,
        "mask_mode": "restricted",
        "frame_rate": 100.0,
        "model": {"d_model": 8, "n_heads": 2, "n_decoder_layers": 1,
                  "n_encoder_layers": 1, "n_classes": 11, "seed": 7},
    }
    with open(path("config.json"), "w") as f:
        json.dump(config, f, indent=2)
        f.write("\n")

    for utt, e1, e2, n in per_utt:
        print(f"{utt}: 1-best errors {e1}, cn errors {e2}, words {n}")
    print(f"total: 1-best errors {one_best_err}, cn errors {cn_err}, words {ref_words}")


if __name__ == "__main__":
    main()
