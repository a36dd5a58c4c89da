#!/usr/bin/env python3
"""Cut a miniature WNDB fixture out of a full WordNet database directory.

Usage: make_wordnet_fixture.py <wndb-dir> <out-dir>

Selected synsets keep their original lemmas and glosses. Offsets are
recomputed so every synset_offset is the byte offset of its line, pointers
to synsets outside the fixture are dropped, and index files are rebuilt
from the kept synsets in original sense order.
"""
import os
import sys

POS_FILES = {"n": "noun", "v": "verb", "a": "adj", "r": "adv"}

# (pos, lemma, how many leading senses to keep; None = all)
SELECTION = [
    ("n", "dog", None), ("v", "dog", None),
    ("n", "sofa", None), ("n", "couch", None), ("v", "couch", None),
    ("n", "crepe", None), ("v", "crepe", None), ("v", "crape", None),
    ("n", "pancake", None), ("n", "wallet", None), ("n", "toothbrush", None),
    ("n", "toothpaste", None), ("n", "charger", None),
    ("n", "phone", None), ("v", "phone", None),
    ("n", "glasses", None), ("n", "ice_cream", None), ("n", "hotel", None),
    ("n", "key", 2), ("n", "shoe", 2),
    ("v", "eat", None),
    ("a", "afraid", None), ("a", "handy", 1),
    ("r", "quickly", None), ("r", "good", None),
]


def read_lines(path):
    with open(path, "rb") as f:
        data = f.read()
    out, pos = [], 0
    for raw in data.split(b"\n")[:-1]:
        out.append((pos, raw.decode("latin-1")))
        pos += len(raw) + 1
    return out


def main(src, dst):
    index = {}
    data = {}
    headers = {}
    for p, name in POS_FILES.items():
        for off, line in read_lines(os.path.join(src, "index." + name)):
            if line.startswith("  "):
                headers.setdefault("index." + name, []).append(line)
                continue
            f = line.split()
            index[(p, f[0])] = f
        for off, line in read_lines(os.path.join(src, "data." + name)):
            if line.startswith("  "):
                headers.setdefault("data." + name, []).append(line)
                continue
            data[(p, int(line[:8]))] = line

    keep = []
    for p, lemma, n in SELECTION:
        f = index[(p, lemma)]
        cnt = int(f[2])
        offs = [int(x) for x in f[-cnt:]]
        for o in offs[: n or cnt]:
            if (p, o) not in keep:
                keep.append((p, o))
    keep_set = set(keep)

    def parse(line):
        body, _, gloss = line.partition(" | ")
        f = body.split()
        w_cnt = int(f[3], 16)
        words = [(f[4 + 2 * i], f[5 + 2 * i]) for i in range(w_cnt)]
        i = 4 + 2 * w_cnt
        p_cnt = int(f[i])
        ptrs = [f[i + 1 + 4 * j: i + 5 + 4 * j] for j in range(p_cnt)]
        rest = f[i + 1 + 4 * p_cnt:]
        return f[:3], words, ptrs, rest, gloss

    new_off = {}
    out_data = {}
    # offsets are fixed-width, so the first pass fixes every line length and
    # the second pass fills in cross-file pointer offsets
    for _ in range(2):
        for p, name in POS_FILES.items():
            mine = sorted(o for (q, o) in keep if q == p)
            head = "\n".join(headers["data." + name]) + "\n"
            pos = len(head.encode("latin-1"))
            lines = []
            for o in mine:
                (soff, lex, ss), words, ptrs, rest, gloss = parse(data[(p, o)])
                kept = [
                    x for x in ptrs if (x[2] if x[2] != "s" else "a", int(x[1])) in keep_set
                ]
                kept = [
                    [x[0], "%08d" % new_off.get((x[2] if x[2] != "s" else "a", int(x[1])), 0), x[2], x[3]]
                    for x in kept
                ]
                parts = ["%08d" % pos, lex, ss, "%02x" % len(words)]
                for w, lid in words:
                    parts += [w, lid]
                parts.append("%03d" % len(kept))
                for x in kept:
                    parts += x
                parts += rest
                line = " ".join(parts) + " | " + gloss
                new_off[(p, o)] = pos
                lines.append(line)
                pos += len(line.encode("latin-1")) + 1
            out_data[name] = (head, lines)

    for name, (head, lines) in out_data.items():
        with open(os.path.join(dst, "data." + name), "wb") as f:
            f.write((head + "\n".join(lines) + "\n").encode("latin-1"))

    for p, name in POS_FILES.items():
        entries = {}
        for (q, o) in keep:
            if q != p:
                continue
            _, words, _, _, _ = parse(data[(q, o)])
            for w, _ in words:
                lemma = w.lower()
                if "(" in lemma:
                    lemma = lemma[: lemma.index("(")]
                entries.setdefault(lemma, [])
        lines = []
        for lemma in sorted(entries):
            f = index[(p, lemma)]
            cnt = int(f[2])
            offs = [int(x) for x in f[-cnt:]]
            mine = [o for o in offs if (p, o) in keep_set]
            ptr_cnt = int(f[3])
            ptrs = f[4: 4 + ptr_cnt]
            tagged = min(int(f[4 + ptr_cnt + 1]), len(mine))
            parts = [lemma, p, str(len(mine)), str(len(ptrs))] + ptrs
            parts += [str(len(mine)), str(tagged)] + ["%08d" % new_off[(p, o)] for o in mine]
            lines.append(" ".join(parts) + "  ")
        head = "\n".join(headers["index." + name]) + "\n"
        with open(os.path.join(dst, "index." + name), "wb") as f:
            f.write((head + "\n".join(lines) + "\n").encode("latin-1"))
    print(len(keep), "synsets")


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
