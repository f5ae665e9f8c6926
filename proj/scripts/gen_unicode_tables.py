#!/usr/bin/env python3
"""Regenerates core/src/unicode_tables.inc from the Unicode character database.

Emits two tables:
  * merged codepoint ranges whose general category starts with 'P'
  * simple one-to-one lowercase mappings (multi-codepoint lowerings are skipped)
"""
import sys
import unicodedata

MAX_CP = 0x110000


def punct_ranges():
    ranges = []
    start = None
    for cp in range(MAX_CP):
        is_p = unicodedata.category(chr(cp)).startswith("P")
        if is_p and start is None:
            start = cp
        elif not is_p and start is not None:
            ranges.append((start, cp - 1))
            start = None
    if start is not None:
        ranges.append((start, MAX_CP - 1))
    return ranges


def lower_pairs():
    pairs = []
    for cp in range(MAX_CP):
        low = chr(cp).lower()
        if len(low) == 1 and ord(low) != cp:
            pairs.append((cp, ord(low)))
    return pairs


def main(out_path):
    pr = punct_ranges()
    lp = lower_pairs()
    with open(out_path, "w") as f:
        f.write("// Generated by scripts/gen_unicode_tables.py; do not edit.\n")
        f.write("// Unicode %s data.\n\n" % unicodedata.unidata_version)
        f.write("static constexpr CodepointRange kPunctRanges[] = {\n")
        for a, b in pr:
            f.write("    {0x%X, 0x%X},\n" % (a, b))
        f.write("};\n\n")
        f.write("static constexpr CasePair kLowerPairs[] = {\n")
        for a, b in lp:
            f.write("    {0x%X, 0x%X},\n" % (a, b))
        f.write("};\n")
    print("wrote %s: %d punct ranges, %d case pairs" % (out_path, len(pr), len(lp)))


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "core/src/unicode_tables.inc")
