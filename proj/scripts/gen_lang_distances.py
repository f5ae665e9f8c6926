#!/usr/bin/env python3
"""Build core/data/lang_distances.json.

Distances are derived deterministically from compact per-language facts
(family branch, rough coordinates, dominant word order) so the table stays
symmetric, zero on the diagonal, and inside [0,1]. Tamil pairs are omitted
on purpose: its feature coverage is treated as unavailable, which downstream
marks pivot-based strategies inapplicable for it.
"""
import json
import math
import pathlib

# code: (class, script, family, branch, word_order, lat, lon)
LANGS = {
    "en": (5, "latin", "indo-european", "germanic", "svo", 52.0, 0.0),
    "es": (5, "latin", "indo-european", "romance", "svo", 40.0, -4.0),
    "de": (5, "latin", "indo-european", "germanic", "svo", 51.0, 10.0),
    "fr": (5, "latin", "indo-european", "romance", "svo", 47.0, 2.0),
    "ar": (5, "non-latin", "afro-asiatic", "semitic", "vso", 27.0, 30.0),
    "zh": (5, "non-latin", "sino-tibetan", "sinitic", "svo", 35.0, 105.0),
    "pt": (4, "latin", "indo-european", "romance", "svo", 39.5, -8.0),
    "it": (4, "latin", "indo-european", "romance", "svo", 43.0, 12.0),
    "nl": (4, "latin", "indo-european", "germanic", "svo", 52.2, 5.3),
    "ru": (4, "non-latin", "indo-european", "slavic", "svo", 56.0, 38.0),
    "ja": (4, "non-latin", "japonic", "japonic", "sov", 36.0, 138.0),
    "ko": (4, "non-latin", "koreanic", "koreanic", "sov", 36.5, 128.0),
    "fi": (4, "latin", "uralic", "finnic", "svo", 62.0, 26.0),
    "vi": (4, "latin", "austroasiatic", "vietic", "svo", 16.0, 106.0),
    "hi": (4, "non-latin", "indo-european", "indo-aryan", "sov", 26.0, 80.0),
    "id": (3, "latin", "austronesian", "malayic", "svo", -2.0, 118.0),
    "bn": (3, "non-latin", "indo-european", "indo-aryan", "sov", 24.0, 90.0),
    "ta": (3, "non-latin", "dravidian", "southern", "sov", 11.0, 78.5),
    "th": (3, "non-latin", "kra-dai", "tai", "svo", 15.0, 101.0),
    "sw": (2, "latin", "niger-congo", "bantu", "svo", -6.0, 35.0),
    "mr": (2, "non-latin", "indo-european", "indo-aryan", "sov", 19.0, 76.0),
    "pa": (2, "non-latin", "indo-european", "indo-aryan", "sov", 31.0, 75.5),
    "te": (1, "non-latin", "dravidian", "south-central", "sov", 17.0, 79.5),
    "kn": (1, "non-latin", "dravidian", "southern", "sov", 14.5, 76.0),
    "ml": (1, "non-latin", "dravidian", "southern", "sov", 10.0, 76.5),
    "gu": (1, "non-latin", "indo-european", "indo-aryan", "sov", 22.5, 71.5),
    "as": (1, "non-latin", "indo-european", "indo-aryan", "sov", 26.2, 92.9),
    "or": (1, "non-latin", "indo-european", "indo-aryan", "sov", 20.5, 84.5),
}

OMIT = {"ta"}  # no feature coverage in the shipped table


def genetic(a, b):
    _, _, fam_a, br_a, _, _, _ = LANGS[a]
    _, _, fam_b, br_b, _, _, _ = LANGS[b]
    if fam_a != fam_b:
        return 1.0
    if br_a != br_b:
        return 0.45
    return 0.18


def syntactic(a, b):
    _, _, fam_a, br_a, wo_a, _, _ = LANGS[a]
    _, _, fam_b, br_b, wo_b, _, _ = LANGS[b]
    if fam_a == fam_b and br_a == br_b:
        return 0.25
    if wo_a == wo_b:
        return 0.42 if fam_a == fam_b else 0.52
    return 0.68


def geographic(a, b):
    *_, lat_a, lon_a = LANGS[a]
    *_, lat_b, lon_b = LANGS[b]
    p1, p2 = math.radians(lat_a), math.radians(lat_b)
    dl = math.radians(lon_b - lon_a)
    central = math.acos(
        min(1.0, math.sin(p1) * math.sin(p2) + math.cos(p1) * math.cos(p2) * math.cos(dl))
    )
    km = 6371.0 * central
    return round(min(1.0, km / 20037.5), 4)


def main():
    codes = sorted(LANGS)
    distances = {"syntactic": {}, "genetic": {}, "geographic": {}}
    for i, a in enumerate(codes):
        for b in codes[i + 1 :]:
            if a in OMIT or b in OMIT:
                continue
            key = f"{a}|{b}"
            distances["syntactic"][key] = syntactic(a, b)
            distances["genetic"][key] = genetic(a, b)
            distances["geographic"][key] = geographic(a, b)
    doc = {
        "features": ["syntactic", "genetic", "geographic"],
        "languages": [
            {"code": c, "class": LANGS[c][0], "script": LANGS[c][1]} for c in codes
        ],
        "distances": distances,
    }
    out = pathlib.Path(__file__).resolve().parent.parent / "core" / "data" / "lang_distances.json"
    out.write_text(json.dumps(doc, ensure_ascii=False, indent=1) + "\n")
    n = sum(len(v) for v in distances.values())
    print(f"wrote {len(codes)} languages, {n} pair distances to {out}")


if __name__ == "__main__":
    main()
