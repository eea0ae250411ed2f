"""Regenerate the bundled sample hierarchy (src/icdfs/data/icd10ca_sample.csv).

The sample mirrors the shape of ICD-10-CA (chapters, blocks, categories,
subcategories, Canadian 5-character expansions) for a handful of chapters.
Codes and block ranges follow the real classification; most descriptions are
placeholders. It is NOT a licensed copy of the tabular list.

    python tools/build_sample_tree.py
"""

import csv
import pathlib

import numpy as np

OUT = pathlib.Path(__file__).resolve().parents[1] / "src" / "icdfs" / "data" / "icd10ca_sample.csv"

CHAPTERS = {
    "I": ("Certain infectious and parasitic diseases",
          ["A00-A09", "A15-A19", "A30-A49", "B15-B19", "B95-B98"]),
    "II": ("Neoplasms",
           ["C15-C26", "C30-C39", "C60-C63", "C76-C80", "D10-D36"]),
    "III": ("Diseases of the blood and blood-forming organs",
            ["D50-D53", "D55-D59", "D60-D64", "D65-D69", "D80-D89"]),
    "IV": ("Endocrine, nutritional and metabolic diseases",
           ["E00-E07", "E10-E14", "E40-E46", "E65-E68", "E70-E90"]),
    "V": ("Mental and behavioural disorders",
          ["F00-F09", "F10-F19", "F20-F29", "F30-F39", "F40-F48"]),
    "VI": ("Diseases of the nervous system",
           ["G00-G09", "G20-G26", "G30-G32", "G40-G47", "G50-G59"]),
    "IX": ("Diseases of the circulatory system",
           ["I10-I15", "I20-I25", "I26-I28", "I30-I52", "I60-I69", "I70-I79"]),
    "X": ("Diseases of the respiratory system",
          ["J09-J18", "J40-J47", "J80-J84", "J90-J94", "J95-J99"]),
    "XI": ("Diseases of the digestive system",
           ["K20-K31", "K55-K64", "K65-K67", "K70-K77", "K80-K87"]),
    "XIV": ("Diseases of the genitourinary system",
            ["N17-N19", "N25-N29", "N30-N39", "N40-N51", "N80-N98"]),
    "XVIII": ("Symptoms, signs and abnormal clinical and laboratory findings",
              ["R00-R09", "R10-R19", "R25-R29", "R47-R49", "R50-R69", "R90-R94"]),
    "XXI": ("Factors influencing health status and contact with health services",
            ["Z00-Z13", "Z20-Z29", "Z40-Z54", "Z70-Z76", "Z80-Z99"]),
}

# codes that must exist (with their ancestors)
REQUIRED = {
    "I25": ["I251", "I2510", "I2519", "I252"],
    "E11": ["E112", "E115", "E1152", "E119"],
    "I48": ["I489", "I4890"],
    "E78": ["E785"],
    "N17": ["N179"],
    "J18": ["J189"],
    "I21": ["I214"],
}

KNOWN = {
    "I10": "Essential (primary) hypertension",
    "I21": "Acute myocardial infarction",
    "I25": "Chronic ischaemic heart disease",
    "I251": "Atherosclerotic heart disease",
    "I2519": "Atherosclerotic heart disease of unspecified type of vessel",
    "I252": "Old myocardial infarction",
    "I48": "Atrial fibrillation and flutter",
    "I50": "Heart failure",
    "E11": "Type 2 diabetes mellitus",
    "E112": "Type 2 diabetes mellitus with renal complications",
    "E115": "Type 2 diabetes mellitus with peripheral circulatory complications",
    "E1152": "Type 2 diabetes mellitus with certain circulatory complications",
    "E78": "Disorders of lipoprotein metabolism and other lipidaemias",
    "E785": "Hyperlipidaemia, unspecified",
    "N17": "Acute renal failure",
    "N18": "Chronic kidney disease",
    "J18": "Pneumonia, organism unspecified",
    "J44": "Other chronic obstructive pulmonary disease",
    "A41": "Other sepsis",
    "F03": "Unspecified dementia",
    "Z95": "Presence of cardiac and vascular implants and grafts",
}


def block_categories(block, rng):
    lo, hi = block.split("-")
    letter = lo[0]
    a, b = int(lo[1:]), int(hi[1:])
    allcats = [f"{letter}{n:02d}" for n in range(a, b + 1)]
    if len(allcats) <= 6:
        cats = allcats
    else:
        idx = np.unique(np.linspace(0, len(allcats) - 1, 5).round().astype(int))
        cats = [allcats[i] for i in idx]
    for req in REQUIRED:
        if req in allcats and req not in cats:
            cats.append(req)
    return sorted(cats)


def main():
    rng = np.random.default_rng(20230225)
    rows = []
    for chap, (desc, blocks) in CHAPTERS.items():
        rows.append((chap, "", "chapter", desc))
        for block in blocks:
            rows.append((block, chap, "block", f"Block {block}"))
            for cat in block_categories(block, rng):
                rows.append((cat, block, "category", KNOWN.get(cat, f"Category {cat}")))
                required = REQUIRED.get(cat, [])
                subs = {c for c in required if len(c) == 4}
                if required or rng.random() < 0.55:
                    n_sub = int(rng.integers(2, 4))
                    for d in rng.choice(10, size=n_sub, replace=False):
                        subs.add(f"{cat}{d}")
                for sub in sorted(subs):
                    rows.append((sub, cat, "subcategory", KNOWN.get(sub, f"Subcategory {sub}")))
                    exps = {c for c in required if len(c) == 5 and c.startswith(sub)}
                    if exps or rng.random() < 0.2:
                        n_exp = int(rng.integers(1, 3))
                        for d in rng.choice(10, size=n_exp, replace=False):
                            exps.add(f"{sub}{d}")
                    for exp in sorted(exps):
                        rows.append((exp, sub, "expansion", KNOWN.get(exp, f"Expansion {exp}")))
    OUT.parent.mkdir(parents=True, exist_ok=True)
    with open(OUT, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["code", "parent", "level", "description"])
        w.writerows(rows)
    levels = {}
    for r in rows:
        levels[r[2]] = levels.get(r[2], 0) + 1
    print(OUT, len(rows), levels)


if __name__ == "__main__":
    main()
