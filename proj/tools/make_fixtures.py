#!/usr/bin/env python3
"""Regenerates the bundled fixtures under fixtures/.

Deterministic: every random choice comes from a seeded random.Random, so
re-running produces byte-identical files. Offsets are code points, which is
what Python string indexing gives.
"""

import json
import random
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
OUT = ROOT / "fixtures"

# ---------------------------------------------------------------- knowledge base

KB = [
    {
        "name": "肝癌",
        "description": "发生于肝脏的恶性肿瘤",
        "prevention": "接种乙肝疫苗，避免饮酒",
        "cure_time": "因人而异",
        "cause": "慢性乙型肝炎、肝硬化、黄曲霉素",
        "treatments": ["手术治疗", "介入治疗", "化疗"],
        "relations": {
            "RecommendedFood": ["鸡蛋", "鲫鱼"],
            "AvoidFood": ["白酒", "辣椒"],
            "BelongsToDepartment": ["肿瘤科"],
            "CommonDrug": ["索拉非尼"],
            "DiagnosticCheck": ["甲胎蛋白", "腹部CT"],
            "HasSymptom": ["肝区疼痛", "乏力"],
            "Complication": ["肝性脑病", "上消化道出血"],
            "RelatedDepartment": ["肝胆外科"],
        },
    },
    {
        "name": "原发性肝细胞癌",
        "description": "起源于肝细胞的原发性恶性肿瘤",
        "cure_time": "6-12个月",
        "treatments": ["肝切除术", "射频消融"],
        "relations": {
            "RecommendedFood": ["鸡蛋"],
            "BelongsToDepartment": ["肿瘤科"],
            "DiagnosticCheck": ["甲胎蛋白"],
            "HasSymptom": ["肝区疼痛"],
            "Complication": ["肝硬化", "门静脉高压"],
        },
    },
    {
        "name": "肝硬化",
        "description": "慢性肝损伤导致的弥漫性纤维化",
        "prevention": "戒酒，积极治疗病毒性肝炎",
        "cause": "病毒性肝炎、酒精",
        "relations": {
            "RecommendedFood": ["豆腐"],
            "AvoidFood": ["白酒"],
            "CommonDrug": ["恩替卡韦"],
            "HasSymptom": ["乏力", "黄疸"],
            "Complication": ["腹水", "肝性脑病"],
        },
    },
    {
        "name": "乙型病毒性肝炎",
        "description": "乙型肝炎病毒感染引起的肝脏炎症",
        "relations": {
            "BelongsToDepartment": ["感染科"],
            "CommonDrug": ["恩替卡韦", "干扰素"],
            "HasSymptom": ["黄疸"],
            "Complication": ["肝硬化"],
        },
    },
    {
        "name": "胆囊炎",
        "description": "胆囊的炎症性疾病",
        "relations": {
            "AvoidFood": ["油炸食品"],
            "DiagnosticCheck": ["腹部超声"],
            "HasSymptom": ["右上腹痛"],
            "RelatedDepartment": ["肝胆外科"],
        },
    },
    {
        "name": "门静脉高压",
        "relations": {"Complication": ["上消化道出血"], "DiagnosticCheck": ["腹部超声"]},
    },
    {"name": "肝性脑病", "relations": {"HasSymptom": ["意识障碍"]}},
    {"name": "上消化道出血", "relations": {"HasSymptom": ["呕血"]}},
    # duplicate record: scalar update plus one extra relation, merged on load
    {"name": "胆囊炎", "cure_time": "1-2周", "relations": {"CommonDrug": ["头孢曲松"]}},
]


def write_kb():
    lines = [json.dumps({"format": "emrkg-kb", "schema_version": 1}, ensure_ascii=False)]
    lines += [json.dumps(rec, ensure_ascii=False) for rec in KB]
    (OUT / "kb_small.jsonl").write_text("\n".join(lines) + "\n", encoding="utf-8")


# ---------------------------------------------------------------- EMR corpus

POOLS = {
    "Symptom": ["腹痛", "乏力", "黄疸", "食欲减退", "腹胀", "发热", "消瘦"],
    "BodyCheck": ["肝区压痛", "腹部膨隆", "巩膜黄染", "移动性浊音阳性"],
    "Condition": ["吸烟史", "饮酒史", "糖尿病史", "输血史"],
    "Check": ["甲胎蛋白", "腹部CT", "肝功能", "血常规", "腹部超声"],
    "Treatment": ["介入治疗", "护肝治疗", "抗病毒治疗", "化疗"],
    "Operation": ["肝切除术", "胆囊切除术", "射频消融术"],
}

# Each template is a list of literal strings and (type,) slots.
TEMPLATES = [
    ["患者因", ("Symptom",), "{n}月入院。"],
    ["既往有", ("Condition",), "。"],
    ["查体：", ("BodyCheck",), "。"],
    [("Check",), "提示", ("Disease",), "。"],
    ["诊断为", ("Disease",), "。"],
    ["行", ("Operation",), "，术后予", ("Treatment",), "。"],
    ["伴", ("Symptom",), "、", ("Symptom",), "。"],
    ["予", ("Treatment",), "后好转出院。"],
    ["复查", ("Check",), "未见明显异常。"],
    ["自述", ("Symptom",), "加重", "{n}天。"],
]

# Disease surfaces per record: a near-duplicate of a KB name, exact KB names,
# and names absent from the KB (these stay unmatched after alignment).
RECORD_DISEASES = [
    ["原发肝细胞癌"],
    ["肝癌", "肝硬化"],
    ["乙肝"],
    ["肝癌"],
    ["胆结石"],
    ["原发肝细胞癌", "高血压"],
    ["肝硬化"],
    ["肝癌"],
    ["胆囊炎"],
    ["乙肝", "肝硬化"],
    ["原发肝细胞癌"],
    ["脂肪肝"],
]


def render(template, rng, fills):
    """Returns (text, [(type, start, end)])."""
    text = ""
    spans = []
    for part in template:
        if isinstance(part, tuple):
            t = part[0]
            surface = fills.pop(0) if t == "Disease" and fills else rng.choice(POOLS.get(t, ["肝癌"]))
            spans.append((t, len(text), len(text) + len(surface)))
            text += surface
        else:
            text += part.format(n=rng.randint(1, 9))
    return text, spans


def make_record(rng, diseases):
    diseases = list(diseases)
    order = [0, 1, 2]  # admission, history, exam
    body = [TEMPLATES[i] for i in order]
    body.append(TEMPLATES[3])
    for _ in diseases[1:]:
        body.append(TEMPLATES[4])
    body += rng.sample([TEMPLATES[i] for i in (5, 6, 7, 8, 9)], 3)
    text = ""
    spans = []
    for i, tpl in enumerate(body):
        s, sp = render(tpl, rng, diseases)
        for t, b, e in sp:
            spans.append((t, len(text) + b, len(text) + e))
        text += s
        if i == 2:
            text += "\n"  # line break between history and findings
    return text, spans


def write_corpus():
    rng = random.Random(20240510)
    d = OUT / "corpus_small"
    d.mkdir(parents=True, exist_ok=True)
    nations = ["汉族", "回族", "壮族"]
    for i, diseases in enumerate(RECORD_DISEASES, start=1):
        text, spans = make_record(rng, diseases)
        name = f"record_{i:02d}"
        (d / f"{name}.txt").write_text(text, encoding="utf-8")
        ann = []
        for k, (t, b, e) in enumerate(spans, start=1):
            ann.append(f"T{k}\t{t} {b} {e}\t{text[b:e]}")
        ann.append("#1\tAnnotatorNotes T1\tchecked")
        (d / f"{name}.ann").write_text("\n".join(ann) + "\n", encoding="utf-8")
        meta = {
            "patient_id": f"2490513_{i}",
            "nation": nations[i % 3],
            "age": str(40 + (i * 7) % 35),
            "sex": "男" if i % 3 else "女",
            "admission_time": f"2019-{(i % 12) + 1:02d}-{(i * 3) % 28 + 1:02d}",
        }
        (d / f"{name}.meta").write_text(json.dumps(meta, ensure_ascii=False, sort_keys=True) + "\n", encoding="utf-8")


# ---------------------------------------------------------------- BIO corpora

def to_bio(text, spans):
    tags = ["O"] * len(text)
    for t, b, e in spans:
        tags[b] = "B-" + t
        for k in range(b + 1, e):
            tags[k] = "I-" + t
    return list(zip(text, tags))


def write_bio(path, sentences):
    blocks = ["\n".join(f"{c}\t{t}" for c, t in s) for s in sentences]
    path.write_text("\n\n".join(blocks) + "\n", encoding="utf-8")


def write_synth50():
    rng = random.Random(50)
    pools = dict(POOLS)
    pools["Disease"] = ["肝癌", "肝硬化", "胆囊炎", "脂肪肝", "乙肝"]
    out = []
    for _ in range(50):
        tpl = rng.choice(TEMPLATES)
        text, spans = "", []
        for part in tpl:
            if isinstance(part, tuple):
                s = rng.choice(pools[part[0]])
                spans.append((part[0], len(text), len(text) + len(s)))
                text += s
            else:
                text += part.format(n=rng.randint(1, 9))
        out.append(to_bio(text, spans))
    write_bio(OUT / "synth50.bio", out)


# Noisy corpus for the augmentation comparison. Validation entities use
# surfaces that never occur in training text but are listed in the
# dictionary; contexts carry filler noise.
NOISY_TRAIN = {
    "Disease": ["肝癌", "胃炎", "肺炎", "胆结石"],
    "Symptom": ["腹痛", "发热", "咳嗽"],
    "Check": ["血常规", "胸片"],
    "Operation": ["阑尾切除术"],
    "Treatment": ["化疗"],
}
NOISY_HELDOUT = {
    "Disease": ["糖尿病", "冠心病", "痛风", "哮喘", "贫血", "甲亢", "癫痫", "痔疮"],
    "Symptom": ["头晕", "呕吐", "胸闷", "心悸", "失眠", "盗汗"],
    "Check": ["心电图", "尿常规", "核磁共振", "骨密度"],
    "Operation": ["搭桥术", "植入术"],
    "Treatment": ["透析", "针灸"],
}
NOISY_TEMPLATES = [
    ["患者", ("Disease",), "病史多年。"],
    ["今日", ("Symptom",), "明显。"],
    ["主诉", ("Symptom",), "伴", ("Symptom",), "。"],
    ["查", ("Check",), "示", ("Disease",), "。"],
    ["拟行", ("Operation",), "。"],
    ["继续", ("Treatment",), "。"],
    ["考虑", ("Disease",), "可能。"],
    ["完善", ("Check",), "检查。"],
]
FILLERS = ["", "", "", "近期", "再次", "偶有", "反复"]


def noisy_sentence(rng, pools):
    tpl = rng.choice(NOISY_TEMPLATES)
    text, spans = rng.choice(FILLERS), []
    for part in tpl:
        if isinstance(part, tuple):
            s = rng.choice(pools[part[0]])
            spans.append((part[0], len(text), len(text) + len(s)))
            text += s
        else:
            text += part
    return to_bio(text, spans)


def write_noisy():
    rng = random.Random(7)
    d = OUT / "noisy"
    d.mkdir(parents=True, exist_ok=True)
    train = [noisy_sentence(rng, NOISY_TRAIN) for _ in range(160)]
    val = [noisy_sentence(rng, NOISY_HELDOUT) for _ in range(60)]
    write_bio(d / "train.bio", train)
    write_bio(d / "val.bio", val)
    lines = ["# type\tsurface"]
    for pools in (NOISY_TRAIN, NOISY_HELDOUT):
        for t, surfaces in pools.items():
            lines += [f"{t}\t{s}" for s in surfaces]
    (d / "dictionary.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_config():
    cfg = {
        "seed": 42,
        "paths": {
            "corpus_dir": "corpus_small",
            "kb_file": "kb_small.jsonl",
            "output_dir": "out",
        },
        "segment_max_len": 50,
        "derm": {"enabled": True, "p_replace": 0.3, "p_mask": 0.3, "p_noop": 0.4, "short_threshold": 5, "mask_fraction": 0.2},
        "train": {"epochs": 8, "batch_size": 4, "learning_rate": 0.01, "hidden": 16, "d_emb": 16, "optimizer": "adam"},
        "fusion": {"threshold": 0.8, "label": "Disease", "ngram_orders": [1, 2]},
        "graph_entities": "predicted",
    }
    (OUT / "pipeline.json").write_text(json.dumps(cfg, ensure_ascii=False, indent=2) + "\n", encoding="utf-8")


def main():
    OUT.mkdir(exist_ok=True)
    write_kb()
    write_corpus()
    write_synth50()
    write_noisy()
    write_config()
    return 0


if __name__ == "__main__":
    sys.exit(main())
