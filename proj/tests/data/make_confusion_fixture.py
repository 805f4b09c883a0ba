"""Writes confusion36.jsonl: 36 patients, two images each, whose patient-level
four-way confusion matrix is

    [3 1 0 0]
    [0 8 0 0]
    [0 0 15 0]
    [0 0 1 8]
"""
import json
from pathlib import Path

LABELS = ["Anencephaly", "Encephalocele", "Holoprosencephaly", "Rachischisis"]
ROWS = [[3, 1, 0, 0], [0, 8, 0, 0], [0, 0, 15, 0], [0, 0, 1, 8]]


def peaked(k, top):
    rest = (1.0 - top) / 3.0
    return [top if i == k else rest for i in range(4)]


def main():
    out = Path(__file__).with_name("confusion36.jsonl")
    lines = []
    patient = 0
    for truth, row in enumerate(ROWS):
        for predicted, count in enumerate(row):
            for _ in range(count):
                patient += 1
                pid = f"P{patient:02d}"
                age = 100 + (patient * 37) % 100
                for img, top in enumerate((0.625, 0.4375)):
                    lines.append(json.dumps({
                        "sample_id": f"{pid}_{img}",
                        "patient_id": pid,
                        "fold_id": patient - 1,
                        "true_label": LABELS[truth],
                        "probabilities": peaked(predicted, top),
                        "gestational_age_days": age,
                    }))
    out.write_text("\n".join(lines) + "\n")


if __name__ == "__main__":
    main()
