"""Writes the synthetic fixtures used by the unit tests and the CLI smoke runs.

hf.csv mimics a 303-row, 13-feature heart-disease table (165 positive, 138
negative); ecd.csv mimics a 520-row, 16-feature diabetes screening table with
320 positives and 200 negatives. Values are synthetic.
"""
import csv
import json
import numpy as np


def logistic_oracle(weights_std, means, sds, bias, seed, flip=0.1, noise=0.5):
    w = [b / s for b, s in zip(weights_std, sds)]
    b = bias - sum(wi * m for wi, m in zip(w, means))
    return {"ground_truth_weights": w + [b], "flip_rate": flip, "confidence_noise_sd": noise,
            "finetune_blend_rate": 0.5, "seed": seed}


def write(path, header, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        w.writerows(rows)


def labels_from_score(score, n_pos, rng):
    noisy = score + rng.normal(0, 1.0, len(score))
    order = np.argsort(-noisy, kind="stable")
    y = np.zeros(len(score), dtype=int)
    y[order[:n_pos]] = 1
    return y


def hf():
    rng = np.random.default_rng(303)
    n = 303
    age = rng.normal(54, 9, n).round().clip(29, 77)
    sex = rng.binomial(1, 0.68, n)
    cp = rng.integers(0, 4, n)
    trestbps = rng.normal(131, 17, n).round().clip(94, 200)
    chol = rng.normal(246, 51, n).round().clip(126, 564)
    fbs = rng.binomial(1, 0.15, n)
    restecg = rng.integers(0, 3, n)
    thalach = rng.normal(150, 23, n).round().clip(71, 202)
    exang = rng.binomial(1, 0.33, n)
    oldpeak = rng.gamma(1.0, 1.0, n).round(1).clip(0, 6.2)
    slope = rng.integers(0, 3, n)
    ca = rng.integers(0, 4, n)
    thal = rng.integers(1, 4, n)
    feats = [age, sex, cp, trestbps, chol, fbs, restecg, thalach, exang, oldpeak, slope, ca, thal]
    beta = [-0.3, -0.6, 0.8, -0.2, -0.1, 0.0, 0.2, 0.9, -0.7, -0.8, 0.4, -0.8, -0.5]
    means = [f.mean() for f in feats]
    sds = [f.std() for f in feats]
    score = sum(b * (f - m) / s for b, f, m, s in zip(beta, feats, means, sds))
    y = labels_from_score(score, 165, rng)
    names = ["age", "sex", "cp", "trestbps", "chol", "fbs", "restecg", "thalach", "exang",
             "oldpeak", "slope", "ca", "thal"]
    units = {"age": "years", "trestbps": "mm Hg", "chol": "mg/dl", "thalach": "bpm"}
    rows = []
    for i in range(n):
        r = [str(int(f[i])) if name != "oldpeak" else f"{f[i]:.1f}" for f, name in zip(feats, names)]
        rows.append(r + [str(y[i])])
    write("hf.csv", names + ["target"], rows)
    schema = {
        "columns": [{"name": nm, "kind": "numerical", **({"unit": units[nm]} if nm in units else {})}
                    for nm in names],
        "label_column": "target",
        "positive_class_name": "1",
        "task_description": "having heart disease",
    }
    json.dump(schema, open("hf.schema.json", "w"), indent=2)
    json.dump(logistic_oracle(beta, means, sds, 0.0, 11), open("hf.oracle.json", "w"), indent=2)


def ecd():
    rng = np.random.default_rng(520)
    n = 520
    age = rng.normal(48, 12, n).round().clip(16, 90)
    gender = rng.choice(["Male", "Female"], n, p=[0.63, 0.37])
    symptoms = ["Polyuria", "Polydipsia", "sudden weight loss", "weakness", "Polyphagia",
                "Genital thrush", "visual blurring", "Itching", "Irritability", "delayed healing",
                "partial paresis", "muscle stiffness", "Alopecia", "Obesity"]
    beta = [2.0, 2.0, 1.0, 0.5, 0.7, 0.4, 0.4, -0.3, 0.8, 0.0, 0.9, 0.2, -0.5, 0.1]
    sym = rng.binomial(1, 0.45, (n, len(symptoms)))
    score = 0.02 * (age - 48) - 0.8 * (gender == "Male") + sym @ np.array(beta) * 0.7
    y = labels_from_score(score, 320, rng)
    header = ["Age", "Gender"] + symptoms + ["class"]
    rows = []
    for i in range(n):
        rows.append([str(int(age[i])), gender[i]] + ["Yes" if v else "No" for v in sym[i]] +
                    ["Positive" if y[i] else "Negative"])
    write("ecd.csv", header, rows)
    schema = {
        "columns": [{"name": "Age", "kind": "numerical", "unit": "years"},
                    {"name": "Gender", "kind": "categorical"}] +
                   [{"name": s, "kind": "categorical"} for s in symptoms],
        "label_column": "class",
        "positive_class_name": "Positive",
        "task_description": "early-stage diabetes",
    }
    json.dump(schema, open("ecd.schema.json", "w"), indent=2)


if __name__ == "__main__":
    hf()
    ecd()
