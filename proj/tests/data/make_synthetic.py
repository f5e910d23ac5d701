"""Writes synthetic_corpus.jsonl: small persuasion-style dialogues whose face
acts are signalled by their wording. Used by CLI and training tests."""
import json
import random

ER = {
    "HPos+": ["you are so kind and generous", "thank you, that is very thoughtful of you"],
    "HPos-": ["are you sure that is right", "i doubt that claim about charities"],
    "HNeg+": ["even a small amount helps", "no pressure, it is up to you"],
    "HNeg-": ["would you donate part of your payment", "please consider giving today"],
    "SPos+": ["our charity helps children in need", "save the children is a trusted group"],
    "Other": ["hello there", "how are you today"],
}
EE = {
    "SPos+": ["i always give to causes i trust", "i volunteer at a shelter"],
    "SPos-": ["sorry, i cannot afford much", "i apologize, money is tight"],
    "HPos+": ["that sounds like a great cause", "you make a good point"],
    "HPos-": ["i do not trust that charity", "that sounds like a scam"],
    "SNeg+": ["i do not wish to donate", "no thanks, i will pass"],
    "HNeg-": ["can you tell me more first", "prove it to me"],
    "Other": ["hi", "ok"],
}

rng = random.Random(13)
lines = []
for c in range(20):
    donor = c % 2 == 0
    cid = f"syn{c:03d}"
    n = rng.randint(4, 8)
    for i in range(n):
        role = "ER" if i % 2 == 0 else "EE"
        table = ER if role == "ER" else EE
        acts = list(table)
        if role == "EE":
            weights = [3 if (a in ("SPos+", "HPos+")) == donor else 1 for a in acts]
            weights = [w * (3 if a == "SNeg+" and not donor else 1) for a, w in zip(acts, weights)]
        else:
            weights = [1] * len(acts)
        act = rng.choices(acts, weights)[0]
        labels = [act]
        if rng.random() < 0.1:
            labels.append("Other" if act != "Other" else acts[0])
        lines.append({"conv_id": cid, "turn": i // 2, "index": i, "role": role,
                      "text": rng.choice(table[act]), "labels": sorted(set(labels)),
                      "outcome": int(donor)})

with open("synthetic_corpus.jsonl", "w") as f:
    for l in lines:
        f.write(json.dumps(l, sort_keys=True) + "\n")
