#!/usr/bin/env python3
"""Regenerates the scripted fixtures under data/.

  data/e2e/       curate -> search -> synthesize fixture with scripted backends
  data/verifier/  40 hand-labeled verifier samples and a scripted judge
"""
import json
import pathlib

ROOT = pathlib.Path(__file__).resolve().parent.parent / "data"


def esc(text):
    return "".join("\\" + c if c in "\\^$.|?*+()[]{}/" else c for c in text)


def write_jsonl(path, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for row in rows:
            f.write(json.dumps(row, ensure_ascii=False, sort_keys=True) + "\n")


def cot(*steps, conclusion, verification="The conclusion is consistent with the findings."):
    items = [{"action": "Inner Thinking", "title": t, "content": c} for t, c in steps]
    items.append({"action": "Final Conclusion", "content": conclusion})
    items.append({"action": "Verification", "content": verification})
    return "```json\n" + json.dumps({"CoT": items}, indent=2) + "\n```"


# ---------------------------------------------------------------------------
# End-to-end pipeline fixture

MCQS = [
    # key, question, options, answer label, probe answers, judge, reformatted question, standard answer
    dict(id="e2e-01", key="glucose phosphorylation",
         question="A 24-year-old runner is studying how skeletal muscle traps incoming sugar. Which enzyme catalyzes the "
                  "first committed glucose phosphorylation step of glycolysis in muscle cells, producing glucose-6-phosphate?",
         options={"A": "Phosphofructokinase", "B": "Pyruvate kinase", "C": "Hexokinase", "D": "Aldolase"},
         answer="C", probes=("A", "B"), judge="Pass",
         open_q="A 24-year-old runner is studying how skeletal muscle traps incoming sugar. Which enzyme catalyzes the "
                "first glucose phosphorylation step of glycolysis in muscle cells, producing glucose-6-phosphate?",
         truth="Hexokinase"),
    dict(id="e2e-02", key="biguanide",
         question="A 52-year-old man with newly diagnosed type 2 diabetes, normal kidney function and a BMI of 33 asks "
                  "about first-line therapy. Which biguanide drug is the usual first-line oral agent for him?",
         options={"A": "Glipizide", "B": "Metformin", "C": "Insulin glargine", "D": "Pioglitazone"},
         answer="B", probes=("A", "A"), judge="Pass",
         open_q="A 52-year-old man with newly diagnosed type 2 diabetes, normal kidney function and a BMI of 33 asks "
                "about first-line therapy. Which biguanide drug is the usual first-line oral agent for him?",
         truth="Metformin"),
    dict(id="e2e-03", key="subacute combined degeneration",
         question="A 67-year-old vegan woman presents with paresthesias, loss of vibration sense and macrocytic anemia. "
                  "Deficiency of which vitamin explains subacute combined degeneration of the spinal cord here?",
         options={"A": "Folate", "B": "Thiamine", "C": "Cobalamin", "D": "Niacin"},
         answer="C", probes=("A", "C"), judge="Pass",
         open_q="A 67-year-old vegan woman presents with paresthesias, loss of vibration sense and macrocytic anemia. "
                "Deficiency of which vitamin explains subacute combined degeneration of the spinal cord here?",
         truth="Cobalamin"),
    dict(id="e2e-04", key="vitamin K antagonist",
         question="A 71-year-old woman with atrial fibrillation and a mechanical mitral valve needs long-term oral "
                  "anticoagulation. Which vitamin K antagonist is the standard choice for her valve?",
         options={"A": "Apixaban", "B": "Aspirin", "C": "Warfarin", "D": "Clopidogrel"},
         answer="C", probes=("A", "D"), judge="Pass",
         open_q="A 71-year-old woman with atrial fibrillation and a mechanical mitral valve needs long-term oral "
                "anticoagulation. Which vitamin K antagonist is the standard choice for her valve?",
         truth="Warfarin"),
    dict(id="e2e-05", key="Which organ makes insulin",
         question="Which organ makes insulin?",
         options={"A": "Liver", "B": "Pancreas", "C": "Spleen", "D": "Kidney"},
         answer="B", probes=("A", "B"), judge="Pass", open_q=None, truth=None),
    dict(id="e2e-06", key="scurvy",
         question="A sailor on a long voyage without fresh produce develops bleeding gums, corkscrew hairs and poor "
                  "wound healing. Deficiency of which vitamin causes this scurvy presentation in adults?",
         options={"A": "Vitamin A", "B": "Vitamin C", "C": "Vitamin D", "D": "Vitamin E"},
         answer="B", probes=("B", "B"), judge="Pass", open_q=None, truth=None),
    dict(id="e2e-07", key="largest organ",
         question="A first-year anatomy student reviewing integumentary histology slides before an exam wants to "
                  "confirm a basic fact. What is the largest organ of the human body by surface area and weight?",
         options={"A": "Liver", "B": "Skin", "C": "Lung", "D": "Brain"},
         answer="B", probes=("C", "A"), judge="Too Simple", open_q=None, truth=None),
]

SEARCH = {
    # key: (init conclusion, refined conclusion)
    "glucose phosphorylation": ("Hexokinase", "Hexokinase"),
    "biguanide": ("Glipizide", "Metformin"),
    "subacute combined degeneration": ("Folate", "Folate"),
    "vitamin K antagonist": ("Warfarin", "Warfarin"),
}

MERGE = {
    "glucose phosphorylation": [
        "Hmm, glucose enters the muscle cell and has to be trapped.\nFinal Conclusion: Hexokinase.",
        "Okay, glucose comes into the muscle cell and needs to be trapped there.\nOh, phosphorylating it at carbon 6 "
        "does exactly that, and muscle uses hexokinase rather than glucokinase.\nWait, phosphofructokinase is the "
        "rate-limiting step later on, not the first phosphorylation.\nSo the enzyme is hexokinase.",
    ],
    "biguanide": [
        "Alright, new type 2 diabetes with obesity and good kidneys.\nMy first thought was a sulfonylurea like "
        "glipizide, hmm, but that causes weight gain and hypoglycemia.\nWait, the question says biguanide, and the only "
        "biguanide in use is metformin.\nAlso metformin is weight-neutral and first line, so metformin it is.",
    ],
    "vitamin K antagonist": [
        "Mechanical mitral valve plus atrial fibrillation.\nHmm, the direct oral anticoagulants are not approved for "
        "mechanical valves.\nThe vitamin K antagonist that is standard here is warfarin.\nYes, warfarin with an INR "
        "target fits.",
    ],
}

RESPONSE = {
    "glucose phosphorylation": "**Hexokinase** catalyzes the first phosphorylation of glucose in skeletal muscle, "
                               "producing glucose-6-phosphate and trapping glucose inside the cell.",
    "biguanide": "**Metformin** is the usual first-line oral agent: it is a biguanide, lowers hepatic glucose output, "
                 "is weight-neutral and rarely causes hypoglycemia.",
    # contradicts the verified conclusion, so the consistency gate drops it
    "vitamin K antagonist": "**Heparin** bridging is the standard long-term choice for this patient.",
}


def e2e():
    d = ROOT / "e2e"
    mcq_rows = []
    for m in MCQS:
        mcq_rows.append({"id": m["id"], "question": m["question"], "options": m["options"],
                         "answer_label": m["answer"], "source": "fixture", "language": "en"})
    write_jsonl(d / "mcqs.jsonl", mcq_rows)

    probe_a, probe_b, judge, gen, verifier = [], [], [], [], []
    for m in MCQS:
        k = esc(m["key"])
        probe_a.append({"tag": "probe:.*", "content": k, "reply": "Answer: " + m["probes"][0]})
        probe_b.append({"tag": "probe:.*", "content": k, "reply": "The answer is (" + m["probes"][1] + ")."})
        if m["judge"] != "Pass":
            judge.append({"tag": "filter", "content": k, "reply": "Verdict: " + m["judge"]})
        if m["open_q"]:
            gen.append({"tag": "reformat", "content": k, "reply": "```json\n" + json.dumps(
                {"Open-ended Verifiable Question": m["open_q"], "Standard Answer": m["truth"]}, indent=2) + "\n```"})
    judge.append({"tag": "filter", "reply": "Pass"})

    for key, (first, refined) in SEARCH.items():
        k = esc(key)
        gen.append({"tag": "search:init", "content": k, "reply": cot(
            ("Read the vignette", "The key clue is the " + key + " detail."),
            ("Narrow the options", "Candidates considered: " + first + "."),
            conclusion=first)})
        gen.append({"tag": "search:.*", "content": k, "reply": cot(
            ("Revisit the earlier reasoning", "The earlier conclusion needs another look against the " + key + " clue."),
            ("Re-derive", "On reflection the mechanism points to " + refined + "."),
            conclusion=refined)})
    for key, replies in MERGE.items():
        entry = {"tag": "merge", "content": esc(key),
                 "replies": ["```json\n" + json.dumps({"NaturalReasoning": r}) + "\n```" for r in replies]}
        if len(replies) == 1:
            entry = {"tag": "merge", "content": esc(key), "reply": entry["replies"][0]}
        gen.append(entry)
    for key, text in RESPONSE.items():
        gen.append({"tag": "response", "content": esc(key), "reply": text})

    for m in MCQS:
        if not m["truth"]:
            continue
        t = esc(m["truth"])
        verifier.append({"tag": "verifier",
                         "content": "<Model Response>\\n[^<]*" + t + "[^<]*\\n</Model Response>\\s*<Reference Answer>\\n"
                                    + t + "\\n",
                         "reply": "True"})
    verifier.append({"tag": "verifier", "reply": "False"})

    write_jsonl(d / "probe_alpha.jsonl", probe_a)
    write_jsonl(d / "probe_beta.jsonl", probe_b)
    write_jsonl(d / "judge.jsonl", judge)
    write_jsonl(d / "generator.jsonl", gen)
    write_jsonl(d / "verifier.jsonl", verifier)

    write_jsonl(d / "unconverted.jsonl", [
        {"id": "u-01", "question": "Which electrolyte abnormality classically produces peaked T waves on ECG?",
         "options": {"A": "Hypokalemia", "B": "Hyperkalemia", "C": "Hypocalcemia", "D": "Hypernatremia"},
         "answer_label": "B", "source": "fixture", "language": "en"},
        {"id": "u-02", "question": "Which nerve is most at risk in a midshaft humeral fracture?",
         "options": {"A": "Radial nerve", "B": "Ulnar nerve", "C": "Median nerve", "D": "Axillary nerve"},
         "answer_label": "A", "source": "fixture", "language": "en"},
    ])
    write_jsonl(d / "general.jsonl", [
        {"problem_id": "g-01", "question": "What is 17 multiplied by 23?",
         "complex_cot": "17 times 20 is 340.\nThen 17 times 3 is 51.\nSo 340 plus 51 gives 391.",
         "response": "17 x 23 = 391.", "provenance": "general_domain"},
        {"problem_id": "g-02", "question": "Which planet is closest to the sun?",
         "complex_cot": "The inner planets in order are Mercury, Venus, Earth and Mars.\nSo the closest is Mercury.",
         "response": "Mercury is the closest planet to the sun.", "provenance": "general_domain"},
    ])
    write_jsonl(d / "eval.jsonl", [
        {"text": "Deficiency of which vitamin explains subacute combined degeneration of the spinal cord in a "
                 "patient with macrocytic anemia?"},
        {"text": "Name the rate-limiting enzyme of the urea cycle."},
    ])


# ---------------------------------------------------------------------------
# Verifier fixture: 25 literal matches, 10 aliases, 5 wrong answers.

LITERAL = [
    ("Hexokinase", "The enzyme is hexokinase."), ("Metformin", "Start metformin."),
    ("Warfarin", "Warfarin is preferred."), ("Cobalamin", "This is cobalamin deficiency."),
    ("Insulin", "Give insulin now."), ("Aspirin", "Chew an aspirin immediately."),
    ("Pancreas", "It is made in the pancreas."), ("Radial nerve", "The radial nerve is at risk."),
    ("Hyperkalemia", "Peaked T waves mean hyperkalemia."), ("Mercury", "Mercury."),
    ("Dopamine", "Dopamine is deficient in the substantia nigra."), ("Thiamine", "Replace thiamine first."),
    ("Amoxicillin", "Amoxicillin for ten days."), ("Atropine", "Atropine reverses the bradycardia."),
    ("Naloxone", "Administer naloxone."), ("Glucagon", "Inject glucagon."),
    ("Vancomycin", "Oral vancomycin is indicated."), ("Levothyroxine", "Levothyroxine replacement."),
    ("Furosemide", "Give IV furosemide."), ("Epinephrine", "Intramuscular epinephrine."),
    ("Mitral stenosis", "The murmur suggests mitral stenosis."), ("Appendicitis", "Likely acute appendicitis."),
    ("Sarcoidosis", "Findings fit sarcoidosis."), ("Gout", "This is an attack of gout."),
    ("Kawasaki disease", "Kawasaki disease is the diagnosis."),
]
ALIAS = [
    ("Vitamin C", "Ascorbic acid deficiency."), ("Acetaminophen", "Give paracetamol."),
    ("Epinephrine", "Adrenaline 0.5 mg IM."), ("Myocardial infarction", "This is a heart attack."),
    ("Cobalamin", "Vitamin B12 deficiency."), ("Hypertension", "High blood pressure."),
    ("Salbutamol", "Albuterol nebulizer."), ("Varicella", "Chickenpox."),
    ("Pertussis", "Whooping cough."), ("Cerebrovascular accident", "The patient had a stroke."),
]
WRONG = [
    ("Hexokinase", "Phosphofructokinase."), ("Metformin", "Glipizide."), ("Warfarin", "Apixaban."),
    ("Gout", "Pseudogout."), ("Naloxone", "Flumazenil."),
]
JUDGE_WRONG_ON = "Whooping cough."  # the scripted judge misses this alias


def verifier_fixture():
    d = ROOT / "verifier"
    rows, script = [], []
    n = 0
    for group, label in ((LITERAL, True), (ALIAS, True), (WRONG, False)):
        for truth, answer in group:
            n += 1
            rows.append({"problem_id": "v%02d" % n, "model_answer": answer, "ground_truth": truth,
                         "human_label": label})
            judged = label if answer != JUDGE_WRONG_ON else (not label)
            script.append({"tag": "verifier",
                           "content": "<Model Response>\\n" + esc(answer) + "\\n</Model Response>\\s*<Reference Answer>\\n"
                                      + esc(truth) + "\\n",
                           "reply": "True" if judged else "False"})
    write_jsonl(d / "annotated_40.jsonl", rows)
    write_jsonl(d / "judge.jsonl", script)


if __name__ == "__main__":
    e2e()
    verifier_fixture()
