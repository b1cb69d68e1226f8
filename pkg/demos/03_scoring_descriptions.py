"""
Scoring generated figure descriptions
=====================================

n-gram metrics for a handful of candidates, then the five-prompt judge
protocol run offline against scripted replies.
"""

from patentfig.judge import JudgeScores, ReplayTransport, build_judge_prompt, format_judge_scores, judge_sample, JudgeRequest
from patentfig.metrics import avg_bleu, bleu_n, meteor, rouge_l, score_pairs

reference = "FIG. 2 is a flowchart illustrating a method of processing sensor data."
candidates = [
    reference,
    "FIG. 2 is a flowchart of a method for processing sensor data.",
    "FIG. 2 shows a block diagram of a server.",
]
for cand in candidates:
    print(f"B-2 {bleu_n(cand, reference, 2):.3f}  Avg-B {avg_bleu(cand, reference):.3f}  "
          f"R-L {rouge_l(cand, reference):.3f}  M {meteor(cand, reference):.3f}  | {cand}")

# corpus level: BLEU pools n-gram counts, the rest are per-pair means
report = score_pairs([(c, reference) for c in candidates])
print(report.as_percent(), report.metadata)

# the judge sees a system prompt and a user prompt per variant
system, user = build_judge_prompt(JudgeRequest("fig2.png", reference, candidates[1], "brief", 0))
print(system)
print(user.splitlines()[-1])

# scripted replies stand in for the remote model; one variant always fails
script = {("fig2.png", v): [format_judge_scores(JudgeScores(2, 1 + v % 2, 1, 2, 2, 1))] for v in range(4)}
script[("fig2.png", 4)] = ["the reply had no results block"]
outcome = judge_sample("fig2.png", reference, candidates[1], "brief", ReplayTransport(script), backoff=0)
print(outcome.scores.as_dict(), "variants used:", outcome.variants_ok, "flagged:", outcome.flagged)
