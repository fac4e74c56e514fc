"""Score paired perplexities and relate perplexity drop to extra memory."""
from layerquant import PplRecord, ppl_vs_memory, score_wtl

rows = [
    ("SB", "wikitext2", 2, 1, 6.16), ("SB", "c4", 2, 1, 9.57),
    ("SB", "wikitext2", 3, 1, 6.171), ("SB", "c4", 3, 1, 9.604),
    ("KB", "wikitext2", 2, 1, 6.31), ("KB", "c4", 2, 1, 9.70),
    ("KB", "wikitext2", 3, 1, 6.174), ("KB", "c4", 3, 1, 9.88),
    ("HQQ", "wikitext2", 0, 0, 6.50), ("HQQ", "c4", 0, 0, 9.88),
]
records = [PplRecord("Llama-3-8B", m, d, 4.25, s, t, p) for m, d, s, t, p in rows]

for w in score_wtl(records, [("SB", "KB"), ("SB", "HQQ"), ("KB", "HQQ")]):
    print(f"{w.primary} vs {w.comparator}: {w.wins} win / {w.ties} tie / {w.losses} loss")
# 6.171 and 6.174 both round to 6.17, so that cell is a tie

memory = {("Llama-3-8B", m, 4.25, s, t): pct for m, s, t, pct in
          [("SB", 2, 1, 0.08), ("SB", 3, 1, 0.11), ("KB", 2, 1, 0.08), ("KB", 3, 1, 0.11)]}
for r in ppl_vs_memory(records, memory):
    print(f"{r['method']} stops={r['stops']} {r['dataset']:9s} +{r['memory_delta_pct']:.2f}% memory "
          f"-> {r['ppl_drop_pct']:5.2f}% lower perplexity")
