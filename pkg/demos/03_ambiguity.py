"""Which prompt strategies send the "set the price" and "the price happens to be" questions to one prompt."""

from promptlab import builtin_strategy, check_ambiguity
from promptlab.prompts import default_questions

for sid in ("simple_blinded", "ask_purchase", "blinded_system", "unblinded_system"):
    strategy = builtin_strategy(sid)
    reports = check_ambiguity(strategy, default_questions(strategy))
    verdict = "ambiguous" if reports else "unambiguous"
    print(f"{sid:<18} {verdict}")
    for r in reports:
        print(f"    {r.reason}")

print("\nA collision means no answer function can be right for both questions:")
print("they expect different answers yet see the same bytes.")
