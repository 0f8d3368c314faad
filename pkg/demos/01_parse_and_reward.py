"""
Parsing a reasoning chain and scoring it
========================================

A model answer is a think block holding labelled nodes, then an answer block.
The reward is the product of three 0/1 checks: format, cognitive flow, strategy.
"""

from carekit import NAMED_CONFIGS, extract_chain, hierarchical_reward, parse_output

text = (
    "<think>Context: She lost her job last week.\n"
    "Cognition: She thinks she is useless.\n"
    "Emotion: Shame and sadness.\n"
    "Support Plan: Affirmation and Reassurance, then a gentle question.</think>"
    "<answer>Losing a job says nothing about your worth. What did you enjoy about it?</answer>"
)

out = parse_output(text)
print("response:", out.response)
for kind, content in extract_chain(out.think).nodes:
    print(f"  {kind.slug:13s} {content}")

# all three checks pass
print(hierarchical_reward(text, "Affirmation and Reassurance"))

# wrong strategy: the plan names a different label
print(hierarchical_reward(text, "Question"))

# anything after the answer block breaks the format, which zeroes everything
print(hierarchical_reward(text + " ok?", "Affirmation and Reassurance"))

# ablations drop a node from the required flow
no_emotion = text.replace("Emotion: Shame and sadness.\n", "")
for name in ("full", "no-emotion"):
    print(name, hierarchical_reward(no_emotion, "Affirmation and Reassurance", NAMED_CONFIGS[name]).as_tuple())
