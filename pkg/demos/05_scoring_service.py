"""
Batch reward scoring over TCP
=============================

The service reads one JSON request per line and writes one response per
line, in order. Here it runs in a background thread on a free port.
"""

from carekit.server import Scorer, ScoreRequest, ScoringServer, score_remote

good = ("<think>Context: exam stress\nCognition: I will fail\nEmotion: anxious\n"
        "Support Plan: Question</think><answer>What are you most worried about?</answer>")
requests = [
    ScoreRequest("r1", good, "Question"),
    ScoreRequest("r2", good, "Information"),
    ScoreRequest("r3", good.replace("Emotion: anxious\n", ""), "Question", "no-emotion"),
    ScoreRequest("r4", "just text", "Question"),
    ScoreRequest("r5", good, "Hugging"),
]

with ScoringServer(("127.0.0.1", 0), Scorer()) as server:
    server.start_background()
    print("listening on %s:%d" % server.address)
    for resp in score_remote(server.address, requests):
        print(resp.to_json())
    server.shutdown()
