"""Evaluation-protocol test worker. Usage: worker.py MODE [ARG]

echo V     answer every request with accuracy V
gene       answer with the first gene value, clamped to [0, 1]
mismatch   answer with a wrong id
garbage    answer with a line that is not JSON
sleep S    sleep S seconds before answering when the first gene exceeds 0.5
crash      exit when the first gene exceeds 0.5
"""

import json
import sys
import time


def main():
    mode = sys.argv[1]
    arg = sys.argv[2] if len(sys.argv) > 2 else None
    hello = json.loads(sys.stdin.readline())
    assert hello["type"] == "hello" and hello["version"] == 1, hello
    assert isinstance(hello["schema"], list) and "layers" in hello["model_manifest"], hello
    print(json.dumps({"type": "ready"}), flush=True)
    for line in sys.stdin:
        msg = json.loads(line)
        if msg["type"] == "bye":
            return
        assert msg["type"] == "eval" and isinstance(msg["plan"], list), msg
        first = msg["genome"][0]
        rid = msg["id"]
        acc = 0.5
        if mode == "echo":
            acc = float(arg)
        elif mode == "gene":
            acc = min(max(first, 0.0), 1.0)
        elif mode == "mismatch":
            rid += 1
        elif mode == "garbage":
            print("this is not json", flush=True)
            continue
        elif mode == "sleep" and first > 0.5:
            time.sleep(float(arg))
        elif mode == "crash" and first > 0.5:
            sys.exit(3)
        print(json.dumps({"type": "result", "id": rid, "accuracy": acc}), flush=True)


if __name__ == "__main__":
    main()
