"""Write a toy corpus, then train, enhance and evaluate it through the CLI with configs/desk.yaml."""
import argparse
import subprocess
import sys
from pathlib import Path

from textdark.synthetic import write_corpus

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default=str(ROOT / "configs" / "desk.yaml"))
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    toy = ROOT / "runs" / "toy"
    write_corpus(toy / "corpus", n_train=4, n_test=2, height=96, width=96)
    for task in ("train-enhance", "enhance", "evaluate"):
        cmd = ["toolkit", task, "--config", args.config, "--seed", str(args.seed), "--out", str(toy / task.replace("-", "_"))]
        print("$", " ".join(cmd), flush=True)
        subprocess.run(cmd, check=True)
    print((toy / "evaluate" / "report.txt").read_text())


if __name__ == "__main__":
    sys.exit(main())
