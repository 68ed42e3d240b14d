"""Aggregate per-run plots into figures/ (fixture placeholder)."""
import json
import pathlib

SUMMARIES = ["baseline_summary.json", "research_summary.json", "ablation_summary.json"]


def main():
    root = pathlib.Path(__file__).parent
    for name in SUMMARIES:
        path = root / "logs" / "0-run" / name
        if path.exists():
            print(name, sorted(json.loads(path.read_text())))


if __name__ == "__main__":
    main()
