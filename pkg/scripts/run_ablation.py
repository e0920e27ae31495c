"""Train every encoder variant on one synthetic corpus and compare held-out scores.

    python3 scripts/run_ablation.py --ambiguity 0.5 --seeds 0 1 2 --out results/ablation.json
"""

import argparse
import statistics
import time
from dataclasses import asdict, dataclass, field

from tablelink.candidate_gen import candidates_for_tables, gold_map
from tablelink.disambiguator import TrainConfig, predict, train
from tablelink.encoders import TableTooLarge, Variant
from tablelink.eval_bench import SyntheticSpec, evaluate, make_synthetic_corpus, write_json
from tablelink.kb_store import build_bm25_index, build_gazetteer


@dataclass
class AblationConfig:
    n_tables: int = 160
    n_train: int = 120
    ambiguity: float = 0.5
    misspell: float = 0.0
    nil: float = 0.0
    epochs: int = 12
    k: int = 20
    seeds: list[int] = field(default_factory=lambda: [0])
    variants: list[str] = field(default_factory=lambda: [v.name for v in Variant])


def run_one(cfg: AblationConfig, variant: str, seed: int) -> dict:
    spec = SyntheticSpec(n_tables=cfg.n_tables, ambiguity=cfg.ambiguity, misspell=cfg.misspell, nil=cfg.nil)
    tables, kb = make_synthetic_corpus(spec, seed=seed)
    sets = candidates_for_tables(tables, build_gazetteer(kb), build_bm25_index(kb), cfg.k)
    train_t, test_t = tables[: cfg.n_train], tables[cfg.n_train:]
    start = time.perf_counter()
    model, curve = train(train_t, kb, sets, TrainConfig(variant=variant, epochs=cfg.epochs, seed=seed, k=cfg.k))
    elapsed = time.perf_counter() - start
    preds = {p.mention: p.chosen for p in predict(test_t, model, kb, sets, variant)}
    report = evaluate(preds, gold_map(test_t), sets)
    return {"variant": variant, "seed": seed, "train_seconds": elapsed,
            "final_train_acc": curve[-1]["train_acc"] if curve else None, **report.to_json()}


def main() -> None:
    defaults = AblationConfig()
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    for name, value in asdict(defaults).items():
        if isinstance(value, list):
            p.add_argument(f"--{name.replace('_', '-')}", nargs="+", type=type(value[0]), default=value)
        else:
            p.add_argument(f"--{name.replace('_', '-')}", type=type(value), default=value)
    p.add_argument("--out")
    args = vars(p.parse_args())
    out = args.pop("out")
    cfg = AblationConfig(**args)

    rows = []
    for variant in cfg.variants:
        for seed in cfg.seeds:
            try:
                row = run_one(cfg, Variant.parse(variant).name, seed)
            except TableTooLarge as exc:
                print(f"{variant} seed {seed}: skipped ({exc})")
                continue
            rows.append(row)
            print(f"{row['variant']:14s} seed {seed}  acc {row['accuracy']:.3f}  f1 {row['f1']:.3f}  "
                  f"{row['train_seconds']:.0f}s")
    print()
    for variant in dict.fromkeys(r["variant"] for r in rows):
        accs = [r["accuracy"] for r in rows if r["variant"] == variant]
        print(f"{variant:14s} mean acc {statistics.mean(accs):.3f} over {len(accs)} seed(s)")
    if out:
        write_json(out, {"config": asdict(cfg), "runs": rows})


if __name__ == "__main__":
    main()
