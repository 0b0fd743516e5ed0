"""Regenerate everything under results/ (deterministic, about a minute)."""

from __future__ import annotations

import json
import sys
import time
from pathlib import Path

import leapdecode
from leapdecode.analysis import detector_quality, early_stats, prev_conf_cdf
from leapdecode.analysis import _csv_text
from leapdecode.backend import Dims, TinyTransformer, seeded_weights
from leapdecode.core import DecodeConfig
from leapdecode.decoding import convergence_target
from leapdecode.exactmodel import MarkovDenoiser, load_spec
from leapdecode.harness import evaluate_corpus, evaluate_prompts, sample_corpus, sweep, sweep_csv

OUT = Path(__file__).resolve().parents[1] / "results"
SPEC = load_spec(Path(leapdecode.__file__).parent / "data" / "default_markov.json")
MARKOV = MarkovDenoiser(SPEC)
TOY = TinyTransformer(seeded_weights(42, Dims(32, 4, 2, 64, 16, 256)))
BASE = DecodeConfig(phi=0.9, tau=0.7, eta=0.2, block_size=32, gen_len=64)


def write(name: str, text: str) -> None:
    (OUT / name).write_text(text, encoding="utf-8")
    print(f"wrote results/{name}", file=sys.stderr)


def markov_eval(cfg, n=200, alpha=0.0):
    return evaluate_corpus(MARKOV, SPEC, n, 64, alpha, cfg, prompt_len=2, seed=7)


def steps_comparison(summary):
    rows = []
    for alpha in (0.0, 0.3):
        ref = markov_eval(BASE.replace(strategy="cbpd"), alpha=alpha)
        for strategy in ("baseline", "cbpd", "leap"):
            rep = ref if strategy == "cbpd" else markov_eval(BASE.replace(strategy=strategy), alpha=alpha)
            rows.append(["markov", alpha, rep.strategy, rep.n, rep.mean_steps, rep.mean_tpf,
                         rep.recovery, rep.exact_match, rep.normalized_tfops(ref)])
    prompts = [x[:4] for x in sample_corpus(SPEC, 50, 4, 11)]
    toy_cfg = DecodeConfig(block_size=8, gen_len=32)
    for tau in (0.7, 0.3):
        ref = evaluate_prompts(TOY, prompts, toy_cfg.replace(strategy="cbpd"))
        rep = evaluate_prompts(TOY, prompts, toy_cfg.replace(strategy="leap", tau=tau))
        for r in (ref, rep):
            label = r.strategy if r is ref else f"leap(tau={tau})"
            rows.append(["toy", None, label, r.n, r.mean_steps, r.mean_tpf, None, None, r.normalized_tfops(ref)])
    header = ["backend", "alpha", "strategy", "n", "mean_steps", "mean_tpf", "recovery", "exact_match",
              "norm_tfops_vs_cbpd"]
    write("steps_comparison.csv", _csv_text(header, rows))
    cb, lp = rows[1], rows[2]
    summary["markov_mean_steps"] = {"cbpd": cb[4], "leap-exact": lp[4]}
    summary["markov_step_reduction"] = 1 - lp[4] / cb[4]
    summary["markov_recovery"] = {"cbpd": cb[6], "leap-exact": lp[6]}


def convergence_stats(summary):
    cfg = BASE.replace(strategy="cbpd")
    traces, targets = [], []
    for x in sample_corpus(SPEC, 200, 2, 8):
        tgt, tr = convergence_target(MARKOV, x, cfg)
        traces.append(tr)
        targets.append(tgt)
    binned = None
    for tr, tg in zip(traces, targets):
        b = early_stats(tr, tg)
        binned = b if binned is None else binned.merge(b)
    cdf = prev_conf_cdf(traces, targets)
    write("convergence_early.csv", binned.to_csv())
    write("convergence_cdf.csv", cdf.to_csv())
    summary["convergence"] = {
        "sequences": len(traces),
        "value_at_cum_0.10": cdf.value_at(0.10),
        "included": int(cdf.counts.sum()),
        "excluded_step1": cdf.excluded,
    }


def detector(summary):
    prompts = [x[:4] for x in sample_corpus(SPEC, 50, 16, 11)]
    base = DecodeConfig(block_size=8, gen_len=16)
    runs = {
        "detector_default.csv": base,
        "detector_tau0.3.csv": base.replace(tau=0.3),
        "detector_tau0.2.csv": base.replace(tau=0.2),
        "detector_replace_tau0.2.csv": base.replace(tau=0.2, visibility_mode="replace"),
    }
    summary["detector"] = {}
    for name, cfg in runs.items():
        rep = detector_quality(TOY, prompts, cfg)
        write(name, rep.to_csv())
        t = rep.totals()
        summary["detector"][name] = {
            "tau": cfg.tau, "mode": cfg.visibility_mode, "tp": t.tp, "fp": t.fp, "fn": t.fn,
            "precision": t.precision, "recall": t.recall,
        }


def sweeps():
    # partially observed items so that accuracy can move with the thresholds
    def ev(cfg):
        return markov_eval(cfg, n=100, alpha=0.3)

    leap = BASE.replace(strategy="leap")
    write("sweep_tau.csv", sweep_csv(sweep("tau", 0.55, 0.80, 0.05, leap, ev)))
    write("sweep_eta.csv", sweep_csv(sweep("eta", 0.1, 0.5, 0.05, leap, ev)))
    write("sweep_phi_cbpd.csv", sweep_csv(sweep("phi", 0.5, 0.95, 0.05, BASE.replace(strategy="cbpd"), ev)))


def main():
    OUT.mkdir(exist_ok=True)
    summary = {}
    t0 = time.perf_counter()
    steps_comparison(summary)
    convergence_stats(summary)
    detector(summary)
    sweeps()
    write("summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(f"done in {time.perf_counter() - t0:.0f}s", file=sys.stderr)


if __name__ == "__main__":
    main()
