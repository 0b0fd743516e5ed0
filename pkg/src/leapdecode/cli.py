"""Command-line entry point: ``leapdecode <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 data/format error, 3 enumeration
bound exceeded.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from . import analysis, harness
from .backend import Dims, TinyTransformer, save_weights, seeded_weights
from .core import (
    DecodeConfig,
    DecodeTrace,
    EnumerationBoundError,
    FormatError,
    read_config_file,
    state_from_tokens,
)
from .decoding import ConvergenceTarget, run_decode
from .exactmodel import MarkovDenoiser, MarkovSpec, corrupt, load_spec, sample_sequence
from .rng import derive_seed

log = logging.getLogger("leapdecode")

EXIT_USAGE, EXIT_DATA, EXIT_BOUND = 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _write(path, text: str):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(text, encoding="utf-8")


def _parse_tokens(text):
    if text is None or not text.strip():
        return []
    return [int(t) for t in text.replace(",", " ").split()]


def read_corpus(path) -> list:
    items = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            items.append([int(t) for t in json.loads(line)["tokens"]])
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"{path}:{lineno}: {exc}") from exc
    return items


# ---------------------------------------------------------------- settings

# CLI option name -> settings key
_RUN_KEYS = {
    "backend": "backend", "weights": "weights", "spec": "spec", "strategy": "strategy",
    "phi": "phi", "tau": "tau", "eta": "eta", "block_size": "block_size",
    "gen_len": "gen_len", "alpha": "alpha", "seed": "seed", "mode": "visibility_mode",
    "union_cbpd": "union_cbpd", "prompt": "prompt", "prompt_len": "prompt_len",
}


def _settings(args, keys=_RUN_KEYS) -> dict:
    values = {}
    if getattr(args, "config", None):
        values.update(read_config_file(args.config))
        if "mode" in values and "visibility_mode" not in values:
            values["visibility_mode"] = values.pop("mode")
    for opt, key in keys.items():
        v = getattr(args, opt, None)
        if v is not None:
            values[key] = v
    return values


def _config(values) -> DecodeConfig:
    try:
        return DecodeConfig.from_mapping(values)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc


def _model(values):
    backend = values.get("backend")
    if backend == "tiny":
        if not values.get("weights"):
            raise UsageError("--backend tiny needs --weights")
        return TinyTransformer.from_file(values["weights"])
    if backend == "markov":
        if not values.get("spec"):
            raise UsageError("--backend markov needs --spec")
        spec = load_spec(values["spec"])
        if not isinstance(spec, MarkovSpec):
            raise FormatError("decoding needs a first-order Markov spec")
        return MarkovDenoiser(spec)
    raise UsageError("--backend must be tiny or markov")


def _require_seed(values) -> int:
    seed = values.get("seed")
    if seed in (None, "", "none"):
        raise UsageError("an explicit --seed is required")
    return int(seed)


# ---------------------------------------------------------------- commands


def cmd_gen_weights(args):
    dims = Dims(args.d_model, args.heads, args.layers, args.ffn, args.vocab, args.max_pos)
    save_weights(seeded_weights(args.seed, dims), args.out)
    log.info("wrote %s", args.out)


def cmd_sample_corpus(args):
    spec = load_spec(args.spec)
    lines = []
    for k, x in enumerate(harness.sample_corpus(spec, args.n, args.len, args.seed)):
        lines.append(json.dumps({"index": k, "tokens": x}, separators=(",", ":")))
    _write(args.out, "\n".join(lines) + "\n")


def _markov_state(model, values, config):
    seed = _require_seed(values)
    prompt_len = int(values.get("prompt_len", 2))
    alpha = float(values.get("alpha", 0.0))
    x0 = sample_sequence(model.spec, prompt_len + config.gen_len, derive_seed(seed, 0, 0))
    gen = corrupt(x0[prompt_len:], alpha, derive_seed(seed, 0, 1), model.vocab.mask_id)
    state = state_from_tokens(x0[:prompt_len] + gen, prompt_len, config.block_size, model.vocab.mask_id)
    return state, x0


def cmd_run(args):
    values = _settings(args)
    config = _config(values)
    model = _model(values)
    x0, masked = None, []
    if isinstance(model, MarkovDenoiser):
        state, x0 = _markov_state(model, values, config)
        masked = sorted(state.masked)
        prompt = None
    else:
        state = None
        prompt = _parse_tokens(values.get("prompt"))
    t0 = time.perf_counter()
    tokens, trace = run_decode(model, prompt, config, state=state, record_probs=not args.no_probs)
    wall = time.perf_counter() - t0
    if args.trace:
        _write(args.trace, trace.dumps())
    if args.target:
        _write(args.target, json.dumps(ConvergenceTarget.from_trace(trace).to_json()) + "\n")
    rep = harness.compute_metrics(trace, strategy=harness.strategy_label(model, config), wall_time=wall)
    summary = {k: getattr(rep, k) for k in ("strategy", "steps", "decoded", "tpf", "tfops")}
    summary["tokens"] = tokens
    if x0 is not None:
        summary["recovery"] = (
            sum(tokens[p] == x0[p] for p in masked) / len(masked) if masked else 1.0
        )
    print(json.dumps(summary))


def cmd_metrics(args):
    trace = DecodeTrace.read(args.trace)
    trace.validate()
    base = None
    if args.baseline:
        base = DecodeTrace.read(args.baseline)
        base.validate()
    rep = harness.compute_metrics(trace, base, strategy=Path(args.trace).stem)
    _write(args.out, rep.to_csv())
    if args.series:
        _write(args.series, rep.series_csv())


def cmd_stats(args):
    traces, targets = [], []
    for tpath in sorted(Path(args.traces).glob("*.jsonl")):
        gpath = Path(args.targets) / (tpath.stem + ".json")
        if not gpath.exists():
            raise FormatError(f"no target {gpath} for trace {tpath}")
        traces.append(DecodeTrace.read(tpath))
        try:
            targets.append(ConvergenceTarget.from_json(json.loads(gpath.read_text(encoding="utf-8"))))
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise FormatError(f"{gpath}: {exc}") from exc
    if not traces:
        raise FormatError(f"no *.jsonl traces in {args.traces}")
    binned = None
    for tr, tg in zip(traces, targets):
        b = analysis.early_stats(tr, tg)
        binned = b if binned is None else binned.merge(b)
    cdf = analysis.prev_conf_cdf(traces, targets)
    out = Path(args.out)
    cdf_out = args.cdf_out or out.with_name(out.stem + "_cdf" + out.suffix)
    _write(out, binned.to_csv())
    _write(cdf_out, cdf.to_csv())
    print(json.dumps({
        "traces": len(traces),
        "included": int(cdf.counts.sum()),
        "excluded": cdf.excluded,
        "value_at_cum_0.10": cdf.value_at(0.10),
    }))


def cmd_oracle(args):
    values = _settings(args, {})
    config = _config(values).replace(strategy="leap")
    model = TinyTransformer.from_file(args.weights)
    prompt_len = int(values.get("prompt_len", 4))
    prompts = [x[:prompt_len] for x in read_corpus(args.corpus)]
    if "n" in values:
        prompts = prompts[: int(values["n"])]
    bound = int(values.get("oracle_bound", analysis.ORACLE_BOUND))
    report = analysis.detector_quality(model, prompts, config, bound)
    _write(args.out, report.to_csv())
    tot = report.totals()
    print(json.dumps({"tp": tot.tp, "fp": tot.fp, "fn": tot.fn,
                      "precision": tot.precision, "recall": tot.recall}))


def _parse_range(text):
    try:
        lo, hi, step = (float(x) for x in text.split(":"))
    except ValueError as exc:
        raise UsageError(f"--range expects LO:HI:STEP, got {text!r}") from exc
    return lo, hi, step


def cmd_sweep(args):
    lo, hi, step = _parse_range(args.range)
    values = _settings(args, {})
    config = _config(values)
    model = _model(values)
    if isinstance(model, MarkovDenoiser):
        seed = _require_seed(values)
        n = int(values.get("n", 50))
        length = int(values.get("len", config.gen_len))
        alpha = float(values.get("alpha", 0.0))
        prompt_len = int(values.get("prompt_len", 2))

        def evaluate(cfg):
            return harness.evaluate_corpus(model, model.spec, n, length, alpha, cfg,
                                           prompt_len=prompt_len, seed=seed)
    else:
        if "corpus" not in values:
            raise UsageError("tiny-backend sweeps need 'corpus' in the config")
        prompt_len = int(values.get("prompt_len", 4))
        prompts = [x[:prompt_len] for x in read_corpus(values["corpus"])]
        if "n" in values:
            prompts = prompts[: int(values["n"])]

        def evaluate(cfg):
            return harness.evaluate_prompts(model, prompts, cfg)

    try:
        rows = harness.sweep(args.param, lo, hi, step, config, evaluate)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    _write(args.out, harness.sweep_csv(rows))


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="leapdecode", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-weights", help="write seeded transformer weights")
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--d-model", type=int, default=32)
    g.add_argument("--heads", type=int, default=4)
    g.add_argument("--layers", type=int, default=2)
    g.add_argument("--ffn", type=int, default=64)
    g.add_argument("--vocab", type=int, default=16)
    g.add_argument("--max-pos", type=int, default=256)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_weights)

    s = sub.add_parser("sample-corpus", help="sample sequences from a Markov spec")
    s.add_argument("--spec", required=True)
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--len", type=int, required=True)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sample_corpus)

    r = sub.add_parser("run", help="decode one sequence and write its trace")
    r.add_argument("--config")
    r.add_argument("--backend", choices=("tiny", "markov"))
    src = r.add_mutually_exclusive_group()
    src.add_argument("--weights")
    src.add_argument("--spec")
    r.add_argument("--strategy", choices=("baseline", "cbpd", "leap"))
    r.add_argument("--phi", type=float)
    r.add_argument("--tau", type=float)
    r.add_argument("--eta", type=float)
    r.add_argument("--block-size", type=int)
    r.add_argument("--gen-len", type=int)
    r.add_argument("--alpha", type=float)
    r.add_argument("--seed", type=int)
    r.add_argument("--mode", choices=("augment", "replace"))
    r.add_argument("--union-cbpd", action="store_const", const=True, default=None)
    r.add_argument("--prompt", help="comma-separated prompt token ids (tiny backend)")
    r.add_argument("--prompt-len", type=int, help="clean prefix length (markov backend)")
    r.add_argument("--trace")
    r.add_argument("--target", help="also write the convergence target (JSON)")
    r.add_argument("--no-probs", action="store_true", help="omit full distributions from snapshots")
    r.set_defaults(func=cmd_run)

    m = sub.add_parser("metrics", help="Steps / TPF / TFOPs from a trace")
    m.add_argument("--trace", required=True)
    m.add_argument("--baseline")
    m.add_argument("--out", required=True)
    m.add_argument("--series", help="optional per-step forward length CSV")
    m.set_defaults(func=cmd_metrics)

    st = sub.add_parser("stats", help="early-convergence statistics over traces")
    st.add_argument("--traces", required=True)
    st.add_argument("--targets", required=True)
    st.add_argument("--out", required=True)
    st.add_argument("--cdf-out")
    st.set_defaults(func=cmd_stats)

    o = sub.add_parser("oracle", help="detector precision/recall against the brute-force oracle")
    o.add_argument("--weights", required=True)
    o.add_argument("--corpus", required=True)
    o.add_argument("--config", required=True)
    o.add_argument("--out", required=True)
    o.set_defaults(func=cmd_oracle)

    w = sub.add_parser("sweep", help="sweep tau, eta or phi over a corpus")
    w.add_argument("--param", required=True, choices=("tau", "eta", "phi"))
    w.add_argument("--range", required=True)
    w.add_argument("--config", required=True)
    w.add_argument("--out", required=True)
    w.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except UsageError as exc:
        print(f"leapdecode: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except EnumerationBoundError as exc:
        print(f"leapdecode: {exc}", file=sys.stderr)
        return EXIT_BOUND
    except (FormatError, ValueError, OSError) as exc:
        print(f"leapdecode: {exc}", file=sys.stderr)
        return EXIT_DATA
    return 0


if __name__ == "__main__":
    sys.exit(main())
