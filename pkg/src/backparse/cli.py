"""Command-line entry points: synth, preprocess, train, generate, eval, diagnose, ablate.

Every command accepts ``--config PATH`` (JSON) and ``--set key=value``
overrides; flags win over file values. Log verbosity comes from the
``BACKPARSE_LOG`` environment variable (``DEBUG``, ``INFO``, ``WARNING``).
Exit codes: 0 success, 2 config error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import re
import sys
from pathlib import Path

from . import checkpoint, decoding
from .amr import GraphError, RawExample, read_jsonl, write_jsonl, parse_penman
from .checkpoint import CheckpointError
from .config import ConfigError, RunConfig, desk_config
from .data import Vocabs, build_vocabs, prepare, prepare_all
from .metrics import bleu
from .network import BackParser
from .synth import SynthError, SyntheticSpec, write_corpus
from .tensor import NumericError, make_rng

log = logging.getLogger("backparse")

EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4


class DataError(ValueError):
    pass


# ------------------------------------------------------------------ helpers


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _overrides(pairs) -> dict:
    out = {}
    for item in pairs or ():
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = _parse_value(v)
    return out


def load_config(args) -> RunConfig:
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        cfg = RunConfig.load(path)
    elif getattr(args, "desk", False):
        cfg = desk_config()
    else:
        cfg = RunConfig()
    over = _overrides(args.set)
    for flag, key in (("data", "data_dir"), ("out", "out_dir"), ("steps", "train.steps"), ("seed", "train.seed")):
        val = getattr(args, flag, None)
        if val is not None:
            over[key] = val
    if getattr(args, "beam", None) is not None:
        over["decode.beam"] = args.beam
    return cfg.replace(**over) if over else cfg


def _require(path: Path) -> Path:
    if not path.exists():
        raise DataError(f"missing file: {path}")
    return path


def _read_examples(path: Path) -> list[RawExample]:
    return read_jsonl(_require(path))


def load_model(cfg: RunConfig, ckpt: Path | None = None) -> tuple[BackParser, Vocabs]:
    out = Path(cfg.out_dir)
    vocabs = Vocabs.load(_vocab_dir(cfg), cfg.model.max_path_len)
    ckpt = ckpt or out / "best.bpg"
    if not ckpt.exists():
        ckpt = out / "last.bpg"
    _require(ckpt)
    model = BackParser.create(cfg.model, vocabs, make_rng(0))
    checkpoint.load_into(ckpt, model.params)
    return model, vocabs


def _vocab_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out_dir)
    if (out / "vocab.words.txt").exists():
        return out
    d = Path(cfg.data_dir)
    _require(d / "vocab.words.txt")
    return d


def _dump_config(cfg: RunConfig, directory: Path, name: str = "config.json") -> None:
    directory.mkdir(parents=True, exist_ok=True)
    (directory / name).write_text(cfg.dumps() + "\n")


# ----------------------------------------------------------------- commands


def cmd_synth(args) -> int:
    obj = {}
    if args.config:
        try:
            obj = json.loads(_require(Path(args.config)).read_text())
        except json.JSONDecodeError as err:
            raise SynthError(f"{args.config}: {err}") from err
    obj.update(_overrides(args.set))
    if args.seed is not None:
        obj["seed"] = args.seed
    try:
        spec = SyntheticSpec.from_dict(obj)
    except TypeError as err:
        raise SynthError(str(err)) from err
    out = Path(args.out)
    paths = write_corpus(spec, out)
    (out / "synth_spec.json").write_text(json.dumps(spec.to_dict(), indent=2, sort_keys=True) + "\n")
    for split, p in paths.items():
        print(f"{split}: {p}")
    return 0


_META = re.compile(r"^#\s*::(\w+)\s*(.*)$")


def read_penman_corpus(path: Path) -> list[RawExample]:
    """Blank-line separated PENMAN graphs with ``# ::tok`` and ``# ::alignments`` lines.

    Alignments are ``position-variable`` pairs with 1-based token positions,
    e.g. ``# ::alignments 1-p 2-h 3-v``. Errors name the block's first line.
    """
    text = _require(path).read_text(encoding="utf-8")
    out = []
    block: list[str] = []
    meta: dict[str, str] = {}
    start = 0

    def flush():
        if not block:
            return
        where = f"{path}:{start}"
        try:
            g = parse_penman("\n".join(block))
        except GraphError as err:
            raise DataError(f"{where}: {err}") from err
        if "tok" not in meta:
            raise DataError(f"{where}: missing '# ::tok' line")
        tokens = tuple(meta["tok"].split())
        var = {v: i for i, v in enumerate(g.variables or ()) if v}
        align = []
        for pair in meta.get("alignments", "").split():
            pos, _, name = pair.partition("-")
            if not pos.isdigit() or name not in var:
                raise DataError(f"{where}: bad alignment {pair!r}")
            if not 1 <= int(pos) <= len(tokens):
                raise DataError(f"{where}: alignment position {pos} outside sentence")
            align.append((int(pos), var[name]))
        out.append(RawExample(g, tokens, tuple(align), meta.get("id")))

    for lineno, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        m = _META.match(s)
        if m:
            if block:
                flush()
                block, meta = [], {}
            if not meta and not block:
                start = lineno
            meta[m.group(1)] = m.group(2)
            continue
        if s.startswith("#"):
            continue
        if not s:
            flush()
            block, meta = [], {}
            continue
        if not block and not meta:
            start = lineno
        block.append(line)
    flush()
    return out


def cmd_preprocess(args) -> int:
    cfg = load_config(args)
    out = Path(args.out or cfg.data_dir)
    splits: dict[str, list[RawExample]] = {}
    for item in args.inputs:
        name, _, p = item.rpartition("=")
        path = Path(p)
        name = name or path.stem
        splits[name] = _read_examples(path) if path.suffix == ".jsonl" else read_penman_corpus(path)
    vocab_source = splits.get("train") or [ex for exs in splits.values() for ex in exs]
    vocabs = build_vocabs(vocab_source, cfg.model.max_path_len)
    out.mkdir(parents=True, exist_ok=True)
    for name, exs in splits.items():
        for i, ex in enumerate(exs):
            try:
                prepare(ex, vocabs).projected.validate()
            except GraphError as err:
                raise DataError(f"{name} example {i + 1}: {err}") from err
        write_jsonl(out / f"{name}.jsonl", exs)
    vocabs.save(out)
    print(f"wrote {', '.join(f'{k} ({len(v)})' for k, v in splits.items()) or 'nothing'} to {out}")
    return 0


def cmd_train(args) -> int:
    from .training import train

    cfg = load_config(args)
    data = Path(cfg.data_dir)
    vocabs = Vocabs.load(_require(data / "vocab.words.txt").parent, cfg.model.max_path_len)
    tr = prepare_all(_read_examples(data / "train.jsonl"), vocabs)
    dev_path = data / "dev.jsonl"
    dev = prepare_all(read_jsonl(dev_path), vocabs) if dev_path.exists() else []
    out = Path(cfg.out_dir)
    vocabs.save(out)
    res = train(cfg, tr, vocabs, dev, out_dir=out)
    print(f"best dev BLEU = {res.best_bleu if res.best_bleu is not None else float('nan'):.2f} at step {res.best_step}")
    return 0


def cmd_generate(args) -> int:
    cfg = load_config(args)
    model, vocabs = load_model(cfg, Path(args.checkpoint) if args.checkpoint else None)
    exs = prepare_all(_read_examples(Path(args.input)), vocabs)
    d = cfg.decode
    hyps = decoding.generate(model, exs, vocabs, d.beam, d.len_penalty, d.max_len_extra)
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text("".join(" ".join(h) + "\n" for h in hyps), encoding="utf-8")
    _dump_config(cfg, out.parent, out.stem + ".config.json")
    return 0


def _read_lines(path: Path) -> list[list[str]]:
    return [line.split() for line in _require(path).read_text(encoding="utf-8").splitlines()]


def cmd_eval(args) -> int:
    hyp = _read_lines(Path(args.hypothesis))
    ref_path = Path(args.reference)
    if ref_path.suffix == ".jsonl":
        ref = [list(ex.tokens) for ex in read_jsonl(ref_path)]
    else:
        ref = _read_lines(ref_path)
    if len(hyp) != len(ref):
        raise DataError(f"{len(hyp)} hypotheses but {len(ref)} references")
    if not hyp:
        raise DataError("empty corpus")
    print(f"BLEU = {bleu(hyp, ref):.2f}")
    return 0


def format_correlations(corr: dict) -> str:
    head = f"{'':<8}{'Node':>8}{'Edge':>8}{'Both':>8}"
    vals = "".join(f"{corr[k]:>8.3f}" if corr.get(k) is not None else f"{'n/a':>8}" for k in ("node", "edge", "both"))
    return f"{head}\n{'rho':<8}{vals}"


def format_buckets(rows: list[dict]) -> str:
    lines = [f"{'nodes':<8}{'count':>7}{'BLEU':>8}"]
    for r in rows:
        score = f"{r['bleu']:.2f}" if r["bleu"] is not None else "null"
        lines.append(f"{r['bucket']:<8}{r['count']:>7}{score:>8}")
    return "\n".join(lines)


def cmd_diagnose(args) -> int:
    cfg = load_config(args)
    model, vocabs = load_model(cfg, Path(args.checkpoint) if args.checkpoint else None)
    exs = prepare_all(_read_examples(Path(args.input)), vocabs)
    if not exs:
        raise DataError("no examples to diagnose")
    hyps = _read_lines(Path(args.hypotheses)) if args.hypotheses else None
    edges = [int(x) for x in args.buckets.split(",")]
    report = decoding.diagnose(model, exs, vocabs, hyps, edges, beam=cfg.decode.beam)
    out = Path(args.output or Path(cfg.out_dir) / "diagnose")
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "diagnostics.jsonl", "w", encoding="utf-8") as f:
        for row in report["examples"]:
            f.write(json.dumps(row, sort_keys=True) + "\n")
    (out / "buckets.json").write_text(json.dumps(report["buckets"], indent=2) + "\n")
    (out / "pearson.json").write_text(json.dumps(report["pearson"], indent=2, sort_keys=True) + "\n")
    _dump_config(cfg, out)
    if args.attention is not None:
        decoding.export_attention(model, exs[args.attention], vocabs, out / "attention.json")
    print(format_buckets(report["buckets"]))
    print()
    print(format_correlations(report["pearson"]))
    return 0


def cmd_ablate(args) -> int:
    from .ablation import format_table, run_ablation

    cfg = load_config(args)
    data = Path(cfg.data_dir)
    vocabs = Vocabs.load(_require(data / "vocab.words.txt").parent, cfg.model.max_path_len)
    tr = prepare_all(_read_examples(data / "train.jsonl"), vocabs)
    test = prepare_all(_read_examples(data / (args.split + ".jsonl")), vocabs)
    seeds = [int(s) for s in args.seeds.split(",")]
    table = run_ablation(cfg, tr, test, vocabs, seeds, out_dir=Path(cfg.out_dir))
    print(format_table(table))
    return 0


# ------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="backparse", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, desk=True):
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key (repeatable)")
        if desk:
            sp.add_argument("--desk", action="store_true", help="start from the small desk-scale model")
        return sp

    sp = common(sub.add_parser("synth", help="write a synthetic train/dev/test corpus"), desk=False)
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int)
    sp.set_defaults(func=cmd_synth)

    sp = common(sub.add_parser("preprocess", help="validate inputs and build vocabularies"))
    sp.add_argument("inputs", nargs="*", metavar="[SPLIT=]PATH", help=".jsonl or PENMAN with ::tok/::alignments")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_preprocess)

    sp = common(sub.add_parser("train", help="train a model"))
    sp.add_argument("--data")
    sp.add_argument("--out")
    sp.add_argument("--steps", type=int)
    sp.add_argument("--seed", type=int)
    sp.set_defaults(func=cmd_train)

    sp = common(sub.add_parser("generate", help="decode sentences for a JSONL corpus"))
    sp.add_argument("--input", required=True)
    sp.add_argument("--output", required=True)
    sp.add_argument("--checkpoint")
    sp.add_argument("--out")
    sp.add_argument("--beam", type=int)
    sp.set_defaults(func=cmd_generate)

    sp = common(sub.add_parser("eval", help="corpus BLEU of hypotheses against references"))
    sp.add_argument("hypothesis")
    sp.add_argument("reference", help="tokenised text, one sentence per line, or a corpus .jsonl")
    sp.set_defaults(func=cmd_eval)

    sp = common(sub.add_parser("diagnose", help="forced-decode accuracies, buckets and correlations"))
    sp.add_argument("--input", required=True)
    sp.add_argument("--hypotheses", help="generated sentences; decoded afresh when omitted")
    sp.add_argument("--output")
    sp.add_argument("--checkpoint")
    sp.add_argument("--out")
    sp.add_argument("--beam", type=int)
    sp.add_argument("--buckets", default="1,4,7,10", help="ascending bucket edges on node count")
    sp.add_argument("--attention", type=int, metavar="INDEX", help="also export attention for this example")
    sp.set_defaults(func=cmd_diagnose)

    sp = common(sub.add_parser("ablate", help="train and score the seven ablation configurations"))
    sp.add_argument("--data")
    sp.add_argument("--out")
    sp.add_argument("--steps", type=int)
    sp.add_argument("--seeds", default="1,2,3")
    sp.add_argument("--split", default="test")
    sp.set_defaults(func=cmd_ablate)
    return p


def main(argv=None) -> int:
    logging.basicConfig(
        level=os.environ.get("BACKPARSE_LOG", "WARNING").upper(),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, SynthError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, GraphError, CheckpointError, FileNotFoundError, json.JSONDecodeError) as err:
        print(f"data error: {err}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, FloatingPointError) as err:
        print(f"numeric failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
