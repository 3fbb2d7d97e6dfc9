"""Command-line entry point: ``duoasr {synthdata,train,infer,score,config}``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import torch

from .config import ConfigError, RunConfig, load_config
from .corpus import LANGUAGES, Manifest, carve_validation, load_manifest
from .errors import DataError, NumericError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
log = logging.getLogger("duoasr")


class UsageError(Exception):
    pass


def _lang_list(value: str) -> list[str]:
    codes = [c.strip() for c in value.split(",") if c.strip()]
    bad = [c for c in codes if c not in LANGUAGES]
    if bad or not codes:
        raise argparse.ArgumentTypeError(
            f"invalid language code(s) {','.join(bad) or value!r}; valid codes: {','.join(LANGUAGES)}"
        )
    return codes


def _run_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig.for_profile(args.profile)
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    return cfg


# synthdata ---------------------------------------------------------------

def cmd_synthdata(args) -> int:
    from .dsp import synth_corpus
    from .lexicon import sample_texts

    out = Path(args.out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-test"
        probe.write_bytes(b"")
        probe.unlink()
    except OSError as exc:
        raise DataError(f"output directory {out} is not writable: {exc.strerror}") from None
    text_seed = args.seed if args.text_seed is None else args.text_seed
    texts = sample_texts(args.langs, args.utts_per_lang, text_seed, args.min_units, args.max_units)
    manifest = synth_corpus(texts, args.seed, args.noise_std, out, n_mels=args.n_mels, id_prefix=args.id_prefix)
    print(f"wrote {len(manifest)} utterances to {out / 'manifest.jsonl'}")
    return EXIT_OK


# train -------------------------------------------------------------------

def cmd_train(args) -> int:
    from .model import DualEncoderASR
    from .trainer import Trainer, examples_from_manifest, resume

    cfg = _run_config(args)
    manifest_path = Path(args.manifest)
    manifest = load_manifest(manifest_path)
    if len(manifest) == 0:
        raise DataError(f"{manifest_path} has no utterances")
    if args.valid_manifest:
        train_m, valid_m = manifest, load_manifest(args.valid_manifest)
        valid_base = Path(args.valid_manifest).parent
    elif cfg.valid_hours_per_language > 0:
        train_m, valid_m = carve_validation(manifest, cfg.valid_hours_per_language, cfg.seed)
        valid_base = manifest_path.parent
    else:
        train_m, valid_m, valid_base = manifest, Manifest([]), manifest_path.parent
    train = examples_from_manifest(train_m, manifest_path.parent)
    valid = examples_from_manifest(valid_m, valid_base)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tc = cfg.train_config()

    stages = [1, 2, 3] if args.stage == "all" else [int(args.stage)]
    if args.resume:
        trainer = resume(args.resume, train, valid, cfg=tc, model_cfg=cfg.model_config(), out_dir=out)
    else:
        if stages[0] > 1 and not args.from_scratch:
            raise UsageError(f"stage {stages[0]} needs --resume <stage-{stages[0] - 1} checkpoint> or --from-scratch")
        trainer = Trainer(DualEncoderASR(cfg.model_config()), tc, train, valid, out_dir=out)
        if args.from_scratch:
            trainer.state.completed_stages.extend(range(1, stages[0]))
    (out / "config.txt").write_text(cfg.dumps(), encoding="utf-8")

    for stage in stages:
        if stage in trainer.state.completed_stages:
            continue
        if trainer.plan is not None and trainer.plan.stage == stage:
            log.info("continuing stage %d at step %d", stage, trainer.state.stage_step)
            trainer.train_stage()
        else:
            if stage > 1 and stage - 1 not in trainer.state.completed_stages:
                raise UsageError(f"stage {stage} requires a completed stage {stage - 1} checkpoint")
            trainer.start_stage(tc.plan(stage))
            trainer.train_stage()
        groups = sorted(trainer.plan.trainable_groups)
        print(f"stage {stage} done at step {trainer.state.global_step}; trainable groups: {', '.join(groups)}")
    return EXIT_OK


# infer -------------------------------------------------------------------

def cmd_infer(args) -> int:
    from .dsp import read_features, resolve_feature_path
    from .llm import normalize_repetitions
    from .trainer import load_model

    manifest = load_manifest(args.manifest)
    base = Path(args.manifest).parent
    model = load_model(args.checkpoint) if len(manifest) else None
    failures = 0
    with open(args.out, "w", encoding="utf-8") as fh:
        for utt in manifest:
            lang = args.force_lang or utt.language.code
            rec = {"id": utt.id, "language": lang}
            try:
                feats = read_features(resolve_feature_path(utt, base))
                result = model.transcribe(lang, torch.from_numpy(feats.frames), args.max_len)
            except DataError as exc:
                failures += 1
                rec.update(raw="", normalized="", error=str(exc))
                log.error("%s: %s", utt.id, exc)
            else:
                raw = result.text
                norm = raw if args.no_norm else normalize_repetitions(raw, args.norm_max_ngram, args.norm_min_repeats)
                rec.update(raw=raw, normalized=norm, truncated=result.truncated)
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")
    print(f"decoded {len(manifest) - failures}/{len(manifest)} utterances -> {args.out}")
    return EXIT_DATA if failures else EXIT_OK


def read_hypotheses(path: str | Path) -> dict[str, dict]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                out[rec["id"]] = rec
            except (json.JSONDecodeError, KeyError, TypeError):
                raise DataError(f"{path}: malformed hypothesis record at line {lineno}") from None
    return out


# score -------------------------------------------------------------------

def cmd_score(args) -> int:
    from .scoring import aggregate, score_pair

    refs = load_manifest(args.ref)
    hyps = read_hypotheses(args.hyp)
    ref_ids, hyp_ids = set(refs.ids), set(hyps)
    if ref_ids != hyp_ids:
        only_ref = sorted(ref_ids - hyp_ids)
        only_hyp = sorted(hyp_ids - ref_ids)
        raise DataError(f"id mismatch: only in references {only_ref}, only in hypotheses {only_hyp}")
    field = "raw" if args.use_raw else "normalized"
    normalize = not args.no_text_norm
    pairs = []
    for utt in refs:
        rec = hyps[utt.id]
        hyp = rec.get(field, rec.get("text", ""))
        pairs.append(score_pair(utt.text, hyp, utt.language.code, id=utt.id, normalize=normalize))
    report = aggregate(pairs, normalized=normalize)
    sys.stdout.write(report.to_table())
    if args.out:
        Path(args.out).write_text(report.to_flat(), encoding="utf-8")
    if args.per_utt:
        with open(args.per_utt, "w", encoding="utf-8") as fh:
            for p in pairs:
                fh.write(json.dumps({
                    "id": p.id, "language": p.language, "metric": p.metric,
                    "reference": p.reference, "hypothesis": p.hypothesis,
                    "sub": p.sub, "ins": p.ins, "del": p.dele, "ref_units": p.ref_units,
                    "error_rate": p.error_rate,
                }, ensure_ascii=False) + "\n")
    return EXIT_OK


def cmd_config(args) -> int:
    sys.stdout.write(RunConfig.for_profile(args.profile).dumps())
    return EXIT_OK


# parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="duoasr", description="Parallel dual-encoder ASR toolkit (desk scale).")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synthdata", help="generate a synthetic byte-template corpus")
    s.add_argument("--langs", type=_lang_list, required=True, help="comma-separated language codes, e.g. en,ja")
    s.add_argument("--utts-per-lang", type=int, default=16, help="utterances per language (default 16)")
    s.add_argument("--seed", type=int, default=0, help="seed for byte templates and noise (default 0)")
    s.add_argument("--text-seed", type=int, default=None, help="seed for transcript sampling (default: --seed)")
    s.add_argument("--noise-std", type=float, default=0.01, help="additive Gaussian noise std (default 0.01)")
    s.add_argument("--min-units", type=int, default=2, help="minimum words/characters per transcript")
    s.add_argument("--max-units", type=int, default=4, help="maximum words/characters per transcript")
    s.add_argument("--n-mels", type=int, default=80, help="feature dimension (default 80)")
    s.add_argument("--id-prefix", default="utt", help="utterance id prefix (default 'utt')")
    s.add_argument("--out-dir", required=True, help="directory for manifest.jsonl and feats/")
    s.set_defaults(func=cmd_synthdata)

    t = sub.add_parser("train", help="run tri-stage training")
    t.add_argument("--manifest", required=True, help="training manifest (JSON lines)")
    t.add_argument("--valid-manifest", help="explicit validation manifest (default: carve from training data)")
    t.add_argument("--config", help="complete key=value config file (see 'duoasr config')")
    t.add_argument("--profile", choices=("toy", "paper"), default="toy", help="built-in profile when no --config")
    t.add_argument("--stage", choices=("1", "2", "3", "all"), default="all", help="stage to run (default all)")
    t.add_argument("--resume", help="checkpoint directory to continue from")
    t.add_argument("--from-scratch", action="store_true", help="allow stage 2/3 without an earlier checkpoint")
    t.add_argument("--seed", type=int, default=None, help="override the config seed")
    t.add_argument("--out-dir", required=True, help="directory for checkpoints and train_log.jsonl")
    t.set_defaults(func=cmd_train)

    i = sub.add_parser("infer", help="decode a manifest with a trained checkpoint")
    i.add_argument("--checkpoint", required=True, help="checkpoint directory")
    i.add_argument("--manifest", required=True, help="manifest of utterances to decode")
    i.add_argument("--out", required=True, help="output hypothesis file (JSON lines)")
    i.add_argument("--force-lang", type=lambda v: _lang_list(v)[0], help="prompt every utterance with this language")
    i.add_argument("--no-norm", action="store_true", help="skip repetition normalization")
    i.add_argument("--max-len", type=int, default=200, help="maximum decoded tokens (default 200)")
    i.add_argument("--norm-max-ngram", type=int, default=8, help="longest n-gram collapsed by normalization")
    i.add_argument("--norm-min-repeats", type=int, default=3, help="minimum run length collapsed by normalization")
    i.set_defaults(func=cmd_infer)

    c = sub.add_parser("score", help="CER/WER report for a hypothesis file")
    c.add_argument("--hyp", required=True, help="hypothesis file written by 'infer'")
    c.add_argument("--ref", required=True, help="reference manifest")
    c.add_argument("--out", help="write the machine-readable report here")
    c.add_argument("--per-utt", help="write per-utterance scores (JSON lines) here")
    c.add_argument("--use-raw", action="store_true", help="score raw instead of normalized hypotheses")
    c.add_argument("--no-text-norm", action="store_true", help="score without lowercasing/punctuation stripping")
    c.set_defaults(func=cmd_score)

    g = sub.add_parser("config", help="print a complete config file for a profile")
    g.add_argument("--profile", choices=("toy", "paper"), default="toy", help="profile to print")
    g.set_defaults(func=cmd_config)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    threads = os.environ.get("DUOASR_THREADS")
    if threads:
        torch.set_num_threads(max(1, int(threads)))
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"duoasr: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"duoasr: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, KeyError, OSError) as exc:
        print(f"duoasr: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
