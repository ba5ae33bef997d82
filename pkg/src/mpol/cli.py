"""Command-line front end.

Subcommands run in-process, except ``enhance --server URL`` which sends the
audio to a running ``serve`` instance so that adaptation state persists
across invocations.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from .adapter import AdaptationSession, load_config
from .dsp import AudioClip, StftConfig, stft
from .errors import ConfigError, DataError, IoError, MPolError
from .metrics import DEFAULT_EDGES, format_histogram, mask_histogram, records_to_csv
from .model import MaskNet, features, load_params, save_params
from .reporting import aggregate, emit, to_text_table
from .synthbench import (
    BenchConfig,
    TrainConfig,
    Utterance,
    format_corpus_spec,
    generate_corpus,
    load_corpus_spec,
    run_benchmark,
    seed_rows,
    train_source,
    utterance_records,
)
from .wavio import read_wav, write_wav

log = logging.getLogger("mpol")


def _write_text(path: str | Path, text: str) -> None:
    try:
        Path(path).write_text(text, encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def _wav_files(directory: Path) -> list[Path]:
    if not directory.is_dir():
        raise DataError(f"{directory} is not a directory")
    files = sorted(directory.glob("*.wav"))
    if not files and (directory / "noisy").is_dir():
        files = sorted((directory / "noisy").glob("*.wav"))
    if not files:
        raise DataError(f"no .wav files in {directory}")
    return files


def _load_net(path: str, stft_cfg: StftConfig) -> MaskNet:
    return load_params(path, expected_bins=stft_cfg.n_bins)


# -- subcommands ------------------------------------------------------------


def cmd_gen(args) -> None:
    spec = load_corpus_spec(args.spec)
    out = Path(args.out)
    for sub in ("clean", "noise", "noisy"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    for utt in generate_corpus(spec):
        for sub in ("clean", "noise", "noisy"):
            write_wav(out / sub / f"{utt.uid}.wav", getattr(utt, sub), fmt=args.format)
    _write_text(out / "corpus.spec", format_corpus_spec(spec))
    print(f"wrote {spec.n_utterances} utterances to {out}")


def _read_corpus(directory: Path) -> list[Utterance]:
    noisy_dir, clean_dir = directory / "noisy", directory / "clean"
    if not noisy_dir.is_dir() or not clean_dir.is_dir():
        raise DataError(f"{directory} must contain noisy/ and clean/ subdirectories")
    corpus = []
    for noisy_path in sorted(noisy_dir.glob("*.wav")):
        clean_path = clean_dir / noisy_path.name
        if not clean_path.exists():
            raise DataError(f"no clean reference for {noisy_path.name}")
        noisy, clean = read_wav(noisy_path), read_wav(clean_path)
        if len(noisy) != len(clean):
            raise DataError(f"{noisy_path.name}: noisy and clean lengths differ")
        noise = AudioClip(noisy.samples - clean.samples, noisy.sample_rate)
        corpus.append(Utterance(clean, noise, noisy, noisy_path.stem))
    if not corpus:
        raise DataError(f"no .wav files in {noisy_dir}")
    return corpus


def cmd_train(args) -> None:
    _, stft_cfg = load_config(args.config)
    corpus = _read_corpus(Path(args.corpus))
    hidden = tuple(int(h) for h in args.hidden.split(",")) if args.hidden else ()
    net = MaskNet.build(stft_cfg.n_bins, hidden=hidden, seed=args.seed)
    cfg = TrainConfig(epochs=args.epochs, batch_frames=args.batch_frames, learning_rate=args.learning_rate,
                      seed=args.seed)
    history = train_source(corpus, net, cfg, stft_cfg)
    save_params(net, args.out)
    if history:
        print(f"trained {len(history)} epochs: mse {history[0]:.6g} -> {history[-1]:.6g}")
    print(f"wrote {args.out}")


def _enhance_remote(args, clip: AudioClip) -> tuple[AudioClip, dict]:
    import httpx

    url = args.server.rstrip("/") + "/enhance"
    payload = {"samples": clip.samples.tolist(), "sample_rate": clip.sample_rate, "adapt": bool(args.adapt)}
    try:
        resp = httpx.post(url, json=payload, timeout=args.timeout)
    except httpx.HTTPError as exc:
        raise IoError(f"cannot reach {url}: {exc}") from exc
    body = resp.json()
    if resp.status_code != 200:
        err = {2: ConfigError, 3: DataError}.get(body.get("exit_code"), MPolError)
        raise err(f"server: {body.get('detail', body)}")
    audio = body["audio"]
    return AudioClip(np.asarray(audio["samples"]), audio["sample_rate"]), body["report"]


def cmd_enhance(args) -> None:
    clip = read_wav(args.input)
    if args.server:
        out, report = _enhance_remote(args, clip)
        loss = report["losses"][0] if report["losses"] else None
        skipped = report["skipped"]
    else:
        cfg, stft_cfg = load_config(args.config)
        session = AdaptationSession(_load_net(args.params, stft_cfg), cfg, stft_cfg)
        out, rep = session.process(clip, adapt=args.adapt)
        loss = asdict(rep.pre_update_loss) if rep.pre_update_loss else None
        skipped = rep.skipped
    write_wav(args.output, out, fmt=args.format)
    if loss:
        print(f"l_w {loss['l_w']:.6g}  l_s {loss['l_s']:.6g}  total {loss['total']:.6g}"
              + ("  (adaptation skipped)" if skipped else ""))
    print(f"wrote {args.output}")


def cmd_bench(args) -> None:
    adapt_cfg, stft_cfg = load_config(args.config)
    source, target = load_corpus_spec(args.source_spec), load_corpus_spec(args.target_spec)
    bench = BenchConfig(stft=stft_cfg)
    if args.train_epochs is not None:
        bench = replace(bench, train=replace(bench.train, epochs=args.train_epochs))
    if args.train_utterances is not None:
        bench = replace(bench, train_utterances=args.train_utterances)
    if args.test_utterances is not None:
        bench = replace(bench, test_utterances=args.test_utterances)
    if args.seeds < 1:
        raise ConfigError("--seeds must be >= 1")
    results = run_benchmark(source, target, adapt_cfg, args.seeds, bench)
    _write_text(args.report, records_to_csv(utterance_records(results)))
    config = {"adapt": asdict(adapt_cfg), "source": asdict(source), "target": asdict(target),
              "bench": asdict(bench), "seeds": args.seeds}
    summary = aggregate(seed_rows(results), config=config)
    if args.summary:
        emit(summary, "csv", args.summary)
    sys.stdout.write(to_text_table(summary, methods=["Source", "MPol"]) + "\n")
    sys.stdout.write(to_text_table(summary, methods=["Delta", "InDomainDelta"]))
    print(f"wrote {args.report}")


def cmd_hist(args) -> None:
    _, stft_cfg = load_config(args.config)
    net = _load_net(args.params, stft_cfg)
    edges = np.asarray([float(e) for e in args.edges.split(",")]) if args.edges else DEFAULT_EDGES
    total = None
    for path in _wav_files(Path(args.input)):
        mask, _ = net.forward(features(stft(read_wav(path), stft_cfg).magnitude))
        try:
            h = mask_histogram(mask, edges)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        total = h if total is None else total + h
    _write_text(args.output, format_histogram(total))
    print(f"wrote {args.output} ({total.total} mask entries)")


def cmd_serve(args) -> None:
    import uvicorn

    from .service import create_app

    cfg, stft_cfg = load_config(args.config)
    app = create_app(_load_net(args.params, stft_cfg), cfg, stft_cfg)
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")


# -- entry point ------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mpol", description=__doc__.split("\n")[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic corpus")
    g.add_argument("--spec", required=True, help="corpus spec file (key = value)")
    g.add_argument("--out", required=True, help="output directory")
    g.add_argument("--format", choices=("pcm16", "float32"), default="float32")
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train a source model on a generated corpus")
    t.add_argument("--corpus", required=True, help="directory with noisy/ and clean/ subdirectories")
    t.add_argument("--out", required=True, help="parameter file to write")
    t.add_argument("--config", help="config file (only stft.* keys are used)")
    t.add_argument("--epochs", type=int, default=TrainConfig.epochs)
    t.add_argument("--batch-frames", type=int, default=TrainConfig.batch_frames)
    t.add_argument("--learning-rate", type=float, default=TrainConfig.learning_rate)
    t.add_argument("--hidden", default="256,256", help="comma-separated hidden widths")
    t.add_argument("--seed", type=int, default=0)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("enhance", help="enhance one file, optionally adapting on it")
    e.add_argument("--params", help="parameter file (not needed with --server)")
    e.add_argument("--in", dest="input", required=True)
    e.add_argument("--out", dest="output", required=True)
    e.add_argument("--adapt", action="store_true")
    e.add_argument("--config")
    e.add_argument("--format", choices=("pcm16", "float32"), default="pcm16")
    e.add_argument("--server", help="URL of a running 'mpol serve' instance")
    e.add_argument("--timeout", type=float, default=60.0)
    e.set_defaults(func=cmd_enhance)

    b = sub.add_parser("bench", help="run the domain-shift benchmark")
    b.add_argument("--source-spec", required=True)
    b.add_argument("--target-spec", required=True)
    b.add_argument("--config")
    b.add_argument("--seeds", type=int, default=10)
    b.add_argument("--report", required=True, help="per-utterance CSV")
    b.add_argument("--summary", help="aggregate CSV (mean and 2 sigma per method)")
    b.add_argument("--train-epochs", type=int)
    b.add_argument("--train-utterances", type=int)
    b.add_argument("--test-utterances", type=int)
    b.set_defaults(func=cmd_bench)

    h = sub.add_parser("hist", help="histogram of predicted mask entries over a directory")
    h.add_argument("--params", required=True)
    h.add_argument("--in", dest="input", required=True)
    h.add_argument("--out", dest="output", required=True)
    h.add_argument("--config")
    h.add_argument("--edges", help="comma-separated bin edges")
    h.set_defaults(func=cmd_hist)

    s = sub.add_parser("serve", help="run the adaptation service")
    s.add_argument("--params", required=True)
    s.add_argument("--config")
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--port", type=int, default=8000)
    s.set_defaults(func=cmd_serve)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "enhance" and not args.server and not args.params:
        print("error: --params is required unless --server is given", file=sys.stderr)
        return ConfigError.exit_code
    try:
        args.func(args)
    except MPolError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
