"""Command line entry point.

Every subcommand exits 0 on success. Failures print one line
``error: <kind>: <message>`` to stderr and exit 2 (usage / configuration)
or 1 (anything else).
"""

from __future__ import annotations

import argparse
import csv
import sys
from contextlib import contextmanager
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import channel as ch
from . import modem
from .checkpoint import load_checkpoint, save_checkpoint
from .codec import JSCCModel, transmit_awgn, transmit_fading
from .config import RunConfig, load_config, write_config
from .data import ingest_dataset, synthetic_images
from .errors import CheckpointError, ConfigError, EncodingError, NumericError, ParseError, ShapeError
from .gradcheck import TOLERANCE, run_suite
from .layers import HNGdn, HNLayerNorm, HyperNet, dense_head_size
from .metrics import report
from .training import train

FADING_BLOCK_COLUMNS = ["image", "eta_a_db", "T", "realization", "block", "k_i", "eta_i_db", "length", "ser", "psnr", "msssim_db"]
FADING_SUMMARY_COLUMNS = ["eta_a_db", "T", "images", "realizations", "psnr", "msssim_db"]
AWGN_COLUMNS = ["image", "eta_db", "k", "symbol_errors", "ser", "psnr", "msssim_db"]
AWGN_SUMMARY_COLUMNS = ["eta_db", "images", "psnr", "msssim_db"]
SER_COLUMNS = ["k", "eta_db", "analytic_ser", "empirical_ser", "n_symbols"]
CODEBOOK_COLUMNS = ["k", "eta_db", "codeword_index", "dim", "value"]


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _float_list(text: str) -> tuple:
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _int_list(text: str) -> tuple:
    try:
        return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


COMMANDS = ("train-phase1", "train-phase2", "eval-awgn", "eval-fading", "ser-sweep", "gradcheck", "codebook-dump", "info")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="run configuration file")
    common.add_argument("--seed", type=int, help="overrides [run] seed")
    common.add_argument("--checkpoint", help="checkpoint file to load")
    common.add_argument("--out", help="output directory (CSV goes to stdout when omitted)")
    common.add_argument("--realizations", type=int, help="channel realizations per image (eval-fading)")
    common.add_argument("--snr-grid", type=_float_list, help="comma-separated SNRs in dB")
    common.add_argument("--coherence", type=_int_list, help="comma-separated coherence lengths T")
    common.add_argument("--precision", choices=("f32", "f64"))
    common.add_argument("--steps", type=int, help="training steps (train-*)")
    common.add_argument("--n-symbols", type=int, default=100_000, help="symbols per point (ser-sweep)")
    common.add_argument("--seeds", type=int, default=10, help="random instances per family (gradcheck)")
    p = _Parser(prog="vqjscc", description="Channel-adaptive VQ joint source-channel coding toolkit")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return p


def resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    if args.precision is not None:
        cfg = replace(cfg, precision=args.precision)
    if args.steps is not None:
        cfg = replace(cfg, steps=args.steps)
    ev = cfg.eval
    if args.realizations is not None:
        ev = replace(ev, realizations=args.realizations)
    if args.snr_grid is not None:
        ev = replace(ev, snr_grid=args.snr_grid)
    if args.coherence is not None:
        ev = replace(ev, coherence=args.coherence)
    return replace(cfg, eval=ev)


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def load_images(cfg: RunConfig, n: int, stream: int) -> np.ndarray:
    """``n`` images from the configured dataset, or synthetic ones when no path is set."""
    c = cfg.codec
    rng = np.random.default_rng([cfg.seed, 100 + stream])
    if not cfg.data.path:
        return synthetic_images(n, c.C, c.H, c.W, rng)
    if c.H != c.W:
        raise ConfigError("dataset crops are square; set H == W")
    imgs = ingest_dataset(cfg.data.path, c.H, rng, channels=c.C)
    while len(imgs) < n:
        imgs = np.concatenate([imgs, ingest_dataset(cfg.data.path, c.H, rng, channels=c.C)])
    return imgs[:n]


def _require_checkpoint(args) -> tuple[JSCCModel, dict]:
    if not args.checkpoint:
        raise UsageError(f"{args.command} requires --checkpoint")
    return load_checkpoint(args.checkpoint)


def _model(args, cfg: RunConfig) -> JSCCModel:
    if args.checkpoint:
        return load_checkpoint(args.checkpoint)[0]
    return JSCCModel(cfg.codec)


@contextmanager
def _sink(args, filename: str, cfg: RunConfig | None = None):
    """CSV writer into ``--out/filename`` (plus the resolved config) or stdout."""
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        if cfg is not None:
            write_config(cfg, out / "config.ini")
        with open(out / filename, "w", newline="") as f:
            yield csv.writer(f)
    else:
        yield csv.writer(sys.stdout)


def _num(v) -> str:
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def _train(args, cfg: RunConfig, phase: int) -> int:
    if not args.out:
        raise UsageError(f"{args.command} requires --out")
    if phase == 1:
        model = JSCCModel(cfg.codec)
    else:
        model, manifest = _require_checkpoint(args)
        if manifest["phase"] == 1:
            model.reset_inner(cfg.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_config(cfg, out / "config.ini")
    data = load_images(cfg, cfg.data.n_train, 0)
    val = load_images(cfg, cfg.data.n_val, 1)
    res = train(model, data, cfg.train, phase, cfg.steps, val_set=val, val_every=cfg.val_every, log_path=out / "train_log.csv")
    save_checkpoint(model, out / f"phase{phase}.ckpt", phase)
    with open(out / "validation.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["step", "metric"])
        w.writerow([0, repr(res.baseline)])
        for step, metric in res.validations:
            w.writerow([step, repr(metric)])
    print(f"phase{phase}: steps={len(res.steps)} best_step={res.best_step} best_val={res.best_metric:.6g} stopped_early={res.stopped_early}")
    return 0


def _eval_awgn(args, cfg: RunConfig) -> int:
    model, _ = _require_checkpoint(args)
    model.inner_enabled = False
    imgs = load_images(cfg, cfg.eval.n_images, 2)
    rows, summary = [], []
    for gi, eta in enumerate(cfg.eval.snr_grid):
        ps, ms = [], []
        for i, X in enumerate(imgs):
            rng = np.random.default_rng([cfg.seed, 1, gi, i])
            X_hat, tel = transmit_awgn(X, eta, model, rng)
            r = report(X, X_hat)
            _, k, _, _, errors, ser = tel.blocks[0]
            rows.append([i, eta, k, errors, ser, r.psnr_db, r.msssim_db])
            ps.append(r.psnr_db)
            ms.append(r.msssim_db)
        summary.append([eta, len(imgs), float(np.mean(ps)), float(np.mean(ms))])
    with _sink(args, "eval_awgn.csv", cfg) as w:
        w.writerow(AWGN_COLUMNS)
        w.writerows([[_num(v) for v in r] for r in rows])
    if args.out:
        with _sink(args, "eval_awgn_summary.csv") as w:
            w.writerow(AWGN_SUMMARY_COLUMNS)
            w.writerows([[_num(v) for v in r] for r in summary])
    return 0


def eval_fading_rows(model: JSCCModel, imgs: np.ndarray, cfg: RunConfig):
    """Per-block rows and per-(eta_a, T) averages; every (point, image, realization) has its own stream."""
    N, P = model.cfg.N, model.cfg.P
    blocks, summary = [], []
    for gi, eta_a in enumerate(cfg.eval.snr_grid):
        sigma2 = P / ch.db_to_linear(eta_a)
        for ti, T in enumerate(cfg.eval.coherence):
            per_image_psnr, per_image_ms = [], []
            for i, X in enumerate(imgs):
                ps, ms = [], []
                for r in range(cfg.eval.realizations):
                    rng = np.random.default_rng([cfg.seed, 2, gi, ti, i, r])
                    real = ch.sample_realization(N, T, sigma2, P, rng)
                    X_hat, tel = transmit_fading(X, real, model, rng)
                    rep = report(X, X_hat)
                    ps.append(rep.psnr_db)
                    ms.append(rep.msssim_db)
                    for b, k, eta_i, length, _, ser in tel.blocks:
                        blocks.append([i, eta_a, T, r, b, k, eta_i, length, ser, rep.psnr_db, rep.msssim_db])
                per_image_psnr.append(np.mean(ps))
                per_image_ms.append(np.mean(ms))
            summary.append([eta_a, T, len(imgs), cfg.eval.realizations, float(np.mean(per_image_psnr)), float(np.mean(per_image_ms))])
    return blocks, summary


def _eval_fading(args, cfg: RunConfig) -> int:
    model, manifest = _require_checkpoint(args)
    if manifest["phase"] != 2:
        raise ConfigError("eval-fading needs a phase-2 checkpoint (the inner codec is untrained in phase 1)")
    imgs = load_images(cfg, cfg.eval.n_images, 2)
    blocks, summary = eval_fading_rows(model, imgs, cfg)
    with _sink(args, "eval_fading_summary.csv", cfg) as w:
        w.writerow(FADING_SUMMARY_COLUMNS)
        w.writerows([[_num(v) for v in r] for r in summary])
    if args.out:
        with _sink(args, "eval_fading_blocks.csv") as w:
            w.writerow(FADING_BLOCK_COLUMNS)
            w.writerows([[_num(v) for v in r] for r in blocks])
    return 0


def _ser_sweep(args, cfg: RunConfig) -> int:
    if args.n_symbols < 1:
        raise UsageError("--n-symbols must be >= 1")
    grid = args.snr_grid if args.snr_grid is not None else (0.0, 5.0, 12.0, 20.0, 26.0)
    with _sink(args, "ser_sweep.csv", cfg) as w:
        w.writerow(SER_COLUMNS)
        for k in range(1, modem.K + 1):
            for gi, eta in enumerate(grid):
                rng = np.random.default_rng([cfg.seed, k, gi])
                emp = modem.empirical_ser(k, eta, args.n_symbols, rng)
                w.writerow([k, _num(eta), _num(modem.analytic_ser(k, eta)), _num(emp), args.n_symbols])
    return 0


def _gradcheck(args, cfg: RunConfig) -> int:
    if args.seeds < 1:
        raise UsageError("--seeds must be >= 1")
    res = run_suite(seeds=range(cfg.seed, cfg.seed + args.seeds))
    failed = [name for name, err in res.items() if not err < TOLERANCE]
    with _sink(args, "gradcheck.csv", cfg) as w:
        w.writerow(["family", "max_rel_err", "status"])
        for name, err in res.items():
            w.writerow([name, f"{err:.3e}", "ok" if err < TOLERANCE else "FAIL"])
    if failed:
        raise NumericError(f"gradient check above {TOLERANCE:g} for: {', '.join(failed)}")
    return 0


def _codebook_dump(args, cfg: RunConfig) -> int:
    model = _model(args, cfg)
    grid = cfg.eval.snr_grid
    with _sink(args, "codebooks.csv", cfg) as w, ad.no_grad():
        w.writerow(CODEBOOK_COLUMNS)
        for k in range(1, model.cfg.K + 1):
            for eta in grid:
                C = model.dcg.generate(eta, k).data
                for i, row in enumerate(C):
                    for d, v in enumerate(row):
                        w.writerow([k, _num(eta), i, d, repr(float(v))])
    return 0


def parameter_counts(model: JSCCModel) -> list[tuple[str, int]]:
    """Module totals plus hypernetwork accounting with and without the low-rank head."""
    rows = [(name, sum(p.size for _, p in params)) for name, params in model.groups().items()]
    total = model.num_parameters()
    hn_layers, hyper, hyper_dense = 0, 0, 0

    def visit(m):
        nonlocal hn_layers, hyper, hyper_dense
        if isinstance(m, (HNGdn, HNLayerNorm)):
            hn_layers += m.num_parameters()
            h = m.hyper
            hyper += h.num_parameters()
            if isinstance(m, HNGdn):
                K, E = h.embed.shape
                hyper_dense += K * E + (E + 1) * dense_head_size(m.d_max) + dense_head_size(m.d_max)
            else:
                hyper_dense += h.num_parameters()
            return
        for v in vars(m).values():
            for item in v if isinstance(v, (list, tuple)) else (v,):
                if hasattr(item, "named_parameters") and not isinstance(item, HyperNet):
                    visit(item)

    visit(model)
    rows += [
        ("total", total),
        ("hn_layers", hn_layers),
        ("hypernetworks", hyper),
        ("hypernetworks_dense_equivalent", hyper_dense),
        ("total_dense_equivalent", total - hyper + hyper_dense),
    ]
    return rows


def _info(args, cfg: RunConfig) -> int:
    model = _model(args, cfg)
    rows = parameter_counts(model)
    counts = dict(rows)
    with _sink(args, "info.csv", cfg) as w:
        w.writerow(["name", "count"])
        w.writerows(rows)
        w.writerow(["hypernetwork_dense_to_lora_ratio", f"{counts['hypernetworks_dense_equivalent'] / counts['hypernetworks']:.3f}"])
    return 0


HANDLERS = {
    "train-phase1": lambda a, c: _train(a, c, 1),
    "train-phase2": lambda a, c: _train(a, c, 2),
    "eval-awgn": _eval_awgn,
    "eval-fading": _eval_fading,
    "ser-sweep": _ser_sweep,
    "gradcheck": _gradcheck,
    "codebook-dump": _codebook_dump,
    "info": _info,
}

_USAGE_ERRORS = (UsageError, ConfigError, CheckpointError, ParseError)
_KNOWN_ERRORS = _USAGE_ERRORS + (ShapeError, EncodingError, NumericError, OSError)


def run_command(argv) -> int:
    try:
        args = build_parser().parse_args(argv)
        cfg = resolve_config(args)
        with ad.precision(cfg.precision):
            return HANDLERS[args.command](args, cfg)
    except _KNOWN_ERRORS as exc:
        kind = type(exc).__name__
        msg = " ".join(str(exc).split()) or kind
        print(f"error: {kind}: {msg}", file=sys.stderr)
        return 2 if isinstance(exc, _USAGE_ERRORS) else 1


def main() -> None:
    sys.exit(run_command(sys.argv[1:]))


if __name__ == "__main__":
    main()
