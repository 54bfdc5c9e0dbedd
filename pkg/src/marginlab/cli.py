"""Command-line surface tying the pipeline together.

Exit codes are stable across commands: 0 success, 1 usage error,
2 data-format error, 3 numerical failure.

Reference values quoted in help text come from a published 4B-parameter
audit and are documentation only, never test targets.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import fileio
from .audit import band_accuracy, churn_report, expansion_report, frequency_audit, rotation_report
from .errors import DataError, MarginLabError, NumericalError, UsageError
from .gapfit import GridSpec, fit_gap_curve
from .manifold import PRESETS, ManifoldSpec, validate_scaling
from .margins import compute_margins, margin_quantiles
from .objectives import MrpConfig
from .precision import emulate_bf16, recompute_fp32_logits
from .tokenclass import class_audit
from .tokenizer import Vocab, tokenize
from .toylm import ToyLm, ToyLmConfig
from .training import TrainConfig, dose_response, layer_scan, train

_REFERENCE_NOTE = (
    "Reference values from a 4B-parameter model audit (reference only, "
    "never a test target): gap fit beta 0.912, R^2 0.9997, alpha 0.762; "
    "fisher lambda 0.6 churn: 16,327 W->R vs 5,356 R->W (3.0x)."
)


class _Parser(argparse.ArgumentParser):
    """argparse defaults to exit code 2 on bad flags; the exit-code
    contract reserves 2 for data errors, so usage problems exit 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _read_targets(path: str, expected: int) -> np.ndarray:
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise DataError(f"{path}: cannot read targets: {e}") from e
    if not isinstance(data, list):
        raise DataError(f"{path}: targets file must hold a JSON array")
    arr = np.asarray(data, dtype=np.int64)
    if arr.size != expected:
        raise DataError(f"{path}: {arr.size} targets for {expected} logit rows")
    return arr


def _read_json_map(path: str, what: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise DataError(f"{path}: cannot read {what}: {e}") from e
    if not isinstance(data, dict):
        raise DataError(f"{path}: {what} must be a JSON object")
    return data


def _load_corpus(path: str, vocab_size: int) -> tuple[np.ndarray, Vocab]:
    try:
        with open(path, "r", encoding="utf-8") as f:
            text = f.read()
    except OSError as e:
        raise DataError(f"{path}: cannot read corpus: {e}") from e
    tokens = tokenize(text)
    if len(tokens) < 2:
        raise DataError(f"{path}: corpus has fewer than 2 tokens")
    vocab = Vocab.from_tokens(tokens, vocab_size)
    return vocab.encode(tokens), vocab


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def _cmd_audit(args) -> int:
    matrix, _header = fileio.read_logits(args.logits)
    if args.fp32_recompute:
        if not args.unembedding:
            raise UsageError("--fp32-recompute requires --unembedding")
        unemb, _ = fileio.read_logits(args.unembedding)
        matrix = recompute_fp32_logits(matrix, unemb)
    if args.bf16_emulate:
        matrix = emulate_bf16(matrix)
    targets = _read_targets(args.targets, matrix.shape[0])
    records = compute_margins(matrix, targets)
    dtype = "bf16" if args.bf16_emulate else "f32"
    fileio.write_audit(args.out, records, dtype=dtype, seed=args.seed)
    q = margin_quantiles([r.margin for r in records])
    print(
        f"audited {len(records)} positions -> {args.out} "
        f"(median margin {q.median:.4f}, Pr(m<0.5) {q.pr_below_half:.4f})"
    )
    return 0


def _cmd_gap_fit(args) -> int:
    records, _ = fileio.read_audit(args.audit)
    margins = np.array([r.margin for r in records])
    fit = fit_gap_curve(
        margins,
        GridSpec(count=args.grid_count, quantile_lo=args.grid_qlo, quantile_hi=args.grid_qhi),
    )
    report = {
        "beta": fit.beta,
        "alpha_intercept": fit.alpha_intercept,
        "alpha_constrained": fit.alpha_constrained,
        "r2": fit.r2,
        "grid": {"epsilon": fit.epsilon_grid, "eta_hat": fit.eta_hat},
        "provenance": {
            "audit": fileio.file_digest(args.audit),
            "positions": len(records),
            "created": fileio.created_stamp(),
        },
    }
    if args.out:
        fileio.write_report_json(args.out, report)
    print(
        f"beta={fit.beta:.6f} r2={fit.r2:.6f} "
        f"alpha_intercept={fit.alpha_intercept:.6f} "
        f"alpha_constrained={fit.alpha_constrained:.6f}"
    )
    return 0


def _csv(path: str, lines: list[str]) -> None:
    fileio.atomic_write_text(path, "\n".join(lines) + "\n")


def _cmd_compare(args) -> int:
    baseline, _ = fileio.read_audit(args.baseline)
    polished, _ = fileio.read_audit(args.polished)
    os.makedirs(args.out_dir, exist_ok=True)

    churn = churn_report(baseline, polished)
    rotation = rotation_report(baseline, polished)
    bands_base = band_accuracy(baseline)
    bands_pol = band_accuracy(polished)
    expansion = expansion_report(baseline, polished)

    bundle = {
        "provenance": {
            "baseline": fileio.file_digest(args.baseline),
            "polished": fileio.file_digest(args.polished),
            "positions": len(baseline),
            "created": fileio.created_stamp(),
        },
        "churn": churn,
        "rotation": rotation,
        "bands": {"baseline": bands_base, "polished": bands_pol},
        "expansion": expansion,
    }

    def out(name: str) -> str:
        return os.path.join(args.out_dir, name)

    _csv(
        out("churn.csv"),
        [
            "total,churned,w2r,r2w,flip_ratio,net_corrected",
            f"{churn.total},{churn.churned},{churn.w2r},{churn.r2w},"
            f"{'' if churn.flip_ratio is None else repr(churn.flip_ratio)},"
            f"{churn.net_corrected}",
        ],
    )
    _csv(
        out("rotation.csv"),
        [
            "rotated,rotated_wider,mean_margin_delta",
            f"{rotation.rotated},{rotation.rotated_wider},"
            f"{'' if rotation.mean_margin_delta is None else repr(rotation.mean_margin_delta)}",
        ],
    )
    band_lines = ["audit,lo,hi,count,accuracy"]
    for name, table in (("baseline", bands_base), ("polished", bands_pol)):
        for b in table.bands:
            band_lines.append(
                f"{name},{b.lo!r},{'' if b.hi is None else repr(b.hi)},{b.count},"
                f"{'' if b.accuracy is None else repr(b.accuracy)}"
            )
    _csv(out("bands.csv"), band_lines)
    _csv(
        out("expansion.csv"),
        [
            "pct_wider,mean_delta,median_delta",
            f"{expansion.pct_wider!r},{expansion.mean_delta!r},{expansion.median_delta!r}",
        ],
    )

    if args.freq_counts:
        counts_raw = _read_json_map(args.freq_counts, "frequency counts")
        try:
            counts = {int(k): int(v) for k, v in counts_raw.items()}
        except ValueError as e:
            raise DataError(f"{args.freq_counts}: keys/values must be integers") from e
        freq = frequency_audit(baseline, polished, counts)
        bundle["frequency"] = freq
        freq_lines = [
            "bucket,count,baseline_accuracy,polished_accuracy,delta,net_corrected,share_of_net"
        ]
        for b in freq.buckets:
            fields = [
                b.label,
                str(b.count),
                "" if b.baseline_accuracy is None else repr(b.baseline_accuracy),
                "" if b.polished_accuracy is None else repr(b.polished_accuracy),
                "" if b.delta is None else repr(b.delta),
                str(b.net_corrected),
                "" if b.share_of_net is None else repr(b.share_of_net),
            ]
            freq_lines.append(",".join(fields))
        _csv(out("frequency.csv"), freq_lines)

    if args.token_texts:
        texts_raw = _read_json_map(args.token_texts, "token texts")
        try:
            texts = {int(k): str(v) for k, v in texts_raw.items()}
        except ValueError as e:
            raise DataError(f"{args.token_texts}: keys must be integer ids") from e
        missing = {r.target_id for r in baseline} - set(texts)
        if missing:
            raise DataError(
                f"{args.token_texts}: no text for target ids {sorted(missing)[:5]}..."
                if len(missing) > 5
                else f"{args.token_texts}: no text for target ids {sorted(missing)}"
            )
        classes = class_audit(baseline, polished, [texts[r.target_id] for r in baseline])
        bundle["classes"] = classes
        cls_lines = ["class,count,w2r,r2w,net_corrected,share_of_net"]
        for row in classes.rows:
            cls_lines.append(
                f"{row.token_class.value},{row.count},{row.w2r},{row.r2w},"
                f"{row.net_corrected},"
                f"{'' if row.share_of_net is None else repr(row.share_of_net)}"
            )
        _csv(out("classes.csv"), cls_lines)

    fileio.write_report_json(out("bundle.json"), bundle)
    print(
        f"compared {len(baseline)} positions: churned {churn.churned}, "
        f"w2r {churn.w2r}, r2w {churn.r2w} -> {args.out_dir}"
    )
    return 0


def _mrp_from_args(args) -> MrpConfig:
    if args.loss == "margin" and args.k is not None:
        print("warning: --k is ignored for the margin loss", file=sys.stderr)
    return MrpConfig(
        objective=args.loss,
        lambda_mrp=args.lambda_mrp,
        tau=args.tau,
        k=args.k if args.k is not None else 5,
        ce_weight=args.ce_weight,
    )


def _model_from_args(args) -> ToyLm:
    if getattr(args, "base_checkpoint", None):
        model, _ = fileio.load_checkpoint(args.base_checkpoint)
        return model
    config = ToyLmConfig(
        vocab_size=args.vocab_size,
        hidden_dim=args.hidden_dim,
        layers=args.layers,
        heads=args.heads,
        context=args.context,
    )
    return ToyLm(config, seed=args.seed)


def _cmd_train(args) -> int:
    model = _model_from_args(args)
    tokens, _ = _load_corpus(args.corpus, model.config.vocab_size)
    config = TrainConfig(
        steps=args.steps,
        learning_rate=args.lr,
        batch_size=args.batch_size,
        seed=args.seed,
        mrp=_mrp_from_args(args),
    )
    log = train(model, tokens, config)
    fileio.save_checkpoint(args.out_checkpoint, model, step=config.steps,
                           train_config=config.to_dict())
    if args.metrics:
        fileio.write_metrics_csv(args.metrics, log)
    last = log[-1]
    print(
        f"trained {config.steps} steps (loss={args.loss}, lambda={args.lambda_mrp}): "
        f"ce {log[0].ce:.4f} -> {last.ce:.4f}, median margin {last.median_margin:.4f}"
    )
    return 0


def _cmd_sweep(args) -> int:
    try:
        lambdas = [float(v) for v in args.lambdas.split(",") if v != ""]
    except ValueError as e:
        raise UsageError(f"bad --lambdas list: {e}") from e
    model = _model_from_args(args)
    tokens, _ = _load_corpus(args.corpus, model.config.vocab_size)
    if not getattr(args, "base_checkpoint", None) and args.base_steps > 0:
        base_cfg = TrainConfig(
            steps=args.base_steps,
            learning_rate=args.lr,
            batch_size=args.batch_size,
            seed=args.seed,
            mrp=MrpConfig(objective=args.loss, lambda_mrp=0.0, ce_weight=1.0),
        )
        train(model, tokens, base_cfg)
    run_cfg = TrainConfig(
        steps=args.steps,
        learning_rate=args.lr,
        batch_size=args.batch_size,
        seed=args.seed,
        mrp=_mrp_from_args(args),
    )
    rows, _baseline = dose_response(model, tokens, lambdas, args.loss, run_cfg)

    lines = [
        "lambda,median_margin,pr_below_half,beta,alpha_constrained,r2,churned,w2r,r2w,net_corrected"
    ]
    for row in rows:
        lines.append(
            f"{row.lambda_mrp!r},{row.median_margin!r},{row.pr_below_half!r},"
            f"{row.gap_fit.beta!r},{row.gap_fit.alpha_constrained!r},{row.gap_fit.r2!r},"
            f"{row.churn.churned},{row.churn.w2r},{row.churn.r2w},{row.churn.net_corrected}"
        )
    fileio.atomic_write_text(args.out, "\n".join(lines) + "\n")
    for row in rows:
        print(
            f"lambda={row.lambda_mrp}: median={row.median_margin:.4f} "
            f"Pr(m<0.5)={row.pr_below_half:.4f} r2={row.gap_fit.r2:.4f} "
            f"net_corrected={row.churn.net_corrected}"
        )
    return 0


def _cmd_synth_validate(args) -> int:
    if args.sites:
        try:
            with open(args.sites, "r", encoding="utf-8") as f:
                sites = np.asarray(json.load(f), dtype=np.float64)
        except (OSError, json.JSONDecodeError) as e:
            raise DataError(f"{args.sites}: cannot read sites: {e}") from e
        if sites.ndim != 2:
            raise DataError(f"{args.sites}: sites must be a 2-D array")
        intrinsic = 1 if args.sampler == "circle_uniform" else 2
        spec = ManifoldSpec(intrinsic, sites.shape[1], sites, args.sampler, args.samples)
    else:
        spec_factory = PRESETS[args.config]
        spec = spec_factory(args.samples)
    verdict = validate_scaling(spec, seed=args.seed)
    report = {
        "beta": verdict.fit.beta,
        "r2": verdict.fit.r2,
        "alpha_intercept": verdict.fit.alpha_intercept,
        "alpha_constrained": verdict.fit.alpha_constrained,
        "oracle_alpha": verdict.oracle_alpha,
        "relative_alpha_error": verdict.relative_alpha_error,
        "gradient_floor": verdict.gradient_floor,
        "grid": {"epsilon": verdict.fit.epsilon_grid, "eta_hat": verdict.fit.eta_hat},
    }
    if args.out:
        fileio.write_report_json(args.out, report)
    ok = 0.9 <= verdict.fit.beta <= 1.1 and verdict.fit.r2 > 0.99
    print(
        f"beta={verdict.fit.beta:.4f} r2={verdict.fit.r2:.6f} "
        f"alpha={verdict.fit.alpha_constrained:.4f} oracle={verdict.oracle_alpha:.4f} "
        f"rel_err={verdict.relative_alpha_error:.4f} -> {'pass' if ok else 'FAIL'}"
    )
    if not ok:
        raise NumericalError(
            f"scaling verdict failed: beta={verdict.fit.beta}, r2={verdict.fit.r2}"
        )
    return 0


def _cmd_layer_scan(args) -> int:
    model, _ = fileio.load_checkpoint(args.checkpoint)
    tokens, _ = _load_corpus(args.corpus, model.config.vocab_size)
    rows = layer_scan(model, tokens, tau=args.tau)
    lines = ["layer_index,spearman_ce_mrp"]
    for r in rows:
        rho = "" if r.spearman_ce_mrp is None else repr(r.spearman_ce_mrp)
        lines.append(f"{r.layer_index},{rho}")
    fileio.atomic_write_text(args.out, "\n".join(lines) + "\n")
    for r in rows:
        print(f"layer {r.layer_index}: rho="
              f"{'undefined' if r.spearman_ce_mrp is None else f'{r.spearman_ce_mrp:.4f}'}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _add_model_flags(p) -> None:
    p.add_argument("--vocab-size", type=int, default=512)
    p.add_argument("--hidden-dim", type=int, default=64)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--heads", type=int, default=2)
    p.add_argument("--context", type=int, default=96)
    p.add_argument("--base-checkpoint", help="start from this checkpoint instead of a fresh model")


def _add_loss_flags(p) -> None:
    p.add_argument("--loss", choices=("margin", "fisher"), default="margin")
    p.add_argument("--lambda-mrp", type=float, default=0.0)
    p.add_argument("--tau", type=float, default=0.5)
    p.add_argument("--k", type=int, default=None,
                   help="top-k size for the fisher loss (default 5)")
    p.add_argument("--ce-weight", type=float, default=1.0,
                   help="0 gives pure refinement training with no cross-entropy")


def build_parser() -> _Parser:
    parser = _Parser(prog="marginlab", description=__doc__, epilog=_REFERENCE_NOTE)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("audit", help="compute a margin audit from a logits container")
    p.add_argument("logits", help="logits container (or hidden states with --fp32-recompute)")
    p.add_argument("targets", help="JSON array of per-position target token ids")
    p.add_argument("out", help="output audit JSONL path")
    p.add_argument("--bf16-emulate", action="store_true",
                   help="round logits to bfloat16 first (artifact reproduction)")
    p.add_argument("--fp32-recompute", action="store_true",
                   help="treat the input as hidden states and recompute logits at fp32")
    p.add_argument("--unembedding", help="unembedding container for --fp32-recompute")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=_cmd_audit)

    p = sub.add_parser(
        "gap-fit",
        help="fit the gap scaling curve on an audit",
        epilog=_REFERENCE_NOTE,
    )
    p.add_argument("audit")
    p.add_argument("--out", help="report JSON path")
    p.add_argument("--grid-count", type=int, default=20)
    p.add_argument("--grid-qlo", type=float, default=1e-4)
    p.add_argument("--grid-qhi", type=float, default=0.3)
    p.set_defaults(func=_cmd_gap_fit)

    p = sub.add_parser("compare", help="per-position comparison of two audits")
    p.add_argument("baseline")
    p.add_argument("polished")
    p.add_argument("--out-dir", default="compare-out")
    p.add_argument("--freq-counts",
                   help="JSON {token_id: count}; enables the frequency section")
    p.add_argument("--token-texts",
                   help="JSON {token_id: text}; enables the token-class section")
    p.set_defaults(func=_cmd_compare)

    p = sub.add_parser("train", help="train or refine the toy model")
    p.add_argument("corpus")
    p.add_argument("out_checkpoint")
    p.add_argument("--metrics", help="per-step metrics CSV path")
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--lr", type=float, default=3e-4)
    p.add_argument("--batch-size", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    _add_model_flags(p)
    _add_loss_flags(p)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("sweep", help="dose-response sweep over lambda values")
    p.add_argument("corpus")
    p.add_argument("out", help="summary CSV path")
    p.add_argument("--lambdas", default="0,0.15,0.3,0.6",
                   help="comma-separated ascending lambda list")
    p.add_argument("--base-steps", type=int, default=150,
                   help="pure-CE steps to build the base checkpoint "
                        "(ignored with --base-checkpoint)")
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--lr", type=float, default=3e-4)
    p.add_argument("--batch-size", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    _add_model_flags(p)
    _add_loss_flags(p)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("synth-validate",
                       help="validate the linear scaling law on a synthetic manifold")
    p.add_argument("--config", choices=sorted(PRESETS), default="circle2")
    p.add_argument("--sites", help="JSON file with an explicit site matrix")
    p.add_argument("--sampler", choices=("circle_uniform", "square_uniform"),
                   default="circle_uniform")
    p.add_argument("--samples", type=int, default=1_000_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="verdict JSON path")
    p.set_defaults(func=_cmd_synth_validate)

    p = sub.add_parser("layer-scan",
                       help="per-layer virtual-margin/CE correlation for a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("corpus")
    p.add_argument("out", help="output CSV path")
    p.add_argument("--tau", type=float, default=0.5)
    p.set_defaults(func=_cmd_layer_scan)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as e:
        print(f"marginlab: usage error: {e}", file=sys.stderr)
        return 1
    except DataError as e:
        print(f"marginlab: data error: {e}", file=sys.stderr)
        return 2
    except NumericalError as e:
        print(f"marginlab: numerical failure: {e}", file=sys.stderr)
        return 3
    except FileNotFoundError as e:
        print(f"marginlab: data error: {e}", file=sys.stderr)
        return 2
    except MarginLabError as e:
        print(f"marginlab: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
