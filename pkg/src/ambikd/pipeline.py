"""End-to-end runs: the distillation pipeline and the baselines, with run-directory output.

Run directory layout (all filenames fixed):

    config.yaml            config text as given (or the resolved config if none)
    resolved_config.json   fully resolved config, including optimizer constants
    report.txt             MetricsReport of the run's method (flat key=value)
    losses.csv             per-epoch training losses
    checkpoints/<phase>.npz  model checkpoints (see encoder.save_checkpoint)
  pipeline runs only:
    entropy_profile.csv    layer x warm-up epoch mean validation entropies
    source_selection.json  source layer, warm-up epochs E, stabilization flag
    ambiguous_ids.txt      one training-sample id per line, ascending
    la_scores.csv          id, LA score, ambiguous flag
    lad_report.txt         MetricsReport of the model before re-calibration
    recalibration.json     RC learning rate, subset size, subset entropy before/after
  TS runs only:
    temperature.json       fitted T and its validation KL
"""
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import baselines
from .distill import (recalibrate, reset_to_initial, train_lad, warmup_train)
from .encoder import build_model, save_checkpoint
from .metrics import EvalMode, entropy, evaluate, predict
from .training import num_batches

log = logging.getLogger(__name__)

METHOD_TAGS = {
    "lad": "LAD", "lad-rc": "LAD + RC", "ord": "ORD", "ls": "LS",
    "mc": "MC", "ts": "TS", "ldl": "LDL",
}
METHODS = tuple(METHOD_TAGS)


class PhaseError(RuntimeError):
    """A pipeline phase failed; ``phase`` names it."""

    def __init__(self, phase, exc):
        super().__init__(f"[{phase}] {type(exc).__name__}: {exc}")
        self.phase = phase


def final_epoch_lr(lr, epochs, batches_per_epoch):
    """Mean learning rate the linear-decay schedule used during the last epoch."""
    total = epochs * batches_per_epoch
    if total == 0:
        return lr
    ts = np.arange(total - batches_per_epoch, total)
    return float(np.mean(lr * (1.0 - ts / total)))


@dataclass
class PipelineResult:
    model: object
    report: object
    lad_report: object
    warmup: object
    lad: object
    recalibration: dict = field(default_factory=dict)


class _Phase:
    def __init__(self, name):
        self.name = name

    def __enter__(self):
        return self

    def __exit__(self, typ, exc, tb):
        if exc is not None and not isinstance(exc, (PhaseError, KeyboardInterrupt)):
            raise PhaseError(self.name, exc) from exc
        return False


def _ckpt(run_dir, name, model, extra=None):
    if run_dir is None:
        return
    d = Path(run_dir) / "checkpoints"
    d.mkdir(parents=True, exist_ok=True)
    save_checkpoint(model, d / f"{name}.npz", extra)


def run_pipeline(splits, cfg, recalibrate_flag=None, run_dir=None, on_step=None, eval_checksum=""):
    """Warm-up -> reset -> LAD -> (re-calibration) -> evaluation.

    ``cfg`` is a resolved :class:`~ambikd.config.RunConfig`. Artifacts are
    written to ``run_dir`` when given. ``on_step(name, model)`` is called with
    "reset", then "step1"/"step2" per LAD batch, then "recalibrate" per RC batch.
    """
    do_rc = cfg.distill.recalibrate if recalibrate_flag is None else recalibrate_flag
    train, val, ev = splits["train"], splits["validation"], splits["eval"]
    tc = cfg.train
    seed = cfg.seed
    run_dir = Path(run_dir) if run_dir is not None else None

    with _Phase("build"):
        model = build_model(cfg.encoder)
        _ckpt(run_dir, "init", model)
    hook = None if on_step is None else (lambda name: on_step(name, model))

    with _Phase("warmup"):
        wr = warmup_train(model, train, val, cfg.warmup, tc)
        _ckpt(run_dir, "warmup", model, {"source_idx": wr.selection.source_idx})
        if run_dir is not None:
            _write_warmup(run_dir, wr)

    with _Phase("reset"):
        reset_to_initial(model)
        if hook is not None:
            hook("reset")

    src = wr.selection.source_idx
    with _Phase("lad"):
        lad = train_lad(model, train, cfg.distill, tc, src, on_step=hook)
        _ckpt(run_dir, "lad", model, {"source_idx": src})

    common = {"source_idx": src, "warmup_epochs": wr.selection.epochs, "lambda": cfg.distill.lam}
    with _Phase("evaluate-lad"):
        lad_report = evaluate(model, ev, method="LAD", seed=seed, eval_checksum=eval_checksum,
                              extra=common)

    amb_mask = wr.ambiguity.is_ambiguous()
    subset = train.subset(amb_mask)
    rc_info = {}
    if do_rc:
        with _Phase("recalibrate"):
            lr = cfg.distill.recalibration_lr
            if lr is None:
                lr = final_epoch_lr(tc.lr, tc.epochs, num_batches(len(train), tc.batch_size))
            before = float(entropy(predict(model, subset.tokens)).mean())
            losses = recalibrate(model, subset, tc, lr, on_step=hook)
            after = float(entropy(predict(model, subset.tokens)).mean())
            rc_info = {"lr": lr, "n_samples": len(subset), "steps": len(losses),
                       "ambiguous_entropy_before": before, "ambiguous_entropy_after": after}
            _ckpt(run_dir, "lad_rc", model, {"source_idx": src})
        with _Phase("evaluate"):
            report = evaluate(model, ev, method="LAD + RC", seed=seed, eval_checksum=eval_checksum,
                              extra={**common, "rc_lr": lr,
                                     "ambiguous_entropy_before": before,
                                     "ambiguous_entropy_after": after})
    else:
        report = lad_report

    if run_dir is not None:
        rows = ["epoch,loss_main,loss_src"] + [
            f"{e + 1},{a:.6f},{b:.6f}" for e, (a, b) in enumerate(zip(lad.epoch_loss_main, lad.epoch_loss_src))]
        (run_dir / "losses.csv").write_text("\n".join(rows) + "\n")
        (run_dir / "lad_report.txt").write_text(lad_report.to_text())
        if do_rc:
            (run_dir / "recalibration.json").write_text(json.dumps(rc_info, indent=2, sort_keys=True) + "\n")
        (run_dir / "report.txt").write_text(report.to_text())
    return PipelineResult(model, report, lad_report, wr, lad, rc_info)


def _write_warmup(run_dir, wr):
    run_dir = Path(run_dir)
    (run_dir / "entropy_profile.csv").write_text(wr.profile.to_csv())
    sel = {**asdict(wr.selection), "warnings": wr.warnings}
    (run_dir / "source_selection.json").write_text(json.dumps(sel, indent=2, sort_keys=True) + "\n")
    (run_dir / "ambiguous_ids.txt").write_text("".join(f"{i}\n" for i in wr.ambiguity.ambiguous_ids))
    amb = wr.ambiguity.is_ambiguous()
    rows = ["id,la,ambiguous"] + [f"{i},{la:.8f},{int(a)}"
                                  for i, la, a in zip(wr.ambiguity.ids, wr.ambiguity.la, amb)]
    (run_dir / "la_scores.csv").write_text("\n".join(rows) + "\n")


def run_baseline(method, splits, cfg, run_dir=None, eval_checksum=""):
    """Train and evaluate one baseline (``ord``, ``ls``, ``mc``, ``ts`` or ``ldl``)."""
    train, val, ev = splits["train"], splits["validation"], splits["eval"]
    tc, bc = cfg.train, cfg.baseline
    tag = METHOD_TAGS[method]
    run_dir = Path(run_dir) if run_dir is not None else None
    with _Phase("build"):
        model = build_model(cfg.encoder)
        _ckpt(run_dir, "init", model)
    with _Phase("train"):
        if method in ("ord", "mc", "ts"):
            history = baselines.train_ord(model, train, tc)
        elif method == "ls":
            history = baselines.train_ls(model, train, tc, bc.alpha)
        elif method == "ldl":
            history = baselines.train_ldl(model, train, tc)
        else:
            raise ValueError(f"unknown baseline {method!r}")
        _ckpt(run_dir, "final", model)
    extra = {}
    mode = EvalMode()
    with _Phase("calibrate"):
        if method == "ts":
            T, kl = baselines.fit_temperature(model, val, bc.temperature_grid)
            mode = EvalMode("temperature", temperature=T)
            extra = {"temperature": T, "validation_kl": kl}
        elif method == "mc":
            mode = EvalMode("mc", k=bc.mc_passes)
            extra = {"mc_passes": bc.mc_passes}
        elif method == "ls":
            extra = {"alpha": bc.alpha}
    with _Phase("evaluate"):
        report = evaluate(model, ev, mode=mode, method=tag, seed=cfg.seed,
                          eval_checksum=eval_checksum, extra=extra)
    if run_dir is not None:
        rows = ["epoch,loss"] + [f"{e + 1},{v:.6f}" for e, v in enumerate(history)]
        (run_dir / "losses.csv").write_text("\n".join(rows) + "\n")
        if method == "ts":
            (run_dir / "temperature.json").write_text(json.dumps(extra, indent=2, sort_keys=True) + "\n")
        (run_dir / "report.txt").write_text(report.to_text())
    return model, report


def run_method(method, splits, cfg, run_dir=None, eval_checksum="", on_step=None):
    if method not in METHOD_TAGS:
        raise ValueError(f"unknown method {method!r}; valid methods: {', '.join(METHODS)}")
    if method in ("lad", "lad-rc"):
        res = run_pipeline(splits, cfg, recalibrate_flag=(method == "lad-rc"), run_dir=run_dir,
                           on_step=on_step, eval_checksum=eval_checksum)
        return res.model, res.report
    return run_baseline(method, splits, cfg, run_dir=run_dir, eval_checksum=eval_checksum)
