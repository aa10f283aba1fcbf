"""Pipeline commands: each one reads a validated experiment, runs one metric
family over the selected runs and writes tables, curve JSON and store rows."""
import csv
import itertools
import logging
import math
from functools import cached_property
from pathlib import Path
from typing import Callable, Iterable, NamedTuple, get_args

from pydantic import BaseModel

from activations.service import act_compare, stacked_deviation
from checkpoint.service import load
from exceptions import (ConfigError, EmptyIntersection, InsufficientGroups, MissingInputs,
                        NumericalError, SchemaError)
from experiment.loader import load_config
from experiment.model import ExperimentConfig
from interpolation.service import ccbh, imbh
from landscape.service import eligible_keys, landscape_pca, landscape_random, summarize
from metric_store.service import checkpoint_metrics, open_store, record_metrics, record_run
from predictor.model import FEATURES, PREDICTORS, FitResult, Scheme
from predictor.service import (build_features, compare_predictors, cross_validate,
                               sign_consistency_screen, spearman_table)
from report.layout import OutputLayout
from report.model import (TABLES, ActivationRow, CcbhRow, ImbhRow, LandscapeRow, PcaRow,
                          PredictionRow, RunRow, SpectraRow)
from report.tables import read_table, write_table
from spectra.model import SpectralReport
from spectra.service import run_delta_report, spectral_sweep
from tinylm.corpus import load_corpus, split_corpus, validation_set
from tinylm.model import Batch
from tinylm.network import validation_loss_fn
from trainers.model import Method, RunRecord
from trainers.service import RUN_FILE, load_run, train
from utils.model_utilities import write_model_json

logger = logging.getLogger(__name__)

SPECTRAL_METRICS = ("stable_rank", "eff_rank", "spectral_gap", "threshold_rank")


class RunKey(NamedTuple):
    size: str
    method: Method
    seed: int

    @property
    def label(self) -> str:
        return f"{self.method.value}-s{self.seed}"


class RunHandle(NamedTuple):
    key: RunKey
    record: RunRecord
    run_dir: Path


class Experiment:
    """A loaded experiment: config, output layout, metric store and data."""

    def __init__(self, config: ExperimentConfig, base: Path):
        self.config = config
        self.base = base
        self.layout = OutputLayout(config.output_path(base))
        self.config_hash = config.config_hash()
        self._store = None
        self._valsets: dict[tuple[str, int], Batch] = {}

    @classmethod
    def load(cls, path: Path | str) -> 'Experiment':
        return cls(*load_config(path))

    @property
    def store(self):
        if self._store is None:
            self._store = open_store(self.layout.root)
        return self._store

    def close(self) -> None:
        if self._store is not None:
            self._store.close()
            self._store = None

    @cached_property
    def corpus(self):
        return load_corpus(self.base / self.config.corpus if self.config.corpus else None)

    def valset(self, size: str, seed: int) -> Batch:
        """The validation subset every run of ``(size, seed)`` was scored on."""
        if (size, seed) not in self._valsets:
            seq_len = self.config.size(size).model.max_seq_len
            _, val_tokens = split_corpus(self.corpus, seq_len)
            self._valsets[(size, seed)] = validation_set(val_tokens, seq_len, seed)
        return self._valsets[(size, seed)]

    def selection(self, methods: Iterable[str] | None = None,
                  sizes: Iterable[str] | None = None) -> list[RunKey]:
        """Run keys in config order, optionally narrowed by method and size names.

        Raises:
            ConfigError: a selector names a method or size outside the experiment
        """
        known_methods = [method.value for method in self.config.methods]
        known_sizes = [size.name for size in self.config.sizes]
        methods, sizes = list(methods or []), list(sizes or [])
        violations = [f"method: {name} is not part of the experiment"
                      for name in methods if name not in known_methods]
        violations += [f"size: {name} is not part of the experiment"
                       for name in sizes if name not in known_sizes]
        if violations:
            raise ConfigError(violations)
        return [RunKey(size.name, method, seed)
                for size in self.config.sizes if not sizes or size.name in sizes
                for method in self.config.methods if not methods or method.value in methods
                for seed in self.config.run_seeds]

    def run_dir(self, key: RunKey) -> Path:
        return self.layout.run_dir(key.size, key.method.value, key.seed)

    def runs(self, keys: list[RunKey]) -> list[RunHandle]:
        """Completed runs for ``keys``; aborted runs are skipped.

        Raises:
            MissingInputs: a selected run has no ``run.json``
        """
        missing = [self.layout.relative(self.run_dir(key) / RUN_FILE) for key in keys
                   if not (self.run_dir(key) / RUN_FILE).is_file()]
        if missing:
            raise MissingInputs(missing, command="train")
        handles = []
        for key in keys:
            record = load_run(self.run_dir(key))
            if record.status != "completed":
                logger.warning(f"skipping {key.size}/{key.label}: {record.status}")
                continue
            handles.append(RunHandle(key, record, self.run_dir(key)))
        return handles

    def write_payload(self, path: Path, **payload) -> Path:
        """JSON artifact stamped with the config hash and seed."""
        return write_model_json({"config_hash": self.config_hash, "seed": self.config.seed,
                                 **payload}, path)

    def write_rows(self, name: str, rows: list[BaseModel],
                   replaced: Callable[[dict], bool]) -> Path:
        """Rewrites table ``name``: prior rows for which ``replaced`` is false are kept."""
        path = self.layout.table(name)
        kept: list[BaseModel] = []
        if path.is_file():
            try:
                header, old = read_table(path)
            except SchemaError as err:
                logger.warning(f"discarding unreadable {path.name}: {err.detail}")
                header, old = {"config_hash": None}, []
            if header["config_hash"] == self.config_hash:
                model = TABLES[name]
                kept = [_parse_row(model, row) for row in old if not replaced(row)]
        merged = sorted(kept + rows, key=_row_order)
        return write_table(path, name, merged, self.config_hash, self.config.seed)


def _parse_row(model: type[BaseModel], row: dict[str, str]) -> BaseModel:
    nullable = {name for name, field in model.model_fields.items()
                if type(None) in get_args(field.annotation)}
    return model.model_validate({k: None if v == "" and k in nullable else v
                                 for k, v in row.items()})


def _row_order(row: BaseModel) -> tuple:
    order = []
    for value in row.model_dump().values():
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            order.append((1, 0.0, str(value)))
        else:
            order.append((0, value, ""))
    return tuple(order)


def _owned(keys: list[RunKey], method_field: str = "method") -> Callable[[dict], bool]:
    owned = {(key.size, key.method.value, str(key.seed)) for key in keys}
    return lambda row: (row["size"], row[method_field], row["seed"]) in owned


# ----------------------------------------------------------------------- train

def cmd_train(exp: Experiment, methods=None, sizes=None) -> list[RunRecord]:
    """Trains every selected run and records it.

    Raises:
        NumericalError: after all runs finished, if any of them aborted
    """
    keys = exp.selection(methods, sizes)
    records, aborted = [], []
    for key in keys:
        hp = exp.config.train_config(key.method, key.seed)
        run_dir = exp.run_dir(key)
        try:
            record = train(hp, exp.config.size(key.size).model, exp.corpus, run_dir, size=key.size)
        except NumericalError as err:
            record = load_run(run_dir)
            aborted.append({"run": f"{key.size}/{key.label}", "detail": err.detail})
        record_run(exp.store, record, run_dir)
        records.append(record)
    rows = [RunRow(method=record.method.value, size=record.size, seed=record.seed,
                   step=entry.step, train_loss=entry.train_loss, val_loss=entry.val_loss,
                   perplexity=entry.perplexity)
            for record in records for entry in record.checkpoints]
    exp.write_rows("runs", rows, _owned(keys))
    if aborted:
        raise NumericalError({"msg": "training aborted", "runs": aborted})
    return records


# ------------------------------------------------------------------- landscape

def cmd_landscape(exp: Experiment, methods=None, sizes=None) -> list[LandscapeRow]:
    """Random-direction landscape of every checkpoint of the selected runs."""
    grids = exp.config.grids
    keys = exp.selection(methods, sizes)
    rows = []
    for key, record, run_dir in exp.runs(keys):
        valset = exp.valset(key.size, key.seed)
        for entry in record.checkpoints:
            ckpt = load(run_dir / entry.checkpoint)
            curve = landscape_random(ckpt.params, validation_loss_fn(ckpt.meta.model, valset),
                                     grids.perturb_grid, grids.directions, seed=key.seed,
                                     keys=eligible_keys(ckpt.params, grids.include_all_tensors),
                                     normalize=grids.normalize_directions)
            summary = summarize(curve)
            exp.write_payload(exp.layout.curve("landscape", key.size, key.label, entry.step),
                              curve=curve.model_dump())
            rows.append(LandscapeRow(method=key.method.value, size=key.size, seed=key.seed,
                                     step=entry.step, sharpness=summary.sharpness,
                                     direction_variance=summary.direction_variance,
                                     sigma_max=summary.sigma_max, diverged=summary.diverged))
            record_metrics(exp.store, key.method.value, key.size, key.seed, entry.step,
                           {"sharpness": summary.sharpness,
                            "direction_variance": summary.direction_variance,
                            "sigma_max": summary.sigma_max})
        logger.info(f"landscape {key.size}/{key.label}: {len(record.checkpoints)} checkpoints")
    exp.write_rows("landscape", rows, _owned(keys))
    return rows


def cmd_pca(exp: Experiment, methods=None, sizes=None) -> list[PcaRow]:
    """Landscape along the top singular directions, k = 1..pca_top_k."""
    grids = exp.config.grids
    keys = exp.selection(methods, sizes)
    rows = []
    for key, record, run_dir in exp.runs(keys):
        valset = exp.valset(key.size, key.seed)
        for entry in record.checkpoints:
            ckpt = load(run_dir / entry.checkpoint)
            loss_fn = validation_loss_fn(ckpt.meta.model, valset)
            tensors = eligible_keys(ckpt.params, grids.include_all_tensors)
            top_k = min([grids.pca_top_k, *(min(ckpt.params[t].shape) for t in tensors)])
            if top_k < grids.pca_top_k:
                logger.warning(f"{key.size}/{key.label}: pca limited to k <= {top_k}")
            metrics = {}
            for k in range(1, top_k + 1):
                curves = landscape_pca(ckpt.params, loss_fn, grids.perturb_grid, k,
                                       tensors, grids.pca_group)
                exp.write_payload(exp.layout.curve("pca", key.size, key.label, entry.step,
                                                   f"-k{k}"),
                                  curves=[curve.model_dump() for curve in curves])
                for curve in curves:
                    summary = summarize(curve)
                    rows.append(PcaRow(method=key.method.value, size=key.size, seed=key.seed,
                                       step=entry.step, k=k, group=curve.group,
                                       sharpness=summary.sharpness,
                                       direction_variance=summary.direction_variance,
                                       sigma_max=summary.sigma_max))
                    suffix = f"k{k}" if curve.group == "all" else f"k{k}_{curve.group}"
                    metrics[f"pca_sharpness_{suffix}"] = summary.sharpness
            record_metrics(exp.store, key.method.value, key.size, key.seed, entry.step, metrics)
        logger.info(f"pca {key.size}/{key.label} done")
    exp.write_rows("pca", rows, _owned(keys))
    return rows


# --------------------------------------------------------------- interpolation

def cmd_interp(exp: Experiment, methods=None, sizes=None) -> tuple[list[CcbhRow], list[ImbhRow]]:
    """Consecutive-checkpoint barriers per run and inter-method barriers per
    ``(size, seed)``; CoLA takes part in the former only."""
    points = exp.config.grids.interp_points
    keys = exp.selection(methods, sizes)
    handles = exp.runs(keys)
    ccbh_rows, imbh_rows = [], []
    for key, record, run_dir in handles:
        series = ccbh(record, run_dir, exp.valset(key.size, key.seed), points)
        exp.write_payload(exp.layout.series("ccbh", key.size, key.label),
                          series=series.model_dump())
        for result in series.results:
            step_from, step = result.curve.steps
            ccbh_rows.append(CcbhRow(method=key.method.value, size=key.size, seed=key.seed,
                                     step_from=step_from, step=step, barrier=result.height,
                                     argmax_beta=result.argmax_beta))
            record_metrics(exp.store, key.method.value, key.size, key.seed, step,
                           {"barrier_consec": result.height})

    pairs = []
    groups: dict[tuple[str, int], list[RunHandle]] = {}
    for handle in handles:
        groups.setdefault((handle.key.size, handle.key.seed), []).append(handle)
    for (size, seed), members in groups.items():
        eligible = [handle for handle in members if handle.key.method != Method.cola]
        if len(eligible) < len(members):
            logger.info(f"imbh {size}/s{seed}: CoLA is excluded from cross-method interpolation")
        for a, b in itertools.combinations(eligible, 2):
            try:
                series = imbh(a.record, a.run_dir, b.record, b.run_dir,
                              exp.valset(size, seed), points)
            except EmptyIntersection as err:
                logger.warning(f"imbh skipped: {err.detail}")
                continue
            pairs.append((size, a.key.method.value, b.key.method.value, str(seed)))
            exp.write_payload(exp.layout.series(
                "imbh", size, f"{a.key.method.value}-{b.key.method.value}-s{seed}"),
                series=series.model_dump())
            for result in series.results:
                imbh_rows.append(ImbhRow(method_a=a.key.method.value, method_b=b.key.method.value,
                                         size=size, seed=seed, step=result.curve.steps[0],
                                         barrier=result.height, argmax_beta=result.argmax_beta))
    exp.write_rows("ccbh", ccbh_rows, _owned(keys))
    owned_pairs = set(pairs)
    exp.write_rows("imbh", imbh_rows,
                   lambda row: (row["size"], row["method_a"], row["method_b"], row["seed"])
                   in owned_pairs)
    return ccbh_rows, imbh_rows


# --------------------------------------------------------------------- spectra

def _spectra_rows(report: SpectralReport) -> list[SpectraRow]:
    return [SpectraRow(method=report.method, size=report.size, seed=report.seed,
                       mode=report.mode, step_from=report.step_from, step=report.step,
                       key=tensor.key, role=tensor.role, eff_rank=tensor.eff_rank,
                       stable_rank=tensor.stable_rank, spectral_gap=tensor.spectral_gap,
                       threshold_rank=tensor.threshold_rank, flags=";".join(tensor.flags))
            for tensor in report.tensors]


def cmd_spectra(exp: Experiment, methods=None, sizes=None) -> list[SpectraRow]:
    """Spectra of weights, of consecutive updates and of the whole-run update."""
    tau = exp.config.grids.tau
    keys = exp.selection(methods, sizes)
    rows = []
    for key, record, run_dir in exp.runs(keys):
        for mode, suffix in (("weights", "W"), ("deltas", "dW")):
            for report in spectral_sweep(record, run_dir, mode, tau):
                rows.extend(_spectra_rows(report))
                exp.write_payload(exp.layout.curve("spectra", key.size, key.label, report.step,
                                                   f"-{mode}"),
                                  report=report.model_dump())
                record_metrics(exp.store, key.method.value, key.size, key.seed, report.step,
                               {f"{metric}_{suffix}": report.metric_mean(metric)
                                for metric in SPECTRAL_METRICS})
        whole = run_delta_report(record, run_dir, tau)
        rows.extend(_spectra_rows(whole))
        exp.write_payload(exp.layout.series("spectra", key.size, f"{key.label}-run_delta"),
                          report=whole.model_dump(),
                          role_distributions=whole.role_distributions(),
                          counts_above_tau=whole.counts_above_tau())
        logger.info(f"spectra {key.size}/{key.label}: run update counts "
                    f"{whole.counts_above_tau()}")
    exp.write_rows("spectra", rows, _owned(keys))
    return rows


# ----------------------------------------------------------------- activations

def cmd_activations(exp: Experiment, methods=None, sizes=None) -> list[ActivationRow]:
    """Per-layer deviation of every selected run from the reference method's
    run with the same size and seed, at every shared checkpoint step."""
    reference = exp.config.reference_method
    keys = exp.selection(methods, sizes)
    ref_keys = list(dict.fromkeys(RunKey(key.size, reference, key.seed) for key in keys))
    references = {(h.key.size, h.key.seed): h for h in exp.runs(ref_keys)}
    rows_limit = exp.config.grids.activation_rows
    reports = []
    for key, record, run_dir in exp.runs(keys):
        ref = references.get((key.size, key.seed))
        if ref is None:
            logger.warning(f"no completed reference run for {key.size}/s{key.seed}")
            continue
        batch = Batch(token_ids=exp.valset(key.size, key.seed).token_ids[:rows_limit])
        for step in sorted(set(record.steps) & set(ref.record.steps)):
            base = load(ref.record.checkpoint_path(ref.run_dir, step))
            target = load(record.checkpoint_path(run_dir, step))
            reports.append(act_compare((base.params, base.meta.model),
                                       (target.params, target.meta.model), batch,
                                       method=key.method.value, reference=reference.value,
                                       size=key.size, seed=key.seed, step=step))
        logger.info(f"activations {key.size}/{key.label} vs {reference.value} done")

    stacked = stacked_deviation(reports)
    rows = []
    for report, deviation in zip(reports, stacked):
        rows.extend(ActivationRow(method=report.method, size=report.size, seed=report.seed,
                                  step=report.step, layer=layer.layer, d_l2=layer.d_l2,
                                  cos=layer.cos, cka=layer.cka)
                    for layer in report.layers)
        record_metrics(exp.store, report.method, report.size, report.seed, report.step,
                       {"act_cka_mean": report.cka_mean, "act_l2_mean": report.l2_mean,
                        "act_cos_mean": report.cos_mean,
                        "stacked_deviation_last": deviation.last_layer})
    exp.write_payload(exp.layout.stacked,
                      deviations=[deviation.model_dump() for deviation in stacked])
    exp.write_rows("activations", rows, _owned(keys))
    return rows


# ------------------------------------------------------------------- predictor

def read_targets(path: Path) -> dict[tuple[str, str, int], float]:
    """Downstream targets from a ``method,size,step,target`` CSV.

    Raises:
        SchemaError: missing columns or a non-numeric value
    """
    with path.open(newline='', encoding='utf-8') as stream:
        reader = csv.DictReader(stream)
        required = {"method", "size", "step", "target"}
        if not required.issubset(reader.fieldnames or []):
            raise SchemaError({"msg": "targets need method,size,step,target columns",
                               "file": str(path), "found": reader.fieldnames})
        targets = {}
        for number, row in enumerate(reader, start=2):
            try:
                targets[(row["method"], row["size"], int(row["step"]))] = float(row["target"])
            except ValueError:
                raise SchemaError({"msg": "non-numeric target row", "file": str(path),
                                   "line": number})
    return targets


def _fold_of(fit: FitResult, index: int) -> str:
    for label, members in zip(fit.fold_labels, fit.folds):
        if index in members:
            return label
    return ""


def cmd_predict(exp: Experiment, targets: Path | str | None = None,
                schemes: Iterable[Scheme] = ("loso", "lomo"),
                columns: Iterable[str] | None = None) -> dict[str, FitResult]:
    """Fits the checkpoint-geometry predictor from the metric store.

    Only checkpoints past step 0 that have a target are used.

    Raises:
        ConfigError: no targets file given
        MissingInputs: no recorded checkpoint matches a target
    """
    path = Path(targets) if targets else (exp.base / exp.config.targets
                                          if exp.config.targets else None)
    if path is None or not path.is_file():
        raise ConfigError([f"targets: target CSV not found ({path})" if path else
                           "targets: set `targets` in the config or pass --targets"])
    schemes = list(schemes)
    unknown = [s for s in schemes if s not in ("loso", "lomo")]
    if unknown:
        raise ConfigError([f"scheme: {s} is not loso or lomo" for s in unknown])
    columns = list(columns or FEATURES)
    target_map = read_targets(path)
    records = [record for record in checkpoint_metrics(exp.store)
               if record[3] > 0 and (record[0], record[1], record[3]) in target_map]
    if not records:
        raise MissingInputs(["metric store checkpoints matching the targets"], command="train")
    matrix = build_features(records, target_map, columns)

    try:
        spearman = spearman_table(matrix)
        screen = sign_consistency_screen(spearman)
    except InsufficientGroups as err:
        logger.warning(f"sign-consistency screen skipped: {err.detail}")
        spearman, screen = {}, []
    fits = {scheme: cross_validate(matrix.X, matrix.y, matrix.groups(scheme), scheme)
            for scheme in schemes}
    comparison = (compare_predictors(matrix)
                  if all(c in columns for cs in PREDICTORS.values() for c in cs) else [])

    rows = [PredictionRow(scheme=scheme, predictor="selected", method=row.method, size=row.size,
                          seed=row.seed, step=row.step, fold=_fold_of(fit, i),
                          target=row.target, prediction=fit.predictions[i])
            for scheme, fit in fits.items() for i, row in enumerate(matrix.rows)]
    exp.write_payload(exp.layout.predictor, columns=columns, rows=len(matrix.rows),
                      spearman=spearman, screen=[feature.model_dump() for feature in screen],
                      fits={scheme: fit.model_dump() for scheme, fit in fits.items()},
                      comparison=[score.model_dump() for score in comparison])
    exp.write_rows("predictions", rows, lambda row: True)
    for scheme, fit in fits.items():
        pearson = "nan" if fit.pearson is None or math.isnan(fit.pearson) else f"{fit.pearson:.3f}"
        logger.info(f"{scheme}: pearson {pearson} over {len(matrix.rows)} checkpoints")
    return fits
