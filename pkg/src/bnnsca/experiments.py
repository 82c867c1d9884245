"""End-to-end experiment harness: run-count sweeps, placement and stressor
studies, input-perturbation robustness tables, and artifact persistence.

Every experiment cell is addressed by (config hash, image id, run count) and
is exactly replayable from the spec seed: per-image capture seeds and
per-run RNG streams are derived arithmetically, and all artifacts are
written atomically (temp file + rename).
"""

import configparser
import hashlib
import os
import time
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import sensor as sensor_mod
from .activity import (
    ActivityModelConfig,
    simulate_first_kernel_trace,
    simulate_traces_batch,
    write_power_csv,
)
from .bnn import generate_random_model, load_model
from .datasets import (
    Image,
    PixelPerturbation,
    load_labeled_images,
    perturb,
    synthetic_digit_set,
    write_pgm,
)
from .metrics import SimilarityReport, similarity_report
from .pipeline import TraceImageReconstructor, average_traces
from .sensor import (
    board_config,
    capture_perturbed_runs,
    capture_runs_from_power,
)

DEFAULT_RUN_COUNTS = (100, 200, 500, 1000, 3000, 6000)
PLACEMENT_TABLE_RUNS = 3000
ROBUSTNESS_RUNS = 6000


class MissingDatasetError(FileNotFoundError):
    pass


@dataclass(frozen=True)
class ExperimentSpec:
    """Declarative description of one experiment matrix."""

    seed: int = 7
    board: str = "zcu104"
    placement: str = "adjacent"
    run_counts: tuple = DEFAULT_RUN_COUNTS
    dataset: str = "synthetic"  # synthetic | idx
    image_path: str = ""
    label_path: str = ""
    image_count: int = 10000
    image_selection: str = "one-per-class"  # or comma list of indices
    model_seed: int = 1
    model_path: str = ""
    perturbation: PixelPerturbation = field(default_factory=PixelPerturbation)
    stressor_gain: float = 1.0
    noise_sigma: Optional[float] = None
    attenuation: Optional[float] = None
    filter: str = "running-mean"
    window: int = 10
    threshold: str = "auto"
    denoise: bool = True
    out_dir: str = "out"

    def __post_init__(self):
        if len(self.run_counts) == 0:
            raise ValueError("run_counts must be non-empty")
        if list(self.run_counts) != sorted(set(self.run_counts)):
            raise ValueError("run_counts must be strictly increasing")


def spec_from_config(path, **overrides):
    """Build a spec from a flat key=value config file with sections."""
    parser = configparser.ConfigParser()
    if not parser.read(path):
        raise MissingDatasetError(f"config file not found: {path}")
    kw = {}
    exp = parser["experiment"] if parser.has_section("experiment") else {}
    for key in ("board", "placement", "dataset", "image_path", "label_path",
                "image_selection", "model_path", "out_dir"):
        if key in exp:
            kw[key] = exp[key]
    for key in ("seed", "model_seed", "image_count"):
        if key in exp:
            kw[key] = int(exp[key])
    if "run_counts" in exp:
        kw["run_counts"] = tuple(int(v) for v in exp["run_counts"].split(","))
    if "stressor_gain" in exp:
        kw["stressor_gain"] = float(exp["stressor_gain"])
    if parser.has_section("sensor"):
        sec = parser["sensor"]
        if "noise_sigma" in sec:
            kw["noise_sigma"] = float(sec["noise_sigma"])
        if "attenuation" in sec:
            kw["attenuation"] = float(sec["attenuation"])
    if parser.has_section("attack"):
        sec = parser["attack"]
        kw["filter"] = sec.get("filter", "running-mean")
        kw["threshold"] = sec.get("threshold", "auto")
        kw["denoise"] = sec.getboolean("denoise", True)
        if "window" in sec:
            kw["window"] = int(sec["window"])
    if parser.has_section("perturbation"):
        sec = parser["perturbation"]
        kw["perturbation"] = PixelPerturbation(
            kind=sec.get("kind", "none"),
            value=sec.getint("value", 0),
            probability=sec.getfloat("probability", 0.0),
            bits=sec.getint("bits", 1),
            seed=sec.getint("seed", 0),
        )
    kw.update(overrides)
    return ExperimentSpec(**kw)


def resolve_sensor_config(spec):
    overrides = {"stressor_gain": spec.stressor_gain}
    if spec.noise_sigma is not None:
        overrides["noise_sigma"] = spec.noise_sigma
    if spec.attenuation is not None:
        overrides["attenuation"] = spec.attenuation
    return board_config(spec.board, spec.placement, **overrides)


def resolve_kernel(spec):
    if spec.model_path:
        return load_model(spec.model_path).first_kernel()
    return generate_random_model(spec.model_seed).first_kernel()


def load_dataset(spec):
    if spec.dataset == "synthetic":
        return synthetic_digit_set(count_per_class=1, seed=spec.seed)
    if spec.dataset == "idx":
        for p in (spec.image_path, spec.label_path):
            if not p or not os.path.exists(p):
                raise MissingDatasetError(f"dataset file missing: {p!r}")
        return load_labeled_images(spec.image_path, spec.label_path, spec.image_count)
    raise ValueError(f"unknown dataset kind {spec.dataset!r}")


def select_images(images, selection="one-per-class"):
    """(image_id, Image) pairs; one-per-class picks first occurrences."""
    if selection == "one-per-class":
        chosen = {}
        for idx, im in enumerate(images):
            if im.label is not None and im.label not in chosen:
                chosen[im.label] = (idx, im)
        return [(f"c{label}i{idx}", im) for label, (idx, im) in sorted(chosen.items())]
    indices = [int(v) for v in str(selection).split(",")]
    return [(f"i{idx}", images[idx]) for idx in indices]


def image_capture_seed(spec_seed, image_id):
    digest = hashlib.sha256(f"{spec_seed}:{image_id}".encode()).digest()
    return int.from_bytes(digest[:6], "big")


def experiment_hash(spec, sensor_cfg):
    """Hash of everything that shapes the outputs except the seed."""
    text = "|".join(
        [
            repr(sensor_cfg),
            repr(ActivityModelConfig()),
            f"model={spec.model_path or spec.model_seed}",
            f"filter={spec.filter}:{spec.window}",
            f"threshold={spec.threshold}",
            f"denoise={spec.denoise}",
            f"perturb={spec.perturbation!r}",
        ]
    )
    return hashlib.sha256(text.encode()).hexdigest()[:12]


def atomic_write_text(path, text):
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _write_trace_csv(path, values, header):
    lines = [header, "cycle,value"]
    lines += [f"{i},{v!r}" for i, v in enumerate(values)]
    atomic_write_text(path, "\n".join(lines) + "\n")


def _write_hist_csv(path, hist):
    lines = ["bin_low,bin_high,count"]
    for lo, hi, c in zip(hist.edges[:-1], hist.edges[1:], hist.counts):
        lines.append(f"{lo!r},{hi!r},{int(c)}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def _reconstructor(spec):
    return TraceImageReconstructor(
        filter=spec.filter,
        window=spec.window,
        threshold=(spec.threshold if spec.threshold in ("auto", "otsu")
                   else float(spec.threshold)),
        denoise=spec.denoise,
    )


@dataclass
class ExperimentResult:
    reports: list
    artifact_dir: str
    summary_csv: str
    report_md: str
    wall_clock_s: float


def run_cell(original, victim_image, image_id, spec, sensor_cfg, run_counts, out_root=None):
    """Capture the largest run batch once, then attack every prefix size.

    Returns the per-run-count (report, recovered) pairs.  `original` is the
    clean image metrics are computed against; `victim_image` is what the
    accelerator actually processes (possibly perturbed).
    """
    kernel = resolve_kernel(spec)
    power = simulate_first_kernel_trace(victim_image, kernel)
    seed = image_capture_seed(spec.seed, image_id)
    traces = capture_runs_from_power(power, sensor_cfg, max(run_counts), seed)
    cfg_hash = experiment_hash(spec, sensor_cfg)
    out = []
    for n in run_counts:
        recon = _reconstructor(spec)
        recovered = recon.recover(
            traces[:n],
            provenance={
                "image_id": image_id,
                "n_runs": n,
                "config_hash": cfg_hash,
                "seed": spec.seed,
                "threshold_method": recon.threshold_method_,
            },
        )
        report = similarity_report(original, recovered, image_id=image_id,
                                   config_hash=cfg_hash)
        if out_root is not None:
            cell_dir = os.path.join(out_root, cfg_hash, image_id, str(n))
            os.makedirs(cell_dir, exist_ok=True)
            _write_trace_csv(os.path.join(cell_dir, "avg.csv"),
                             recon.averaged_, f"# config_hash={cfg_hash}")
            _write_trace_csv(os.path.join(cell_dir, "filtered.csv"),
                             recon.filtered_, f"# config_hash={cfg_hash}")
            _write_hist_csv(os.path.join(cell_dir, "hist.csv"), recon.histogram_)
            write_pgm(recovered.binary_image, os.path.join(cell_dir, "binary.pgm"))
            write_pgm(recovered.denoised_image, os.path.join(cell_dir, "denoised.pgm"))
            atomic_write_text(
                os.path.join(cell_dir, "report.csv"),
                SimilarityReport.CSV_HEADER + "\n" + report.csv_row() + "\n",
            )
        out.append((report, recovered))
    return out


def run_experiment(spec):
    """Full matrix: every selected image at every run count, with artifacts."""
    start = time.monotonic()
    sensor_cfg = resolve_sensor_config(spec)
    images = load_dataset(spec)
    selected = select_images(images, spec.image_selection)
    cfg_hash = experiment_hash(spec, sensor_cfg)
    out_root = spec.out_dir
    os.makedirs(os.path.join(out_root, cfg_hash), exist_ok=True)
    reports = []
    for image_id, image in selected:
        victim = perturb(image, spec.perturbation)
        for report, _ in run_cell(image, victim, image_id, spec, sensor_cfg,
                                  spec.run_counts, out_root=out_root):
            reports.append(report)
    summary_path = os.path.join(out_root, cfg_hash, "summary.csv")
    atomic_write_text(
        summary_path,
        SimilarityReport.CSV_HEADER + "\n" + "\n".join(r.csv_row() for r in reports) + "\n",
    )
    report_md = os.path.join(out_root, cfg_hash, "report.md")
    atomic_write_text(report_md, _markdown_report(spec, cfg_hash, reports))
    return ExperimentResult(
        reports=reports,
        artifact_dir=os.path.join(out_root, cfg_hash),
        summary_csv=summary_path,
        report_md=report_md,
        wall_clock_s=time.monotonic() - start,
    )


def _markdown_report(spec, cfg_hash, reports):
    lines = [
        "# Recovery experiment report",
        "",
        f"- board: `{spec.board}`  placement: `{spec.placement}`",
        f"- config hash: `{cfg_hash}`  seed: {spec.seed}",
        f"- perturbation: `{spec.perturbation.kind}`",
        "",
        "| image | runs | ccr_norm raw | ccr_norm denoised | mssim denoised |",
        "|---|---|---|---|---|",
    ]
    for r in reports:
        lines.append(
            f"| {r.image_id} | {r.n_runs} | {r.ccr_norm_raw:.3f} "
            f"| {r.ccr_norm_denoised:.3f} | {r.mssim_denoised:.3f} |"
        )
    by_runs = {}
    for r in reports:
        by_runs.setdefault(r.n_runs, []).append(r.ccr_norm_denoised)
    lines += ["", "| runs | mean ccr_norm denoised |", "|---|---|"]
    for n in sorted(by_runs):
        lines.append(f"| {n} | {np.mean(by_runs[n]):.3f} |")
    return "\n".join(lines) + "\n"


def sweep_runs(spec):
    """(run count -> mean denoised ccr_norm / mssim) curve over the battery."""
    if len(spec.run_counts) < 2:
        raise ValueError("sweep needs at least two run counts")
    result = run_experiment(spec)
    curve = []
    for n in spec.run_counts:
        rows = [r for r in result.reports if r.n_runs == n]
        curve.append(
            (n, float(np.mean([r.ccr_norm_denoised for r in rows])),
             float(np.mean([r.mssim_denoised for r in rows])))
        )
    csv_path = os.path.join(result.artifact_dir, "sweep.csv")
    lines = ["n_runs,mean_ccr_norm_denoised,mean_mssim_denoised"]
    lines += [f"{n},{c!r},{m!r}" for n, c, m in curve]
    atomic_write_text(csv_path, "\n".join(lines) + "\n")
    return curve


def compare_placements(spec, placements=("adjacent", "cross-die", "cross-slr"),
                       n_runs=PLACEMENT_TABLE_RUNS):
    """Placement table rows from identical seeds; only attenuation differs."""
    rows = []
    for placement in placements:
        pspec = replace(spec, placement=placement, run_counts=(n_runs,))
        result = run_experiment(pspec)
        for r in result.reports:
            rows.append(
                {
                    "placement": placement,
                    "image_id": r.image_id,
                    "ccr_norm_raw": r.ccr_norm_raw,
                    "ccr_norm_denoised": r.ccr_norm_denoised,
                }
            )
    out_path = os.path.join(spec.out_dir, "placements.csv")
    lines = ["placement,image_id,ccr_norm_raw,ccr_norm_denoised"]
    lines += [
        f"{r['placement']},{r['image_id']},{r['ccr_norm_raw']!r},{r['ccr_norm_denoised']!r}"
        for r in rows
    ]
    atomic_write_text(out_path, "\n".join(lines) + "\n")
    return rows


def _exemplar(spec):
    """The class-6 battery image, mirroring the digit studied in depth."""
    images = load_dataset(spec)
    for image_id, im in select_images(images, spec.image_selection):
        if im.label == 6:
            return image_id, im
    image_id, im = select_images(images, spec.image_selection)[0]
    return image_id, im


def background_study(spec, backgrounds=(0, 1, 10, 30, 50), n_runs=ROBUSTNESS_RUNS):
    """Constant-background robustness rows (recovered vs clean original)."""
    sensor_cfg = resolve_sensor_config(spec)
    image_id, original = _exemplar(spec)
    rows = []
    for value in backgrounds:
        p = PixelPerturbation(kind="constant-background", value=value) if value else \
            PixelPerturbation()
        victim = perturb(original, p)
        (report, _), = run_cell(original, victim, f"{image_id}bg{value}", spec,
                                sensor_cfg, (n_runs,))
        rows.append({"background": value,
                     "ccr_norm_raw": report.ccr_norm_raw,
                     "ccr_norm_denoised": report.ccr_norm_denoised})
    return rows


def bitflip_study(spec, probabilities=(0.0, 0.2, 0.4, 0.6, 0.8, 1.0), bits=1,
                  n_runs=ROBUSTNESS_RUNS):
    """Low-bit flip robustness; every run captures a freshly perturbed image."""
    sensor_cfg = resolve_sensor_config(spec)
    image_id, original = _exemplar(spec)
    kernel = resolve_kernel(spec)
    cfg_hash = experiment_hash(spec, sensor_cfg)
    rows = []
    for p in probabilities:
        seed = image_capture_seed(spec.seed, f"{image_id}flip{bits}p{p}")
        if p == 0.0:
            power = simulate_first_kernel_trace(original, kernel)
            traces = capture_runs_from_power(power, sensor_cfg, n_runs, seed)
        else:
            rng = np.random.default_rng([seed, bits])
            base = original.pixels
            mask = 0b1 if bits == 1 else 0b11
            triggered = rng.random((n_runs,) + base.shape) < p
            variants = np.where(triggered, base ^ mask, base).astype(np.uint8)
            power_matrix = simulate_traces_batch(list(variants), kernel)
            traces = capture_perturbed_runs(power_matrix, sensor_cfg, seed)
        recovered = _reconstructor(spec).recover(traces)
        report = similarity_report(original, recovered, image_id=image_id,
                                   config_hash=cfg_hash)
        rows.append({"probability": p, "bits": bits,
                     "ccr_norm_denoised": report.ccr_norm_denoised})
    return rows


def spearman_rho(x, y):
    """Spearman rank correlation (average ranks on ties)."""
    def ranks(v):
        v = np.asarray(v, dtype=np.float64)
        order = np.argsort(v, kind="stable")
        r = np.empty_like(v)
        r[order] = np.arange(1, v.size + 1, dtype=np.float64)
        for val in np.unique(v):
            idx = v == val
            if idx.sum() > 1:
                r[idx] = r[idx].mean()
        return r
    rx, ry = ranks(x), ranks(y)
    rx -= rx.mean()
    ry -= ry.mean()
    denom = np.sqrt((rx**2).sum() * (ry**2).sum())
    if denom == 0:
        return 0.0
    return float((rx * ry).sum() / denom)
