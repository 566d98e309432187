"""Resumable sweeps over images, lambdas, mask ratios and architectures."""

from __future__ import annotations

import csv
import hashlib
import itertools
import json
import logging
import math
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .encoder import RDRecord

log = logging.getLogger(__name__)

CSV_FIELDS = RDRecord.CSV_FIELDS + ("job_id",)
ARCH_KEYS = ("d", "c", "n_residual")


@dataclass(frozen=True)
class Job:
    image: str
    lam: float
    mask_ratio: float
    d: int
    c: int
    n_residual: int
    seed: int
    mode: str
    overrides: tuple = ()

    @property
    def job_id(self) -> str:
        stem = Path(self.image).stem
        tag = json.dumps([self.image, self.lam, self.mask_ratio, self.d, self.c, self.n_residual,
                          self.seed, self.mode, list(self.overrides)], sort_keys=True)
        digest = hashlib.blake2b(tag.encode(), digest_size=4).hexdigest()
        return (f"{stem}_{self.mode}_lam{self.lam:g}_r{self.mask_ratio:g}_d{self.d}_c{self.c}"
                f"_res{self.n_residual}_s{self.seed}_{digest}")


@dataclass
class SweepResult:
    rows: list = field(default_factory=list)
    failures: list = field(default_factory=list)
    executed: list = field(default_factory=list)
    skipped: list = field(default_factory=list)


def load_manifest(path) -> dict:
    text = Path(path).read_text()
    if str(path).endswith(".json"):
        return json.loads(text)
    import yaml

    return yaml.safe_load(text)


def expand_jobs(manifest: dict, base_dir: Path | None = None) -> list[Job]:
    """Cartesian product of the manifest's axes, in a fixed order."""
    images = manifest["images"]
    if base_dir is not None:
        images = [str((base_dir / p).resolve()) if not Path(p).is_absolute() else p for p in images]
    lambdas = manifest.get("lambdas", [1e-3])
    ratios = manifest.get("mask_ratios", [0.2])
    archs = manifest.get("archs", [{"d": 32, "c": 16, "n_residual": 0}])
    seeds = manifest.get("seeds", [0])
    modes = manifest.get("modes", ["full"])
    overrides = {k: manifest[k] for k in ("steps1", "steps2", "score_lr", "score_optimizer",
                                          "eval_interval", "lr1", "lr2", "optimizer")
                 if k in manifest}
    ov = tuple(sorted(overrides.items()))
    jobs = []
    for img, lam, r, arch, seed, mode in itertools.product(images, lambdas, ratios, archs, seeds, modes):
        jobs.append(Job(img, float(lam), float(r), int(arch.get("d", 32)), int(arch.get("c", 16)),
                        int(arch.get("n_residual", 0)), int(seed), mode, ov))
    return jobs


def run_job(job: Job, out_dir: str) -> dict:
    """Encode one job; writes ``<id>.json`` (and ``<id>.ltry`` for decodable streams)."""
    from .encoder import EncoderConfig, encode_image
    from .imageio import read_image

    out = Path(out_dir) / "jobs"
    out.mkdir(parents=True, exist_ok=True)
    cfg = EncoderConfig(lam=job.lam, mask_ratio=job.mask_ratio, d=job.d, c=job.c,
                        n_residual=job.n_residual, seed=job.seed, **dict(job.overrides))
    stream, record = encode_image(read_image(job.image), cfg, Path(job.image).stem, job.mode)
    (out / f"{job.job_id}.ltry").write_bytes(stream.to_bytes())
    row = record.row()
    row["job_id"] = job.job_id
    tmp = out / f"{job.job_id}.json.tmp"
    tmp.write_text(json.dumps(row, indent=1))
    tmp.replace(out / f"{job.job_id}.json")
    return row


def _run_guarded(job: Job, out_dir: str):
    try:
        return job, run_job(job, out_dir), None
    except Exception as exc:  # recorded, the sweep continues
        return job, None, f"{type(exc).__name__}: {exc}\n{traceback.format_exc()}"


def run_sweep(manifest, out_dir, jobs: int = 1, base_dir=None) -> SweepResult:
    """Run every job whose output is missing, then rebuild the CSV and Pareto files."""
    if not isinstance(manifest, dict):
        base_dir = Path(manifest).parent if base_dir is None else base_dir
        manifest = load_manifest(manifest)
    out_dir = Path(out_dir)
    (out_dir / "jobs").mkdir(parents=True, exist_ok=True)
    all_jobs = expand_jobs(manifest, Path(base_dir) if base_dir else None)
    result = SweepResult()
    todo = []
    for job in all_jobs:
        if (out_dir / "jobs" / f"{job.job_id}.json").exists():
            result.skipped.append(job.job_id)
        else:
            todo.append(job)

    if jobs > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_run_guarded, todo, itertools.repeat(str(out_dir))))
    else:
        outcomes = [_run_guarded(j, str(out_dir)) for j in todo]
    for job, _, err in outcomes:
        if err is None:
            result.executed.append(job.job_id)
        else:
            log.error("job %s failed: %s", job.job_id, err.splitlines()[0])
            result.failures.append({"job_id": job.job_id, "error": err})

    for job in all_jobs:
        path = out_dir / "jobs" / f"{job.job_id}.json"
        if path.exists():
            result.rows.append(json.loads(path.read_text()))
    write_csv(result.rows, out_dir / "results.csv")
    write_csv(pareto_rows(result.rows), out_dir / "pareto.csv")
    if result.failures:
        (out_dir / "failures.json").write_text(json.dumps(result.failures, indent=1))
    return result


def write_csv(rows, path, fields=CSV_FIELDS) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(fields), extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow(r)


_INT_FIELDS = {"height", "width", "seed", "d", "c", "n_residual", "steps1", "steps2",
               "theta_step", "psi_step"}
_STR_FIELDS = {"image", "mode", "job_id"}


def read_csv(path) -> list[dict]:
    """Rows of a results CSV with numeric columns converted."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(RDRecord.CSV_FIELDS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        rows = []
        for r in reader:
            out = {}
            for k, v in r.items():
                if k in _STR_FIELDS:
                    out[k] = v
                elif k in _INT_FIELDS:
                    out[k] = int(v)
                else:
                    out[k] = float(v)
            rows.append(out)
    return rows


def config_key(row) -> tuple:
    return (row["image"], row["mode"], row["mask_ratio"], row["d"], row["c"], row["n_residual"])


def pareto_front(points):
    """Non-dominated ``(bpp, psnr)`` points (lower rate, higher quality), sorted by rate."""
    pts = sorted(points, key=lambda p: (p[0], -p[1]))
    front, best = [], -math.inf
    for p in pts:
        if p[1] > best:
            front.append(p)
            best = p[1]
    return front


def pareto_rows(rows) -> list[dict]:
    groups: dict = {}
    for r in rows:
        groups.setdefault(config_key(r), []).append(r)
    out = []
    for key in sorted(groups, key=str):
        members = groups[key]
        front = set(pareto_front([(r["bpp_total"], r["psnr"]) for r in members]))
        out.extend(sorted((r for r in members if (r["bpp_total"], r["psnr"]) in front),
                          key=lambda r: r["bpp_total"]))
    return out


# ----------------------------------------------------------------------------
# Reports


RATE_SHARE_FIELDS = ("job_id", "image", "mode", "lam", "mask_ratio", "bpp_total",
                     "share_z", "share_tau", "share_theta", "share_psi", "share_weights", "share_header")


def rate_share(rows) -> list[dict]:
    out = []
    for r in rows:
        total = r["bpp_total"]
        item = {k: r.get(k, "") for k in ("job_id", "image", "mode", "lam", "mask_ratio", "bpp_total")}
        for comp in ("z", "tau", "theta", "psi", "weights", "header"):
            item[f"share_{comp}"] = r[f"bpp_{comp}"] / total if total > 0 else 0.0
        out.append(item)
    return out


BD_MACS_FIELDS = ("mode", "mask_ratio", "d", "c", "n_residual", "n_images",
                  "bd_rate", "macs_lower", "macs_upper")


def bd_vs_macs(rows, reference: tuple | None = None) -> list[dict]:
    """Mean BD-rate of each configuration against ``reference`` with its MACs/pixel.

    Configurations are ``(mode, mask_ratio, d, c, n_residual)``; BD-rate is
    computed per image on the Pareto front over lambdas and averaged. The
    reference defaults to the first configuration in sorted order.
    """
    from .metrics import bd_rate

    by_cfg: dict = {}
    for r in rows:
        cfg = (r["mode"], r["mask_ratio"], r["d"], r["c"], r["n_residual"])
        by_cfg.setdefault(cfg, {}).setdefault(r["image"], []).append(r)
    if not by_cfg:
        return []
    cfgs = sorted(by_cfg)
    ref = reference if reference is not None else cfgs[0]
    if ref not in by_cfg:
        raise ValueError(f"reference configuration {ref} not present")
    out = []
    for cfg in cfgs:
        vals = []
        for image, members in by_cfg[cfg].items():
            ref_members = by_cfg[ref].get(image)
            if not ref_members:
                continue
            a = pareto_front([(m["bpp_total"], m["psnr"]) for m in ref_members])
            b = pareto_front([(m["bpp_total"], m["psnr"]) for m in members])
            try:
                vals.append(bd_rate(a, b))
            except ValueError:
                continue
        all_rows = [m for ms in by_cfg[cfg].values() for m in ms]
        out.append({
            "mode": cfg[0], "mask_ratio": cfg[1], "d": cfg[2], "c": cfg[3], "n_residual": cfg[4],
            "n_images": len(vals),
            "bd_rate": sum(vals) / len(vals) if vals else math.nan,
            "macs_lower": sum(m["macs_lower"] for m in all_rows) / len(all_rows),
            "macs_upper": sum(m["macs_upper"] for m in all_rows) / len(all_rows),
        })
    return out
