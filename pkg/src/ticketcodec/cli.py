"""``ticketcodec`` command line: encode, decode, sweep, bdrate, report.

Exit codes: 0 success, 1 usage error, 2 encode/decode failure, 3 sweep with
failed jobs. ``TICKETCODEC_THREADS`` sets the default BLAS thread count.
Every flag can also be given in a YAML/JSON file passed with ``--config``
(keys use underscores, e.g. ``mask_ratio``); command-line values win.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

EXIT_OK, EXIT_USAGE, EXIT_CODEC, EXIT_SWEEP = 0, 1, 2, 3
THREADS_ENV = "TICKETCODEC_THREADS"
_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


ENCODE_DEFAULTS = {
    "lam": 1e-3, "mask_ratio": 0.2, "d": 32, "c": 16, "n_residual": 0, "seed": 0,
    "steps1": 100_000, "steps2": 10_000, "score_lr": 0.1, "score_optimizer": "sgd",
    "eval_interval": 100, "optimizer": "adam", "mode": "full",
}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ticketcodec", description=__doc__.splitlines()[0])
    p.add_argument("--config", help="YAML or JSON file with default flag values")
    p.add_argument("--threads", type=int, help=f"BLAS threads (default ${THREADS_ENV})")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="verb", required=True, parser_class=_Parser)

    e = sub.add_parser("encode", help="compress one image")
    e.add_argument("--image", required=False)
    e.add_argument("--out", required=False, help="output .ltry path")
    e.add_argument("--lambda", dest="lam", type=float)
    e.add_argument("--mask-ratio", dest="mask_ratio", type=float)
    e.add_argument("--d", type=int, choices=(32, 48))
    e.add_argument("--c", type=int, choices=(8, 16, 24, 32))
    e.add_argument("--n-residual", dest="n_residual", type=int, choices=(0, 1, 2))
    e.add_argument("--seed", type=int)
    e.add_argument("--steps1", type=int)
    e.add_argument("--steps2", type=int)
    e.add_argument("--score-lr", dest="score_lr", type=float)
    e.add_argument("--score-optimizer", dest="score_optimizer", choices=("sgd", "adam"))
    e.add_argument("--optimizer", choices=("adam", "sgd"))
    e.add_argument("--eval-interval", dest="eval_interval", type=int)
    e.add_argument("--mode", choices=("full", "modnet_only", "dense_trained"))
    e.add_argument("--record", help="write the RD record as JSON here")
    e.add_argument("--recon", help="also write the reconstruction (PNG/PPM)")

    d = sub.add_parser("decode", help="reconstruct an image from a .ltry stream")
    d.add_argument("--in", dest="inp")
    d.add_argument("--out")
    d.add_argument("--sparse", action="store_true", help="skip masked multiplies")

    s = sub.add_parser("sweep", help="run a manifest of encodes")
    s.add_argument("--manifest")
    s.add_argument("--out-dir", dest="out_dir")
    s.add_argument("--jobs", type=int)

    b = sub.add_parser("bdrate", help="BD-rate of curve B against curve A")
    b.add_argument("--a", "--a.csv", dest="a")
    b.add_argument("--b", "--b.csv", dest="b")
    b.add_argument("--method", choices=("cubic", "pchip"))

    r = sub.add_parser("report", help="rate-share and BD-vs-MACs tables")
    r.add_argument("--csv")
    r.add_argument("--out-dir", dest="out_dir")
    return p


def _load_config(path) -> dict:
    if not path:
        return {}
    with open(path) as fh:
        text = fh.read()
    if path.endswith(".json"):
        data = json.loads(text)
    else:
        import yaml

        data = yaml.safe_load(text) or {}
    if not isinstance(data, dict):
        raise UsageError(f"config file {path} must contain a mapping")
    data = {k.replace("-", "_"): v for k, v in data.items()}
    if "lambda" in data:
        data["lam"] = data.pop("lambda")
    return data


def _merged(args, config: dict, defaults: dict, required=()) -> dict:
    allowed = set(vars(args)) - {"verb", "config"}
    unknown = sorted(set(config) - allowed)
    if unknown:
        raise UsageError(f"unknown config keys for {args.verb}: {', '.join(unknown)}")
    out = dict(defaults)
    out.update(config)
    out.update({k: v for k, v in vars(args).items() if v is not None and k not in ("verb", "config")})
    for k in required:
        if out.get(k) is None:
            raise UsageError(f"missing required option --{k.replace('_', '-')}")
    return out


def _set_threads(n):
    if n is None:
        env = os.environ.get(THREADS_ENV)
        n = int(env) if env else None
    if n is not None:
        if n < 1:
            raise UsageError("thread count must be positive")
        for var in _THREAD_VARS:
            os.environ[var] = str(n)


def cmd_encode(o) -> int:
    from .encoder import EncoderConfig, encode_image
    from .imageio import read_image, write_image

    keys = ("lam", "mask_ratio", "d", "c", "n_residual", "seed", "steps1", "steps2",
            "score_lr", "score_optimizer", "eval_interval", "optimizer")
    try:
        cfg = EncoderConfig(**{k: o[k] for k in keys})
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc
    img = read_image(o["image"])
    stream, record = encode_image(img, cfg, os.path.basename(o["image"]), o["mode"])
    with open(o["out"], "wb") as fh:
        fh.write(stream.to_bytes())
    if o.get("recon"):
        write_image(record.reconstruction, o["recon"])
    row = record.row()
    if o.get("record"):
        with open(o["record"], "w") as fh:
            json.dump(row, fh, indent=1)
    print(json.dumps(row))
    return EXIT_OK


def cmd_decode(o) -> int:
    from .decoder import decode_full
    from .imageio import write_image

    with open(o["inp"], "rb") as fh:
        data = fh.read()
    res = decode_full(data, sparse=o.get("sparse", False))
    write_image(res.pixels, o["out"])
    macs = res.macs.lower if o.get("sparse") else res.macs.upper
    print(json.dumps({"height": res.pixels.shape[1], "width": res.pixels.shape[2], "mode": res.mode,
                      "macs_per_pixel": macs, "macs_lower": res.macs.lower,
                      "macs_upper": res.macs.upper}))
    return EXIT_OK


def cmd_sweep(o) -> int:
    from .sweep import run_sweep

    res = run_sweep(o["manifest"], o["out_dir"], jobs=int(o.get("jobs") or 1))
    print(json.dumps({"rows": len(res.rows), "executed": len(res.executed),
                      "skipped": len(res.skipped), "failed": len(res.failures)}))
    return EXIT_SWEEP if res.failures else EXIT_OK


def _curves(rows):
    from .sweep import pareto_front

    by_image: dict = {}
    for r in rows:
        by_image.setdefault(r["image"], []).append((r["bpp_total"], r["psnr"]))
    return {k: pareto_front(v) for k, v in by_image.items()}


def cmd_bdrate(o) -> int:
    from .metrics import bd_rate
    from .sweep import read_csv

    ca, cb = _curves(read_csv(o["a"])), _curves(read_csv(o["b"]))
    common = sorted(set(ca) & set(cb))
    if not common:
        # Single-curve files from different images: compare them directly.
        if len(ca) == 1 and len(cb) == 1:
            common = [None]
        else:
            raise UsageError("the two CSVs share no image")
    per = {}
    for img in common:
        a = next(iter(ca.values())) if img is None else ca[img]
        b = next(iter(cb.values())) if img is None else cb[img]
        per[img or "curve"] = bd_rate(a, b, o.get("method") or "cubic")
    mean = sum(per.values()) / len(per)
    print(json.dumps({"bd_rate_percent": mean, "per_image": per}))
    return EXIT_OK


def cmd_report(o) -> int:
    import csv

    from .sweep import BD_MACS_FIELDS, RATE_SHARE_FIELDS, bd_vs_macs, rate_share, read_csv, write_csv

    rows = read_csv(o["csv"])
    for i, r in enumerate(rows):
        r.setdefault("job_id", str(i))
    shares = rate_share(rows)
    bd = bd_vs_macs(rows)
    if o.get("out_dir"):
        os.makedirs(o["out_dir"], exist_ok=True)
        write_csv(shares, os.path.join(o["out_dir"], "rate_share.csv"), RATE_SHARE_FIELDS)
        write_csv(bd, os.path.join(o["out_dir"], "bd_vs_macs.csv"), BD_MACS_FIELDS)
    else:
        for fields, table in ((RATE_SHARE_FIELDS, shares), (BD_MACS_FIELDS, bd)):
            w = csv.DictWriter(sys.stdout, fieldnames=list(fields), extrasaction="ignore")
            w.writeheader()
            w.writerows(table)
            sys.stdout.write("\n")
    return EXIT_OK


_REQUIRED = {
    "encode": ("image", "out"),
    "decode": ("inp", "out"),
    "sweep": ("manifest", "out_dir"),
    "bdrate": ("a", "b"),
    "report": ("csv",),
}
_DEFAULTS = {"encode": ENCODE_DEFAULTS, "sweep": {"jobs": 1}, "decode": {"sparse": False},
             "bdrate": {"method": "cubic"}, "report": {"out_dir": None}}
_COMMANDS = {"encode": cmd_encode, "decode": cmd_decode, "sweep": cmd_sweep,
             "bdrate": cmd_bdrate, "report": cmd_report}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        config = _load_config(args.config)
        _set_threads(args.threads)
        opts = _merged(args, config, _DEFAULTS[args.verb], _REQUIRED[args.verb])
    except UsageError as exc:
        print(f"ticketcodec: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    except (OSError, ValueError) as exc:
        print(f"ticketcodec: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    import logging

    logging.basicConfig(level=logging.INFO if opts.get("verbose") else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _COMMANDS[args.verb](opts)
    except UsageError as exc:
        print(f"ticketcodec: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # typed codec errors and I/O failures
        print(f"ticketcodec: {args.verb} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CODEC


if __name__ == "__main__":
    sys.exit(main())
