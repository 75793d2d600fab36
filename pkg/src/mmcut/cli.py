"""Command-line front end.

``mmcut run --manifest run.json`` segments one image and writes ``mask.png``,
``trace.csv``, ``overlay.png`` and ``report.json`` into the output directory.
``mmcut synth <case> --seed N --out DIR`` writes a synthetic benchmark with
a ready-to-run manifest.

Exit status of ``run``: 0 when the MM loop reached a stationary labeling, 2
when it stopped at the iteration limit, 1 on any error (one line on stderr).
"""

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .graphcut import write_dimacs
from .imaging import load_image, save_mask
from .segmenter import SegmenterConfig, segment
from .shape_prior import TemplateSet, load_template_manifest
from .synth import CASES, make_case, write_case

__all__ = ["main", "run", "load_run_manifest", "TRACE_COLUMNS"]

TRACE_COLUMNS = ("iteration", "total_energy", "surrogate_energy", "labels_changed")
EXIT_CONVERGED, EXIT_ERROR, EXIT_MAX_ITERS = 0, 1, 2
# beta used by synthetic single-template cases, where no bandwidth can be estimated
SYNTH_SINGLE_BETA = 1.0

log = logging.getLogger("mmcut")

_MANIFEST_KEYS = {"image_path", "templates", "output_dir", "rng_seed"}


def load_run_manifest(path):
    """Parse a run manifest.

    Required keys: ``image_path`` and ``templates`` (a template manifest);
    ``output_dir`` defaults to ``<manifest dir>/result``.  Every other key is
    a :class:`~mmcut.segmenter.SegmenterConfig` override.  Relative paths are
    resolved against the manifest's directory.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such manifest: {path}")
    with open(path) as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict):
        raise ValueError(f"{path}: manifest must be a JSON object")
    for key in ("image_path", "templates"):
        if not doc.get(key):
            raise ValueError(f"{path}: manifest needs a non-empty {key!r}")

    def resolve(p):
        p = Path(p)
        return p if p.is_absolute() else path.parent / p

    overrides = {k: v for k, v in doc.items() if k not in _MANIFEST_KEYS}
    return {
        "image_path": resolve(doc["image_path"]),
        "templates": resolve(doc["templates"]),
        "output_dir": resolve(doc.get("output_dir") or "result"),
        "config": SegmenterConfig.from_dict(overrides),
    }


def _overlay(image, mask):
    # grayscale image with the mask's inner contour burned in red
    gray = np.clip(np.rint(image * 255.0), 0, 255).astype(np.uint8)
    rgb = np.repeat(gray[..., None], 3, axis=2)
    contour = mask & ~ndimage.binary_erosion(mask, structure=np.ones((3, 3)), border_value=0)
    rgb[contour] = (255, 0, 0)
    return rgb


def _write_trace(path, trace, n_templates):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(TRACE_COLUMNS) + [f"c_{j + 1}" for j in range(n_templates)])
        for r in trace.records:
            writer.writerow(
                [r.iteration, repr(r.total_energy), repr(r.surrogate_energy), r.labels_changed]
                + [repr(float(c)) for c in r.weights]
            )


def run(manifest_path, verbose=False, dump_network=None):
    """Execute a run manifest; returns the exit status."""
    job = load_run_manifest(manifest_path)
    config = job["config"]
    image = load_image(job["image_path"])
    masks, weights, beta = load_template_manifest(job["templates"])
    if config.beta_override is not None:
        beta = config.beta_override
    tset = TemplateSet.from_masks(masks, weights, beta=beta, lam=config.lam, epsilon=config.epsilon_smooth)
    log.info("loaded %d templates, beta %.6g", len(tset), tset.beta)

    hook = None
    if dump_network is not None:
        dump_dir = Path(dump_network)
        dump_dir.mkdir(parents=True, exist_ok=True)

        def hook(iteration, network):
            write_dimacs(network, dump_dir / f"network_{iteration:03d}.dimacs")

    mask, trace = segment(image, tset, config, on_network=hook)

    out = job["output_dir"]
    out.mkdir(parents=True, exist_ok=True)
    save_mask(mask, out / "mask.png")
    Image.fromarray(_overlay(image, mask), mode="RGB").save(out / "overlay.png", format="PNG")
    _write_trace(out / "trace.csv", trace, len(tset))
    report = {
        "converged": trace.converged,
        "stop_reason": trace.stop_reason,
        "iterations": trace.iterations,
        "beta": tset.beta,
        "final_weights": [float(c) for c in trace.records[-1].weights],
        "final_transforms": [t.to_dict() for t in trace.final_transforms],
        "intensity_params": trace.params.to_dict(),
        "foreground_pixels": int(mask.sum()),
        "config": config.to_dict(),
    }
    with open(out / "report.json", "w") as fh:
        json.dump(report, fh, indent=2)
    log.info("%s after %d iterations -> %s", trace.stop_reason, trace.iterations, out)
    return EXIT_CONVERGED if trace.converged else EXIT_MAX_ITERS


def synth(case, seed, out, corruption=0.0, noise=0.0, size=128):
    synthetic = make_case(case, seed, size=size, corruption=corruption, noise=noise)
    beta = SYNTH_SINGLE_BETA if len(synthetic.templates) == 1 else None
    manifest = write_case(synthetic, out, beta=beta)
    log.info("wrote %s", manifest)
    return 0


def _u64(text):
    value = int(text, 0)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def _parser():
    parser = argparse.ArgumentParser(prog="mmcut", description="Shape-prior graph-cut segmentation.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="segment an image described by a JSON manifest")
    p_run.add_argument("--manifest", required=True, help="run manifest (JSON)")
    p_run.add_argument("--verbose", action="store_true", help="log progress to stderr")
    p_run.add_argument("--dump-network", metavar="DIR", help="write every flow network in DIMACS format")

    p_syn = sub.add_parser("synth", help="write a synthetic benchmark case")
    p_syn.add_argument("case", choices=CASES)
    p_syn.add_argument("--seed", type=_u64, required=True)
    p_syn.add_argument("--out", required=True)
    p_syn.add_argument("--corruption", type=float, default=0.0, help="fraction of object pixels set to background")
    p_syn.add_argument("--noise", type=float, default=0.0, help="std of additive Gaussian noise")
    p_syn.add_argument("--size", type=int, default=128)
    p_syn.add_argument("--verbose", action="store_true")
    return parser


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        if args.command == "run":
            return run(args.manifest, verbose=args.verbose, dump_network=args.dump_network)
        return synth(args.case, args.seed, args.out, args.corruption, args.noise, args.size)
    except Exception as exc:  # every failure becomes one diagnostic line
        msg = " ".join(str(exc).split()) or type(exc).__name__
        print(f"mmcut: error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
