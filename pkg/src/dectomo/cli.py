"""Command-line experiment harness.

Five subcommands tie the pipeline together, each driven by a JSON config:

    dectomo simulate    --config cfg.json [--seed N] [--out DIR]
    dectomo fit-decomp  --config cfg.json ...
    dectomo train       --config cfg.json ...
    dectomo reconstruct --config cfg.json ...
    dectomo evaluate    --config cfg.json ...

Every stage reads its inputs through the manifest written by the previous
stages and appends entries for its own outputs, so reruns with the same
config and seed are byte-identical. Exit codes: 0 success, 2 config error,
3 missing upstream artifact, 4 numerical divergence.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import io
from .decomposition import PolynomialDecomposer, make_calibration_set
from .errors import ConfigError, DectomoError, DependencyError, DivergenceError
from .metrics import format_metrics_table, material_psnr
from .phantoms import Ellipse, make_phantom, phantom_family
from .projector import Geometry, forward_project
from .recon import ReconConfig, e2e_decomp, fbp_decomp
from .spectral import (
    EnergyGrid,
    load_table,
    make_builtin_basis,
    make_synthetic_spectrum,
    simulate,
)
from .training import TrainConfig, train

CONFIG_DEFAULTS = {
    "seed": 0,
    "i0": 1e5,
    "angles": [30, 60, 90, 180, 360, 512],
    "export_png": False,
}


def load_config(path, seed_override=None, out_override=None):
    """Load and validate the experiment config."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        cfg = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    merged = dict(CONFIG_DEFAULTS)
    merged.update(cfg)
    if seed_override is not None:
        merged["seed"] = seed_override
    if out_override is not None:
        merged["out_dir"] = out_override
    for key in ("out_dir", "geometry", "phantoms"):
        if key not in merged:
            raise ConfigError(f"config key '{key}' is required")
    if not merged["angles"]:
        raise ConfigError("angle list must be nonempty")
    geo = merged["geometry"]
    for key in ("width", "height", "pixel_size"):
        if key not in geo:
            raise ConfigError(f"geometry.{key} is required")
    return merged


def _build_grid(cfg):
    g = cfg.get("grid", {})
    return EnergyGrid(g.get("e_min", 20.0), g.get("e_max", 120.0), g.get("delta_e", 1.0))


def _build_spectrum(cfg, grid):
    s = cfg.get("spectrum", {})
    i0 = float(cfg["i0"])
    if s.get("path"):
        return load_table(s["path"], grid, "spectrum", i0=i0)
    kind = s.get("kind", "triangular-pair")
    kwargs = {}
    if "energies" in s:
        kwargs["energies"] = tuple(s["energies"])
    if "widths" in s:
        kwargs["widths"] = tuple(s["widths"])
    return make_synthetic_spectrum(kind, grid, i0=i0, **kwargs)


def _build_basis(cfg, grid):
    b = cfg.get("basis", {})
    if b.get("path"):
        return load_table(b["path"], grid, "basis")
    return make_builtin_basis(grid)


def _build_geometry(cfg, n_angles):
    g = cfg["geometry"]
    return Geometry.for_image(
        int(g["width"]),
        int(g["height"]),
        float(g["pixel_size"]),
        int(n_angles),
        detector_spacing=g.get("detector_spacing"),
        n_detectors=g.get("n_detectors"),
        ray_model=g.get("ray_model", "joseph"),
    )


def _phantom_sets(cfg):
    """Resolve the train/test phantom lists from the config."""
    p = cfg["phantoms"]
    geo = cfg["geometry"]
    width, height = int(geo["width"]), int(geo["height"])
    pixel_size = float(geo["pixel_size"])

    def explicit(key):
        specs = p.get(key)
        if specs is None:
            return None
        images = []
        for ellipse_list in specs:
            ellipses = [Ellipse(**e) for e in ellipse_list]
            images.append(make_phantom(ellipses, width, height, pixel_size))
        return images

    train_images = explicit("train")
    test_images = explicit("test")
    seed = p.get("seed", cfg["seed"])
    if train_images is None:
        train_images = phantom_family([seed, 1], p.get("n_train", 8), width, height, pixel_size)
    if test_images is None:
        test_images = phantom_family([seed, 2], p.get("n_test", 10), width, height, pixel_size)
    return train_images, test_images


def _train_angles(cfg):
    return int(cfg.get("train", {}).get("train_angles", 60))


def _sim_seed(root_seed, role, index, n_angles):
    return np.random.SeedSequence([int(root_seed), {"train": 1, "test": 2}[role], index, n_angles])


def _out_dir(cfg):
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _export_png(base_path, image):
    from PIL import Image as PILImage

    for c in range(2):
        channel = image.densities[c]
        peak = channel.max()
        scaled = np.zeros_like(channel) if peak <= 0 else channel / peak
        data = (np.clip(scaled, 0.0, 1.0) * 255.0).astype(np.uint8)
        PILImage.fromarray(data).save(f"{base_path}_m{c + 1}.png")


def cmd_simulate(cfg):
    out = _out_dir(cfg)
    grid = _build_grid(cfg)
    spectrum = _build_spectrum(cfg, grid)
    basis = _build_basis(cfg, grid)
    train_images, test_images = _phantom_sets(cfg)
    seed = int(cfg["seed"])

    def emit(images, role, angle_counts):
        for index, image in enumerate(images):
            truth_name = f"truth_{role}_{index:03d}"
            io.write_image(out / truth_name, image)
            io.append_manifest(
                out,
                {"kind": "truth", "role": role, "index": index, "path": truth_name,
                 "seed": seed, "i0": cfg["i0"]},
            )
            for n_angles in angle_counts:
                geometry = _build_geometry(cfg, n_angles)
                sino = simulate(
                    image, geometry, spectrum, basis, _sim_seed(seed, role, index, n_angles)
                )
                sino_name = f"sino_{role}_{index:03d}_a{n_angles:04d}"
                io.write_sinogram(out / sino_name, sino, geometry.detector_spacing)
                io.append_manifest(
                    out,
                    {"kind": "energy_sinogram", "role": role, "index": index,
                     "angles": n_angles, "path": sino_name, "seed": seed,
                     "i0": cfg["i0"], "n_clamped": sino.n_clamped},
                )

    emit(test_images, "test", [int(a) for a in cfg["angles"]])
    emit(train_images, "train", [_train_angles(cfg)] if train_images else [])
    print(f"simulate: wrote {len(test_images)} test and {len(train_images)} train phantoms to {out}")
    return 0


def _require(entries, what, **filters):
    entry = io.find_manifest_entry(entries, **filters)
    if entry is None:
        raise DependencyError(what)
    return entry


def _p_range(cfg, entries, out):
    """Material line-integral range covered by the calibration grid."""
    decomp_cfg = cfg.get("decomp", {})
    if "p_max" in decomp_cfg:
        p1, p2 = decomp_cfg["p_max"]
        return float(p1), float(p2)
    margin = float(decomp_cfg.get("p_margin", 1.1))
    probe = _build_geometry(cfg, 64)
    maxima = np.zeros(2)
    truths = [e for e in entries if e.get("kind") == "truth" and e.get("role") == "train"]
    if not truths:
        truths = [e for e in entries if e.get("kind") == "truth"]
    if not truths:
        raise DependencyError("truth images (run simulate first)")
    for entry in truths:
        image = io.read_image(out / entry["path"])
        for c in range(2):
            maxima[c] = max(maxima[c], forward_project(image.densities[c], probe).max())
    return float(maxima[0] * margin), float(maxima[1] * margin)


def cmd_fit_decomp(cfg):
    out = _out_dir(cfg)
    entries = io.read_manifest(out)
    grid = _build_grid(cfg)
    spectrum = _build_spectrum(cfg, grid)
    basis = _build_basis(cfg, grid)
    decomp_cfg = cfg.get("decomp", {})
    p1_max, p2_max = _p_range(cfg, entries, out)
    y, p, w = make_calibration_set(
        spectrum, basis, p1_max, p2_max, n_per_axis=int(decomp_cfg.get("n_calib", 24))
    )
    dec = PolynomialDecomposer(
        degree_i=int(decomp_cfg.get("degree_i", 3)),
        degree_j=int(decomp_cfg.get("degree_j", 3)),
    ).fit(y, p, sample_weight=w)
    io.write_decomposer(out / "decomposer", dec)
    io.append_manifest(
        out,
        {"kind": "decomposer", "path": "decomposer", "degree_i": dec.degree_i,
         "degree_j": dec.degree_j, "p_max": [p1_max, p2_max],
         "max_residual": float(dec.residuals_.max()), "seed": int(cfg["seed"])},
    )
    print(f"fit-decomp: degrees ({dec.degree_i},{dec.degree_j}), "
          f"p range ({p1_max:.1f}, {p2_max:.1f}), max residual {dec.residuals_.max():.3e}")
    return 0


def _recon_config(cfg):
    r = cfg.get("recon", {})
    lam = r.get("lam")
    return ReconConfig(
        lam=None if lam is None else float(lam),
        k_outer=int(r.get("k_outer", 3)),
        cg_max_iter=int(r.get("cg_max_iter", 20)),
        cg_rel_tol=float(r.get("cg_rel_tol", 1e-6)),
    )


def cmd_train(cfg):
    out = _out_dir(cfg)
    entries = io.read_manifest(out)
    dec_entry = _require(entries, "decomposer (run fit-decomp first)", kind="decomposer")
    decomposer = io.read_decomposer(out / dec_entry["path"])
    n_angles = _train_angles(cfg)
    geometry = _build_geometry(cfg, n_angles)

    dataset = []
    index = 0
    while True:
        sino_entry = io.find_manifest_entry(
            entries, kind="energy_sinogram", role="train", index=index, angles=n_angles
        )
        if sino_entry is None:
            break
        truth_entry = _require(
            entries, f"truth_train_{index:03d}", kind="truth", role="train", index=index
        )
        sino, _ = io.read_sinogram(out / sino_entry["path"])
        truth = io.read_image(out / truth_entry["path"])
        dataset.append((sino, truth))
        index += 1
    if not dataset:
        raise DependencyError(f"training sinograms at {n_angles} angles (run simulate first)")

    t = cfg.get("train", {})
    train_config = TrainConfig(
        epochs=int(t.get("epochs", 40)),
        batch_size=int(t.get("batch_size", 2)),
        learning_rate=float(t.get("learning_rate", 1e-3)),
        momentum=float(t.get("momentum", 0.9)),
        seed=int(t.get("seed", cfg["seed"])),
    )
    params, loss_log = train(dataset, decomposer, geometry, _recon_config(cfg), train_config)
    io.write_denoiser(out / "denoiser", params)
    io.write_loss_log(out / "loss_log.txt", loss_log)
    io.append_manifest(
        out,
        {"kind": "denoiser", "path": "denoiser", "loss_log": "loss_log.txt",
         "epochs": train_config.epochs, "final_loss": loss_log[-1][1],
         "initial_loss": loss_log[0][1], "seed": int(cfg["seed"])},
    )
    print(f"train: {len(dataset)} samples, {train_config.epochs} epochs, "
          f"loss {loss_log[0][1]:.4e} -> {loss_log[-1][1]:.4e}")
    return 0


def cmd_reconstruct(cfg):
    out = _out_dir(cfg)
    entries = io.read_manifest(out)
    dec_entry = _require(entries, "decomposer (run fit-decomp first)", kind="decomposer")
    decomposer = io.read_decomposer(out / dec_entry["path"])
    den_entry = _require(entries, "denoiser (run train first)", kind="denoiser")
    denoiser = io.read_denoiser(out / den_entry["path"])
    recon_config = _recon_config(cfg)
    fbp_filter = cfg.get("recon", {}).get("fbp_filter", "ram-lak")

    test_sinos = [
        e for e in entries if e.get("kind") == "energy_sinogram" and e.get("role") == "test"
    ]
    if not test_sinos:
        raise DependencyError("test sinograms (run simulate first)")
    n_written = 0
    for entry in sorted(test_sinos, key=lambda e: (e["index"], e["angles"])):
        geometry = _build_geometry(cfg, entry["angles"])
        sino, _ = io.read_sinogram(out / entry["path"])
        tag = f"{entry['index']:03d}_a{entry['angles']:04d}"

        image, reports = e2e_decomp(sino, decomposer, denoiser, recon_config, geometry)
        name = f"recon_e2e_{tag}"
        io.write_image(out / name, image)
        report_fields = {"method": "e2e", "sino_n_clamped": entry.get("n_clamped", 0)}
        for k, rep in enumerate(reports):
            report_fields[f"cg_iterations_{k}"] = " ".join(str(v) for v in rep.iterations)
            report_fields[f"cg_rel_residual_{k}"] = " ".join(
                f"{v:.6e}" for v in rep.relative_residuals
            )
            report_fields[f"nonneg_clamped_{k}"] = rep.n_clamped
        io.write_report(out / f"{name}.report", report_fields)
        io.append_manifest(
            out,
            {"kind": "reconstruction", "method": "e2e", "index": entry["index"],
             "angles": entry["angles"], "path": name, "seed": int(cfg["seed"])},
        )
        if cfg.get("export_png"):
            _export_png(out / name, image)
        n_written += 1

        image = fbp_decomp(sino, decomposer, geometry, fbp_filter)
        name = f"recon_fbp_{tag}"
        io.write_image(out / name, image)
        io.append_manifest(
            out,
            {"kind": "reconstruction", "method": "fbp", "index": entry["index"],
             "angles": entry["angles"], "path": name, "seed": int(cfg["seed"])},
        )
        if cfg.get("export_png"):
            _export_png(out / name, image)
        n_written += 1
    print(f"reconstruct: wrote {n_written} reconstructions")
    return 0


def cmd_evaluate(cfg):
    out = _out_dir(cfg)
    entries = io.read_manifest(out)
    recons = [e for e in entries if e.get("kind") == "reconstruction"]
    if not recons:
        raise DependencyError("reconstructions (run reconstruct first)")

    angle_counts = sorted({e["angles"] for e in recons})
    methods = sorted({e["method"] for e in recons})
    rows = []
    for n_angles in angle_counts:
        for method in methods:
            per_channel = ([], [])
            for entry in recons:
                if entry["angles"] != n_angles or entry["method"] != method:
                    continue
                truth_entry = _require(
                    entries, f"truth_test_{entry['index']:03d}",
                    kind="truth", role="test", index=entry["index"],
                )
                truth = io.read_image(out / truth_entry["path"])
                recon = io.read_image(out / entry["path"])
                p1, p2, _ = material_psnr(truth, recon)
                per_channel[0].append(p1)
                per_channel[1].append(p2)
            if not per_channel[0]:
                continue
            mean1 = float(np.mean(per_channel[0]))
            mean2 = float(np.mean(per_channel[1]))
            rows.append((n_angles, method, "1", mean1))
            rows.append((n_angles, method, "2", mean2))
            rows.append((n_angles, method, "mean", (mean1 + mean2) / 2.0))
    table = format_metrics_table(rows)
    (out / "metrics.txt").write_text(table, encoding="utf-8")
    io.append_manifest(out, {"kind": "metrics", "path": "metrics.txt", "seed": int(cfg["seed"])})
    print(table, end="")
    return 0


COMMANDS = {
    "simulate": cmd_simulate,
    "fit-decomp": cmd_fit_decomp,
    "train": cmd_train,
    "reconstruct": cmd_reconstruct,
    "evaluate": cmd_evaluate,
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="dectomo", description="Dual-energy CT material decomposition experiments"
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON experiment config")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--out", default=None, help="override config out_dir")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, seed_override=args.seed, out_override=args.out)
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DependencyError as exc:
        print(f"dependency error: {exc}", file=sys.stderr)
        return 3
    except DivergenceError as exc:
        print(f"numerical divergence: {exc}", file=sys.stderr)
        return 4
    except DectomoError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
