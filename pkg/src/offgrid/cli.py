"""Command line entry point ``offgrid``.

Subcommands: simulate, reconstruct, beamform, red, metrics, ablate. Exit codes:
0 success, 1 invalid input, 2 numerical failure, 64 usage error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np
from scipy.signal import hilbert

from . import plotting
from .beamform import (PixelGrid, beamform_image, compound_and_compress, detect_peaks,
                       iq_demodulate, log_compress, waveform_bandwidth)
from .config import RunConfig, load_config
from .container import load_rf, read_usrf, save_rf, write_usrf
from .core import ModelParams, NumericalError, RFDataCube, TransducerGeometry, ValidationError
from .forward import ABLATIONS, Features, ForwardModel
from .metrics import annulus_mask, disk_mask, gcnr, rf_mse
from .optimizer import AdamState, auto_a0, init_from_points, init_grid, sample_batch, solve
from .phantom import Cyst, SceneSpec, Wire, gen_phantom, make_scheme, simulate_rf, tgc_from_db
from .red import build_phi, red_compound, red_solve
from .render import default_radius, kde_image
from .reparam import GROUPS, FreeVariables, ReparamSpec, constrain

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL, EXIT_USAGE = 0, 1, 2, 64

log = logging.getLogger("offgrid")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# -- helpers ----------------------------------------------------------------


def _config(args) -> RunConfig:
    text = Path(args.config).read_text() if getattr(args, "config", None) else None
    return load_config(text, seed=getattr(args, "seed", None))


def _write_manifest(out: Path, cfg: RunConfig, extra: dict | None = None) -> None:
    text = cfg.to_ini()
    if extra:
        text += "\n[inputs]\n" + "".join(f"{k} = {v}\n" for k, v in extra.items())
    Path(str(out) + ".run.ini").write_text(text)


def _report(pairs: dict, path: Path | None = None) -> None:
    lines = "".join(f"{k}={v}\n" for k, v in pairs.items())
    sys.stdout.write(lines)
    if path is not None:
        Path(path).write_text(lines)


def _parse_groups(text: str, width: int):
    out = []
    for chunk in filter(None, (c.strip() for c in text.split(";"))):
        vals = [float(v) for v in chunk.replace(",", " ").split()]
        if len(vals) != width:
            raise ValidationError(f"expected {width} numbers in {chunk!r}")
        out.append(vals)
    return out


def _acquisition(cfg: RunConfig):
    a = cfg.acquisition
    geo = TransducerGeometry.linear(a.n_ch, a.pitch, a.element_width, a.center_frequency, a.sampling_frequency)
    elements = [int(e) for e in a.elements] or None
    angles = np.deg2rad(a.angles) if a.angles else None
    n_tx = len(angles) if (a.mode == "plane" and angles is not None) else a.n_tx
    if a.mode == "sa" and elements is not None:
        n_tx = len(elements)
    if a.mode == "group" and elements is None:
        raise ValidationError("group mode needs acquisition.elements")
    scheme = make_scheme(geo, a.mode, n_tx, a.n_ft, a.initial_time, elements, angles,
                         a.fractional_bandwidth, c=cfg.truth.c)
    return geo, scheme, tgc_from_db(a.tgc_db or (0.0,), a.n_ft)


def _grid(extent, dx, dz) -> PixelGrid:
    return PixelGrid.from_extent(tuple(extent), dx, dz)


def _save_image(png: Path, db, grid: PixelGrid, dr: float, meta: dict, figure: str | None, title: str):
    plotting.write_png(png, db, dr)
    meta = dict(meta, grid={"nx": grid.nx, "nz": grid.nz, "origin": list(grid.origin),
                            "spacing": list(grid.spacing)}, dynamic_range_db=dr)
    write_usrf(png.with_suffix(".image.usrf"), {"image": np.asarray(db, dtype=np.float32)}, meta, kind="image")
    if figure:
        plotting.bmode_figure(figure, db, grid, title, dr)


def _load_image(path):
    arrays, manifest = read_usrf(path)
    if manifest.get("kind") != "image":
        raise ValidationError(f"{path}: expected an image container")
    g = manifest["meta"]["grid"]
    return arrays["image"], PixelGrid(g["nx"], g["nz"], tuple(g["origin"]), tuple(g["spacing"])), manifest["meta"]


def save_solution(path, free: FreeVariables, spec_meta: dict, extra: dict | None = None) -> None:
    """Solution container; holds no timing so identical runs give identical bytes."""
    arrays = {f"xi_{k}": v for k, v in free.to_arrays().items()}
    write_usrf(path, arrays, dict(extra or {}, reparam=spec_meta), kind="solution")


def load_solution(path) -> tuple[FreeVariables, dict]:
    arrays, manifest = read_usrf(path)
    if manifest.get("kind") != "solution":
        raise ValidationError(f"{path}: expected a solution container")
    free = FreeVariables.from_arrays({k[3:]: v for k, v in arrays.items() if k.startswith("xi_")})
    return free, manifest["meta"]


def _save_checkpoint(path, it, state: AdamState, trace, held):
    arrays = {}
    for g in GROUPS:
        arrays[f"p_{g}"] = state.params.group(g)
        arrays[f"m_{g}"] = np.asarray(state.m[g], dtype=np.float64)
        arrays[f"v_{g}"] = np.asarray(state.v[g], dtype=np.float64)
    arrays["loss_trace"] = np.asarray(trace, dtype=np.float64)
    arrays["heldout_trace"] = np.asarray(held, dtype=np.float64).reshape(-1, 2)
    write_usrf(path, arrays, {"iteration": it, "t": state.t}, kind="checkpoint")


def _load_checkpoint(path, config, like: FreeVariables):
    arrays, manifest = read_usrf(path)
    if manifest.get("kind") != "checkpoint":
        raise ValidationError(f"{path}: expected a checkpoint container")
    params = FreeVariables.from_arrays({g: arrays[f"p_{g}"] for g in GROUPS})
    params.positions = params.positions.reshape(2, -1)
    m = {g: arrays[f"m_{g}"].reshape(np.shape(like.group(g))) for g in GROUPS}
    v = {g: arrays[f"v_{g}"].reshape(np.shape(like.group(g))) for g in GROUPS}
    state = AdamState(params, m, v, {g: int(t) for g, t in manifest["meta"]["t"].items()},
                      config.beta1, config.beta2, config.eps)
    return {"state": state, "iteration": manifest["meta"]["iteration"],
            "loss_trace": arrays["loss_trace"].tolist(), "heldout_trace": arrays["heldout_trace"].tolist()}


# -- subcommands ------------------------------------------------------------


def cmd_simulate(args) -> int:
    cfg = _config(args)
    geo, scheme, tgc = _acquisition(cfg)
    s = cfg.scene
    cysts = [Cyst(*v) for v in _parse_groups(s.cysts, 4)]
    wires = [Wire(*v) for v in _parse_groups(s.wires, 3)]
    spec = SceneSpec(tuple(s.extent), s.density, (s.amplitude_min, s.amplitude_max), cysts, wires)
    rng_scene, rng_gain, rng_noise = (np.random.default_rng(q) for q in np.random.SeedSequence(cfg.seed).spawn(3))
    field = gen_phantom(spec, rng_scene)
    t = cfg.truth
    gamma = rng_gain.uniform(t.gamma_min, t.gamma_max, geo.n_ch)
    params = ModelParams(t.c, t.mu, t.elw_fraction * geo.element_width, gamma, t.t0, t.lp_a, t.lp_b)
    sim = cfg.simulate
    noise_std = sim.noise_std
    if sim.noise_relative > 0:
        clean = simulate_rf(field, params, geo, scheme, 0.0, model_kind=sim.model_kind, tgc_curve=tgc)
        rms = float(np.sqrt(np.mean(clean.samples ** 2)))
        noise_std = sim.noise_relative * rms / float(np.sqrt(np.mean(tgc ** 2)))
    rf = simulate_rf(field, params, geo, scheme, noise_std, rng_noise, sim.model_kind, tgc)
    rf = RFDataCube(rf.samples.astype(np.float32), rf.tgc_curve)
    out = Path(args.out)
    save_rf(out, rf, geo, scheme, field, {"noise_std": noise_std, "truth_c": t.c, "seed": cfg.seed})
    _write_manifest(out, cfg)
    noise_floor = noise_std ** 2 * float(np.mean(tgc ** 2))
    _report({"n_scatterers": field.n_sc, "shape": "x".join(map(str, rf.shape)), "noise_std": repr(noise_std),
             "noise_floor": repr(noise_floor)})
    return EXIT_OK


def _initial(cfg: RunConfig, scfg, rf, geo, scheme):
    ini = cfg.init
    if ini.method == "grid":
        return None
    if ini.method != "das":
        raise ValidationError(f"unknown init method {ini.method!r}")
    if ini.count < 1:
        raise ValidationError("init.count must be at least 1 for das initialization")
    lam = geo.wavelength(ini.c)
    grid = _grid(scfg.extent, lam / 4, lam / 4)
    bw = waveform_bandwidth(scheme.waveforms[0], scheme.waveform_fs)
    iq = iq_demodulate(rf.samples / rf.tgc_curve[None, :, None], geo.center_frequency, geo.sampling_frequency,
                       bandwidth=bw, initial_time=scheme.initial_time)
    img = np.abs(beamform_image(iq, grid, geo, scheme, ini.c, "das", f_number=cfg.beamform.f_number).mean(axis=0))
    pts = detect_peaks(img, grid, ini.count, ini.min_distance)
    return init_from_points(pts, scfg, geo)


def _run_solve(cfg: RunConfig, scfg, rf, geo, scheme, checkpoint_path=None, resume_path=None, progress=None):
    init = _initial(cfg, scfg, rf, geo, scheme)
    if init is not None and scfg.a0 is None:
        model = ForwardModel(geo, scheme, rf.tgc_curve, scfg.model_kind, scfg.features)
        spec = scfg.reparam(geo)
        rng = np.random.default_rng(np.random.SeedSequence(scfg.seed).spawn(3)[2])
        probe = sample_batch(rng, *rf.shape, min(scfg.batch_size, int(np.prod(rf.shape))))
        a0 = auto_a0(model, init.positions, rf, spec, init, probe, scfg.a0_rms_ratio)
        init.amplitudes = np.full(init.amplitudes.size, np.log(a0))
    resume = None
    if resume_path:
        like = init if init is not None else init_grid(scfg, geo)
        resume = _load_checkpoint(resume_path, scfg, like)
    ckpt = None
    if checkpoint_path:
        def ckpt(it, state, trace, held):
            _save_checkpoint(checkpoint_path, it, state, trace, held)
    return solve(rf, geo, scheme, scfg, init=init, resume=resume, checkpoint=ckpt, progress=progress)


def cmd_reconstruct(args) -> int:
    cfg = _config(args)
    rf, geo, scheme, _, meta = load_rf(args.data)
    scfg = cfg.solver_config()
    out = Path(args.out)
    ckpt = Path(str(out) + ".ckpt") if scfg.checkpoint_every else None
    sol = _run_solve(cfg, scfg, rf, geo, scheme, ckpt, args.resume,
                     progress=lambda it, loss: log.info("iteration %d loss %.6g", it, loss))
    spec = scfg.reparam(geo)
    save_solution(out, sol.free, spec.to_dict(), {"model_kind": scfg.model_kind, "data": str(args.data)})
    _write_manifest(out, cfg, {"data": args.data})
    model = ForwardModel(geo, scheme, rf.tgc_curve, scfg.model_kind, scfg.features)
    pred = model.predict_cube(sol.field, sol.params)
    b = cfg.beamform
    grid = _grid(b.extent, b.dx, b.dz)
    r = cfg.render.r or default_radius(sol.params.speed_of_sound, geo.center_frequency)
    kde = kde_image(sol.field, grid, r, cfg.render.weight_by_amplitude)
    db = log_compress(kde, b.dynamic_range_db)
    image = Path(args.image) if args.image else out.with_suffix(".png")
    _save_image(image, db, grid, b.dynamic_range_db, {"source": "kde"}, args.figure, "reconstruction")
    plotting.loss_figure(out.with_suffix(".loss.png"), sol.loss_trace, sol.heldout_trace)
    pairs = {"c": repr(sol.params.speed_of_sound), "mu": repr(sol.params.attenuation_coeff),
             "element_width": repr(sol.params.element_width),
             "t0": repr(sol.params.initial_time_offset), "n_scatterers": sol.field.n_sc,
             "final_batch_loss": repr(float(sol.loss_trace[-1])) if sol.loss_trace.size else "nan",
             "heldout_loss": repr(float(sol.heldout_trace[-1, 1])) if sol.heldout_trace.size else "nan",
             "rf_mse": repr(rf_mse(rf, pred)), "wall_time_s": f"{sol.wall_time:.3f}"}
    _report(pairs, out.with_suffix(".report.txt"))
    return EXIT_OK


def cmd_beamform(args) -> int:
    cfg = _config(args)
    rf, geo, scheme, _, _ = load_rf(args.data)
    b = cfg.beamform
    c = args.c if args.c is not None else b.c
    grid = _grid(b.extent, b.dx, b.dz)
    bw = waveform_bandwidth(scheme.waveforms[0], scheme.waveform_fs)
    iq = iq_demodulate(rf, geo.center_frequency, geo.sampling_frequency, bandwidth=bw,
                       initial_time=scheme.initial_time)
    imgs = beamform_image(iq, grid, geo, scheme, c, args.method, b.f_number, b.window,
                          b.subaperture, b.diagonal_loading, b.lens_delay)
    db = compound_and_compress(imgs, b.dynamic_range_db, b.coherent)
    out = Path(args.out)
    _save_image(out, db, grid, b.dynamic_range_db, {"source": args.method, "c": c}, args.figure, args.method.upper())
    _write_manifest(out, cfg, {"data": args.data, "method": args.method})
    _report({"method": args.method, "c": repr(c), "nx": grid.nx, "nz": grid.nz})
    return EXIT_OK


def cmd_red(args) -> int:
    cfg = _config(args)
    rf, geo, scheme, _, _ = load_rf(args.data)
    r, b = cfg.red, cfg.beamform
    c = args.c if args.c is not None else b.c
    grid = _grid(b.extent, r.dx, r.dz)
    rcfg = r.red_config()
    data = np.asarray(rf.samples, float) / rf.tgc_curve[None, :, None]
    sols = []
    iters = []
    for tx in range(scheme.n_tx):
        phi = build_phi(grid, geo, scheme, c, tx=tx, lens_delay=b.lens_delay)
        res = red_solve(data[tx].ravel(), phi, rcfg, grid.shape, track_objective=False)
        sols.append(res.image.reshape(grid.shape))
        iters.append(res.iterations)
    x = red_compound(sols)
    db = log_compress(np.abs(hilbert(x, axis=0)), b.dynamic_range_db)
    out = Path(args.out)
    _save_image(out, db, grid, b.dynamic_range_db, {"source": "red", "c": c}, args.figure, "RED")
    _write_manifest(out, cfg, {"data": args.data})
    _report({"mu": repr(rcfg.mu), "beta": repr(rcfg.beta), "eps": repr(rcfg.eps), "h": repr(rcfg.h),
             "iterations": ",".join(map(str, iters))})
    return EXIT_OK


def _region(text: str, grid: PixelGrid):
    kind, _, rest = text.partition(":")
    vals = [float(v) for v in rest.replace(",", " ").split()]
    if kind == "disk" and len(vals) == 3:
        return disk_mask(grid, *vals)
    if kind == "annulus" and len(vals) == 4:
        return annulus_mask(grid, *vals)
    if kind == "rect" and len(vals) == 4:
        X, Z = np.meshgrid(grid.x, grid.z)
        x0, x1, z0, z1 = vals
        return (X >= x0) & (X <= x1) & (Z >= z0) & (Z <= z1)
    raise ValidationError(f"bad region {text!r}; use disk:x,z,r | annulus:x,z,r_in,r_out | rect:x0,x1,z0,z1")


def cmd_metrics(args) -> int:
    cfg = _config(args)
    pairs = {}
    if args.image:
        db, grid, meta = _load_image(args.image)
        if not args.regions:
            raise ValidationError("--regions needs two region specifications")
        ma, mb = (_region(t, grid) for t in args.regions)
        vals = db if cfg.metrics.log_domain else 10.0 ** (db / 20.0)
        if np.array_equal(ma, mb):
            if not ma.any():
                raise ValidationError("regions must be non-empty")
            pairs["gcnr"] = repr(0.0)
        else:
            pairs["gcnr"] = repr(gcnr(vals, ma, mb, cfg.metrics.bins))
        if args.figure:
            plotting.bmode_figure(args.figure, db, grid, "regions", meta.get("dynamic_range_db", 60.0), (ma, mb))
    if args.data and args.solution:
        rf, geo, scheme, _, _ = load_rf(args.data)
        free, smeta = load_solution(args.solution)
        spec = ReparamSpec(**smeta["reparam"])
        field, params = constrain(free, spec)
        model = ForwardModel(geo, scheme, rf.tgc_curve, smeta.get("model_kind", "full"))
        pairs["rf_mse"] = repr(rf_mse(rf, model.predict_cube(field, params)))
    if not pairs:
        raise ValidationError("nothing to measure: give --image/--regions or --data/--solution")
    _report(pairs, Path(args.out) if args.out else None)
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = _config(args)
    rf, geo, scheme, _, _ = load_rf(args.data)
    rows = []
    for label, feat in ABLATIONS:
        feats = Features() if feat is None else Features().without(feat)
        scfg = cfg.solver_config(features=feats)
        sol = _run_solve(cfg, scfg, rf, geo, scheme)
        model = ForwardModel(geo, scheme, rf.tgc_curve, scfg.model_kind, feats)
        rows.append((label, rf_mse(rf, model.predict_cube(sol.field, sol.params))))
        log.info("ablation %s: mse %.6g", label, rows[-1][1])
    out = Path(args.out)
    lines = ["feature\tmse\n"] + [f"{label}\t{mse!r}\n" for label, mse in rows]
    out.write_text("".join(lines))
    sys.stdout.write("".join(lines))
    plotting.ablation_figure(args.figure or out.with_suffix(".png"), rows)
    _write_manifest(out, cfg, {"data": args.data})
    return EXIT_OK


# -- entry point ------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="offgrid", description="Off-grid scatterer reconstruction from ultrasound RF data.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, data=True, seed=True):
        sp.add_argument("--config", help="INI configuration file")
        if data:
            sp.add_argument("--data", required=True, help="RF container (.usrf)")
        if seed:
            sp.add_argument("--seed", type=int, help="seed for every random stream")

    s = sub.add_parser("simulate", help="simulate RF data from a phantom")
    common(s, data=False)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("reconstruct", help="fit off-grid scatterers and physics parameters")
    common(s)
    s.add_argument("--out", default="solution.usrf")
    s.add_argument("--image", help="PNG path for the rendered image")
    s.add_argument("--figure", help="annotated figure path")
    s.add_argument("--resume", help="checkpoint to resume from")
    s.set_defaults(func=cmd_reconstruct)

    s = sub.add_parser("beamform", help="DAS, MV or DMAS image")
    common(s, seed=False)
    s.add_argument("--method", choices=("das", "mv", "dmas"), default="das")
    s.add_argument("--c", type=float, help="speed of sound (default from config)")
    s.add_argument("--out", required=True, help="PNG path")
    s.add_argument("--figure")
    s.set_defaults(func=cmd_beamform)

    s = sub.add_parser("red", help="regularized inverse beamforming image")
    common(s, seed=False)
    s.add_argument("--c", type=float)
    s.add_argument("--out", required=True, help="PNG path")
    s.add_argument("--figure")
    s.set_defaults(func=cmd_red)

    s = sub.add_parser("metrics", help="gCNR between regions and RF MSE of a solution")
    s.add_argument("--config")
    s.add_argument("--image", help="image container written next to a PNG")
    s.add_argument("--regions", nargs=2, metavar="REGION")
    s.add_argument("--data")
    s.add_argument("--solution")
    s.add_argument("--out", help="report file")
    s.add_argument("--figure")
    s.set_defaults(func=cmd_metrics)

    s = sub.add_parser("ablate", help="RF MSE with each model feature switched off")
    common(s)
    s.add_argument("--out", required=True, help="TSV table path")
    s.add_argument("--figure")
    s.set_defaults(func=cmd_ablate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except ValidationError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INVALID
    except NumericalError as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (OSError, KeyError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INVALID
