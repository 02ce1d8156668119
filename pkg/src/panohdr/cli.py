"""Command-line entry points wiring the pipeline end to end.

    panohdr gen             generate a dataset + manifest
    panohdr build-transport bake and cache the transport matrix
    panohdr train           train the autoencoder (checkpoint + CSV log)
    panohdr finetune        continue from a checkpoint at a lower rate
    panohdr train-da        adversarial domain adaptation
    panohdr infer           LDR panorama in, HDR PFM + sun elevation out
    panohdr eval            metric report over a split or two directories
    panohdr render          light-probe render of the transport scene
    panohdr match           illumination-based retrieval over a corpus
    panohdr gradcheck       finite-difference table for all autodiff ops

Exit codes: 0 ok, 1 usage, 2 data error, 3 numerical failure. Outputs are
written atomically (temp file + rename).
"""

import argparse
import os
import sys

import numpy as np

from . import config as cfgmod
from .config import UsageError
from .errors import DataError, DomainError, NumericalError, PanohdrError


def _common(parser):
    parser.add_argument("--config", help="key=value config file")
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config key (repeatable)")
    parser.add_argument("--seed", type=int, default=0, help="master RNG seed (default 0)")
    parser.add_argument("--threads", type=int, default=0, help="cap worker threads (0: leave as is)")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="panohdr",
        description="HDR outdoor lighting from single LDR panoramas",
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)
    epilog = cfgmod.schema_help()

    def cmd(name, help_text, **kw):
        p = sub.add_parser(
            name, help=help_text, epilog=epilog,
            formatter_class=argparse.RawDescriptionHelpFormatter, **kw,
        )
        _common(p)
        return p

    p = cmd("gen", "generate a synthetic dataset")
    p.add_argument("--out", required=True, help="output dataset directory")

    p = cmd("build-transport", "bake the transport matrix cache")
    p.add_argument("--out", required=True, help="output cache file")

    p = cmd("train", "train the model")
    p.add_argument("--data", required=True, help="dataset directory (with manifest.csv)")
    p.add_argument("--out", required=True, help="output directory (checkpoint + log)")
    p.add_argument("--transport", help="transport cache file (built if missing)")
    p.add_argument("--loss", choices=["all", "hdr", "hdr+theta", "hdr+render"], default="all",
                   help="loss combination (ablations)")

    p = cmd("finetune", "fine-tune from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--transport", help="transport cache file (built if missing)")

    p = cmd("train-da", "domain-adapted training with unlabelled real panoramas")
    p.add_argument("--data", required=True, help="labelled synthetic dataset directory")
    p.add_argument("--real", required=True, help="directory of unlabelled LDR panoramas (*.ppm)")
    p.add_argument("--out", required=True)
    p.add_argument("--transport", help="transport cache file (built if missing)")

    p = cmd("infer", "recover HDR from one LDR panorama")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--ldr", required=True, help="input PPM panorama")
    p.add_argument("--out", required=True, help="output PFM path")

    p = cmd("eval", "metric report for a model on a split, or two panorama directories")
    p.add_argument("--out", required=True, help="output directory for metric files")
    p.add_argument("--checkpoint")
    p.add_argument("--data", help="dataset directory (with --checkpoint)")
    p.add_argument("--pred-dir", help="directory of predicted PFMs (without --checkpoint)")
    p.add_argument("--truth-dir", help="directory of ground-truth PFMs")
    p.add_argument("--transport", help="transport cache file (built if missing)")
    p.add_argument("--temporal", action="store_true",
                   help="also run the day-sequence temporal coherence evaluation")

    p = cmd("render", "render the transport scene lit by a panorama")
    p.add_argument("--pano", required=True, help="HDR panorama (PFM)")
    p.add_argument("--out", required=True, help="output render (PFM)")
    p.add_argument("--transport", help="transport cache file (built if missing)")
    p.add_argument("--png", help="also export an 8-bit PNG preview")

    p = cmd("match", "retrieve corpus panoramas by illumination")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="corpus dataset directory")
    p.add_argument("--out", help="also write the ranking to this file")

    cmd("gradcheck", "finite-difference check of every autodiff op")
    return parser


def _limit_threads(n):
    if n and n > 0:
        os.environ["OMP_NUM_THREADS"] = str(n)
        try:
            import threadpoolctl

            threadpoolctl.threadpool_limits(limits=n)
        except ImportError:
            pass


def _transport_for(args, cfg):
    from . import transport

    scene = cfgmod.scene_spec(cfg)
    path = getattr(args, "transport", None)
    if path:
        return transport.build_or_load(path, scene, cfg["gen.height"], cfg["gen.width"])
    return transport.build_transport(scene, cfg["gen.height"], cfg["gen.width"])


def _load_splits(args, cfg, splits):
    from . import datagen, training

    manifest = os.path.join(args.data, "manifest.csv")
    if not os.path.exists(manifest):
        raise DataError(f"no manifest.csv under {args.data}")
    rows = datagen.read_manifest(manifest)
    mode = cfg["train.linearize"]
    return {
        s: training.load_split(args.data, rows, s, _tonemap(cfg), linearize_mode=mode)
        for s in splits
    }


def _tonemap(cfg):
    from .pano import TonemapParams

    return TonemapParams(alpha=cfg["tonemap.alpha"], gamma=cfg["tonemap.gamma"])


def _weights(cfg, loss_choice="all"):
    from .training import LossWeights

    lt = cfg["loss.lambda_theta"]
    lr = cfg["loss.lambda_render"]
    if loss_choice == "hdr":
        lt = lr = 0.0
    elif loss_choice == "hdr+theta":
        lr = 0.0
    elif loss_choice == "hdr+render":
        lt = 0.0
    return LossWeights(lambda_theta=lt, lambda_render=lr)


def cmd_gen(args, cfg):
    from . import datagen

    fr = (cfg["gen.frac_train"], cfg["gen.frac_val"], cfg["gen.frac_test"])
    manifest = datagen.build_dataset(
        args.out,
        n_scenes=cfg["gen.n_scenes"],
        samples_per_scene=cfg["gen.samples_per_scene"],
        fractions=fr,
        seed=args.seed,
        height=cfg["gen.height"],
        width=cfg["gen.width"],
        tone_augment=cfg["gen.tone_augment"],
    )
    rows = datagen.read_manifest(manifest)
    print(f"wrote {len(rows)} samples to {args.out}")
    print(f"manifest: {manifest}")
    return 0


def cmd_build_transport(args, cfg):
    from . import transport

    t = transport.build_or_load(args.out, cfgmod.scene_spec(cfg), cfg["gen.height"], cfg["gen.width"])
    print(f"transport {t.matrix.shape[0]}x{t.matrix.shape[1]} cached at {args.out}")
    return 0


def cmd_train(args, cfg):
    from . import net, training

    data = _load_splits(args, cfg, ("train", "val"))
    tmat = _transport_for(args, cfg)
    model = net.init_params(cfgmod.net_config(cfg), seed=args.seed)
    os.makedirs(args.out, exist_ok=True)
    res = training.train(
        model,
        data["train"],
        data["val"],
        tmat,
        cfgmod.train_config(cfg, args.seed),
        weights=_weights(cfg, args.loss),
        tonemap=_tonemap(cfg),
        log_path=os.path.join(args.out, "train_log.csv"),
    )
    ckpt = os.path.join(args.out, "model.ckpt")
    net.save_checkpoint(res.model, ckpt)
    print(f"best val loss {res.best_val_loss:.6f} at epoch {res.best_epoch}")
    print(f"checkpoint: {ckpt}")
    return 0


def cmd_finetune(args, cfg):
    from . import net, training

    model = net.load_checkpoint(args.checkpoint)
    data = _load_splits(args, cfg, ("train", "val"))
    tmat = _transport_for(args, cfg)
    os.makedirs(args.out, exist_ok=True)
    res = training.fine_tune(
        model,
        data["train"],
        data["val"],
        tmat,
        cfgmod.train_config(cfg, args.seed),
        weights=_weights(cfg),
        tonemap=_tonemap(cfg),
        log_path=os.path.join(args.out, "finetune_log.csv"),
        lr=cfg["train.fine_tune_lr"],
    )
    ckpt = os.path.join(args.out, "model.ckpt")
    net.save_checkpoint(res.model, ckpt)
    print(f"best val loss {res.best_val_loss:.6f} at epoch {res.best_epoch}")
    print(f"checkpoint: {ckpt}")
    return 0


def _load_real_dir(path, height, width):
    import glob

    from . import pano_io
    from .training import ArrayDataset

    files = sorted(glob.glob(os.path.join(path, "**", "*.ppm"), recursive=True))
    if not files:
        raise DataError(f"no .ppm panoramas under {path}")
    x = np.empty((len(files), 3, height, width), dtype=np.float32)
    for i, f in enumerate(files):
        ldr = pano_io.read_ppm(f)
        if ldr.data.shape[:2] != (height, width):
            raise DataError(f"{f}: expected {height}x{width} panorama")
        x[i] = (ldr.data / 255.0).transpose(2, 0, 1)
    dummy_t = np.zeros((len(files), 3, height, width), dtype=np.float32)
    dummy_th = np.zeros((len(files), 1), dtype=np.float32)
    return ArrayDataset(x, dummy_t, dummy_th, np.full(len(files), -1), files)


def cmd_train_da(args, cfg):
    from . import net, training

    data = _load_splits(args, cfg, ("train", "val"))
    real = _load_real_dir(args.real, cfg["gen.height"], cfg["gen.width"])
    tmat = _transport_for(args, cfg)
    model = net.init_params(cfgmod.net_config(cfg, with_discriminator=True), seed=args.seed)
    os.makedirs(args.out, exist_ok=True)
    res = training.train_domain_adapted(
        model,
        data["train"],
        data["val"],
        real,
        tmat,
        cfgmod.train_config(cfg, args.seed),
        weights=_weights(cfg),
        tonemap=_tonemap(cfg),
        log_path=os.path.join(args.out, "train_da_log.csv"),
    )
    ckpt = os.path.join(args.out, "model.ckpt")
    net.save_checkpoint(res.model, ckpt)
    print(f"best val loss {res.best_val_loss:.6f} at epoch {res.best_epoch}")
    print(f"checkpoint: {ckpt}")
    return 0


def cmd_infer(args, cfg):
    from . import evalmetrics, net, pano_io, sundet

    model = net.load_checkpoint(args.checkpoint)
    ldr = pano_io.read_ppm(args.ldr)
    if cfg["infer.align"]:
        ldr, _ = sundet.align_sun_center(ldr)
    hdr, theta, _ = evalmetrics.predict(model, ldr, cfg["train.linearize"], tonemap=_tonemap(cfg))
    pano_io.write_pfm(args.out, hdr)
    print(f"sun_elevation_rad {theta:.6f}")
    print(f"hdr: {args.out}")
    return 0


def _eval_from_dirs(pred_dir, truth_dir, tmat, tonemap):
    import glob

    from . import evalmetrics, pano, pano_io

    preds = sorted(glob.glob(os.path.join(pred_dir, "**", "*.pfm"), recursive=True))
    if not preds:
        raise DataError(f"no .pfm files under {pred_dir}")
    names, p_list, t_list = [], [], []
    for p in preds:
        rel = os.path.relpath(p, pred_dir)
        q = os.path.join(truth_dir, rel)
        if not os.path.exists(q):
            raise DataError(f"missing truth panorama for {rel}")
        p_list.append(pano.tonemap(pano_io.read_pfm(p).data, tonemap).transpose(2, 0, 1))
        t_list.append(pano.tonemap(pano_io.read_pfm(q).data, tonemap).transpose(2, 0, 1))
        names.append(rel)
    zeros = np.zeros(len(names))
    sm = evalmetrics.batch_metrics(np.stack(p_list), np.stack(t_list), zeros, zeros, tmat)
    return evalmetrics.MetricReport(sm, names)


def _eval_model_on_split(args, cfg, tmat):
    from . import evalmetrics, net

    model = net.load_checkpoint(args.checkpoint)
    data = _load_splits(args, cfg, (cfg["eval.split"],))[cfg["eval.split"]]
    from .autodiff import Tensor
    from . import net as netmod

    preds, thetas = [], []
    bs = 32
    for start in range(0, len(data), bs):
        y_hdr, y_theta = netmod.forward(model, Tensor(data.x[start : start + bs]), training=False)
        preds.append(y_hdr.data)
        thetas.append(y_theta.data[:, 0])
    pred = np.concatenate(preds)
    theta = np.concatenate(thetas)
    sm = evalmetrics.batch_metrics(pred, data.t_hdr_tm, theta, data.t_theta[:, 0], tmat)
    return evalmetrics.MetricReport(sm, data.ids)


def cmd_eval(args, cfg):
    from . import evalmetrics
    from .pano_io import atomic_write

    tmat = _transport_for(args, cfg)
    tonemap = _tonemap(cfg)
    os.makedirs(args.out, exist_ok=True)
    if args.checkpoint:
        if not args.data:
            raise UsageError("eval with --checkpoint needs --data")
        report = _eval_model_on_split(args, cfg, tmat)
    elif args.pred_dir and args.truth_dir:
        report = _eval_from_dirs(args.pred_dir, args.truth_dir, tmat, tonemap)
    else:
        raise UsageError("eval needs either --checkpoint + --data or --pred-dir + --truth-dir")
    atomic_write(os.path.join(args.out, "metrics.csv"), report.csv_text().encode())
    atomic_write(os.path.join(args.out, "report.json"), report.json_text().encode())
    print(report.text())
    if args.temporal:
        if not args.checkpoint:
            raise UsageError("--temporal needs --checkpoint")
        from . import datagen, net

        model = net.load_checkpoint(args.checkpoint)
        frames = datagen.gen_day_sequence(
            seed=args.seed, n_frames=cfg["gen.day_frames"],
            height=cfg["gen.height"], width=cfg["gen.width"],
        )
        rows, rho = evalmetrics.temporal_eval(
            lambda ldr: evalmetrics.predict(model, ldr, cfg["train.linearize"], tonemap=tonemap)[2],
            frames,
            tonemap,
        )
        atomic_write(os.path.join(args.out, "temporal.csv"), evalmetrics.temporal_csv(rows, rho).encode())
        print(f"temporal spearman: {'n/a' if rho is None else f'{rho:.4f}'}")
    return 0


def cmd_render(args, cfg):
    from . import pano_io, transport
    from .pano import HdrPanorama

    tmat = _transport_for(args, cfg)
    p = pano_io.read_pfm(args.pano)
    sky = p.data[: p.height // 2]
    img = transport.render(tmat, sky)
    side = tmat.render_size
    out = np.asarray(img, dtype=np.float64).reshape(side, side, -1)
    if out.shape[2] == 1:
        out = np.repeat(out, 3, axis=2)
    pano_io.atomic_write(args.out, pano_io.pfm_bytes(np.maximum(out, 0.0)))
    if args.png:
        from . import pano as panomod

        codes = panomod.quantize_codes(np.power(np.clip(out, 0, None), 1 / 2.2))
        pano_io.write_png(args.png, codes)
    print(f"render: {args.out}")
    return 0


def cmd_match(args, cfg):
    from . import datagen, evalmetrics, net, pano_io

    model = net.load_checkpoint(args.checkpoint)
    manifest = os.path.join(args.data, "manifest.csv")
    if not os.path.exists(manifest):
        raise DataError(f"no manifest.csv under {args.data}")
    rows = datagen.read_manifest(manifest)
    items = []
    for r in rows:
        ldr = pano_io.read_ppm(os.path.join(args.data, r.ldr_path))
        _, theta, tm = evalmetrics.predict(model, ldr, cfg["train.linearize"], tonemap=_tonemap(cfg))
        items.append((r.sample_id, float(tm.max()), theta))
    ranked = evalmetrics.match(items, cfg["match.intensity"], cfg["match.elevation_deg"], cfg["match.k"])
    lines = [f"{sid} {dist:.6f}" for sid, dist in ranked]
    print("\n".join(lines))
    if args.out:
        from .pano_io import atomic_write

        atomic_write(args.out, ("\n".join(lines) + "\n").encode())
    return 0


def cmd_gradcheck(args, cfg):
    from .gradcheck import format_table, run_gradcheck

    rows = run_gradcheck(seed=args.seed)
    print(format_table(rows))
    if not all(r[3] for r in rows):
        raise NumericalError("gradient check failed")
    return 0


COMMANDS = {
    "gen": cmd_gen,
    "build-transport": cmd_build_transport,
    "train": cmd_train,
    "finetune": cmd_finetune,
    "train-da": cmd_train_da,
    "infer": cmd_infer,
    "eval": cmd_eval,
    "render": cmd_render,
    "match": cmd_match,
    "gradcheck": cmd_gradcheck,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # argparse exits 2 on usage problems; our contract is 1 (0 for --help)
        return 0 if e.code == 0 else 1
    try:
        _limit_threads(args.threads)
        cfg = cfgmod.gather(args.config, args.overrides)
        return COMMANDS[args.command](args, cfg)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except (DataError, DomainError, OSError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return 2
    except (NumericalError,) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 3
    except PanohdrError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
