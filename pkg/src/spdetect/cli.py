"""Batch front door: train, calibrate, detect, eval and info subcommands."""

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import boost, detect as detect_mod, evalkit, pauc as pauc_mod
from .errors import InvalidInput
from .imgcore import read_image, resample
from .pooling import CHANNEL_CONFIGS

IMAGE_EXTS = (".ppm", ".pgm", ".pnm", ".png")
_NEGCACHE_MAGIC = b"SPDETECT-NEGCACHE 1\n"


def _threads() -> int:
    return max(1, int(os.environ.get("SPDETECT_THREADS", "1")))


def save_feature_cache(feats: np.ndarray, path) -> None:
    feats = np.ascontiguousarray(feats, dtype=np.float32)
    with open(path, "wb") as fh:
        fh.write(_NEGCACHE_MAGIC)
        fh.write(f"shape {feats.shape[0]} {feats.shape[1]}\nend\n".encode("ascii"))
        fh.write(feats.tobytes())


def load_feature_cache(path) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(_NEGCACHE_MAGIC):
        raise InvalidInput(f"not a feature cache: {path}")
    head, _, rest = blob.partition(b"end\n")
    n, d = (int(v) for v in head.decode("ascii").splitlines()[1].split()[1:])
    return np.frombuffer(rest, dtype=np.float32, count=n * d).reshape(n, d).copy()


def _list_images(directory) -> list:
    paths = sorted(
        p for p in Path(directory).iterdir() if p.suffix.lower() in IMAGE_EXTS
    )
    return paths


def _load_images(paths, resize_to=None) -> list:
    images = []
    for p in paths:
        try:
            img = read_image(p)
        except (InvalidInput, OSError) as exc:
            print(f"warning: skipping {p}: {exc}", file=sys.stderr)
            continue
        if resize_to is not None and (img.width, img.height) != resize_to:
            img = resample(img, resize_to[0], resize_to[1])
        images.append(img)
    return images


def _parse_window(text: str) -> tuple[int, int]:
    try:
        w, h = (int(v) for v in text.lower().split("x"))
    except ValueError as exc:
        raise InvalidInput(f"window must look like 64x128, got {text!r}") from exc
    if w % 4 or h % 4 or w < 4 or h < 4:
        raise InvalidInput(f"window dims must be positive multiples of 4, got {text}")
    return w, h


def _config_echo(args, keys) -> list:
    return [f"# {k}={getattr(args, k)}" for k in keys if hasattr(args, k)]


def _read_config_file(path) -> dict:
    values = {}
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, val = line.partition("=")
        if not _:
            raise InvalidInput(f"config line must be key=value: {line!r}")
        values[key.strip().replace("-", "_")] = val.strip()
    return values


def _pyramid_spec(args) -> detect_mod.PyramidSpec:
    return detect_mod.PyramidSpec(
        scales_per_octave=args.scales_per_octave, max_upscale=args.max_upscale
    )


def cmd_train(args) -> int:
    win = _parse_window(args.window)
    pos_paths = _list_images(args.pos_dir)
    neg_paths = _list_images(args.neg_dir)
    pos = _load_images(pos_paths, resize_to=win)
    neg = _load_images(neg_paths)
    if not pos:
        print("error: no readable positive images", file=sys.stderr)
        return 2
    if not neg:
        print("error: no readable negative images", file=sys.stderr)
        return 2
    result = boost.bootstrap_train(
        pos,
        neg,
        config=args.channels,
        window_w=win[0],
        window_h=win[1],
        n_rounds=args.trees,
        nu=args.shrinkage,
        depth=args.depth,
        cascade_const=args.cascade,
        stages=args.stages,
        neg_cap_initial=args.neg_cap,
        neg_cap_stage=args.neg_cap,
        seed=args.seed,
        pyramid=_pyramid_spec(args),
        stride_cells=args.stride,
        progress=lambda msg: print(msg),
    )
    for rep in result.reports:
        print(
            f"stage {rep.stage}: {rep.n_pos} pos, {rep.n_neg} neg, "
            f"mined {rep.mined}, training loss {rep.final_loss:.6f}"
        )
    boost.save_model(result.model, args.out_model)
    cache = str(args.out_model) + ".negs"
    save_feature_cache(result.hard_negatives, cache)
    print(f"model written to {args.out_model}; negative cache to {cache}")
    return 0


def _ranking_lamr(pos_scores, neg_scores) -> float:
    """Reduce a score ranking to a detection problem and take its LAMR.

    Every positive becomes a one-GT frame with a perfectly localized
    detection at its score; every negative becomes an empty frame with one
    false positive at its score.
    """
    frames = []
    for s in pos_scores:
        frames.append(
            evalkit.FrameResult(
                np.array([float(s)]), [evalkit.TP], 1, [float(s)]
            )
        )
    for s in neg_scores:
        frames.append(
            evalkit.FrameResult(np.array([float(s)]), [evalkit.FP], 0, [])
        )
    return evalkit.lamr(evalkit.roc(frames)).value


def cmd_calibrate(args) -> int:
    model = boost.load_model(args.model)
    win = (model.window_w, model.window_h)
    pos_imgs = _load_images(_list_images(args.pos_dir), resize_to=win)
    if not pos_imgs:
        print("error: no readable positive images", file=sys.stderr)
        return 2
    cache_path = args.neg_cache or str(args.model) + ".negs"
    if not Path(cache_path).exists():
        print(
            f"error: no negative cache at {cache_path}; train first or pass --neg-cache",
            file=sys.stderr,
        )
        return 2
    neg_feats = load_feature_cache(cache_path)
    pos_feats = np.stack(
        [boost.window_features(img, model.config, model.pool) for img in pos_imgs]
    )
    pos_q = boost.quantize(model.quant, pos_feats)
    neg_q = boost.quantize(model.quant, neg_feats)
    pos_r = pauc_mod.weak_responses_matrix(model, pos_q).astype(np.float64)
    neg_r = pauc_mod.weak_responses_matrix(model, neg_q).astype(np.float64)

    if args.grid_C or args.grid_beta:
        grid_c = [float(v) for v in (args.grid_C or "0.25,1,4,16,64").split(",")]
        grid_b = [float(v) for v in (args.grid_beta or "0.1,0.3,0.5,0.7,1.0").split(",")]
        folds = args.folds

        def eval_fn(c, b, fold):
            val_p = pos_r[fold::folds]
            val_n = neg_r[fold::folds]
            trn_p = np.delete(pos_r, slice(fold, None, folds), axis=0)
            trn_n = np.delete(neg_r, slice(fold, None, folds), axis=0)
            if len(val_p) == 0 or len(val_n) == 0 or len(trn_p) == 0 or len(trn_n) == 0:
                return 1.0
            pm = pauc_mod.train_pauc_svm(trn_p, trn_n, alpha=args.alpha, beta=b, C=c)
            return _ranking_lamr(val_p @ pm.w, val_n @ pm.w)

        cv = pauc_mod.cross_validate(eval_fn, grid_c, grid_b, folds)
        if args.cv_csv:
            with open(args.cv_csv, "w", encoding="ascii") as fh:
                fh.write("C,beta,fold,lamr\n")
                for c, b, fold, v in cv.rows:
                    fh.write(f"{c!r},{b!r},{fold},{v!r}\n")
            print(f"cross-validation report written to {args.cv_csv}")
        best_c, best_b = cv.best_C, cv.best_beta
        print(f"cross-validation picked C={best_c} beta={best_b}")
    else:
        best_c, best_b = args.C, args.beta

    pm = pauc_mod.train_pauc_svm(pos_r, neg_r, alpha=args.alpha, beta=best_b, C=best_c)
    if not pm.converged:
        print("warning: cutting-plane solver hit the iteration cap", file=sys.stderr)
    model.pauc_w = pm.w
    model.pauc_meta = (pm.alpha, pm.beta, pm.C)
    boost.save_model(model, args.out_model)
    risk = pauc_mod.pauc_risk(pos_r @ pm.w, neg_r @ pm.w, 0.0, best_b)
    print(f"calibrated model written to {args.out_model} (training pauc risk {risk})")
    return 0


def cmd_detect(args) -> int:
    model = boost.load_model(args.model)
    pm = None
    if model.pauc_w is not None and not args.no_pauc:
        meta = getattr(model, "pauc_meta", None) or (0.0, 1.0, 16.0)
        pm = pauc_mod.PaucModel(
            w=model.pauc_w, alpha=meta[0], beta=meta[1], C=meta[2], eps_cp=1e-3
        )
    spec = _pyramid_spec(args)
    paths = _list_images(args.image_dir)
    lines = ["# spdetect detections 1"]
    lines += _config_echo(
        args, ["model", "scales_per_octave", "max_upscale", "stride", "threshold"]
    )
    n_dets = 0
    for p in paths:
        img = read_image(p)
        dets = detect_mod.detect(
            img,
            model,
            pauc=pm,
            spec=spec,
            stride_cells=args.stride,
            score_threshold=args.threshold,
            threads=_threads(),
        )
        for d in dets:
            lines.append(
                f"{p.stem} {d.x:.3f} {d.y:.3f} {d.w:.3f} {d.h:.3f} {d.score:.9g}"
            )
            n_dets += 1
    Path(args.out_file).write_text("\n".join(lines) + "\n", encoding="ascii")
    print(f"{n_dets} detections over {len(paths)} images -> {args.out_file}")
    return 0


def cmd_eval(args) -> int:
    det_rows: dict[str, list] = {}
    for line in Path(args.detections).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        image_id = parts[0]
        x, y, w, h, score = (float(v) for v in parts[1:6])
        det_rows.setdefault(image_id, []).append(
            detect_mod.Detection(x, y, w, h, score)
        )
    ann_dir = Path(args.annotations_dir)
    ann_files = {p.stem: p for p in sorted(ann_dir.glob("*.txt"))}
    missing = sorted(set(det_rows) - set(ann_files))
    if missing:
        print(f"error: no annotation for image {missing[0]}", file=sys.stderr)
        return 2
    frames = []
    for image_id, path in sorted(ann_files.items()):
        gts = evalkit.filter_reasonable(evalkit.parse_annotations(path.read_text()))
        frames.append(evalkit.match_frame(det_rows.get(image_id, []), gts))
    curve = evalkit.roc(frames)
    result = evalkit.lamr(curve)
    echo = "\n".join(_config_echo(args, ["detections", "annotations_dir"]))
    Path(args.out_roc).write_text(echo + "\n" + evalkit.roc_csv(curve), encoding="ascii")
    Path(args.out_report).write_text(
        echo + "\n" + evalkit.lamr_report(curve, result), encoding="ascii"
    )
    print(f"log-average miss rate: {result.value:.6f}")
    return 0


def cmd_info(args) -> int:
    model = boost.load_model(args.model)
    print(f"window: {model.window_w}x{model.window_h}")
    print(f"channels: {model.config}")
    print(f"trees: {model.n_trees} (depth {model.depth})")
    print(f"shrinkage: {model.nu}; cascade threshold: {model.cascade_const * model.nu}")
    print(f"features: {model.n_features}")
    print(f"seed: {model.seed}")
    print(f"pauc weights: {'yes' if model.pauc_w is not None else 'no'}")
    return 0


def _add_pyramid_flags(p):
    p.add_argument("--scales-per-octave", type=int, default=8)
    p.add_argument("--max-upscale", type=float, default=2.0)
    p.add_argument("--stride", type=int, default=1, help="window stride in channel cells")


def build_parser(file_defaults: dict | None = None) -> argparse.ArgumentParser:
    file_defaults = file_defaults or {}

    def apply_defaults(p):
        dests = {a.dest for a in p._actions}
        known = {k: v for k, v in file_defaults.items() if k in dests}
        if known:
            p.set_defaults(**known)

    parser = argparse.ArgumentParser(prog="spdetect")
    parser.add_argument("--config-file", help="key=value defaults, overridden by flags")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a boosted detector with bootstrapping")
    p.add_argument("pos_dir")
    p.add_argument("neg_dir")
    p.add_argument("out_model")
    p.add_argument("--channels", default="sp-Cov+sp-LBP+M+O+LUV", choices=CHANNEL_CONFIGS)
    p.add_argument("--window", default="64x128")
    p.add_argument("--trees", type=int, default=2048)
    p.add_argument("--shrinkage", type=float, default=0.1)
    p.add_argument("--depth", type=int, default=3)
    p.add_argument("--cascade", type=float, default=-10.0)
    p.add_argument("--stages", type=int, default=3)
    p.add_argument("--neg-cap", type=int, default=5000)
    p.add_argument("--seed", type=int, default=0)
    _add_pyramid_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("calibrate", help="train the pAUC score calibrator")
    p.add_argument("model")
    p.add_argument("pos_dir")
    p.add_argument("out_model")
    p.add_argument("--neg-cache")
    p.add_argument("--C", type=float, default=16.0)
    p.add_argument("--beta", type=float, default=0.7)
    p.add_argument("--alpha", type=float, default=0.0)
    p.add_argument("--grid-C", help="comma-separated C grid (enables cross-validation)")
    p.add_argument("--grid-beta", help="comma-separated beta grid")
    p.add_argument("--folds", type=int, default=3)
    p.add_argument("--cv-csv", help="write per-fold cross-validation rows here")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("detect", help="run the detector over a directory of images")
    p.add_argument("model")
    p.add_argument("image_dir")
    p.add_argument("out_file")
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--no-pauc", action="store_true", help="ignore embedded calibrator")
    _add_pyramid_flags(p)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("eval", help="score a detections file against annotations")
    p.add_argument("detections")
    p.add_argument("annotations_dir")
    p.add_argument("out_roc")
    p.add_argument("out_report")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("info", help="print a model summary")
    p.add_argument("model")
    p.set_defaults(func=cmd_info)

    for sp in sub.choices.values():
        apply_defaults(sp)
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    file_defaults = {}
    if "--config-file" in argv:
        path = argv[argv.index("--config-file") + 1]
        file_defaults = _read_config_file(path)
    parser = build_parser(file_defaults)
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InvalidInput as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
