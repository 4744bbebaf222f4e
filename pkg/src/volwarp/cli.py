"""Command-line surface: dataset generation, training, synthesis,
reconstruction, scripted manipulation, gradient checking, and serving.

Exit codes: 0 success, 2 bad arguments, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from .flows import RigidPose, compose_flows, load_script, relative_flow, rigid_flow, script_flow
from .net import Arch, TbnModel, decode_image, decode_occupancy, encode, load_model, save_model
from .recon import (
    extract_mesh,
    optimal_threshold_iou,
    reconstruct_with_recycling,
    save_iou_reports,
    save_obj,
)
from .scenes import load_dataset, make_dataset, save_dataset
from .train import TrainConfig, evaluate_l1, gradcheck_network, gradcheck_resampler, train
from .volume import NumericError, VolumeError, aggregate, resample, save_volume


def _write_png(path: Path, image: np.ndarray) -> None:
    data = np.clip(np.round(image * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(data).save(path, format="PNG")


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _scene_views(dataset_dir: str, scene_id: int):
    scenes = {s.scene_id: s for s in load_dataset(dataset_dir)}
    if scene_id not in scenes:
        raise VolumeError(f"scene {scene_id} not found in {dataset_dir}")
    return scenes[scene_id]


def _parse_indices(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v != ""]


def cmd_gen_data(args) -> int:
    cfg = _load_config(args.config)
    samples = make_dataset(
        seed=args.seed,
        n_scenes=cfg.get("scenes", args.scenes),
        n_views=cfg.get("views", args.views),
        pose_sampling=cfg.get("pose_sampling", args.pose_sampling),
        ring_step=cfg.get("ring_step", args.ring_step),
        grid=cfg.get("grid", args.grid),
        image_size=cfg.get("image_size", args.image_size),
        families=tuple(cfg.get("families", args.families.split(","))),
    )
    save_dataset(_out_dir(args), samples, test_fraction=cfg.get("test_fraction", args.test_fraction))
    print(f"wrote {len(samples)} scenes to {args.out}")
    return 0


def cmd_train(args) -> int:
    out = _out_dir(args)
    cfg_overrides = _load_config(args.config)
    cfg_overrides.setdefault("seed", args.seed)
    if args.steps is not None:
        cfg_overrides["steps"] = args.steps
    config = TrainConfig.from_dict({**TrainConfig().to_dict(), **cfg_overrides})
    scenes = [s for s in load_dataset(args.data) if s.split == "train"]
    heldout = [s for s in load_dataset(args.data) if s.split == "test"]
    model = TbnModel.init(Arch(image_size=scenes[0].views[0][1].shape[0],
                               bottleneck_side=scenes[0].views[0][1].shape[0] // 4), seed=config.seed)
    with open(out / "config.json", "w", encoding="utf-8") as f:
        json.dump(config.to_dict(), f, indent=2, sort_keys=True)
        f.write("\n")
    train(model, scenes, config, log_path=out / "loss_log.jsonl", heldout=heldout or None)
    save_model(out / "model.vbm", model)
    if heldout:
        score = evaluate_l1(model, heldout, n_inputs=min(4, config.max_inputs), max_targets=2)
        print(f"held-out L1: {score:.4f}")
    print(f"checkpoint: {out / 'model.vbm'}")
    return 0


def cmd_synth(args) -> int:
    out = _out_dir(args)
    model = load_model(args.checkpoint)
    scene = _scene_views(args.data, args.scene)
    idx = _parse_indices(args.inputs)
    inputs = [(scene.views[i][1][..., :3], scene.views[i][0]) for i in idx]
    if args.target_view is not None:
        target_pose = scene.views[args.target_view][0]
    else:
        target_pose = RigidPose(args.target_azimuth, args.target_elevation)
    from .net import synthesize

    image, volume = synthesize(model, inputs, target_pose)
    _write_png(out / "synth.png", image[..., :3])
    save_volume(out / "synth.vbv", volume)
    print(f"wrote {out / 'synth.png'}")
    return 0


def cmd_recon(args) -> int:
    out = _out_dir(args)
    model = load_model(args.checkpoint)
    scenes = [s for s in load_dataset(args.data) if s.split == args.split]
    if not scenes:
        raise VolumeError(f"no scenes in split {args.split!r}")
    preds, truths = [], []
    rng = np.random.default_rng(args.seed)
    for scene in scenes:
        pose, image, _ = scene.views[0]
        occ = reconstruct_with_recycling(model, image[..., :3], pose, args.extra, args.mode, rng=rng)
        preds.append(occ)
        truths.append(scene.occupancy > 0.5)
        if args.export_mesh:
            verts, faces = extract_mesh(occ, args.mesh_threshold)
            save_obj(out / f"scene_{scene.scene_id:05d}.obj", verts, faces)
    report = optimal_threshold_iou(preds, truths, views_added=args.extra, mode=args.mode)
    save_iou_reports(out / "iou.json", out / "iou.txt", [report])
    print(f"mean IoU ({args.mode}, +{args.extra} views): {report.mean_iou:.4f} @ tau={report.threshold:.3f}")
    return 0


def cmd_manip(args) -> int:
    out = _out_dir(args)
    model = load_model(args.checkpoint)
    scene = _scene_views(args.data, args.scene)
    idx = _parse_indices(args.inputs)
    dims = (model.arch.bottleneck_side,) * 3
    volumes = []
    for i in idx:
        pose, image, _ = scene.views[i]
        volumes.append(resample(encode(model, image[..., :3]), relative_flow(dims, pose, RigidPose())))
    base = aggregate(volumes)
    script = load_script(args.script) if args.script else []
    flow = script_flow(dims, script)
    view_flow = rigid_flow(dims, RigidPose(args.azimuth, args.elevation))
    total = view_flow if flow is None else compose_flows(flow, view_flow)
    image = decode_image(model, resample(base, total))
    _write_png(out / "manip.png", image[..., :3])
    if args.export_mesh:
        scripted = base if flow is None else resample(base, flow)
        verts, faces = extract_mesh(decode_occupancy(model, scripted), args.mesh_threshold)
        save_obj(out / "manip.obj", verts, faces)
    print(f"wrote {out / 'manip.png'}")
    return 0


def cmd_gradcheck(args) -> int:
    resampler_err = gradcheck_resampler(seed=args.seed)
    network_err = gradcheck_network(seed=args.seed)
    print(f"resampler max relative error: {resampler_err:.3e}")
    print(f"end-to-end max relative error: {network_err:.3e}")
    ok = resampler_err < 1e-5 and network_err < 1e-3
    print("gradcheck " + ("PASSED" if ok else "FAILED"))
    return 0 if ok else 3


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    app = create_app(args.models)
    uvicorn.run(app, host=args.host, port=args.port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="volwarp")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--config", type=str, default=None, help="JSON config file")
        p.add_argument("--out", type=str, default="out")

    g = sub.add_parser("gen-data", help="generate a synthetic multi-view dataset")
    common(g)
    g.add_argument("--scenes", type=int, default=40)
    g.add_argument("--views", type=int, default=8)
    g.add_argument("--pose-sampling", choices=["ring", "random"], default="ring")
    g.add_argument("--ring-step", type=float, default=None)
    g.add_argument("--grid", type=int, default=8)
    g.add_argument("--image-size", type=int, default=32)
    g.add_argument("--families", type=str, default="chairoid,box")
    g.add_argument("--test-fraction", type=float, default=0.2)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a model on a generated dataset")
    common(t)
    t.add_argument("--data", type=str, required=True)
    t.add_argument("--steps", type=int, default=None)
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("synth", help="novel view synthesis from a checkpoint")
    common(s)
    s.add_argument("--checkpoint", type=str, required=True)
    s.add_argument("--data", type=str, required=True)
    s.add_argument("--scene", type=int, default=0)
    s.add_argument("--inputs", type=str, default="0")
    s.add_argument("--target-view", type=int, default=None)
    s.add_argument("--target-azimuth", type=float, default=0.0)
    s.add_argument("--target-elevation", type=float, default=0.0)
    s.set_defaults(func=cmd_synth)

    r = sub.add_parser("recon", help="single-image reconstruction with view recycling")
    common(r)
    r.add_argument("--checkpoint", type=str, required=True)
    r.add_argument("--data", type=str, required=True)
    r.add_argument("--split", type=str, default="test")
    r.add_argument("--extra", type=int, default=4)
    r.add_argument("--mode", choices=["regular", "random"], default="regular")
    r.add_argument("--export-mesh", action="store_true")
    r.add_argument("--mesh-threshold", type=float, default=0.5)
    r.set_defaults(func=cmd_recon)

    m = sub.add_parser("manip", help="apply a manipulation script and decode")
    common(m)
    m.add_argument("--checkpoint", type=str, required=True)
    m.add_argument("--data", type=str, required=True)
    m.add_argument("--scene", type=int, default=0)
    m.add_argument("--inputs", type=str, default="0")
    m.add_argument("--script", type=str, default=None)
    m.add_argument("--azimuth", type=float, default=0.0)
    m.add_argument("--elevation", type=float, default=0.0)
    m.add_argument("--export-mesh", action="store_true")
    m.add_argument("--mesh-threshold", type=float, default=0.5)
    m.set_defaults(func=cmd_manip)

    c = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    common(c)
    c.set_defaults(func=cmd_gradcheck)

    v = sub.add_parser("serve", help="start the manipulation service")
    common(v)
    v.add_argument("--models", type=str, required=True, help="directory of .vbm checkpoints")
    v.add_argument("--host", type=str, default="127.0.0.1")
    v.add_argument("--port", type=int, default=8601)
    v.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except (VolumeError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
