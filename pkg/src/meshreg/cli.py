"""Command line interface: ``meshreg <subcommand> ...``.

Every registration-like subcommand prints (or writes with ``--output``) a
JSON report with the keys ``stage, params, transform, rmsd, hausdorff,
iterations, converged, timings_ms`` plus ``confidence`` for RANSAC.
Errors exit with the code assigned to their class in
:data:`meshreg.errors.EXIT_CODES`.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import time
import warnings
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import __version__
from .cuts import FACE_NAMES, extract_cut_set, largest_cut
from .errors import AmbiguousOrientation, InvalidParams, MeshIOError, MeshRegError, exit_code_for
from .features import min_bounding_box, min_enclosing_ellipsoid, prealign
from .icp import IcpParams, RegistrationResult, icp_register
from .kdtree import Metric
from .mesh import Mesh, RigidTransform, apply_transform, compute_vertex_normals, surface_area
from .meshio import FORMATS, load_mesh, save_mesh
from .metrics import DEFAULT_SAMPLE_CAP, hausdorff, rmsd
from .ransac import RansacParams, ransac_register
from .synth import KINDS, BoxParams, RingParams, synth_specimen

logger = logging.getLogger("meshreg")


class StageError(Exception):
    """Wraps a library error with the name of the pipeline stage."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}': {cause}")
        self.stage = stage
        self.cause = cause


@contextmanager
def _stage(name: str, timings: dict):
    t0 = time.perf_counter()
    try:
        yield
    except MeshRegError as exc:
        raise StageError(name, exc) from exc
    finally:
        timings[name] = round((time.perf_counter() - t0) * 1000.0, 3)


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _transform_dict(t: RigidTransform) -> dict:
    return {"rotation": t.rotation.ravel().tolist(), "translation": t.translation.tolist()}


def read_transform(path: str | os.PathLike) -> RigidTransform:
    """Read a transform file: a JSON list of 12 numbers, or a report object."""
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise MeshIOError(f"cannot read transform {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InvalidParams(f"transform file {path} is not JSON: {exc}") from exc
    if isinstance(data, dict):
        data = data.get("transform", data)
        if isinstance(data, dict):
            data = list(data["rotation"]) + list(data["translation"])
    return RigidTransform.from_list(data)


def write_transform(t: RigidTransform, path: str | os.PathLike) -> None:
    try:
        Path(path).write_text(json.dumps(t.to_list()) + "\n")
    except OSError as exc:
        raise MeshIOError(f"cannot write transform {path}: {exc}") from exc


def _emit(report: dict, args) -> None:
    if args.no_timings:
        report.pop("timings_ms", None)
    text = json.dumps(report, indent=2) + "\n"
    if args.output:
        try:
            Path(args.output).write_text(text)
        except OSError as exc:
            raise MeshIOError(f"cannot write report {args.output}: {exc}") from exc
    else:
        sys.stdout.write(text)


def _load(path: str, args) -> Mesh:
    return load_mesh(path, args.input_format)


def _ensure_normals(mesh: Mesh) -> Mesh:
    return mesh if mesh.has_normals else compute_vertex_normals(mesh)


def _report(stage: str, params: dict, result: RegistrationResult | None,
            transform: RigidTransform, timings: dict, **extra) -> dict:
    rep = {
        "stage": stage,
        "params": params,
        "transform": _transform_dict(transform),
        "rmsd": None if result is None else result.rmsd,
        "hausdorff": None if result is None else result.hausdorff,
    }
    if result is not None and result.confidence is not None:
        rep["confidence"] = result.confidence
    rep["iterations"] = None if result is None else result.iterations
    rep["converged"] = None if result is None else result.converged
    rep.update(extra)
    rep["timings_ms"] = timings
    return rep


def _icp_params(args) -> IcpParams:
    return IcpParams(max_iterations=args.max_iterations, rms_rel_tolerance=args.rms_rel_tolerance,
                     correspondence_cap=args.correspondence_cap, damping_init=args.damping_init,
                     damping_scale=args.damping_scale, seed=args.seed)


def _ransac_params(args, diagonal: float | None = None) -> RansacParams:
    return RansacParams(
        diagonal=diagonal,
        max_iterations=args.ransac_iterations, d_bin=args.d_bin,
        angle_bin=math.radians(args.angle_bin_deg), verify_samples=args.verify_samples,
        inlier_eps=args.inlier_eps, confidence_threshold=args.confidence_threshold,
        min_pair_distance=args.min_pair_distance, seed=args.seed,
        equalize=not args.no_equalize, exhaustive=args.exhaustive,
        verify_from=args.verify_from,
    )


def _params_dict(p) -> dict:
    return {k: v for k, v in p.__dict__.items()}


def _run_ransac(src: Mesh, dst: Mesh, args, timings: dict,
                diagonal: float | None = None) -> tuple[RegistrationResult, dict]:
    params = _ransac_params(args, diagonal)
    with _stage("ransac", timings):
        res = ransac_register(_ensure_normals(src), _ensure_normals(dst), params, metric=args.metric)
    info = {"params": _params_dict(params), "diagnostics": res.diagnostics}
    if args.refine:
        with _stage("refine", timings):
            ref = icp_register(src, dst, res.transform, _icp_params(args), metric=args.metric)
        res.diagnostics["refine_iterations"] = ref.iterations
        res = RegistrationResult(ref.transform, ref.rmsd, res.iterations, res.converged,
                                 confidence=res.confidence, trace=res.trace,
                                 diagnostics=res.diagnostics)
    return res, info


def _fill_metrics(res: RegistrationResult, src: Mesh, dst: Mesh, args, timings: dict) -> None:
    with _stage("metrics", timings):
        res.rmsd = rmsd(src, dst, res.transform, args.metric, args.sample_cap, seed=args.seed)
        res.hausdorff = hausdorff(apply_transform(src, res.transform), dst, args.metric,
                                  args.sample_cap, seed=args.seed)


def _features(mesh: Mesh, seed: int):
    rng = np.random.default_rng(seed)
    mee = min_enclosing_ellipsoid(mesh.vertices, rng=rng)
    mbb = min_bounding_box(mesh.vertices, rng=rng)
    return mee, mbb


def _pair(args) -> tuple[Mesh, Mesh]:
    src, dst = _load(args.source, args), _load(args.target, args)
    return (dst, src) if args.swap else (src, dst)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_features(args) -> int:
    timings: dict = {}
    mesh = _load(args.mesh, args)
    with _stage("features", timings):
        mee, mbb = _features(mesh, args.seed)
    _emit({
        "stage": "features",
        "params": {"seed": args.seed},
        "n_vertices": mesh.n_vertices, "n_triangles": mesh.n_triangles,
        "surface_area": surface_area(mesh),
        "mee": mee.to_dict(), "mbb": mbb.to_dict(),
        "timings_ms": timings,
    }, args)
    return 0


def cmd_prealign(args) -> int:
    timings: dict = {}
    src, dst = _pair(args)
    with _stage("features", timings):
        fs, fd = _features(src, args.seed), _features(dst, args.seed)
    with _stage("prealign", timings):
        t = prealign(fs[0], fs[1], fd[0], fd[1])
    if args.transform_out:
        write_transform(t, args.transform_out)
    _emit(_report("prealign", {"seed": args.seed, "swap": args.swap}, None, t, timings), args)
    return 0


def cmd_cut(args) -> int:
    timings: dict = {}
    mesh = _load(args.mesh, args)
    with _stage("features", timings):
        mbb = min_bounding_box(mesh.vertices, rng=np.random.default_rng(args.seed))
    with _stage("cut", timings):
        cs = extract_cut_set(mesh, mbb, args.shrink_factor)
    files = []
    if args.slab_dir:
        out = Path(args.slab_dir)
        out.mkdir(parents=True, exist_ok=True)
        fmt = args.format or "ply-binary-le"
        ext = ".obj" if fmt == "obj" else ".ply"
        for name, slab in zip(FACE_NAMES, cs.slabs):
            if slab.n_triangles == 0:
                continue
            path = out / f"slab_{'p' if name[0] == '+' else 'm'}{name[1].lower()}{ext}"
            save_mesh(slab, path, fmt)
            files.append(str(path))
    _emit({
        "stage": "cut",
        "params": {"shrink_factor": args.shrink_factor, "seed": args.seed},
        "faces": list(FACE_NAMES),
        "areas": list(cs.areas),
        "triangles": [s.n_triangles for s in cs.slabs],
        "largest_face": cs.largest_face,
        "largest_index": cs.largest_index,
        "files": files,
        "timings_ms": timings,
    }, args)
    return 0


def cmd_icp(args) -> int:
    timings: dict = {}
    src, dst = _pair(args)
    init = read_transform(args.init) if args.init else None
    params = _icp_params(args)
    with _stage("icp", timings):
        res = icp_register(src, dst, init, params, metric=args.metric)
    _fill_metrics(res, src, dst, args, timings)
    _emit(_report("icp", _params_dict(params), res, res.transform, timings,
                  trace=res.trace), args)
    return 0


def cmd_ransac(args) -> int:
    timings: dict = {}
    src, dst = _pair(args)
    res, info = _run_ransac(src, dst, args, timings)
    _fill_metrics(res, src, dst, args, timings)
    _emit(_report("ransac", info["params"], res, res.transform, timings,
                  tested_hypotheses=info["diagnostics"]["tested_hypotheses"],
                  successful_queries=info["diagnostics"]["successful_queries"],
                  refined=bool(args.refine)), args)
    return 0


def cmd_metrics(args) -> int:
    timings: dict = {}
    src, dst = _pair(args)
    t = read_transform(args.transform) if args.transform else RigidTransform.identity()
    res = RegistrationResult(t, 0.0, 0, True)
    _fill_metrics(res, src, dst, args, timings)
    _emit(_report("metrics", {"metric": args.metric, "sample_cap": args.sample_cap,
                              "seed": args.seed}, res, t, timings), args)
    return 0


def cmd_pipeline(args) -> int:
    timings: dict = {}
    src, dst = _pair(args)
    warnings: list[str] = []

    with _stage("features", timings):
        fs, fd = _features(src, args.seed), _features(dst, args.seed)
    if args.init:
        init = read_transform(args.init)
    else:
        try:
            with _stage("prealign", timings):
                init = prealign(fs[0], fs[1], fd[0], fd[1])
        except StageError as exc:
            if not (isinstance(exc.cause, AmbiguousOrientation) and args.method == "ransac"):
                raise
            msg = f"prealign ambiguous ({exc.cause}); continuing from the identity"
            logger.warning(msg)
            warnings.append(msg)
            init = RigidTransform.identity()

    # each mesh is cut in its own box; RANSAC tolerances scale with the full
    # target box because a cut slab alone can be nearly flat
    with _stage("cut", timings):
        cut_src = largest_cut(extract_cut_set(src, fs[1], args.shrink_factor))
        cut_dst = largest_cut(extract_cut_set(dst, fd[1], args.shrink_factor))

    extra = {"init": _transform_dict(init),
             "cut_vertices": [cut_src.n_vertices, cut_dst.n_vertices]}
    if args.method == "icp":
        params = _icp_params(args)
        with _stage("icp", timings):
            res = icp_register(cut_src, cut_dst, init, params, metric=args.metric)
        pdict = _params_dict(params)
    else:
        # RANSAC is global; it starts from the pre-aligned cut and the result
        # is composed with the pre-alignment
        res, info = _run_ransac(apply_transform(cut_src, init), cut_dst, args, timings,
                                fd[1].diagonal)
        res.transform = res.transform @ init
        pdict = info["params"]
        extra["tested_hypotheses"] = info["diagnostics"]["tested_hypotheses"]
        extra["successful_queries"] = info["diagnostics"]["successful_queries"]
    fine_rmsd = res.rmsd
    _fill_metrics(res, src, dst, args, timings)
    extra["cut_rmsd"] = fine_rmsd
    extra["warnings"] = warnings
    pdict = {"method": args.method, "shrink_factor": args.shrink_factor, **pdict}
    _emit(_report("pipeline", pdict, res, res.transform, timings, **extra), args)
    return 0


def cmd_synth(args) -> int:
    overrides = {"seed": args.seed}
    if args.kind == "box_with_hole":
        if args.density is not None:
            overrides["density"] = args.density
        mesh = synth_specimen(args.kind, BoxParams(), **overrides)
    else:
        for name in ("density", "pit_count", "arc_span_deg", "jitter", "sampling"):
            v = getattr(args, name)
            if v is not None:
                overrides[name] = v
        mesh = synth_specimen(args.kind, None, **overrides)
    save_mesh(mesh, args.out, args.format)
    logger.info("wrote %s (%d vertices)", args.out, mesh.n_vertices)
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _positive_float(s: str) -> float:
    v = float(s)
    if not v > 0:
        raise argparse.ArgumentTypeError("must be positive")
    return v


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("global options")
    g.add_argument("--seed", type=int, default=0, help="seed for every stochastic stage")
    g.add_argument("--format", choices=FORMATS, default=None,
                   help="format for written meshes (default: from extension)")
    g.add_argument("--input-format", choices=FORMATS, default=None,
                   help="force the input mesh format")
    g.add_argument("--output", "-o", default=None, help="write the JSON report here")
    g.add_argument("--metric", choices=["euclidean", "manhattan"], default="euclidean")
    g.add_argument("--shrink-factor", type=float, default=0.01,
                   help="box shrink fraction for cut planes (default 0.01)")
    g.add_argument("--swap", action="store_true", help="exchange source and target")
    g.add_argument("--refine", action="store_true", help="ICP refinement after RANSAC")
    g.add_argument("--exhaustive", action="store_true",
                   help="RANSAC runs all iterations instead of stopping at the threshold")
    g.add_argument("--no-timings", action="store_true", help="omit timings from reports")
    g.add_argument("--sample-cap", type=int, default=DEFAULT_SAMPLE_CAP,
                   help="vertex sample cap for metrics")
    g.add_argument("-v", "--verbose", action="count", default=0)
    return p


def _add_icp_flags(p: argparse.ArgumentParser) -> None:
    d = IcpParams()
    g = p.add_argument_group("ICP")
    g.add_argument("--max-iterations", type=int, default=d.max_iterations)
    g.add_argument("--rms-rel-tolerance", type=_positive_float, default=d.rms_rel_tolerance)
    g.add_argument("--correspondence-cap", type=int, default=d.correspondence_cap)
    g.add_argument("--damping-init", type=_positive_float, default=d.damping_init)
    g.add_argument("--damping-scale", type=_positive_float, default=d.damping_scale)


def _add_ransac_flags(p: argparse.ArgumentParser) -> None:
    d = RansacParams()
    g = p.add_argument_group("RANSAC")
    g.add_argument("--ransac-iterations", type=int, default=d.max_iterations)
    g.add_argument("--d-bin", type=_positive_float, default=None,
                   help="distance bin (default 1%% of target box diagonal)")
    g.add_argument("--angle-bin-deg", type=_positive_float, default=math.degrees(d.angle_bin))
    g.add_argument("--verify-samples", type=int, default=d.verify_samples)
    g.add_argument("--inlier-eps", type=_positive_float, default=None,
                   help="inlier radius (default 0.5%% of target box diagonal)")
    g.add_argument("--confidence-threshold", type=float, default=d.confidence_threshold)
    g.add_argument("--min-pair-distance", type=_positive_float, default=None,
                   help="pair distance floor (default 5%% of target box diagonal)")
    g.add_argument("--no-equalize", action="store_true",
                   help="sample pairs from all vertices of the denser mesh")
    g.add_argument("--verify-from", choices=["source", "target"], default=d.verify_from)


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="meshreg", description="Rigid registration of triangle meshes.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("features", parents=[common], help="ellipsoid and box features of a mesh")
    p.add_argument("mesh")
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("prealign", parents=[common], help="global-feature pre-alignment")
    p.add_argument("source")
    p.add_argument("target")
    p.add_argument("--transform-out", default=None, help="also write the 12-number transform file")
    p.set_defaults(func=cmd_prealign)

    p = sub.add_parser("cut", parents=[common], help="boundary slabs of the shrunk bounding box")
    p.add_argument("mesh")
    p.add_argument("--slab-dir", default=None, help="write non-empty slabs into this directory")
    p.set_defaults(func=cmd_cut)

    p = sub.add_parser("icp", parents=[common], help="ICP fine registration")
    p.add_argument("source")
    p.add_argument("target")
    p.add_argument("--init", default=None, help="initial transform file")
    _add_icp_flags(p)
    p.set_defaults(func=cmd_icp)

    p = sub.add_parser("ransac", parents=[common], help="point-pair RANSAC registration")
    p.add_argument("source")
    p.add_argument("target")
    _add_ransac_flags(p)
    _add_icp_flags(p)
    p.set_defaults(func=cmd_ransac)

    p = sub.add_parser("metrics", parents=[common], help="RMSD and Hausdorff distance")
    p.add_argument("source")
    p.add_argument("target")
    p.add_argument("--transform", default=None, help="transform applied to the source")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("pipeline", parents=[common], help="features, prealign, cut, registration, metrics")
    p.add_argument("source")
    p.add_argument("target")
    p.add_argument("--method", choices=["icp", "ransac"], default="ransac")
    p.add_argument("--init", default=None, help="use this transform instead of the pre-alignment")
    _add_ransac_flags(p)
    _add_icp_flags(p)
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic specimen mesh")
    p.add_argument("kind", choices=KINDS)
    p.add_argument("out")
    p.add_argument("--density", type=_positive_float, default=None)
    p.add_argument("--pit-count", type=int, default=None)
    p.add_argument("--arc-span-deg", type=_positive_float, default=None)
    p.add_argument("--jitter", type=float, default=None)
    p.add_argument("--sampling", choices=["irregular", "grid"], default=None)
    p.set_defaults(func=cmd_synth)
    return parser


def _apply_thread_cap() -> None:
    raw = os.environ.get("MESHREG_THREADS")
    if not raw:
        return
    try:
        n = int(raw)
    except ValueError:
        raise InvalidParams(f"MESHREG_THREADS must be an integer, got {raw!r}") from None
    if n <= 0:
        raise InvalidParams("MESHREG_THREADS must be positive")
    import numba
    with warnings.catch_warnings():
        # numba reports unusable optional threading layers while initialising
        warnings.simplefilter("ignore")
        numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s: %(message)s")
    args.metric = Metric.parse(args.metric)
    try:
        _apply_thread_cap()
        if not (0 <= args.shrink_factor < 0.5):
            raise InvalidParams("--shrink-factor must lie in [0, 0.5)")
        return args.func(args)
    except StageError as exc:
        print(f"meshreg: error in {exc}", file=sys.stderr)
        return exit_code_for(exc.cause)
    except (MeshRegError, OSError) as exc:
        print(f"meshreg: error: {exc}", file=sys.stderr)
        return exit_code_for(exc)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
