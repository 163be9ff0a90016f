"""Command-line front end.

Every command is deterministic given its flags and --seed: no wall-clock or
OS entropy is consumed anywhere. Reports are stable key=value or CSV text.
Exit codes: 0 success, 2 domain/config error, 3 I/O error.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import random
import sys
from pathlib import Path

from . import compressor, costmodel, dropout, io, niah, sampler
from .errors import DomainError

ENV_CONFIG = "HICO_CONFIG"


def _load_config(args) -> io.ToolConfig:
    path = getattr(args, "config", None) or os.environ.get(ENV_CONFIG)
    if path:
        return io.load_config(path)
    return io.ToolConfig({})


def _pick(flag, cfg: io.ToolConfig, key: str, default, getter: str):
    if flag is not None:
        return flag
    return getattr(cfg, getter)(key, default)


# ---------------------------------------------------------------------------
# sample


def cmd_sample(args, cfg: io.ToolConfig) -> int:
    policy = sampler.SamplingPolicy(
        t_min=_pick(args.tmin, cfg, "sampler.t_min", 64, "get_int"),
        t_max=_pick(args.tmax, cfg, "sampler.t_max", 512, "get_int"),
    )
    fps = _pick(args.fps, cfg, "sampler.fps", 1.0, "get_float")
    total_frames = max(1, math.floor(args.duration * fps + 0.5))
    meta = sampler.VideoMeta(duration=args.duration, fps=fps, total_frames=total_frames)
    plan = sampler.build_plan(meta, policy)
    print(f"frame_count={plan.frame_count}")
    print(f"density={plan.density:.6f}")
    print("indices=" + ",".join(str(i) for i in plan.indices))
    print("timestamps=" + ",".join(f"{t:.3f}" for t in plan.timestamps))
    print("prompt=" + sampler.timestamp_prompt(args.duration, plan.frame_count))
    return 0


# ---------------------------------------------------------------------------
# compress


def _connector_config(args, cfg: io.ToolConfig) -> compressor.ConnectorConfig:
    st_temp = args.st_temperature
    if st_temp is None:
        st_temp = cfg.get_float("connector.st_temperature")
    return compressor.ConnectorConfig(
        kind=_pick(args.connector, cfg, "connector.kind", "merge", "get_str"),
        budget=_pick(args.budget, cfg, "connector.budget", 64, "get_int"),
        clip_len=_pick(args.clip_len, cfg, "connector.clip_len", 4, "get_int"),
        st_temperature=st_temp,
        factor=_pick(args.factor, cfg, "connector.factor", 2, "get_int"),
        f_first=_pick(args.f_first, cfg, "connector.f_first", 2, "get_int"),
        f_rest=_pick(args.f_rest, cfg, "connector.f_rest", 4, "get_int"),
        queries=_pick(args.queries, cfg, "connector.queries", 64, "get_int"),
        query_seed=_pick(args.seed, cfg, "seed", 0, "get_int"),
        weights_path=_pick(args.weights, cfg, "connector.weights_path", None, "get_str"),
        temperature=_pick(args.temperature, cfg, "connector.temperature", 1.0, "get_float"),
    )


def cmd_compress(args, cfg: io.ToolConfig) -> int:
    config = _connector_config(args, cfg)
    grid = io.read_embeddings(args.infile)
    context = compressor.compress_video(grid, config)
    out_grid = compressor.TokenGrid(
        context.vectors().reshape(1, 1, len(context.tokens), context.dim)
    )
    io.write_embeddings(out_grid, args.out)
    n_in = grid.token_count
    n_out = len(context.tokens)
    print(f"connector={config.kind}")
    print(f"clips={len(context.clip_offsets)}")
    print(f"input_tokens={n_in}")
    print(f"output_tokens={n_out}")
    print(f"ratio_pct={100.0 * n_out / n_in:.2f}")
    if config.kind == "resampler":
        print("conservation_residual=n/a")
    else:
        print(f"conservation_residual={compressor.conservation_residual(grid, context):.3e}")
    print("clip_offsets=" + ",".join(str(o) for o in context.clip_offsets))
    return 0


# ---------------------------------------------------------------------------
# estimate


def _model_shape(args, cfg: io.ToolConfig) -> costmodel.ModelShape:
    name = _pick(args.shape, cfg, "costmodel.shape", "7b", "get_str")
    overrides = {}
    nonembed = cfg.get_float("costmodel.nonembed_params")
    if nonembed is not None:
        overrides["nonembed_params"] = int(nonembed)
    bpp = cfg.get_int("costmodel.bytes_per_param")
    if bpp is not None:
        overrides["bytes_per_param"] = bpp
    return costmodel.preset(name, **overrides)


def cmd_estimate(args, cfg: io.ToolConfig) -> int:
    shape = _model_shape(args, cfg)
    tokens_per_frame = _pick(
        args.tokens_per_frame, cfg, "costmodel.tokens_per_frame", 16, "get_int"
    )
    tokens = costmodel.tokens_for_video(args.frames, tokens_per_frame)
    cache_bytes = _pick(
        args.cache_bytes, cfg, "costmodel.cache_bytes_per_value", 2, "get_int"
    )
    overhead = _pick(
        args.overhead_bytes, cfg, "costmodel.overhead_bytes", 2 * costmodel.GIB, "get_int"
    )
    report = costmodel.memory_estimate(tokens, shape, cache_bytes, overhead)
    print(f"shape={_pick(args.shape, cfg, 'costmodel.shape', '7b', 'get_str')}")
    print(f"frames={args.frames}")
    print(f"tokens_per_frame={tokens_per_frame}")
    print(f"tokens={tokens}")
    print(f"flops={report.flops:.6e}")
    print(f"tflops={report.flops / 1e12:.2f}")
    print(f"weight_bytes={report.weight_bytes}")
    print(f"kv_cache_bytes={report.kv_cache_bytes}")
    print(f"overhead_bytes={report.overhead_bytes}")
    print(f"total_infer_bytes={report.total_infer_bytes}")
    print(f"total_infer_gb={report.total_infer_bytes / 1e9:.2f}")
    schedule_text = args.schedule or cfg.get_str("dropout.schedule")
    if schedule_text:
        schedule = dropout.DropSchedule.parse(schedule_text)
        text_tokens = _pick(args.text_tokens, cfg, "dropout.text_tokens", 0, "get_int")
        flops = costmodel.flops_with_schedule(tokens, schedule, shape, text_tokens)
        print(f"schedule={schedule.format()}")
        print(f"schedule_flops={flops:.6e}")
        print(f"schedule_tflops={flops / 1e12:.2f}")
    return 0


# ---------------------------------------------------------------------------
# dropout


def cmd_dropout(args, cfg: io.ToolConfig) -> int:
    schedule_text = _pick(args.schedule, cfg, "dropout.schedule", "", "get_str")
    schedule = dropout.DropSchedule.parse(schedule_text)
    geometry = dropout.DecoderGeometry(
        layers=_pick(args.layers, cfg, "dropout.layers", 28, "get_int"),
        hidden_dim=_pick(args.hidden_dim, cfg, "dropout.hidden_dim", 64, "get_int"),
        heads=_pick(args.heads, cfg, "dropout.heads", 4, "get_int"),
    )
    if args.scale_from is not None:
        schedule = dropout.scale_schedule(schedule, geometry.layers, args.scale_from)
    grid = io.read_embeddings(args.infile)
    visual = grid.data.reshape(-1, grid.dim)
    run = dropout.toy_decoder_run(
        text_tokens=_pick(args.text_tokens, cfg, "dropout.text_tokens", 8, "get_int"),
        visual=visual,
        geometry=geometry,
        schedule=schedule,
        seed=_pick(args.seed, cfg, "seed", 0, "get_int"),
    )
    print("layer,count")
    for layer, kept in enumerate(run.kept):
        print(f"{layer},{len(kept)}")
    print("kept_final=" + ",".join(str(i) for i in run.kept[-1]))
    return 0


# ---------------------------------------------------------------------------
# niah


def _library(args, cfg: io.ToolConfig) -> list[niah.NeedleItem]:
    if getattr(args, "synth_library", None):
        seed = _pick(getattr(args, "seed", None), cfg, "seed", 0, "get_int")
        return niah.synth_library(args.synth_library, seed=seed)
    if getattr(args, "library", None):
        return niah.load_library(args.library)
    raise DomainError("provide --library PATH or --synth-library SIZE")


def _templates(cfg: io.ToolConfig) -> dict[str, str]:
    return {
        "clue_template": cfg.get_str("niah.clue_template", niah.CLUE_TEMPLATE),
        "start_template": cfg.get_str("niah.start_template", niah.START_TEMPLATE),
    }


def _instance_paths(paths: list[str]) -> list[Path]:
    out: list[Path] = []
    for p in paths:
        path = Path(p)
        if path.is_dir():
            out.extend(sorted(path.glob("*.json")))
        else:
            out.append(path)
    if not out:
        raise DomainError("no instance files found")
    return out


def cmd_niah_gen(args, cfg: io.ToolConfig) -> int:
    library = _library(args, cfg)
    tpl = _templates(cfg)
    q1 = cfg.get_str("niah.q1_text", niah.Q1_TEXT)
    seed = _pick(args.seed, cfg, "seed", 0, "get_int")
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng_pick = random.Random(seed)
    for i in range(args.count):
        inst_seed = seed + i
        if args.mode == "single":
            needle = library[rng_pick.randrange(len(library))]
            inst = niah.gen_single_hop(
                args.length,
                args.depth,
                needle,
                seed=inst_seed,
                start_template=tpl["start_template"],
                q1_text=q1,
            )
        else:
            inst = niah.gen_multi_hop(
                args.length,
                _pick(args.hops, cfg, "niah.hops", 3, "get_int"),
                _pick(args.distractors, cfg, "niah.distractors", 1, "get_int"),
                library,
                seed=inst_seed,
                ordered=bool(
                    args.ordered or cfg.get_bool("niah.ordered", False)
                ),
                clue_template=tpl["clue_template"],
                start_template=tpl["start_template"],
                q1_text=q1,
            )
        name = f"{inst.instance_id}.json"
        niah.write_instance(inst, out_dir / name)
        print(f"wrote {name}")
    return 0


def cmd_niah_validate(args, cfg: io.ToolConfig) -> int:
    library = _library(args, cfg)
    tpl = _templates(cfg)
    failures = 0
    count = 0
    for path in _instance_paths(args.paths):
        inst = niah.load_instance(path)
        report = niah.validate_instance(inst, library, **tpl)
        count += 1
        for code, msg in report.failures:
            failures += 1
            print(f"{inst.instance_id} {code}: {msg}")
    print(f"validated={count}")
    print(f"failures={failures}")
    return 2 if failures else 0


def cmd_niah_solve(args, cfg: io.ToolConfig) -> int:
    library = _library(args, cfg)
    tpl = _templates(cfg)
    responses = []
    for path in _instance_paths(args.paths):
        inst = niah.load_instance(path)
        needle_id, answer = niah.oracle_solve(inst, library, **tpl)
        responses.append(
            niah.Response(instance_id=inst.instance_id, needle_id=needle_id, answer=answer)
        )
    niah.write_responses(responses, args.out)
    print(f"solved={len(responses)}")
    return 0


def cmd_niah_score(args, cfg: io.ToolConfig) -> int:
    instances = [niah.load_instance(p) for p in _instance_paths(args.paths)]
    responses = niah.load_responses(args.responses)
    result = niah.score(instances, responses)
    print(f"instances={len(instances)}")
    print(f"cap={result.cap:.4f}")
    print(f"qa={result.qa:.4f}")
    return 0


def _csv_ints(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def _csv_floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def cmd_niah_heatmap(args, cfg: io.ToolConfig) -> int:
    library = _library(args, cfg)
    seed = _pick(args.seed, cfg, "seed", 0, "get_int")
    cells = niah.heatmap_grid(_csv_ints(args.lengths), _csv_floats(args.depths), library, seed)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = ["length,depth,instance"]
    for cell in cells:
        niah.write_instance(cell.instance, out_dir / f"{cell.instance.instance_id}.json")
        lines.append(f"{cell.length},{cell.depth:g},{cell.instance.instance_id}")
    Path(args.grid).write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"cells={len(cells)}")
    return 0


def cmd_niah_heatmap_score(args, cfg: io.ToolConfig) -> int:
    grid_lines = Path(args.grid).read_text(encoding="utf-8").strip().splitlines()
    if not grid_lines or grid_lines[0] != "length,depth,instance":
        raise DomainError("grid file must start with 'length,depth,instance'")
    instances = {p.stem: p for p in _instance_paths(args.paths)}
    responses = niah.load_responses(args.responses)
    by_id: dict[str, list[niah.Response]] = {}
    for r in responses:
        by_id.setdefault(r.instance_id, []).append(r)
    rows = ["length,depth,accuracy"]
    for line in grid_lines[1:]:
        length, depth, instance_id = line.split(",")
        path = instances.get(instance_id)
        if path is None:
            raise DomainError(f"grid references missing instance {instance_id}")
        inst = niah.load_instance(path)
        got = by_id.get(instance_id)
        if not got:
            raise DomainError(f"no response for instance {instance_id}")
        hits = sum(1 for r in got if r.needle_id == inst.ground_truth[0])
        rows.append(f"{length},{depth},{hits / len(got):.4f}")
    Path(args.out).write_text("\n".join(rows) + "\n", encoding="utf-8")
    print(f"rows={len(rows) - 1}")
    return 0


def cmd_niah_synth_library(args, cfg: io.ToolConfig) -> int:
    seed = _pick(args.seed, cfg, "seed", 0, "get_int")
    items = niah.synth_library(args.size, seed=seed)
    niah.save_library(items, args.out)
    print(f"items={len(items)}")
    return 0


# ---------------------------------------------------------------------------
# synth grids


def _parse_shape(text: str) -> tuple[int, int, int, int]:
    parts = text.lower().split("x")
    if len(parts) != 4:
        raise DomainError("shape must be FRAMESxROWSxCOLSxDIM, e.g. 4x16x16x32")
    return tuple(int(p) for p in parts)  # type: ignore[return-value]


def cmd_synth(args, cfg: io.ToolConfig) -> int:
    seed = _pick(args.seed, cfg, "seed", 0, "get_int")
    grid = io.synth_grid(
        args.kind, _parse_shape(args.shape), seed=seed, k=args.k, noise=args.noise
    )
    io.write_embeddings(grid, args.out)
    print(f"shape={grid.frames}x{grid.rows}x{grid.cols}x{grid.dim}")
    print(f"tokens={grid.token_count}")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hico",
        description="Video-token compression toolkit: sampling plans, clip "
        "compression, visual dropout, cost estimates, and haystack benchmarks.",
    )
    parser.add_argument("--config", help=f"config file (or ${ENV_CONFIG})")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample", help="frame sampling plan and timestamp prompt")
    p.add_argument("--duration", type=float, required=True, help="video length in seconds")
    p.add_argument("--tmin", type=int)
    p.add_argument("--tmax", type=int)
    p.add_argument("--fps", type=float)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("compress", help="compress an embedding file clip by clip")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--connector", choices=compressor.CONNECTOR_KINDS)
    p.add_argument("--budget", type=int)
    p.add_argument("--clip-len", dest="clip_len", type=int)
    p.add_argument("--st-temperature", dest="st_temperature", type=float)
    p.add_argument("--factor", type=int)
    p.add_argument("--f-first", dest="f_first", type=int)
    p.add_argument("--f-rest", dest="f_rest", type=int)
    p.add_argument("--queries", type=int)
    p.add_argument("--temperature", type=float)
    p.add_argument("--weights", help="npz with resampler queries/wk/wv")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_compress)

    p = sub.add_parser("estimate", help="prefill FLOPs and inference memory")
    p.add_argument("--frames", type=int, required=True)
    p.add_argument("--tokens-per-frame", dest="tokens_per_frame", type=int)
    p.add_argument("--shape", help="model preset: 7b, 2b, toy")
    p.add_argument("--schedule", help="drop schedule, e.g. uni:4:0.75,attn:18:0.25")
    p.add_argument("--text-tokens", dest="text_tokens", type=int)
    p.add_argument("--cache-bytes", dest="cache_bytes", type=int)
    p.add_argument("--overhead-bytes", dest="overhead_bytes", type=int)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("dropout", help="run a drop schedule through the toy decoder")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--schedule")
    p.add_argument("--seed", type=int)
    p.add_argument("--layers", type=int)
    p.add_argument("--hidden-dim", dest="hidden_dim", type=int)
    p.add_argument("--heads", type=int)
    p.add_argument("--text-tokens", dest="text_tokens", type=int)
    p.add_argument(
        "--scale-from",
        dest="scale_from",
        type=int,
        help="rescale schedule layers written for this reference depth",
    )
    p.set_defaults(func=cmd_dropout)

    p = sub.add_parser("synth", help="write a synthetic embedding file")
    p.add_argument("--kind", choices=io.GRID_KINDS, default="gaussian")
    p.add_argument("--shape", required=True, help="FRAMESxROWSxCOLSxDIM")
    p.add_argument("--seed", type=int)
    p.add_argument("--k", type=int, default=2, help="cluster count for kind=clusters")
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    pn = sub.add_parser("niah", help="haystack benchmark generator and scorer")
    nsub = pn.add_subparsers(dest="niah_command", required=True)

    p = nsub.add_parser("gen", help="generate instances")
    p.add_argument("--mode", choices=("single", "multi"), default="multi")
    p.add_argument("--length", type=int, required=True)
    p.add_argument("--depth", type=float, default=0.5, help="single-hop needle depth")
    p.add_argument("--hops", type=int)
    p.add_argument("--distractors", type=int)
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--seed", type=int)
    p.add_argument("--ordered", action="store_true", help="force ascending hop positions")
    p.add_argument("--library")
    p.add_argument("--synth-library", dest="synth_library", type=int)
    p.add_argument("--out-dir", dest="out_dir", required=True)
    p.set_defaults(func=cmd_niah_gen)

    p = nsub.add_parser("validate", help="check instance soundness")
    p.add_argument("paths", nargs="+")
    p.add_argument("--library")
    p.add_argument("--synth-library", dest="synth_library", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_niah_validate)

    p = nsub.add_parser("solve", help="oracle-solve instances into a response file")
    p.add_argument("paths", nargs="+")
    p.add_argument("--library")
    p.add_argument("--synth-library", dest="synth_library", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_niah_solve)

    p = nsub.add_parser("score", help="CAP/QA metrics for a response file")
    p.add_argument("paths", nargs="+")
    p.add_argument("--responses", required=True)
    p.set_defaults(func=cmd_niah_score)

    p = nsub.add_parser("heatmap", help="generate a (length, depth) instance grid")
    p.add_argument("--lengths", required=True, help="comma-separated frame counts")
    p.add_argument("--depths", required=True, help="comma-separated depths in [0,1]")
    p.add_argument("--seed", type=int)
    p.add_argument("--library")
    p.add_argument("--synth-library", dest="synth_library", type=int)
    p.add_argument("--out-dir", dest="out_dir", required=True)
    p.add_argument("--grid", required=True, help="grid CSV to write")
    p.set_defaults(func=cmd_niah_heatmap)

    p = nsub.add_parser("heatmap-score", help="join responses into per-cell accuracy")
    p.add_argument("paths", nargs="+", help="instance files or directories")
    p.add_argument("--grid", required=True)
    p.add_argument("--responses", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_niah_heatmap_score)

    p = nsub.add_parser("synth-library", help="write a deterministic item library")
    p.add_argument("--size", type=int, required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_niah_synth_library)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _load_config(args)
        return args.func(args, cfg)
    except DomainError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (io.EmbeddingFormatError, OSError, json.JSONDecodeError) as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
