"""``proposal-scorer`` command line: score, labels, correlate, bench, gen.

Exit codes: 0 success, 1 internal error, 2 input/usage error.  Errors are
reported on stderr as ``error: <message>`` lines.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import losses
from .config import load_config, with_mode
from .labels import labels_to_json, mapping_labels, prediction_targets
from .metrics import expert_rollout_for, score_proposal
from .scene import SceneError, load_scene, save_scene
from .synthetic import GenSpec, InfeasibleSpecError, gen_synthetic

SCORE_COLUMNS = ("scene", "proposal", "nc", "dac", "ttc", "comfort", "ep", "ep_discarded", "pdms",
                 "first_at_fault_id", "first_ttc_id")


class InputError(Exception):
    """Bad user input; maps to exit code 2."""


# --------------------------------------------------------------------------
# manifest handling

def _expand(paths):
    out = []
    for p in paths:
        p = Path(p)
        if p.is_dir():
            out.extend(sorted(p.glob("*.json")))
        elif p.exists():
            out.append(p)
        else:
            raise InputError(f"{p}: no such file or directory")
    return out


def load_proposals(path) -> np.ndarray:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: malformed JSON: {exc}") from None
    arr = np.asarray(data, dtype=float)
    if arr.ndim != 3 or arr.shape[2] != 3 or arr.shape[0] == 0 or arr.shape[1] == 0:
        raise InputError(f"{path}: proposals must be an N x T x 3 array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InputError(f"{path}: proposals contain non-finite values")
    return arr


def build_manifest(args):
    """Resolve scenes, proposals and config.

    Returns ``(entries, cfg)`` where each entry is ``(path, scene, proposals, mode)``;
    ``--mode`` overrides the mode stored in the scene file.
    """
    scene_paths = _expand(args.scenes)
    if not scene_paths:
        raise InputError("no scene files given")
    prop_paths = _expand(args.proposals) if args.proposals else None
    if prop_paths is not None and len(prop_paths) != len(scene_paths):
        raise InputError(f"{len(scene_paths)} scenes but {len(prop_paths)} proposal files")
    try:
        base_cfg = load_config(args.config, mode=None)
    except (OSError, ValueError, TypeError) as exc:
        raise InputError(f"{args.config}: bad config: {exc}") from None
    entries = []
    for i, sp in enumerate(scene_paths):
        try:
            scene = load_scene(sp)
        except (SceneError, OSError) as exc:
            raise InputError(f"{sp}: {exc}") from None
        if prop_paths is None:
            if scene.expert is None:
                raise InputError(f"{sp}: no --proposals given and the scene has no expert")
            props = np.asarray(scene.expert)[None]
        else:
            props = load_proposals(prop_paths[i])
        entries.append((str(sp), scene, props, args.mode or scene.mode))
    return entries, base_cfg


# --------------------------------------------------------------------------
# parallel scoring with ordered merge

_WORK = {}


def _init_worker(entries, cfg):
    _WORK["entries"] = entries
    _WORK["cfg"] = cfg


def _score_task(task):
    si, pi = task
    path, scene, props, mode = _WORK["entries"][si]
    cfg = with_mode(_WORK["cfg"], mode)
    card, _ = score_proposal(props[pi], scene, cfg, expert_rollout_for(scene, cfg))
    return card


def score_all(entries, cfg, jobs: int = 1):
    """ScoreCards for every (scene, proposal) pair, in input order."""
    tasks = [(si, pi) for si, (_, _, props, _) in enumerate(entries) for pi in range(len(props))]
    if jobs <= 1 or len(tasks) <= 1:
        _init_worker(entries, cfg)
        return tasks, [_score_task(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs, initializer=_init_worker, initargs=(entries, cfg)) as ex:
        cards = list(ex.map(_score_task, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))
    return tasks, cards


def _fmt(x):
    return repr(float(x))


def _attr_id(attr):
    return "" if attr is None else str(attr.agent_id)


def scores_csv(entries, tasks, cards) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SCORE_COLUMNS)
    for (si, pi), c in zip(tasks, cards):
        s = c.sub
        w.writerow([entries[si][0], pi, _fmt(s.nc), _fmt(s.dac), _fmt(s.ttc), _fmt(s.comfort), _fmt(s.ep),
                    int(s.ep_discarded), _fmt(c.pdms), _attr_id(c.first_at_fault), _attr_id(c.first_ttc)])
    return buf.getvalue()


def summary(entries, tasks, cards) -> dict:
    per_scene = {}
    for (si, pi), c in zip(tasks, cards):
        per_scene.setdefault(si, []).append(c.pdms)
    scenes = []
    for si, pdms in sorted(per_scene.items()):
        best = int(np.argmax(pdms))
        scenes.append({"scene": entries[si][0], "best_proposal": best, "best_pdms": pdms[best],
                       "mean_pdms": float(np.mean(pdms)), "proposals": len(pdms)})
    return {"rows": len(cards), "scenes": scenes}


def _write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def cmd_score(args) -> int:
    entries, cfg = build_manifest(args)
    tasks, cards = score_all(entries, cfg, args.jobs)
    out = Path(args.out)
    _write(out / "scores.csv", scores_csv(entries, tasks, cards))
    _write(out / "summary.json", json.dumps(summary(entries, tasks, cards), indent=2) + "\n")
    print(f"scored {len(cards)} proposal(s) over {len(entries)} scene(s) -> {out}")
    return 0


def cmd_labels(args) -> int:
    entries, base_cfg = build_manifest(args)
    results = []
    worst = 0.0
    for path, scene, props, mode in entries:
        cfg = with_mode(base_cfg, mode)
        expert = expert_rollout_for(scene, cfg)
        cards, rollouts = zip(*(score_proposal(p, scene, cfg, expert) for p in props))
        mapping = mapping_labels(props, scene, rollouts)
        targets = prediction_targets(props, scene, cards)
        entry = {"scene": path, "labels": labels_to_json(mapping, targets)}
        if args.with_loss_check:
            lm = losses.map_loss(mapping.values.astype(float), mapping)
            lp = losses.pred_loss(targets.corners, targets.validity.astype(float), targets)
            entry["loss_check"] = {"map_loss": lm, "pred_loss": lp}
            worst = max(worst, lm, lp)
        results.append(entry)
    out = Path(args.out)
    _write(out / "labels.json", json.dumps({"scenes": results}, separators=(",", ":")) + "\n")
    if args.with_loss_check:
        print(f"loss check: max perfect-prediction loss {worst:.3e}")
        if not worst < 1e-6:
            print(f"error: perfect-prediction loss {worst:.3e} exceeds 1e-6", file=sys.stderr)
            return 1
    print(f"labels for {len(entries)} scene(s) -> {out / 'labels.json'}")
    return 0


def read_metric_tables(paths, columns=None):
    """Stack rows of CSV files; returns ``(names, matrix)``."""
    header, rows = None, []
    for p in paths:
        with open(p, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            try:
                h = next(reader)
            except StopIteration:
                raise InputError(f"{p}: empty CSV") from None
            if header is None:
                header = h
            elif h != header:
                raise InputError(f"{p}: header differs from {paths[0]}")
            for lineno, row in enumerate(reader, start=2):
                if len(row) != len(header):
                    raise InputError(f"{p}:{lineno}: expected {len(header)} cells")
                rows.append(row)
    if len(rows) < 3:
        raise InputError(f"need at least 3 rows, got {len(rows)}")

    def numeric(cell):
        try:
            return math.isfinite(float(cell))
        except ValueError:
            return False

    if columns:
        missing = [c for c in columns if c not in header]
        if missing:
            raise InputError(f"unknown column(s): {missing}")
        names = list(columns)
    else:
        # columns with no numeric cell at all (labels, ids) are skipped
        names = [h for i, h in enumerate(header) if any(numeric(r[i]) for r in rows)]
    idx = [header.index(n) for n in names]
    if len(names) < 2:
        raise InputError("need at least 2 numeric columns")
    data = np.empty((len(rows), len(names)))
    for r, row in enumerate(rows):
        for c, i in enumerate(idx):
            cell = row[i].strip()
            if cell == "":
                raise InputError(f"missing value in column {names[c]!r}, row {r + 1}")
            if not numeric(cell):
                raise InputError(f"non-numeric cell {cell!r} in column {names[c]!r}, row {r + 1}")
            data[r, c] = float(cell)
    return names, data


def pearson_matrix(data) -> np.ndarray:
    """Pearson correlations between columns; NaN where a column is constant."""
    x = np.asarray(data, dtype=float)
    xc = x - x.mean(axis=0)
    ss = np.sqrt(np.einsum("ij,ij->j", xc, xc))
    with np.errstate(divide="ignore", invalid="ignore"):
        r = (xc.T @ xc) / np.outer(ss, ss)
    np.fill_diagonal(r, 1.0)  # exact, rounding can leave 1 - 2 ulp
    r[(ss == 0)[:, None] | (ss == 0)[None, :]] = np.nan
    return np.clip(r, -1.0, 1.0)


def correlation_csv(names, r) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["metric", *names])
    for name, row in zip(names, r):
        w.writerow([name, *("" if np.isnan(v) else repr(float(v)) for v in row)])
    return buf.getvalue()


def cmd_correlate(args) -> int:
    names, data = read_metric_tables(args.csv, args.columns.split(",") if args.columns else None)
    text = correlation_csv(names, pearson_matrix(data))
    _write(Path(args.out) / "correlation.csv", text)
    sys.stdout.write(text)
    return 0


def _int_list(text):
    try:
        vals = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if any(v < 1 for v in vals):
        raise argparse.ArgumentTypeError("sweep values must be >= 1")
    return vals


def cmd_bench(args) -> int:
    from .bench import bench_attention, rows_to_csv

    if args.reps < 1:
        raise InputError("--reps must be >= 1")
    rows = bench_attention(args.n_sweep, args.grid_sweep, reps=args.reps, seed=args.seed or 0)
    text = rows_to_csv(rows)
    _write(Path(args.out) / "bench.csv", text)
    sys.stdout.write(text)
    return 0


def cmd_gen(args) -> int:
    if args.count < 0:
        raise InputError("--count must be >= 0")
    spec = GenSpec(vehicles=args.vehicles, pedestrians=args.pedestrians, static_objects=args.static_objects,
                   mode=args.mode or "navsim")
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise InputError(f"{out}: cannot create output directory: {exc}") from None
    seed0 = args.seed or 0
    for k in range(args.count):
        seed = seed0 + k
        try:
            scene = gen_synthetic(seed, spec)
        except InfeasibleSpecError as exc:
            raise InputError(f"seed {seed}: {exc}") from None
        try:
            save_scene(scene, out / f"scene_{seed:05d}.json")
        except OSError as exc:
            raise InputError(f"{out}: cannot write scene: {exc}") from None
    print(f"wrote {args.count} scene(s) to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="proposal-scorer", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, proposals=True):
        p.add_argument("--scenes", nargs="+", required=True, help="scene JSON files or directories")
        if proposals:
            p.add_argument("--proposals", nargs="+", help="proposal JSON files/dirs paired with --scenes "
                                                          "(default: each scene's expert)")
        p.add_argument("--config", help="TOML/JSON config (default: $PROPOSAL_SCORER_CONFIG)")
        p.add_argument("--mode", choices=("navsim", "bench2drive"))
        p.add_argument("--jobs", type=int, default=1)
        p.add_argument("--out", default="out")

    p = sub.add_parser("score", help="roll out and score proposals")
    common(p)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("labels", help="export mapping/prediction labels")
    common(p)
    p.add_argument("--with-loss-check", action="store_true")
    p.set_defaults(func=cmd_labels)

    p = sub.add_parser("correlate", help="Pearson matrix over metric CSV columns")
    p.add_argument("csv", nargs="+")
    p.add_argument("--columns", help="comma-separated column names")
    p.add_argument("--out", default="out")
    p.set_defaults(func=cmd_correlate)

    p = sub.add_parser("bench", help="attention complexity benchmark")
    p.add_argument("--n-sweep", type=_int_list, default=[16, 32, 64, 128, 256])
    p.add_argument("--grid-sweep", type=_int_list, default=[32, 64, 128])
    p.add_argument("--reps", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="out")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("gen", help="write synthetic scenes")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--mode", choices=("navsim", "bench2drive"))
    p.add_argument("--vehicles", type=int, default=GenSpec.vehicles)
    p.add_argument("--pedestrians", type=int, default=GenSpec.pedestrians)
    p.add_argument("--static-objects", type=int, default=GenSpec.static_objects)
    p.add_argument("--out", default="out")
    p.set_defaults(func=cmd_gen)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "jobs", 1) < 1:
        parser.error("--jobs must be >= 1")
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - top-level guard
        print(f"error: internal: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
