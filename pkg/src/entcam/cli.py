"""Command-line front end: simulate, process, analyze, report.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 analysis failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import AnalysisError, CertificationReport, certify, table1_report
from .config import ConfigError, RunConfig, describe_defaults
from .events import (PAIRS_CSV_HEADER, Basis, EventStreamError, Half, PHL1Writer,
                     hits_from_csv, iter_hits, pairs_to_csv, read_header)
from .jpd import (EmptyConditionalError, Jpd, JpdError, accumulate, conditional, marginal,
                  merge, minus_projection, sum_projection)
from .pipeline import StreamProcessor, TimewalkCalibrationError, estimate_timewalk, reconstruct
from .sim import LINKS_HEADER, TRUTH_HEADER, SimStats, simulate_stream

log = logging.getLogger("entcam")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_ANALYSIS = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _config(args) -> RunConfig:
    over = {}
    if getattr(args, "seed", None) is not None:
        over["run.seed"] = args.seed
    if getattr(args, "basis", None) is not None:
        over["run.basis"] = args.basis
    if getattr(args, "window_ns", None) is not None:
        over["pairing.coincidence_window_ps"] = int(round(args.window_ns * 1000))
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        over[k.strip()] = v.strip()
    return RunConfig.from_sources(args.config, over)


def _outdir(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create output directory {out}: {exc}") from exc
    return out


def cmd_simulate(args) -> int:
    cfg = _config(args)
    run = cfg.run
    out = _outdir(args.out)
    (out / "config.json").write_text(cfg.to_json() + "\n")
    total = SimStats()
    duration_ps = int(round(run.duration_s * 1e12))
    truth_fh = links_fh = None
    try:
        if run.write_truth:
            truth_fh = open(out / "truth.csv", "w")
            links_fh = open(out / "truth_links.csv", "w")
            truth_fh.write(TRUTH_HEADER + "\n")
            links_fh.write(LINKS_HEADER + "\n")
        with PHL1Writer(out / "hits.phl1", duration_ps) as w:
            for hits, truth, stats in simulate_stream(cfg.source, cfg.detector, cfg.optics,
                                                      run.duration_s, run.seed, run.chunk_s):
                if truth_fh is not None:
                    truth.save(truth_fh, links_fh, hit_offset=w.count, header=False)
                w.write(hits)
                total.add(stats)
    finally:
        for fh in (truth_fh, links_fh):
            if fh is not None:
                fh.close()
    print(f"basis            {run.basis.value}")
    print(f"duration_s       {run.duration_s:g}")
    print(f"pairs_emitted    {total.pairs_emitted}")
    print(f"photons_detected {total.photons_detected}")
    print(f"photons_outside  {total.photons_outside}")
    print(f"dark_hits        {total.dark_hits}")
    print(f"dead_time_drops  {total.dead_time_dropped}")
    print(f"hits_written     {total.hits_written}")
    print(f"config_hash      {cfg.hash()}")
    return EXIT_OK


def _hit_chunks(path: Path, chunk_records: int):
    """Yield (duration_ps, iterator of hit arrays) for PHL1 or CSV input."""
    if path.suffix.lower() == ".csv":
        hits = hits_from_csv(path.read_text())
        return 0, iter([hits])
    fh = open(path, "rb")
    _, duration = read_header(fh)
    fh.seek(0)

    def gen():
        with fh:
            yield from iter_hits(fh, chunk_records)
    return duration, gen()


def cmd_process(args) -> int:
    cfg = _config(args)
    run = cfg.run
    out = _outdir(args.out)
    path = Path(args.hits)
    if not path.exists():
        raise UsageError(f"no such hits file: {path}")
    duration, chunks = _hit_chunks(path, run.binary_chunk_records)
    head, n_head = [], 0
    for hits in chunks:
        head.append(hits)
        n_head += len(hits)
        if n_head >= run.timewalk_sample_records:
            break
    c = 0.0
    if run.timewalk != "estimate":
        c = float(run.timewalk)
    elif n_head:
        try:
            c = estimate_timewalk(reconstruct(np.concatenate(head), cfg.cluster))
        except TimewalkCalibrationError as exc:
            log.warning("timewalk estimate failed (%s); using 0", exc)
    proc = StreamProcessor(cfg.cluster, cfg.pairing, c)
    basis = run.basis
    jpd = Jpd.empty(basis, cfg.optics, duration * 1e-12)
    tag = basis.value.lower()
    pairs_path = out / f"pairs_{tag}.csv"
    with open(pairs_path, "w") as fh:
        fh.write(PAIRS_CSV_HEADER + "\n")

        def push(p):
            nonlocal jpd
            if len(p):
                pairs_to_csv(fh, p, header=False)
                part = accumulate(p, basis, cfg.optics, 0.0, cfg.pairing.cross_halves_only)
                jpd = merge(jpd, part)

        for hits in head:
            push(proc.feed(hits))
        for hits in chunks:
            push(proc.feed(hits))
        push(proc.finish())
    jpd.save(out / f"jpd_{tag}.csv")
    s = proc.stats
    print(f"basis             {basis.value}")
    print(f"hits              {s.n_hits}")
    print(f"events            {s.n_events} (left {s.n_left}, right {s.n_right})")
    print(f"timewalk_coeff_ps {c:.1f}")
    print(f"pairs             {s.n_pairs}")
    print(f"same_half_close   {s.n_same_half}")
    print(f"jpd_total         {jpd.total_pairs}")
    return EXIT_OK


def _save_projections(j: Jpd, out: Path, ref) -> None:
    tag = j.basis.value.lower()
    projs = [marginal(j, Half.LEFT), marginal(j, Half.RIGHT),
             minus_projection(j), sum_projection(j)]
    names = ["marginal_left", "marginal_right", "minus", "sum"]
    if ref is None:
        m = projs[0].grid
        ref = np.unravel_index(int(np.argmax(m)), m.shape)
    try:
        projs.append(conditional(j, ref))
        names.append("conditional")
    except EmptyConditionalError as exc:
        log.warning("%s", exc)
    for p, name in zip(projs, names):
        p.save_txt(out / f"{tag}_{name}.txt")
        p.save_pgm(out / f"{tag}_{name}.pgm")


def cmd_analyze(args) -> int:
    cfg = _config(args)
    out = _outdir(args.out)
    if args.inject_table1:
        rep = table1_report()
        rep.info["config_hash"] = cfg.hash()
    else:
        missing = [name for name, v in (("--nf", args.nf), ("--ff", args.ff)) if v is None]
        if missing:
            raise UsageError("analyze needs both a near-field and a far-field Jpd; missing "
                             + ", ".join(missing) + " (or pass --inject-table1)")
        nf, ff = Jpd.load(args.nf), Jpd.load(args.ff)
        if nf.basis is not Basis.NF or ff.basis is not Basis.FF:
            raise JpdError(f"--nf holds {nf.basis.value} and --ff holds {ff.basis.value} data")
        prov = {"nf_jpd": str(args.nf), "ff_jpd": str(args.ff), "config_hash": cfg.hash()}
        rep = certify(nf, ff, cfg.analysis, prov)
        for j in (nf, ff):
            _save_projections(j, out, cfg.analysis.cond_ref)
    rep.save_json(out / "report.json")
    (out / "report.txt").write_text(rep.to_text())
    print(rep.to_text(), end="")
    return EXIT_OK


def cmd_report(args) -> int:
    path = Path(args.report)
    if not path.exists():
        raise UsageError(f"no such report: {path}")
    rep = CertificationReport.load_json(path)
    print(rep.to_text(), end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="entcam", formatter_class=argparse.RawDescriptionHelpFormatter,
                description="Entanglement certification from time-stamped camera events.",
                epilog="config keys and defaults (JSON file of flat dotted keys; environment "
                       "variables ENTCAM_<SECTION>__<NAME> have lowest precedence):\n"
                       + describe_defaults())
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, out=True):
        sp.add_argument("--config", help="JSON config file of flat dotted keys")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override one config key (repeatable)")
        if out:
            sp.add_argument("--out", required=True, help="output directory")

    s = sub.add_parser("simulate", help="generate a synthetic hit stream")
    common(s)
    s.add_argument("--seed", type=int)
    s.add_argument("--basis", choices=[b.value for b in Basis])
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("process", help="hits -> events -> pairs -> Jpd")
    s.add_argument("hits", help="PHL1 file (or CSV with header x,y,toa_ps,tot)")
    common(s)
    s.add_argument("--basis", choices=[b.value for b in Basis])
    s.add_argument("--window-ns", type=float, help="coincidence window in ns")
    s.set_defaults(func=cmd_process)

    s = sub.add_parser("analyze", help="certify entanglement from NF and FF Jpds")
    common(s)
    s.add_argument("--nf", help="near-field Jpd file")
    s.add_argument("--ff", help="far-field Jpd file")
    s.add_argument("--seed", type=int, help="Monte-Carlo seed (analysis.seed)")
    s.add_argument("--inject-table1", action="store_true",
                   help="skip fitting and evaluate the published widths")
    s.set_defaults(func=_analyze_seed)

    s = sub.add_parser("report", help="print a saved report")
    s.add_argument("report", help="report.json")
    s.set_defaults(func=cmd_report)
    return p


def _analyze_seed(args) -> int:
    if args.seed is not None:
        args.set = (args.set or []) + [f"analysis.seed={args.seed}"]
        args.seed = None
    return cmd_analyze(args)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not logging.getLogger().handlers:
        logging.basicConfig(format="entcam: %(levelname)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"entcam: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (EventStreamError, JpdError, OSError, KeyError, ValueError) as exc:
        print(f"entcam: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except AnalysisError as exc:
        print(f"entcam: analysis failed: {exc}", file=sys.stderr)
        return EXIT_ANALYSIS


if __name__ == "__main__":
    sys.exit(main())
