"""Command-line driver: simulate, analyze, rank-scan, select-demo.

Configuration is a flat ``key=value`` text file.  Values come from, in
increasing priority: built-in defaults, a ``--preset``, a ``--config``
file, and individual command-line flags.
"""

from __future__ import annotations

import argparse
import os
import sys
import tempfile
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import analysis
from .channel import gen_fractional_channel, gen_integer_channel
from .config import SystemConfig, coerce_field
from .multiant import MimoChannel, select_antennas, tap_selection_metric
from .sim import BerCurve, SimJob, run_ber

CSV_COLUMNS = ("snr_db", "frames", "bit_errors", "ber", "ci_low", "ci_high")


@dataclass(frozen=True)
class ExperimentConfig:
    system: SystemConfig = field(default_factory=SystemConfig)
    snr_db: tuple[float, ...] = tuple(float(s) for s in range(0, 31, 5))
    seed: int = 0
    min_errors: int = 500
    max_frames: int = 10**7
    name: str = "run"
    #: stop the sweep after the first point whose BER falls below this
    stop_ber: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "snr_db", tuple(float(s) for s in self.snr_db))

    def to_items(self) -> list[tuple[str, str]]:
        items = [("name", self.name)]
        for k, v in self.system.to_dict().items():
            items.append((k, _fmt(v)))
        items += [
            ("snr_db", ",".join(repr(s) for s in self.snr_db)),
            ("seed", str(self.seed)),
            ("min_errors", str(self.min_errors)),
            ("max_frames", str(self.max_frames)),
            ("stop_ber", _fmt(self.stop_ber)),
        ]
        return items

    def job(self, workers: int = 1) -> SimJob:
        return SimJob(
            self.system, self.snr_db, self.min_errors, self.max_frames, self.seed, workers, stop_ber=self.stop_ber
        )


_SYSTEM_KEYS = tuple(f.name for f in fields(SystemConfig))
_EXPERIMENT_KEYS = ("name", "snr_db", "seed", "min_errors", "max_frames", "stop_ber")
KEYS = _SYSTEM_KEYS + _EXPERIMENT_KEYS


def _fmt(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def parse_snr(text: str) -> tuple[float, ...]:
    """``"0,5,10"`` or ``"start:stop:step"`` (stop inclusive)."""
    text = text.strip()
    if ":" in text:
        parts = [float(p) for p in text.split(":")]
        if len(parts) != 3 or parts[2] <= 0:
            raise ValueError(f"SNR range must be start:stop:step with step > 0, got {text!r}")
        start, stop, step = parts
        n = int(np.floor((stop - start) / step + 1e-9)) + 1
        return tuple(float(round(start + i * step, 10)) for i in range(n))
    return tuple(float(p) for p in text.split(",") if p.strip())


def apply_overrides(exp: ExperimentConfig, values: dict) -> ExperimentConfig:
    """Return ``exp`` with textual or typed ``values`` applied; validates the result."""
    sys_changes, exp_changes = {}, {}
    for key, raw in values.items():
        if key in _SYSTEM_KEYS:
            sys_changes[key] = coerce_field(key, raw)
        elif key == "snr_db":
            exp_changes[key] = parse_snr(raw) if isinstance(raw, str) else tuple(raw)
        elif key in ("seed", "min_errors", "max_frames"):
            exp_changes[key] = int(raw)
        elif key == "name":
            exp_changes[key] = str(raw).strip()
        elif key == "stop_ber":
            none = raw is None or (isinstance(raw, str) and raw.strip().lower() in ("", "none"))
            exp_changes[key] = None if none else float(raw)
        else:
            raise KeyError(f"unknown configuration key {key!r}; valid keys: {', '.join(KEYS)}")
    system = replace(exp.system, **sys_changes) if sys_changes else exp.system
    return replace(exp, system=system, **exp_changes)


def parse_config_text(text: str) -> dict:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if line.startswith("#"):
            line = line[1:].strip()
            if "=" not in line:
                continue
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key=value, got {line!r}")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def format_config(exp: ExperimentConfig) -> str:
    return "".join(f"{k}={v}\n" for k, v in exp.to_items())


def parse_config(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    values = parse_config_text(text)
    base = base or ExperimentConfig()
    # rebuild from defaults so omitted system keys take their default values
    return apply_overrides(base, values)


# ---------------------------------------------------------------- presets


def _exp(name, snr, **system) -> ExperimentConfig:
    return ExperimentConfig(SystemConfig(**system), snr, name=name, stop_ber=1e-6)


def _build_presets():
    presets: dict[str, ExperimentConfig] = {}
    groups: dict[str, list[str]] = {}

    def add(group, name, snr, **system):
        presets[name] = _exp(name, snr, **system)
        groups.setdefault(group, []).append(name)

    for nr in (1, 2, 3, 4):
        add("fig4", f"fig4-nr{nr}", parse_snr("0:45:2.5" if nr == 1 else f"0:{30 - 3 * nr}:2.5"), n_r=nr)
    for nr in (1, 4):
        add("fig5", f"fig5-nr{nr}", parse_snr("0:40:5"), P=4, n_r=nr)
    for nr in (1, 2):
        for pr in (False, True):
            tag = "-pr" if pr else ""
            add("fig6", f"fig6-nr{nr}{tag}", parse_snr("0:30:2.5"), M=4, N=4, P=2, n_r=nr, phase_rotation=pr)
            add("fig7", f"fig7-nr{nr}{tag}", parse_snr("5:40:2.5"), P=2, n_r=nr, phase_rotation=pr, alphabet="16QAM")
    for ns in (1, 2):
        for nr in (1, 2, 3):
            if ns <= nr:
                add("fig8", f"fig8-nr{nr}-ns{ns}", parse_snr("0:30:2.5"), mode="stc", n_t=2, P=2, n_r=nr, n_s=ns)
    for nr in (1, 2):
        add("fig9", f"fig9-nr{nr}", parse_snr("0:25:2.5"), mode="stc", n_t=2, P=2, n_r=nr, phase_rotation=True)
    for nr in (2, 3):
        for pr in (False, True):
            tag = "-pr" if pr else ""
            add("fig10", f"fig10-nr{nr}{tag}", parse_snr("0:30:2.5"), mode="mimo", M=4, N=2, n_t=2, P=2, n_r=nr, n_s=2, phase_rotation=pr)
    for nr in (1, 2, 3, 4):
        add("fig11", f"fig11-nr{nr}", parse_snr("0:40:2.5"), n_r=nr, channel="fractional")
    return presets, groups


PRESETS, PRESET_GROUPS = _build_presets()


def resolve_preset(name: str) -> list[ExperimentConfig]:
    if name in PRESETS:
        return [PRESETS[name]]
    if name in PRESET_GROUPS:
        return [PRESETS[n] for n in PRESET_GROUPS[name]]
    known = sorted(PRESET_GROUPS) + sorted(PRESETS)
    raise ValueError(f"unknown preset {name!r}; choose from {', '.join(known)}")


# ---------------------------------------------------------------- CSV / plot


def curve_csv(exp: ExperimentConfig, curve: BerCurve) -> str:
    lo, hi = curve.confidence_interval()
    lines = [f"#{k}={v}" for k, v in exp.to_items()]
    lines.append(",".join(CSV_COLUMNS))
    for s, f, e, b, l, h in zip(curve.snr_db, curve.frames, curve.bit_errors, curve.ber, lo, hi):
        lines.append(f"{float(s)!r},{int(f)},{int(e)},{b:.6e},{l:.6e},{h:.6e}")
    return "\n".join(lines) + "\n"


def read_curve_csv(path) -> tuple[ExperimentConfig, np.ndarray]:
    """Metadata and numeric table of a CSV written by ``simulate``."""
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    meta = "\n".join(l for l in text.splitlines() if l.startswith("#"))
    body = [l for l in text.splitlines() if l and not l.startswith("#")]
    table = np.array([[float(v) for v in l.split(",")] for l in body[1:]]).reshape(-1, len(CSV_COLUMNS))
    return parse_config(meta), table


def _write_atomic(path: str, text: str) -> None:
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=".csv")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def plot_curves(results, path: str) -> bool:
    """Log-scale BER plot; returns False (with a warning) on any failure."""
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        fig, ax = plt.subplots(figsize=(6, 4.5))
        for exp, curve in results:
            ok = curve.bit_errors > 0
            ax.semilogy(curve.snr_db[ok], curve.ber[ok], marker="o", label=exp.name)
        ax.set_xlabel("SNR (dB)")
        ax.set_ylabel("BER")
        ax.grid(True, which="both", alpha=0.3)
        ax.legend()
        fig.savefig(path, format="svg")
        plt.close(fig)
        return True
    except Exception as exc:  # plotting never fails the run
        print(f"warning: plot not written ({exc})", file=sys.stderr)
        return False


# ---------------------------------------------------------------- commands


def _check_out_dir(out: str) -> None:
    if not os.path.isdir(out):
        raise SystemExit(f"error: output directory {out!r} does not exist")


def _experiments(args) -> list[ExperimentConfig]:
    base = resolve_preset(args.preset) if args.preset else [ExperimentConfig()]
    file_values = {}
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            file_values = parse_config_text(fh.read())
    flag_values = {k: getattr(args, k) for k in KEYS if getattr(args, k, None) is not None}
    for item in args.set or []:
        if "=" not in item:
            raise ValueError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        flag_values[k.strip()] = v.strip()
    if args.seed is not None:
        flag_values["seed"] = args.seed
    out = []
    for exp in base:
        exp = apply_overrides(exp, file_values)
        out.append(apply_overrides(exp, flag_values))
    return out


def cmd_simulate(args) -> int:
    _check_out_dir(args.out)
    exps = _experiments(args)
    results = []
    for exp in exps:
        print(f"[{exp.name}] {exp.system.mode} M={exp.system.M} N={exp.system.N} P={exp.system.P} "
              f"n_r={exp.system.n_r} n_s={exp.system.n_s} PR={exp.system.phase_rotation}", flush=True)

        def progress(snr, frames, errors):
            print(f"  {snr:6.2f} dB  frames={frames}  errors={errors}", flush=True)

        curve = run_ber(exp.job(args.workers), progress if not args.quiet else None)
        results.append((exp, curve))
    for exp, curve in results:
        path = os.path.join(args.out, f"{exp.name}.csv")
        _write_atomic(path, curve_csv(exp, curve))
        print(f"wrote {path}")
        if len(curve.snr_db) >= 2:
            try:
                print(f"  slope over BER in [1e-5, 1e-2]: {curve.slope(ber_window=(1e-5, 1e-2)):.2f}")
            except ValueError:
                pass
    if args.plot:
        name = args.preset or exps[0].name
        plot_curves(results, os.path.join(args.out, f"{name}.svg"))
    return 0


def cmd_analyze(args) -> int:
    status = 0
    for exp in _experiments(args):
        cfg = exp.system
        try:
            pred = analysis.predicted_diversity(cfg)
        except analysis.UnsupportedConfig as exc:
            print(f"error: unsupported configuration: {exc}", file=sys.stderr)
            return 2
        scan = analysis.scan_config(cfg)
        implied = analysis.diversity_from_rank(scan.min_rank, scan.K, cfg.n_r, cfg.n_s)
        print(f"[{exp.name}] min rank {scan.min_rank} of K={scan.K}; predicted diversity {pred}; "
              f"rank-implied diversity {implied}")
        if implied != pred:
            print("  MISMATCH: scanned rank contradicts the predicted diversity", file=sys.stderr)
            status = 1
        try:
            spectra = analysis.difference_spectra(cfg)
            gamma = 10 ** (np.asarray(exp.snr_db) / 10)
            up = analysis.union_bound_ber(cfg, gamma, spectra=spectra)
            lo = analysis.lower_bound_ber(cfg, gamma, spectra=spectra)
            print("  snr_db  lower_bound  union_bound")
            for s, l, u in zip(exp.snr_db, lo, up):
                print(f"  {s:6.2f}  {l:.4e}  {u:.4e}")
        except (analysis.EnumerationCapExceeded, ValueError) as exc:
            print(f"  bounds skipped: {exc}")
        if args.out:
            _check_out_dir(args.out)
            path = os.path.join(args.out, f"{exp.name}-bounds.csv")
            rows = list(analysis.bound_report_rows(cfg, exp.snr_db))
            import csv
            import io

            buf = io.StringIO()
            w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
            w.writeheader()
            w.writerows(rows)
            _write_atomic(path, buf.getvalue())
            print(f"  wrote {path}")
    return status


def cmd_rank_scan(args) -> int:
    for exp in _experiments(args):
        scan = analysis.scan_config(exp.system)
        print(f"[{exp.name}] min rank {scan.min_rank} (K={scan.K}) over {scan.n_differences} distinct differences")
        print("  rank histogram: " + ", ".join(f"{r}: {c}" for r, c in scan.rank_counts.items()))
        xi, xj = scan.pair
        print(f"  achieving pair: x_i={np.round(xi, 4).tolist()}  x_j={np.round(xj, 4).tolist()}")
    return 0


def cmd_select_demo(args) -> int:
    rng = np.random.default_rng(args.seed if args.seed is not None else 0)
    for exp in _experiments(args):
        cfg = exp.system
        grid = cfg.grid
        if cfg.channel == "integer":
            draw = lambda: gen_integer_channel(cfg.P, cfg.taps, grid, rng)
        else:
            draw = lambda: gen_fractional_channel(cfg.P, cfg.nu_max, grid, rng)
        mimo = MimoChannel(tuple(tuple(draw() for _ in range(cfg.n_t)) for _ in range(cfg.n_r)), grid)
        sel = select_antennas(mimo, cfg.n_s, mode=cfg.mode)
        print(f"[{exp.name}] per-antenna metrics (squared Frobenius norm):")
        for i, m in enumerate(sel.metrics):
            mark = "*" if i in sel.selected else " "
            extra = f"  taps: {tap_selection_metric(mimo, i):.4f}" if mimo.is_integer else ""
            print(f"  {mark} rx {i}: {m:.4f}{extra}")
        print(f"  selected: {list(sel.selected)}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="otfs-ras", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    commands = {
        "simulate": (cmd_simulate, "Monte Carlo BER sweep; writes CSV (and optionally SVG)"),
        "analyze": (cmd_analyze, "rank scan, predicted diversity and BER bounds"),
        "rank-scan": (cmd_rank_scan, "exhaustive minimum-rank scan of codeword differences"),
        "select-demo": (cmd_select_demo, "draw one channel and show antenna selection"),
    }
    for name, (fn, help_) in commands.items():
        sp = sub.add_parser(name, help=help_)
        sp.set_defaults(func=fn)
        sp.add_argument("--config", help="flat key=value configuration file")
        sp.add_argument("--preset", help="experiment preset or group, e.g. fig4-nr2 or fig8")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--workers", type=int, default=1)
        sp.add_argument("--out", default=None if name != "simulate" else ".", help="output directory")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any configuration key")
        for key in KEYS:
            if key == "seed":
                continue
            sp.add_argument("--" + key.replace("_", "-"), dest=key, default=None, metavar="VALUE")
        if name == "simulate":
            sp.add_argument("--plot", action="store_true", help="also write a log-scale SVG plot")
            sp.add_argument("--quiet", action="store_true")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, KeyError, analysis.EnumerationCapExceeded) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
