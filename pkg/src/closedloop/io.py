"""On-disk formats: trace CSV, pulse CSV, summary JSON, experiment config JSON.

All writers are deterministic and atomic (write to a temporary file in the
target directory, then rename), so an interrupted batch never leaves a
half-written file behind.
"""
from __future__ import annotations

import dataclasses
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .bench import ALGORITHMS, CONFIG_TYPES, BatchSummary, Experiment, bell_benchmark
from .distort import DistortionConfig
from .optim.trace import RunTrace, StoppingRule
from .qsim import SpinSystem, basis_state, bell_target, pulse_labels

TRACE_HEADER = "iteration,cum_evals,measured_fidelity,exact_fidelity"


def fmt(x) -> str:
    """Number with 12 significant digits; integers stay integers."""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if not np.isfinite(x):
        return "nan" if np.isnan(x) else ("inf" if x > 0 else "-inf")
    return f"{x:.12g}"


def _num(x):
    if x is None:
        return None
    if isinstance(x, (int, np.integer)):
        return int(x)
    x = float(x)
    if not np.isfinite(x):
        return None
    return float(f"{x:.12g}")


def atomic_write(path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def trace_csv(trace: RunTrace) -> str:
    lines = [TRACE_HEADER]
    for s in trace.samples:
        lines.append(",".join((fmt(s.iteration), fmt(s.cum_evals),
                               fmt(s.measured_fidelity), fmt(s.exact_fidelity))))
    return "\n".join(lines) + "\n"


def write_trace(path, trace: RunTrace) -> Path:
    return atomic_write(path, trace_csv(trace))


def read_trace(path) -> list:
    rows = []
    with open(path) as fh:
        header = fh.readline().strip()
        if header != TRACE_HEADER:
            raise ValueError(f"unexpected trace header {header!r}")
        for line in fh:
            it, ev, meas, ex = line.strip().split(",")
            rows.append((int(it), int(ev), float(meas), float(ex)))
    return rows


def pulse_csv(system: SpinSystem, pulse) -> str:
    pulse = np.asarray(pulse, dtype=np.float64)
    return ",".join(pulse_labels(system)) + "\n" + ",".join(fmt(v) for v in pulse) + "\n"


def write_pulse(path, system: SpinSystem, pulse) -> Path:
    return atomic_write(path, pulse_csv(system, pulse))


def summary_dict(summary: BatchSummary) -> dict:
    out = {
        "runs": summary.runs,
        "success_rate": _num(summary.success_rate),
        "success_rate_exact": _num(summary.success_rate_exact),
        "mean_evals": _num(summary.mean_evals),
        "var_evals": _num(summary.var_evals),
        "mean_final_exact": _num(summary.mean_final_exact),
    }
    for thr, stats in summary.crossings.items():
        key = f"eval{int(round(thr * 100))}"
        out[key] = _num(stats["mean"])
        out[f"{key}_count"] = stats["count"]
    out["curve"] = {
        "evals": [int(e) for e in summary.curve_evals],
        "infidelity": [_num(v) for v in summary.curve_infidelity],
    }
    return out


def dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=False) + "\n"


def write_summary(path, summary: BatchSummary) -> Path:
    return atomic_write(path, dumps(summary_dict(summary)))


def sweep_table(rows) -> str:
    """CSV table ``value,success_rate,mean_evals,var_evals`` for a sweep."""
    lines = ["value,success_rate,mean_evals,var_evals"]
    for value, s in rows:
        cells = [fmt(value), fmt(s.success_rate),
                 "" if s.mean_evals is None else fmt(s.mean_evals),
                 "" if s.var_evals is None else fmt(s.var_evals)]
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# experiment configuration

class ConfigError(ValueError):
    pass


_TOP_KEYS = {"algorithm", "system", "bounds", "params", "distortion", "noise",
             "stopping", "runs", "seed", "output", "initial_state", "target"}
_SECTION_KEYS = {
    "system": {"n_qubits", "couplings", "total_time", "slice_count"},
    "distortion": {"t_r", "t_r_over_dt", "sub_steps", "propagator"},
    "noise": {"sigma", "mode"},
    "stopping": {"threshold_infidelity", "max_evals"},
    "output": {"dir"},
}


def _check_keys(section: str, data, allowed):
    if not isinstance(data, dict):
        raise ConfigError(f"{section}: expected an object")
    unknown = set(data) - set(allowed)
    if unknown:
        raise ConfigError(f"{section}: unknown key(s) {', '.join(sorted(unknown))}")


def _state(spec, n_qubits: int):
    if spec == "bell":
        return bell_target()
    if isinstance(spec, str) and set(spec) <= {"0", "1"} and len(spec) == n_qubits:
        return basis_state([int(c) for c in spec])
    raise ConfigError(f"unsupported state {spec!r}; use a bit string or 'bell'")


def experiment_from_config(cfg: dict, algorithm: str | None = None) -> Experiment:
    """Build an experiment; missing keys take the Bell-benchmark defaults."""
    _check_keys("config", cfg, _TOP_KEYS)
    for section, allowed in _SECTION_KEYS.items():
        if section in cfg:
            _check_keys(section, cfg[section], allowed)
    algorithm = algorithm or cfg.get("algorithm", "nmplus")
    if algorithm not in ALGORITHMS:
        raise ConfigError(f"algorithm: unknown value {algorithm!r}")
    params = dict(cfg.get("params", {}))
    _check_keys("params", params, {f.name for f in dataclasses.fields(CONFIG_TYPES[algorithm])})
    base = bell_benchmark(algorithm)
    try:
        sysd = cfg.get("system", {})
        system = SpinSystem(
            int(sysd.get("n_qubits", base.system.n_qubits)),
            tuple(tuple(c) for c in sysd.get("couplings", base.system.couplings)),
            float(sysd.get("total_time", base.system.total_time)),
            int(sysd.get("slice_count", base.system.slice_count)),
        )
        lo, hi = (float(b) for b in cfg.get("bounds", base.bounds))
        if algorithm != "grape":
            params.setdefault("lo", lo)
            params.setdefault("hi", hi)
        config = CONFIG_TYPES[algorithm](**params)
        dist = cfg.get("distortion", {})
        if "t_r" in dist and "t_r_over_dt" in dist:
            raise ConfigError("distortion: give either t_r or t_r_over_dt")
        t_r = float(dist["t_r"]) if "t_r" in dist else float(dist.get("t_r_over_dt", 0.0)) * system.dt
        distortion = DistortionConfig(t_r, int(dist.get("sub_steps", base.distortion.sub_steps)),
                                      dist.get("propagator", base.distortion.propagator))
        noise = cfg.get("noise", {})
        stop = cfg.get("stopping", {})
        stopping = StoppingRule(stop.get("threshold_infidelity", base.stopping.threshold_infidelity),
                                stop.get("max_evals", base.stopping.max_evals))
        return Experiment(
            system=system,
            initial_state=_state(cfg.get("initial_state", "0" * system.n_qubits), system.n_qubits),
            target=_state(cfg.get("target", "bell"), system.n_qubits),
            algorithm=algorithm,
            config=config,
            bounds=(lo, hi),
            distortion=distortion,
            noise_sigma=float(noise.get("sigma", base.noise_sigma)),
            noise_mode=noise.get("mode", base.noise_mode),
            stopping=stopping,
            runs=int(cfg.get("runs", base.runs)),
            master_seed=int(cfg.get("seed", base.master_seed)),
        )
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def _state_label(rho) -> str:
    if np.allclose(rho, bell_target()):
        return "bell"
    diag = np.real(np.diag(rho))
    idx = int(np.argmax(diag))
    n = int(round(np.log2(rho.shape[0])))
    label = format(idx, f"0{n}b")
    if not np.allclose(rho, basis_state([int(c) for c in label])):
        raise ConfigError("only basis states and the Bell target can be serialised")
    return label


def experiment_to_config(exp: Experiment) -> dict:
    return {
        "algorithm": exp.algorithm,
        "system": {
            "n_qubits": exp.system.n_qubits,
            "couplings": [list(c) for c in exp.system.couplings],
            "total_time": exp.system.total_time,
            "slice_count": exp.system.slice_count,
        },
        "initial_state": _state_label(exp.initial_state),
        "target": _state_label(exp.target),
        "bounds": list(exp.bounds),
        "params": dataclasses.asdict(exp.config),
        "distortion": {"t_r": exp.distortion.t_r, "sub_steps": exp.distortion.sub_steps,
                       "propagator": exp.distortion.propagator},
        "noise": {"sigma": exp.noise_sigma, "mode": exp.noise_mode},
        "stopping": {"threshold_infidelity": exp.stopping.threshold_infidelity,
                     "max_evals": exp.stopping.max_evals},
        "runs": exp.runs,
        "seed": exp.master_seed,
    }


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return data
