"""Command line driver: config parsing, the stage pipeline and file outputs.

Stages run in the order cell -> tensors -> macro -> fine -> converge; the
``report`` command summarizes tensors, stability constants and the smallness
check.  Every stage writes its results to the output directory so a later
stage can be re-run on its own (``--stage-only``).

Exit codes: 0 success, 1 invalid input or configuration, 2 numerical failure.
"""
from __future__ import annotations

import argparse
import configparser
import difflib
import hashlib
import os
import sys
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from fractions import Fraction
from types import SimpleNamespace

import numpy as np

from . import __version__
from .cellprob import MagCellSolution, StokesCellSolution
from .efftensors import EffectiveTensors, assemble_tensors, tensor_report
from .errors import ConfigurationError, MrhomogError, ValidationError
from .femcore import solvers
from .femcore.problem import DimensionlessParams
from .femcore.spaces import FESpace
from .fields import PROFILES
from .finescale import FineState, fine_magnetic_space, fine_pressure_space, fine_velocity_space
from .geomesh import CellGeometry, build_box_mesh, build_cell_mesh
from .io import (magnetic_rows, read_json, save_npz, sha256_file, tensor_rows, vertex_values, write_csv, write_json,
                 write_vtk)
from .macroms import MacroState, check_smallness, magnetic_space, velocity_space
from .twoscale import (StudyConfig, cell_stage, convergence_study, difference_field, estimate_constants,
                       fine_mesh_for, fine_stage, macro_stage)

STAGES = ("cell", "tensors", "macro", "fine", "converge")
COMMANDS = STAGES + ("report",)
OUT_ENV = "MRHOMOG_OUT"
DEFAULT_OUT = "mrhomog_out"


# ------------------------------------------------------------------ config

def _float(text: str) -> float:
    v = float(Fraction(text.strip())) if "/" in text else float(text)
    if not np.isfinite(v):
        raise ValueError("value must be finite")
    return v


def _int(text: str) -> int:
    return int(text.strip())


def _str(text: str) -> str:
    return text.strip()


def _field(text: str):
    t = text.strip()
    if t.lower() in PROFILES:
        return t.lower()
    try:
        vals = [_float(p) for p in t.split(",")]
    except ValueError:
        raise ValueError(f"unknown profile {t!r}; known profiles: {', '.join(sorted(PROFILES))}") from None
    return vals


def _eps_list(text: str):
    out = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        q = Fraction(part)
        out.append(q)
    if not out:
        raise ValueError("epsilon_list is empty")
    return out


def _formats(text: str):
    fm = [p.strip().lower() for p in text.split(",") if p.strip()]
    bad = [f for f in fm if f not in ("csv", "json", "vtk")]
    if bad:
        raise ValueError(f"unknown format(s) {bad}; use csv, json, vtk")
    return fm


def _opt_float(text: str):
    t = text.strip().lower()
    return None if t in ("", "auto", "none") else _float(t)


SCHEMA = {
    "cell": {"dim": (_int, "2"), "shape": (_str, ""), "radius": (_float, "0.25"), "h": (_float, "0.05"),
             "fe_order": (_int, "2")},
    "physics": {"Re": (_float, "1"), "Rm": (_float, "1"), "Al": (_float, "0"), "g": (_field, "swirl"),
                "h": (_field, "zero")},
    "macro": {"h": (_float, "1/32"), "tol": (_float, "1e-9"), "maxit": (_int, "30")},
    "fine": {"epsilon_list": (_eps_list, "1/4,1/8,1/16"), "mode": (_str, ""), "gamma_curl": (_opt_float, "auto"),
             "h": (_float, "0.125")},
    "output": {"dir": (_str, ""), "formats": (_formats, "csv,json,vtk")},
}


@dataclass
class Config:
    values: dict
    raw: dict
    lines: dict = field(default_factory=dict)
    source: str = ""

    def __getitem__(self, key):
        return self.values[key]

    def get(self, section: str, key: str):
        return self.values[section][key]

    @property
    def epsilons(self) -> list:
        return [float(q) for q in self.values["fine"]["epsilon_list"]]

    def params(self) -> DimensionlessParams:
        p = self.values["physics"]
        return DimensionlessParams(Re=p["Re"], Rm=p["Rm"], Al=p["Al"])

    def geometry(self) -> CellGeometry:
        c = self.values["cell"]
        return CellGeometry(dim=c["dim"], shape=c["shape"], radius=c["radius"])

    def study(self) -> StudyConfig:
        c, p, m, f = (self.values[k] for k in ("cell", "physics", "macro", "fine"))
        return StudyConfig(dim=c["dim"], shape=c["shape"], radius=c["radius"], cell_h=c["h"], fine_h=f["h"],
                           epsilons=tuple(self.epsilons), macro_h=m["h"], params=self.params(),
                           g=_field_value(p["g"]), h=_field_value(p["h"]), mode=f["mode"], tol=m["tol"],
                           maxit=m["maxit"], gamma_curl=f["gamma_curl"])

    def echo(self) -> str:
        out = []
        for sec in SCHEMA:
            out.append(f"[{sec}]")
            for key in SCHEMA[sec]:
                out.append(f"{key} = {self.raw[sec][key]}")
            out.append("")
        return "\n".join(out)

    def digest(self) -> str:
        return hashlib.sha256(self.echo().encode()).hexdigest()


def _field_value(v):
    return v if isinstance(v, str) else np.asarray(v, dtype=float)


def _line_map(text: str) -> dict:
    lines, sec = {}, None
    for no, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if s.startswith("[") and s.endswith("]"):
            sec = s[1:-1].strip()
        elif sec and s and s[0] not in "#;" and ("=" in s or ":" in s):
            key = s.split("=", 1)[0].split(":", 1)[0].strip()
            lines[(sec, key.lower())] = no
    return lines


def _where(lines, sec, key) -> str:
    no = lines.get((sec, key.lower()))
    return f"[{sec}] {key}" + (f" (line {no})" if no else "")


def parse_config(text: str, source: str = "<string>") -> Config:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigurationError(f"{source}: cannot parse config: {exc}") from exc
    lines = _line_map(text)
    raw = {sec: {k: default for k, (_, default) in keys.items()} for sec, keys in SCHEMA.items()}
    for sec in cp.sections():
        if sec not in SCHEMA:
            near = difflib.get_close_matches(sec, list(SCHEMA), n=1)
            hint = f"; did you mean [{near[0]}]?" if near else ""
            raise ConfigurationError(f"{source}: unknown section [{sec}]{hint}")
        canon = {k.lower(): k for k in SCHEMA[sec]}
        for key, val in cp.items(sec):
            if key.lower() not in canon:
                near = difflib.get_close_matches(key, list(SCHEMA[sec]), n=1, cutoff=0.4)
                hint = f"; nearest valid key: {near[0]!r}" if near else ""
                raise ConfigurationError(f"{source}: unknown key {_where(lines, sec, key)}{hint}")
            raw[sec][canon[key.lower()]] = val.strip()
    values = {}
    for sec, keys in SCHEMA.items():
        values[sec] = {}
        for key, (conv, _) in keys.items():
            try:
                values[sec][key] = conv(raw[sec][key])
            except (ValueError, ZeroDivisionError) as exc:
                raise ConfigurationError(f"{source}: invalid value for {_where(lines, sec, key)}: {exc}") from None
    cfg = Config(values=values, raw=raw, lines=lines, source=source)
    _fill_and_validate(cfg)
    return cfg


def _fill_and_validate(cfg: Config):
    v, raw, lines, src = cfg.values, cfg.raw, cfg.lines, cfg.source

    def fail(sec, key, msg):
        raise ValidationError(f"{src}: {_where(lines, sec, key)}: {msg}")

    c = v["cell"]
    if c["dim"] not in (2, 3):
        fail("cell", "dim", f"dim must be 2 or 3, got {c['dim']}")
    if not c["shape"]:
        c["shape"] = raw["cell"]["shape"] = "disk" if c["dim"] == 2 else "sphere"
    if c["fe_order"] != 2:
        fail("cell", "fe_order", "only the Taylor-Hood pair (velocity order 2) is available")
    if c["h"] <= 0 or c["h"] > 0.5:
        fail("cell", "h", f"mesh size must lie in (0, 0.5], got {c['h']}")
    try:
        CellGeometry(dim=c["dim"], shape=c["shape"], radius=c["radius"])
    except ValidationError as exc:
        fail("cell", "radius", str(exc))
    p = v["physics"]
    for key in ("Re", "Rm", "Al"):
        if p[key] < 0:
            fail("physics", key, f"{key} must be non-negative")
    if p["Rm"] <= 0:
        fail("physics", "Rm", "Rm must be positive")
    for key in ("g", "h"):
        val = p[key]
        if not isinstance(val, str) and len(val) != c["dim"]:
            fail("physics", key, f"constant vector needs {c['dim']} components, got {len(val)}")
        if isinstance(val, str) and val == "loop" and c["dim"] != 3:
            fail("physics", key, "profile 'loop' is three-dimensional")
    if p["Al"] > 0 and c["dim"] != 3:
        fail("physics", "Al", "magnetic coupling (Al > 0) needs dim = 3")
    m = v["macro"]
    if not 0 < m["h"] <= 0.5:
        fail("macro", "h", f"mesh size must lie in (0, 0.5], got {m['h']}")
    if m["tol"] <= 0:
        fail("macro", "tol", "tolerance must be positive")
    if m["maxit"] < 1:
        fail("macro", "maxit", "maxit must be >= 1")
    f = v["fine"]
    for q in f["epsilon_list"]:
        if not 0 < q <= 1:
            fail("fine", "epsilon_list", f"epsilon {q} outside (0, 1]")
        if (1 / q).denominator != 1:
            fail("fine", "epsilon_list", f"1/epsilon must be an integer so the lattice tiles the unit box, got {q}")
    if len(set(f["epsilon_list"])) != len(f["epsilon_list"]):
        fail("fine", "epsilon_list", "duplicate epsilon values")
    if not f["mode"]:
        f["mode"] = raw["fine"]["mode"] = "hydro2d" if c["dim"] == 2 else "coupled3d"
    if f["mode"] not in ("hydro2d", "coupled3d"):
        fail("fine", "mode", f"unknown mode {f['mode']!r}; expected hydro2d or coupled3d")
    if (f["mode"] == "hydro2d") != (c["dim"] == 2):
        fail("fine", "mode", f"mode {f['mode']} does not match dim = {c['dim']}")
    if f["mode"] == "hydro2d" and p["Al"] != 0:
        fail("fine", "mode", "hydro2d runs without magnetics (Al = 0)")
    if f["gamma_curl"] is not None and f["gamma_curl"] <= 0:
        fail("fine", "gamma_curl", "penalty must be positive")
    if not 0 < f["h"] <= 0.5:
        fail("fine", "h", f"relative mesh size must lie in (0, 0.5], got {f['h']}")


def load_config(path: str) -> Config:
    """Read and validate a key = value config file; defaults are filled in."""
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path!r}: {exc.strerror}") from exc
    return parse_config(text, source=path)


def eps_tag(q: Fraction) -> str:
    return f"eps_{q.numerator}_{q.denominator}"


# ------------------------------------------------------------------ manifest

@dataclass
class RunManifest:
    command: str
    config_hash: str
    version: str = __version__
    deterministic: bool = False
    threads: int = 1
    started: str = ""
    finished: str = ""
    status: str = "running"
    exit_code: int | None = None
    error: str | None = None
    stages: dict = field(default_factory=dict)
    residuals: dict = field(default_factory=dict)
    tolerances: dict = field(default_factory=dict)
    files: dict = field(default_factory=dict)
    config: str = ""

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


class Pipeline:
    """Runs stages, loading prerequisites from the output directory when available."""

    def __init__(self, cfg: Config, out: str, manifest: RunManifest, stage_only: bool):
        self.cfg = cfg
        self.out = out
        self.man = manifest
        self.stage_only = stage_only
        self.study = cfg.study()
        self.formats = cfg.get("output", "formats")
        self.state = {}

    # -- helpers
    def path(self, name: str) -> str:
        return os.path.join(self.out, name)

    def wants(self, fmt: str) -> bool:
        return fmt in self.formats

    def record(self, stage: str, seconds: float, residuals: dict | None = None, source: str = "computed"):
        self.man.stages[stage] = {"seconds": round(seconds, 6) if not self.man.deterministic else None,
                                  "source": source}
        if residuals:
            self.man.residuals[stage] = residuals

    def require(self, stage: str):
        """Result of ``stage``: in memory, loaded from disk, or computed."""
        if stage in self.state:
            return self.state[stage]
        loader = getattr(self, f"load_{stage}", None)
        if self.stage_only and loader is not None:
            res = loader()
            if res is not None:
                self.state[stage] = res
                self.record(stage, 0.0, source="loaded")
                return res
        t0 = time.perf_counter()
        res = getattr(self, f"run_{stage}")()
        self.state[stage] = res
        self.man.stages.setdefault(stage, {})
        self.record(stage, time.perf_counter() - t0, self.man.residuals.get(stage))
        return res

    # -- cell
    def run_cell(self):
        cells, mag, tensors = cell_stage(self.study)
        arrays = {"omega": cells.omega, "pi": cells.pi, "volume_fraction": np.array(cells.volume_fraction)}
        if mag is not None:
            arrays.update(theta=mag.theta, psi=mag.psi)
        save_npz(self.path("cell_solution.npz"), **arrays)
        res = {"stokes_solve_max": max(r["solve"] for r in cells.residuals.values()),
               "stokes_div_max": max(r["div"] for r in cells.residuals.values())}
        if mag is not None:
            res["mag_solve_max"] = max(max(r.values()) for r in mag.residuals.values())
        self.man.residuals["cell"] = res
        self.man.tolerances.update(stokes_solve_max=solvers.RESIDUAL_TOL, stokes_div_max=1e-8,
                                   mag_solve_max=solvers.RESIDUAL_TOL)
        if self.wants("vtk"):
            pd = {}
            d = cells.dim
            for i in range(d):
                for j in range(i, d):
                    pd[f"omega_{i + 1}{j + 1}"] = vertex_values(cells.V, cells.omega[i, j])
                    pd[f"pi_{i + 1}{j + 1}"] = vertex_values(cells.Q, cells.pi[i, j])
            write_vtk(self.path("cell.vtk"), cells.mesh, pd, {"cell_tag": cells.mesh.cell_tags}, "cell solutions")
        return cells, mag, tensors

    def load_cell(self):
        p = self.path("cell_solution.npz")
        if not os.path.exists(p):
            return None
        data = np.load(p)
        st = self.study
        mesh = build_cell_mesh(st.geometry(), st.cell_h)
        d = mesh.dim
        V, Q = FESpace(mesh, 2, d), FESpace(mesh, 1, 1)
        if data["omega"].shape != (d, d, V.ndofs):
            raise ConfigurationError(f"{p} does not match the configured cell mesh; re-run the cell stage")
        cells = StokesCellSolution(mesh=mesh, V=V, Q=Q, omega=data["omega"], pi=data["pi"],
                                   solved=np.ones((d, d), bool), volume_fraction=float(data["volume_fraction"]))
        mag = None
        if "theta" in data and st.params.magnetic:
            mag = MagCellSolution(mesh=mesh, V=V, theta=data["theta"], psi=data["psi"], Rm=st.params.Rm,
                                  gamma_curl=st.gamma_curl or 1e6, volume_fraction=cells.volume_fraction)
        return cells, mag, None

    # -- tensors
    def run_tensors(self):
        cells, mag, tensors = self.require("cell")
        if tensors is None:
            tensors = assemble_tensors(cells, mag)
        write_json(self.path("tensors.json"), tensors.to_dict())
        rep = tensor_report(tensors)
        write_json(self.path("tensor_report.json"), rep)
        if self.wants("csv"):
            write_csv(self.path("tensors.csv"), *tensor_rows(tensors))
            if tensors.M is not None:
                write_csv(self.path("tensors_magnetic.csv"), *magnetic_rows(tensors))
        self.man.residuals["tensors"] = {"N_major_symmetry": rep["N"]["major_symmetry_deviation"]}
        self.man.tolerances["N_major_symmetry"] = 1e-8
        return tensors

    def load_tensors(self):
        p = self.path("tensors.json")
        return EffectiveTensors.from_dict(read_json(p)) if os.path.exists(p) else None

    # -- macro
    def run_macro(self):
        tensors = self.require("tensors")
        st = macro_stage(self.study, tensors)
        arrays = {"u0": st.u0, "Pi": st.Pi}
        if st.B0 is not None:
            arrays["B0"] = st.B0
        save_npz(self.path("macro.npz"), **arrays)
        write_json(self.path("macro.json"), {"iterations": st.iterations, "converged": st.converged,
                                             "history": st.history, "diagnostics": st.diagnostics})
        if self.wants("vtk"):
            pd = {"u0": vertex_values(st.V, st.u0), "Pi": vertex_values(st.Q, st.Pi)}
            if st.B0 is not None:
                pd["B0"] = vertex_values(st.W, st.B0)
            write_vtk(self.path("macro.vtk"), st.mesh, pd, None, "homogenized solution")
        self.man.residuals["macro"] = {"solve_residual": st.diagnostics["solve_residual"]}
        self.man.tolerances["solve_residual"] = solvers.RESIDUAL_TOL
        return st

    def load_macro(self):
        p = self.path("macro.npz")
        if not os.path.exists(p):
            return None
        tensors = self.require("tensors")
        st = self.study
        mesh = build_box_mesh(np.zeros(st.dim), np.ones(st.dim), st.macro_h)
        data = np.load(p)
        V, _ = velocity_space(mesh)
        if data["u0"].shape != (V.ndofs,):
            raise ConfigurationError(f"{p} does not match the configured macro mesh; re-run the macro stage")
        W = magnetic_space(mesh)[0] if "B0" in data else None
        return MacroState(mesh=mesh, V=V, Q=FESpace(mesh, 1, 1), W=W, u0=data["u0"], Pi=data["Pi"],
                          B0=data["B0"] if "B0" in data else None, N=np.asarray(tensors.N))

    # -- fine
    def run_fine(self):
        if not self.stage_only:
            self.require("macro")
        out = {}
        resid = {}
        for q in self.cfg.get("fine", "epsilon_list"):
            eps = float(q)
            tag = eps_tag(q)
            st = fine_stage(self.study, eps)
            out[eps] = st
            arrays = {"u": st.u, "p": st.p}
            if st.B is not None:
                arrays["B"] = st.B
            save_npz(self.path(f"fine_{tag}.npz"), **arrays)
            write_json(self.path(f"fine_{tag}.json"), {"epsilon": str(q), "iterations": st.iterations,
                                                       "converged": st.converged, "norms": st.norms(),
                                                       "history": st.history, "diagnostics": st.diagnostics})
            if self.wants("vtk"):
                pd = {"u": vertex_values(st.V, st.u), "p": vertex_values(st.Q, st.p)}
                if st.B is not None:
                    pd["B"] = vertex_values(st.W, st.B)
                write_vtk(self.path(f"fine_{tag}.vtk"), st.mesh, pd, {"cell_tag": st.mesh.cell_tags},
                          f"fine solution epsilon={q}")
            resid[f"solve_residual_{tag}"] = st.diagnostics["solve_residual"]
            self.man.tolerances[f"solve_residual_{tag}"] = solvers.RESIDUAL_TOL
        self.man.residuals["fine"] = resid
        return out

    def load_fine(self):
        out = {}
        st = self.study
        for q in self.cfg.get("fine", "epsilon_list"):
            tag = eps_tag(q)
            p, pj = self.path(f"fine_{tag}.npz"), self.path(f"fine_{tag}.json")
            if not (os.path.exists(p) and os.path.exists(pj)):
                return None
            data, meta = np.load(p), read_json(pj)
            mesh = fine_mesh_for(st, float(q))
            V, Q = fine_velocity_space(mesh)[0], fine_pressure_space(mesh)[0]
            W = fine_magnetic_space(mesh)[0] if "B" in data else None
            out[float(q)] = FineState(mesh=mesh, mode=st.mode, params=st.params, V=V, Q=Q, W=W, u=data["u"],
                                      p=data["p"], B=data["B"] if "B" in data else None, rigid_motions={},
                                      history=meta["history"], iterations=meta["iterations"],
                                      converged=meta["converged"], diagnostics=meta["diagnostics"])
        return out

    # -- converge
    def run_converge(self):
        cells, _, _ = self.require("cell")
        tensors = self.require("tensors")
        macro = self.require("macro")
        fines = self.require("fine")
        rep = convergence_study(self.study, cells=cells, tensors=tensors, macro=macro, fines=fines)
        with open(self.path("convergence.csv"), "w", encoding="utf-8", newline="") as fh:
            fh.write(rep.to_csv())
        if self.wants("json"):
            write_json(self.path("convergence.json"), {"columns": rep.columns(), "rows": rep.table(),
                                                       "failures": rep.failures})
        if self.wants("vtk"):
            for q in self.cfg.get("fine", "epsilon_list"):
                st = rep.fines.get(float(q))
                if st is not None:
                    write_vtk(self.path(f"diff_{eps_tag(q)}.vtk"), st.mesh,
                              {"u_minus_u0": difference_field(st, macro)}, None, f"u_eps - u0, epsilon={q}")
        if rep.failures:
            raise _StageFailure(f"{len(rep.failures)} epsilon value(s) failed: "
                                + "; ".join(f"{r['epsilon']}: {r['failed']}" for r in rep.failures))
        return rep

    # -- report
    def run_report(self):
        tensors = self.require("tensors")
        st = self.study
        params = st.params
        h = max(st.macro_h, 1.0 / 16) if st.dim == 2 else 1.0 / 6
        mesh = build_box_mesh(np.zeros(st.dim), np.ones(st.dim), h)
        consts = {"kappa_K": estimate_constants(mesh, "kappa_K"), "kappa_S": estimate_constants(mesh, "kappa_S"),
                  "kappa_GR": estimate_constants(mesh, "kappa_GR") if params.magnetic else None,
                  "mesh_h": h}
        small = check_smallness(params, st.g, st.h, SimpleNamespace(**consts), mesh=mesh)
        doc = {"tensors": tensor_report(tensors), "constants": consts, "smallness": small.to_dict()}
        conv = self.path("convergence.csv")
        if os.path.exists(conv):
            doc["convergence_csv_sha256"] = sha256_file(conv)
        write_json(self.path("report.json"), doc)
        return doc


class _StageFailure(MrhomogError):
    pass


# ------------------------------------------------------------------ driver

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mrhomog", description="Periodic homogenization of magnetizable particle suspensions.")
    p.add_argument("command", choices=COMMANDS, help="pipeline stage to run (earlier stages run as needed)")
    p.add_argument("--config", required=True, metavar="PATH", help="config file (key = value under [section])")
    p.add_argument("--out", metavar="DIR", help=f"output directory (default: [output] dir, ${OUT_ENV}, "
                                               f"or ./{DEFAULT_OUT})")
    p.add_argument("--deterministic", action="store_true", help="single-threaded, no timings in outputs")
    p.add_argument("--threads", type=int, default=1, metavar="N", help="solver threads (default 1)")
    p.add_argument("--stage-only", action="store_true",
                   help="run only this stage, reusing earlier outputs found in the output directory")
    return p


def _file_inventory(out: str) -> dict:
    files = {}
    for name in sorted(os.listdir(out)):
        full = os.path.join(out, name)
        if os.path.isfile(full) and name != "manifest.json":
            files[name] = {"sha256": sha256_file(full), "bytes": os.path.getsize(full)}
    return files


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    man = RunManifest(command=args.command, config_hash="", deterministic=args.deterministic, started=_now())
    out = None
    code = 0
    try:
        cfg = load_config(args.config)
        man.config_hash = cfg.digest()
        man.config = cfg.echo()
        out = args.out or cfg.get("output", "dir") or os.environ.get(OUT_ENV) or DEFAULT_OUT
        os.makedirs(out, exist_ok=True)
        if args.threads < 1:
            raise ConfigurationError("--threads must be >= 1")
        threads = 1 if args.deterministic else args.threads
        solvers.set_threads(threads)
        man.threads = threads
        print(cfg.echo())
        pipe = Pipeline(cfg, out, man, args.stage_only)
        if args.command == "report" or args.stage_only:
            pipe.require(args.command)
        else:
            for st in STAGES[:STAGES.index(args.command) + 1]:
                pipe.require(st)
        man.status = "ok"
    except ValidationError as exc:
        code, man.status, man.error = 1, "invalid input", f"{type(exc).__name__}: {exc}"
    except OSError as exc:
        code, man.status, man.error = 1, "i/o error", f"{type(exc).__name__}: {exc}"
    except MrhomogError as exc:
        code, man.status, man.error = 2, "numerical failure", f"{type(exc).__name__}: {exc}"
    if code:
        print(f"mrhomog: {man.error}", file=sys.stderr)
        if code == 1 and out is None:
            parser.print_usage(sys.stderr)
    man.exit_code = code
    man.finished = _now()
    if out is None:
        out = args.out or os.environ.get(OUT_ENV) or DEFAULT_OUT
    try:
        os.makedirs(out, exist_ok=True)
        man.files = _file_inventory(out)
        write_json(os.path.join(out, "manifest.json"), man.to_dict())
    except OSError as exc:
        print(f"mrhomog: cannot write manifest: {exc}", file=sys.stderr)
        code = code or 1
    return code


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
