"""INI case files: schema validation with canonical serialization, and case construction.

Layout::

    [mesh]        nx, ny, domain = x0 x1 y0 y1, stretching = rx ry, skew, y_grading,
                  patches = left:inlet right:outlet bottom:wall top:wall
    [fluid]       rho (required), mu (required), mu_phi
    [scheme]      mwi, concept, nonorth, blend, beta_form, solve_scalar, convection
    [run]         omega_v, omega_p, omega_phi, dt, tol, max_iter, linear_solver
    [body_force]  gravity = gx gy, buoyancy, layer_axis, layer_height, layer_densities = below above
    [initial]     phi
    [bc.<patch>]  velocity, pressure, phi
    [adjoint]     mode, objective, region = x0 x1 y0 y1, target, patches, direction, tol, max_iter
    [reference]   velocity, length
    [output]      directory, write_every

Velocity values are ``U V`` or ``parabolic MEAN``; scalar values are a
number or ``tanh CENTRE WIDTH`` (a front in ``y``, 1 below and 0 above).
"""

from __future__ import annotations

import configparser
import hashlib
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .adjoint import BOUNDARY_KINDS, MWI_MODES, VOLUME_KINDS, Objective
from .cases import centre_clustered_nodes
from .case import BETA_FORMS, CONCEPTS, MWI_VARIANTS, BodyForceModel, Case, ConfigError, PatchBC, SolverConfig
from .mesh import PATCH_KINDS, build_structured_mesh

REQUIRED = object()


def _floats(n=None):
    def parse(text):
        vals = tuple(float(t) for t in text.split())
        if n is not None and len(vals) != n:
            raise ValueError(f"expected {n} numbers")
        return vals

    return parse


def _choice(options):
    def parse(text):
        if text not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return text

    return parse


def _bool(text):
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected a boolean")


def _float(text):
    return float(text)


def _opt_float(text):
    return None if text.lower() == "none" else float(text)


def _int(text):
    return int(text)


def _text(text):
    return text


def _patch_map(text):
    out = {}
    for item in text.split():
        name, _, kind = item.partition(":")
        if kind not in PATCH_KINDS:
            raise ValueError(f"patch {name!r} has unknown kind {kind!r}")
        out[name] = kind
    return out


def _words(text):
    return tuple(text.split())


SCHEMA = {
    "mesh": {
        "nx": (_int, REQUIRED),
        "ny": (_int, REQUIRED),
        "domain": (_floats(4), (0.0, 1.0, 0.0, 1.0)),
        "stretching": (_floats(2), (1.0, 1.0)),
        "skew": (_float, 0.0),
        "y_grading": (_choice(("geometric", "centre")), "geometric"),
        "patches": (_patch_map, {}),
    },
    "fluid": {"rho": (_float, REQUIRED), "mu": (_float, REQUIRED), "mu_phi": (_float, 0.01)},
    "scheme": {
        "mwi": (_choice(MWI_VARIANTS), "body-force"),
        "concept": (_choice(CONCEPTS), "C2"),
        "nonorth": (_bool, False),
        "blend": (_float, 0.9),
        "beta_form": (_choice(BETA_FORMS), "volume"),
        "solve_scalar": (_bool, False),
        "convection": (_bool, True),
    },
    "run": {
        "omega_v": (_float, 0.7),
        "omega_p": (_float, 0.3),
        "omega_phi": (_float, 1.0),
        "dt": (_float, math.inf),
        "tol": (_float, 1e-8),
        "max_iter": (_int, 1000),
        "linear_solver": (_choice(("direct", "iterative")), "direct"),
    },
    "body_force": {
        "gravity": (_floats(2), (0.0, 0.0)),
        "buoyancy": (_float, 0.0),
        "layer_axis": (_choice(("x", "y")), "y"),
        "layer_height": (_opt_float, None),
        "layer_densities": (_floats(2), (0.0, 0.0)),
    },
    "initial": {"phi": (_text, "0")},
    "adjoint": {
        "mode": (_choice(MWI_MODES), "E3"),
        "objective": (_choice(VOLUME_KINDS + BOUNDARY_KINDS), "kinetic"),
        "region": (_floats(4), (-math.inf, math.inf, -math.inf, math.inf)),
        "target": (_float, 0.0),
        "patches": (_words, ()),
        "direction": (_floats(2), (1.0, 0.0)),
        "tol": (_float, 1e-8),
        "max_iter": (_int, 5000),
    },
    "reference": {"velocity": (_float, 1.0), "length": (_float, 1.0)},
    "output": {"directory": (_text, "out"), "write_every": (_int, 0)},
}

BC_SCHEMA = {"velocity": (_text, "0 0"), "pressure": (_float, 0.0), "phi": (_text, "")}

#: sections that must appear in every case file
MANDATORY = ("mesh", "fluid")


def _line_index(text: str) -> dict:
    """Map ``(section, key)`` and ``(section, None)`` to 1-based line numbers."""
    index = {}
    section = None
    for n, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        m = re.match(r"^\[([^\]]+)\]$", stripped)
        if m:
            section = m.group(1).strip()
            index[(section, None)] = n
        elif section and stripped and not stripped.startswith(("#", ";")):
            key = re.split(r"[=:]", stripped, maxsplit=1)[0].strip().lower()
            index.setdefault((section, key), n)
    return index


@dataclass
class CaseConfig:
    """Typed, schema-validated contents of a case file."""

    sections: dict = field(default_factory=dict)
    bcs: dict = field(default_factory=dict)

    def __getitem__(self, section: str) -> dict:
        return self.sections[section]

    def serialize(self) -> str:
        lines = []
        for name in SCHEMA:
            lines.append(f"[{name}]")
            for key, value in self.sections[name].items():
                lines.append(f"{key} = {_format(value)}")
            lines.append("")
        for patch, values in sorted(self.bcs.items()):
            lines.append(f"[bc.{patch}]")
            for key, value in values.items():
                lines.append(f"{key} = {_format(value)}")
            lines.append("")
        return "\n".join(lines)

    def checksum(self) -> str:
        return hashlib.sha256(self.serialize().encode()).hexdigest()[:16]


def _format(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, dict):
        return " ".join(f"{k}:{v}" for k, v in value.items())
    if isinstance(value, tuple):
        return " ".join(_format(v) for v in value)
    return str(value)


def parse_config(text: str, source: str = "<config>") -> CaseConfig:
    """Validate ``text`` against the schema; errors carry file line numbers."""
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    lines = _line_index(text)

    def where(section, key=None):
        n = lines.get((section, key)) or lines.get((section, None))
        return f"{source}:{n}" if n else source

    for name in MANDATORY:
        if not parser.has_section(name):
            raise ConfigError(f"{source}: missing section [{name}]")
    cfg = CaseConfig()
    for section in parser.sections():
        if section.startswith("bc."):
            patch = section[3:]
            cfg.bcs[patch] = _read_section(parser, section, BC_SCHEMA, where)
        elif section not in SCHEMA:
            raise ConfigError(f"{where(section)}: unknown section [{section}]")
    for name, schema in SCHEMA.items():
        if parser.has_section(name):
            cfg.sections[name] = _read_section(parser, name, schema, where)
        else:
            cfg.sections[name] = {k: default for k, (_, default) in schema.items()}
    return cfg


def _read_section(parser, section, schema, where) -> dict:
    unknown = set(parser[section]) - set(schema)
    if unknown:
        key = sorted(unknown)[0]
        raise ConfigError(f"{where(section, key)}: unknown key {key!r} in [{section}]")
    out = {}
    for key, (conv, default) in schema.items():
        if key in parser[section]:
            raw = parser[section][key]
            try:
                out[key] = conv(raw)
            except ValueError as exc:
                raise ConfigError(f"{where(section, key)}: bad value for {section}.{key} = {raw!r}: {exc}") from exc
        elif default is REQUIRED:
            raise ConfigError(f"{where(section)}: missing required key {key!r} in [{section}]")
        else:
            out[key] = default
    return out


def load_config(path: str | Path) -> CaseConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    return parse_config(text, str(path))


# -- case construction ------------------------------------------------------------------


def _velocity_value(text: str, extent: tuple, where: str):
    tok = text.split()
    if tok and tok[0] == "parabolic":
        mean = float(tok[1]) if len(tok) > 1 else 1.0
        y0, y1 = extent
        h = y1 - y0

        def profile(xy):
            s = xy[:, 1] - y0
            return np.stack([6.0 * mean * s * (h - s) / h**2, np.zeros(len(xy))], axis=1)

        return profile
    try:
        vals = tuple(float(t) for t in tok)
    except ValueError as exc:
        raise ConfigError(f"{where}: bad velocity {text!r}") from exc
    if len(vals) != 2:
        raise ConfigError(f"{where}: velocity needs two components or 'parabolic MEAN'")
    return vals


def scalar_value(text: str, where: str = "scalar"):
    """Number, ``tanh CENTRE WIDTH`` or empty (meaning none)."""
    tok = text.split()
    if not tok:
        return None
    try:
        if tok[0] == "tanh":
            centre, width = float(tok[1]), float(tok[2])
            return lambda xy: 0.5 * (1.0 - np.tanh((xy[:, 1] - centre) / width))
        if len(tok) == 1:
            return float(tok[0])
    except (ValueError, IndexError):
        pass
    raise ConfigError(f"{where}: bad scalar value {text!r}")


def build_case(cfg: CaseConfig, name: str = "case") -> Case:
    ms = cfg["mesh"]
    x0, x1, y0, y1 = ms["domain"]
    rx, ry = ms["stretching"]
    y_nodes = None
    if ms["y_grading"] == "centre":
        y_nodes = y0 + centre_clustered_nodes(ms["ny"], y1 - y0, ry)
        ry = 1.0
    mesh = build_structured_mesh(ms["nx"], ms["ny"], domain=((x0, x1), (y0, y1)), stretching=(rx, ry),
                                 skew=ms["skew"], patch_kinds=ms["patches"] or None, y_nodes=y_nodes)
    fl, sc, rn = cfg["fluid"], cfg["scheme"], cfg["run"]
    solver = SolverConfig(
        rho=fl["rho"], mu=fl["mu"], mu_phi=fl["mu_phi"], omega_v=rn["omega_v"], omega_p=rn["omega_p"],
        omega_phi=rn["omega_phi"], dt=rn["dt"], convection=sc["convection"], blend=sc["blend"], mwi=sc["mwi"],
        beta_form=sc["beta_form"], nonorth=sc["nonorth"], solve_scalar=sc["solve_scalar"], tol=rn["tol"],
        max_iter=rn["max_iter"], linear_solver=rn["linear_solver"],
    )
    bcs = {}
    for patch, values in cfg.bcs.items():
        if patch not in mesh.patches:
            raise ConfigError(f"[bc.{patch}]: no such patch")
        bcs[patch] = PatchBC(
            velocity=_velocity_value(values["velocity"], (y0, y1), f"[bc.{patch}]"),
            pressure=values["pressure"],
            phi=scalar_value(values["phi"], f"[bc.{patch}]"),
        )
    bf = cfg["body_force"]
    base = None
    if bf["layer_height"] is not None:
        axis = 0 if bf["layer_axis"] == "x" else 1
        below, above = bf["layer_densities"]
        rho = np.where(mesh.cell_centroid[:, axis] < bf["layer_height"], below, above)
        base = rho[:, None] * np.asarray(bf["gravity"], float)[None, :]
    body = BodyForceModel(base=base, gravity=bf["gravity"], buoyancy=bf["buoyancy"], concept=sc["concept"])
    return Case(mesh, solver, bcs=bcs, body_force=body, name=name)


def initial_phi(cfg: CaseConfig, case: Case):
    initial = scalar_value(cfg["initial"]["phi"], "[initial]")
    if initial is None:
        return None
    if callable(initial):
        return initial(case.mesh.cell_centroid)
    return np.full(case.mesh.n_cells, initial)


def build_objective(cfg: CaseConfig, case: Case) -> Objective:
    ad = cfg["adjoint"]
    x0, x1, y0, y1 = ad["region"]
    xy = case.mesh.cell_centroid
    kind = ad["objective"]
    if kind in VOLUME_KINDS:
        region = (xy[:, 0] > x0) & (xy[:, 0] < x1) & (xy[:, 1] > y0) & (xy[:, 1] < y1)
        if not region.any():
            raise ConfigError("[adjoint]: objective region contains no cells")
        return Objective(volume=kind, region=region, target=ad["target"])
    return Objective(volume=None, boundary=kind, patches=ad["patches"], direction=ad["direction"])


def reference_numbers(cfg: CaseConfig) -> dict:
    """Reynolds ``v D / nu`` and Froude ``v / sqrt(2 G D)`` numbers of the reference scales."""
    v, D = cfg["reference"]["velocity"], cfg["reference"]["length"]
    nu = cfg["fluid"]["mu"] / cfg["fluid"]["rho"]
    G = float(np.linalg.norm(cfg["body_force"]["gravity"]))
    fn = v / math.sqrt(2.0 * G * D) if G > 0.0 else math.inf
    return {"Re": v * D / nu, "Fn": fn}
