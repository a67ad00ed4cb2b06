"""Run configuration: one INI-style file drives every CLI experiment.

All defaults equal the main-study values (11x11 unit square, left=1/right=0,
homogeneous k=1, rho=10, c=1, 1200/1500/300 samples, separated nets [10,10],
swish, Adam, lr 1e-3, batch 60, dt 0.05). A config file only needs the keys
it overrides.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass
from pathlib import Path

from .errors import ValidationError
from .fem import ConductivityField, MaterialParams, load_conductivity
from .mesh import DirichletSpec, Mesh, build_structured_grid, load_mesh
from .sampling import FourierParams

DEFAULT_CONFIG = """\
[mesh]
source = structured      ; structured | file
nx = 11
ny = 11
width = 1.0
height = 1.0
path =                   ; mesh file when source = file

[dirichlet]
left = 1.0
right = 0.0

[conductivity]
kind = homogeneous       ; homogeneous | inclusions | file
value = 1.0
background = 1.0
inclusion = 0.1
circles = 0.3,0.65,0.17; 0.7,0.3,0.15; 0.55,0.82,0.1
path =

[material]
rho = 10.0
c = 1.0

[samples]
fourier = 1200
gaussian = 1500
constant = 300
n_terms = 50
offset_ranges = 0:0.5, 0.5:1, 1:1.5
amp_x_ranges = 0.01:0.1, 0.1:0.5, 0.5:1, 1:1.5, 1.5:2
amp_y_ranges = 0.01:0.1, 0.1:0.5, 0.5:1, 1:1.5, 1.5:2
freq_x_ranges = 0:0, 0.001:0.01, 0.01:0.1, 0.1:1, 1.1:2, 2.1:4, 4.1:6
freq_y_ranges = 0:0, 0.001:0.01, 0.01:0.1, 0.1:1, 1.1:2, 2.1:4, 4.1:6

[train]
arch = separated         ; separated | elementwise | fully_connected
activation = swish
optimizer = adam         ; adam | lbfgs
epochs = 1000
batch_size = 60
lr = 0.001
dt = 0.05
hidden =                 ; blank = architecture default

[run]
seed = 0
"""


def _parse_ranges(text: str, what: str) -> tuple:
    out = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        try:
            lo, hi = part.split(":")
            out.append((float(lo), float(hi)))
        except ValueError:
            raise ValidationError(f"{what}: expected 'lo:hi' pairs, got {part!r}") from None
    if not out:
        raise ValidationError(f"{what}: no intervals given")
    return tuple(out)


def _parse_circles(text: str) -> tuple:
    out = []
    for part in text.split(";"):
        part = part.strip()
        if not part:
            continue
        try:
            cx, cy, r = (float(v) for v in part.split(","))
        except ValueError:
            raise ValidationError(f"circles: expected 'x,y,r' triples, got {part!r}") from None
        out.append((cx, cy, r))
    return tuple(out)


@dataclass
class RunConfig:
    raw_text: str
    parser: configparser.ConfigParser
    base_dir: Path

    def _get(self, section: str, key: str) -> str:
        return self.parser.get(section, key).strip()

    def build_mesh(self) -> Mesh:
        source = self._get("mesh", "source")
        if source == "structured":
            return build_structured_grid(
                self.parser.getint("mesh", "nx"),
                self.parser.getint("mesh", "ny"),
                self.parser.getfloat("mesh", "width"),
                self.parser.getfloat("mesh", "height"),
            )
        if source == "file":
            path = self._resolve(self._get("mesh", "path"), "mesh.path")
            return load_mesh(path.read_text())
        raise ValidationError(f"mesh.source must be 'structured' or 'file', got {source!r}")

    def dirichlet(self) -> DirichletSpec:
        entries = {
            tag: float(value) for tag, value in self.parser.items("dirichlet")
        }
        if not entries:
            raise ValidationError("config must prescribe at least one Dirichlet boundary")
        return DirichletSpec(entries)

    def conductivity(self, mesh: Mesh) -> ConductivityField:
        kind = self._get("conductivity", "kind")
        if kind == "homogeneous":
            return ConductivityField.homogeneous(mesh, self.parser.getfloat("conductivity", "value"))
        if kind == "inclusions":
            return ConductivityField.inclusions(
                mesh,
                circles=_parse_circles(self._get("conductivity", "circles")),
                background=self.parser.getfloat("conductivity", "background"),
                inclusion=self.parser.getfloat("conductivity", "inclusion"),
            )
        if kind == "file":
            path = self._resolve(self._get("conductivity", "path"), "conductivity.path")
            return load_conductivity(path, mesh.n_nodes)
        raise ValidationError(
            f"conductivity.kind must be homogeneous|inclusions|file, got {kind!r}"
        )

    def material(self) -> MaterialParams:
        return MaterialParams(
            self.parser.getfloat("material", "rho"), self.parser.getfloat("material", "c")
        )

    def fourier_params(self) -> FourierParams:
        return FourierParams(
            n_terms=self.parser.getint("samples", "n_terms"),
            offset_ranges=_parse_ranges(self._get("samples", "offset_ranges"), "offset_ranges"),
            amp_x_ranges=_parse_ranges(self._get("samples", "amp_x_ranges"), "amp_x_ranges"),
            amp_y_ranges=_parse_ranges(self._get("samples", "amp_y_ranges"), "amp_y_ranges"),
            freq_x_ranges=_parse_ranges(self._get("samples", "freq_x_ranges"), "freq_x_ranges"),
            freq_y_ranges=_parse_ranges(self._get("samples", "freq_y_ranges"), "freq_y_ranges"),
        )

    def sample_counts(self) -> tuple[int, int, int]:
        return (
            self.parser.getint("samples", "fourier"),
            self.parser.getint("samples", "gaussian"),
            self.parser.getint("samples", "constant"),
        )

    @property
    def seed(self) -> int:
        return self.parser.getint("run", "seed")

    @property
    def dt(self) -> float:
        return self.parser.getfloat("train", "dt")

    @property
    def arch(self) -> str:
        return self._get("train", "arch")

    @property
    def activation(self) -> str:
        return self._get("train", "activation")

    @property
    def optimizer(self) -> str:
        return self._get("train", "optimizer")

    @property
    def epochs(self) -> int:
        return self.parser.getint("train", "epochs")

    @property
    def batch_size(self) -> int:
        return self.parser.getint("train", "batch_size")

    @property
    def lr(self) -> float:
        return self.parser.getfloat("train", "lr")

    def hidden_spec(self):
        text = self._get("train", "hidden")
        if not text:
            return None
        return tuple(int(t) for t in text.split())

    def _resolve(self, value: str, key: str) -> Path:
        if not value:
            raise ValidationError(f"config key {key} is required here but empty")
        path = Path(value)
        if not path.is_absolute():
            path = self.base_dir / path
        if not path.exists():
            raise ValidationError(f"{key}: file not found: {path}")
        return path


def load_run_config(path=None) -> RunConfig:
    """Read a config file layered over the defaults; None gives pure defaults."""
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    parser.read_string(DEFAULT_CONFIG)
    if path is None:
        return RunConfig(DEFAULT_CONFIG, parser, Path.cwd())
    p = Path(path)
    if not p.exists():
        raise ValidationError(f"config file not found: {p}")
    text = p.read_text()
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ValidationError(f"bad config file {p}: {exc}") from exc
    return RunConfig(text, parser, p.parent.resolve())
