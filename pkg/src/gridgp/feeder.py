"""Radial distribution feeder model and its text-file parser.

The file format is line-oriented: a versioned header, ``key value``
declarations (base voltage/power, units), then ``[buses]``, ``[branches]``
and ``[res]`` sections. Parse and validation errors carry line numbers.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .exceptions import FeederFormatError

__all__ = ["Bus", "Branch", "ResUnit", "FeederModel", "load_feeder", "parse_feeder", "bundled_feeder_path", "load_ieee33"]

FEEDER_MAGIC = "gridgp-feeder"
FEEDER_VERSION = 1

RES_KINDS = ("PV", "WG")


@dataclass(frozen=True)
class Bus:
    id: int
    p_load_kw: float
    q_load_kvar: float


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    r_ohm: float
    x_ohm: float


@dataclass(frozen=True)
class ResUnit:
    bus: int
    kind: str  # "PV" or "WG"
    capacity_kw: float

    @property
    def unit_id(self) -> str:
        return f"{self.kind}{self.bus}"


@dataclass
class FeederModel:
    """Validated radial feeder: buses, branches, bases, and RES attachments.

    The first listed bus is the substation (slack) bus. Validation checks
    that the branch graph is a tree rooted there and precomputes the
    index maps and sweep order used by the power-flow solver.
    """

    buses: list[Bus]
    branches: list[Branch]
    base_kv: float
    base_kva: float
    res_units: list[ResUnit] = field(default_factory=list)

    # Derived topology, filled by __post_init__.
    index: dict[int, int] = field(init=False, repr=False)
    parent: np.ndarray = field(init=False, repr=False)
    parent_branch: np.ndarray = field(init=False, repr=False)
    order: np.ndarray = field(init=False, repr=False)
    z_pu: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self._validate_and_index()

    @property
    def n_buses(self) -> int:
        return len(self.buses)

    @property
    def root(self) -> int:
        return self.buses[0].id

    @property
    def z_base_ohm(self) -> float:
        # (kV)^2 * 1000 / kVA gives ohms.
        return 1000.0 * self.base_kv**2 / self.base_kva

    def _validate_and_index(self):
        if self.base_kv <= 0 or self.base_kva <= 0:
            raise FeederFormatError("base voltage and power must be positive")
        if len(self.buses) < 2:
            raise FeederFormatError("a feeder needs at least two buses")
        ids = [b.id for b in self.buses]
        if len(set(ids)) != len(ids):
            dup = sorted({i for i in ids if ids.count(i) > 1})
            raise FeederFormatError(f"duplicate bus ids: {dup}")
        self.index = {bus_id: k for k, bus_id in enumerate(ids)}

        n = len(self.buses)
        if len(self.branches) != n - 1:
            raise FeederFormatError(
                f"a radial feeder with {n} buses needs {n - 1} branches, "
                f"got {len(self.branches)}"
            )
        seen_pairs = set()
        adjacency: dict[int, list[tuple[int, int]]] = {b.id: [] for b in self.buses}
        for k, br in enumerate(self.branches):
            for end in (br.from_bus, br.to_bus):
                if end not in self.index:
                    raise FeederFormatError(f"branch {br.from_bus}-{br.to_bus} references unknown bus {end}")
            if br.from_bus == br.to_bus:
                raise FeederFormatError(f"branch {br.from_bus}-{br.to_bus} is a self-loop")
            pair = frozenset((br.from_bus, br.to_bus))
            if pair in seen_pairs:
                raise FeederFormatError(f"duplicate branch {br.from_bus}-{br.to_bus}")
            seen_pairs.add(pair)
            if not (br.r_ohm > 0 and br.x_ohm > 0):
                raise FeederFormatError(
                    f"branch {br.from_bus}-{br.to_bus} must have positive impedance"
                )
            adjacency[br.from_bus].append((br.to_bus, k))
            adjacency[br.to_bus].append((br.from_bus, k))

        for unit in self.res_units:
            if unit.bus not in self.index:
                raise FeederFormatError(f"RES unit {unit.unit_id} references unknown bus {unit.bus}")
            if unit.kind not in RES_KINDS:
                raise FeederFormatError(f"RES unit at bus {unit.bus} has unknown kind {unit.kind!r}")
            if not unit.capacity_kw > 0:
                raise FeederFormatError(f"RES unit {unit.unit_id} must have positive capacity")

        # BFS from the substation; with n-1 edges, full reachability == tree.
        parent = np.full(n, -1, dtype=int)
        parent_branch = np.full(n, -1, dtype=int)
        order = [self.index[self.root]]
        visited = {self.root}
        queue = [self.root]
        while queue:
            bus_id = queue.pop(0)
            for nbr, br_idx in adjacency[bus_id]:
                if nbr in visited:
                    continue
                visited.add(nbr)
                parent[self.index[nbr]] = self.index[bus_id]
                parent_branch[self.index[nbr]] = br_idx
                order.append(self.index[nbr])
                queue.append(nbr)
        if len(visited) != n:
            missing = sorted(set(ids) - visited)
            raise FeederFormatError(
                f"branch graph is not a tree rooted at bus {self.root}: "
                f"buses unreachable or in a cycle: {missing}"
            )
        self.parent = parent
        self.parent_branch = parent_branch
        self.order = np.asarray(order, dtype=int)
        self.z_pu = np.array(
            [complex(br.r_ohm, br.x_ohm) / self.z_base_ohm for br in self.branches]
        )

    def load_vectors_kw(self) -> tuple[np.ndarray, np.ndarray]:
        """Base-case (P, Q) load vectors in bus order (kW, kvar)."""
        p = np.array([b.p_load_kw for b in self.buses])
        q = np.array([b.q_load_kvar for b in self.buses])
        return p, q


def _tokenize(text: str):
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            yield lineno, line


def parse_feeder(text: str, source: str = "<string>") -> FeederModel:
    """Parse feeder text; see the bundled ``ieee33.feeder`` for the format."""
    tokens = list(_tokenize(text))
    if not tokens:
        raise FeederFormatError("empty feeder file", source=source)

    lineno, header = tokens[0]
    parts = header.split()
    if len(parts) != 3 or parts[0] != FEEDER_MAGIC or parts[1] != "version":
        raise FeederFormatError(
            f"expected header '{FEEDER_MAGIC} version N'", line=lineno, source=source
        )
    try:
        version = int(parts[2])
    except ValueError:
        raise FeederFormatError(f"bad version {parts[2]!r}", line=lineno, source=source) from None
    if version != FEEDER_VERSION:
        raise FeederFormatError(
            f"unsupported feeder version {version} (supported: {FEEDER_VERSION})",
            line=lineno,
            source=source,
        )

    base_kv = base_kva = None
    buses: list[Bus] = []
    branches: list[Branch] = []
    res_units: list[ResUnit] = []
    section = None
    for lineno, line in tokens[1:]:
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1]
            if section not in ("buses", "branches", "res"):
                raise FeederFormatError(f"unknown section [{section}]", line=lineno, source=source)
            continue
        fields = line.split()
        try:
            if section is None:
                if len(fields) != 2:
                    raise FeederFormatError(
                        f"expected 'key value' before sections, got {line!r}",
                        line=lineno, source=source,
                    )
                key, value = fields
                if key == "base_kv":
                    base_kv = float(value)
                elif key == "base_kva":
                    base_kva = float(value)
                else:
                    raise FeederFormatError(f"unknown key {key!r}", line=lineno, source=source)
            elif section == "buses":
                if len(fields) != 3:
                    raise FeederFormatError(
                        "bus line needs 'id P_load_kw Q_load_kvar'", line=lineno, source=source
                    )
                buses.append(Bus(int(fields[0]), float(fields[1]), float(fields[2])))
            elif section == "branches":
                if len(fields) != 4:
                    raise FeederFormatError(
                        "branch line needs 'from to R_ohm X_ohm'", line=lineno, source=source
                    )
                branches.append(
                    Branch(int(fields[0]), int(fields[1]), float(fields[2]), float(fields[3]))
                )
            elif section == "res":
                if len(fields) != 3:
                    raise FeederFormatError(
                        "res line needs 'bus kind capacity_kw'", line=lineno, source=source
                    )
                res_units.append(ResUnit(int(fields[0]), fields[1], float(fields[2])))
        except FeederFormatError:
            raise
        except ValueError as exc:
            raise FeederFormatError(f"bad numeric field: {exc}", line=lineno, source=source) from None

    if base_kv is None or base_kva is None:
        raise FeederFormatError("missing base_kv or base_kva declaration", source=source)
    try:
        return FeederModel(
            buses=buses, branches=branches, base_kv=base_kv, base_kva=base_kva, res_units=res_units
        )
    except FeederFormatError as exc:
        # Re-raise with the file name attached for context.
        raise FeederFormatError(str(exc), source=source) from None


def load_feeder(path) -> FeederModel:
    """Load and validate a feeder file from disk."""
    with open(path, encoding="utf-8") as fh:
        return parse_feeder(fh.read(), source=str(path))


def feeder_sha256(path) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def bundled_feeder_path() -> str:
    """Filesystem path of the packaged 33-bus feeder data."""
    return str(resources.files("gridgp").joinpath("data/ieee33.feeder"))


def load_ieee33() -> FeederModel:
    """The packaged IEEE 33-bus test feeder with its default RES attachments."""
    return load_feeder(bundled_feeder_path())
