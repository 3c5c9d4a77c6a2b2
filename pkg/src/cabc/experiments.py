"""Config-driven experiment pipelines: probe -> compress -> solve.

Each experiment reproduces one of the reference tables or figures at a
configurable scale and writes CSV/JSON artifacts.  All randomness flows
through named substreams of the config seed, so identical configs
reproduce identical outputs byte for byte.
"""

import csv
import io as _io
import json
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import plr
from .dtn import (
    ExteriorDtN,
    assemble_dense_dtn,
    block_of,
    boundary_slots,
    eliminate_dtn_layer_by_layer,
    eliminate_dtn_oracle,
    ledger_for,
)
from .helmholtz import GridSpec
from .io import atomic_write_text, write_matrix
from .medium import Medium, MediumKind
from .probing import (
    approximation_errors,
    build_basis,
    condition_numbers,
    default_block_spec,
    orthonormalize,
    probe_block,
)
from .rng import substream
from .solver import DtNRealization, DtNVariant, InteriorDtNSolver, point_source, solution_error

__all__ = [
    "OMEGA0",
    "N0",
    "omega_for_n",
    "ExperimentConfig",
    "ExperimentReport",
    "ConfigError",
    "NumericFailure",
    "run",
    "ProbedDtN",
    "probe_dtn_map",
    "compress_probed_map",
    "EXPERIMENTS",
]

OMEGA0 = 2.0 * np.pi * 51.2
N0 = 1023


def omega_for_n(n: int) -> float:
    """Pollution-consistent frequency: omega scales like N^(2/3)."""
    return OMEGA0 * (n / N0) ** (2.0 / 3.0)


class ConfigError(Exception):
    pass


class NumericFailure(Exception):
    pass


_EXPERIMENT_NAMES = (
    "OracleCheck",
    "ProbeBlocks",
    "CondNumbers",
    "PlrCompress",
    "CompressedSolve",
    "GrazingScan",
    "ChebConvergence",
    "SepExpansion",
    "RankScan",
    "PvsN",
)


@dataclass
class ExperimentConfig:
    experiment: str
    medium: str = "Uniform"
    medium_params: dict = field(default_factory=dict)
    n: int = 64
    omega: float | None = None  # None -> pollution rule
    pml_width_w: int | None = None  # None -> max(8, n // 2)
    strip_gap: int = 2
    sigma0_factor: float = 2.0  # multiplies the default 40 omega / w
    p_schedule: list = field(default_factory=lambda: [6, 12, 20, 40])
    p_blocks: dict = field(default_factory=dict)  # {"1,1": p} overrides
    q: int = 3
    two_traveltimes: bool = True
    periodic_polynomials: bool = False
    auto_rmax: bool = False
    eps_divisor: float = 25.0
    r_max: dict = field(default_factory=dict)  # {"diagonal": 8, ...}
    k_list: list = field(default_factory=lambda: [32.0, 64.0, 128.0])
    eps: float = 1e-4
    alpha_list: list = field(default_factory=lambda: [2.0, 0.5])
    offsets: list = field(default_factory=list)
    source: tuple = (0.5, 0.25)
    seed: int = 20140508
    out_dir: str = "cabc-out"

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        allowed = set(cls.__dataclass_fields__)
        bad = set(raw) - allowed
        if bad:
            raise ConfigError(f"unknown config fields: {sorted(bad)}")
        cfg = cls(**raw)
        cfg.validate()
        return cfg

    def validate(self):
        if self.experiment not in _EXPERIMENT_NAMES:
            raise ConfigError(f"experiment: unknown name {self.experiment!r}; pick one of {_EXPERIMENT_NAMES}")
        try:
            MediumKind(self.medium)
        except ValueError as exc:
            raise ConfigError(f"medium: {exc}") from exc
        for name in ("n", "q", "seed"):
            if int(getattr(self, name)) <= 0:
                raise ConfigError(f"{name}: must be positive")
        if self.omega is not None and self.omega <= 0:
            raise ConfigError("omega: must be positive")
        if self.eps <= 0:
            raise ConfigError("eps: must be positive")
        if any(p <= 0 for p in self.p_schedule):
            raise ConfigError("p_schedule: entries must be positive")
        if self.eps_divisor < 1.0 or self.eps_divisor > 100.0:
            raise ConfigError("eps_divisor: must lie in [1, 100]")

    def make_medium(self) -> Medium:
        return Medium(MediumKind(self.medium), dict(self.medium_params))

    def make_grid(self) -> GridSpec:
        omega = self.omega if self.omega is not None else omega_for_n(self.n)
        w = self.pml_width_w if self.pml_width_w is not None else max(8, self.n // 2)
        sigma0 = self.sigma0_factor * 40.0 * omega / w
        return GridSpec(n=self.n, omega=omega, pml_width_w=w, strip_gap=self.strip_gap, sigma0=sigma0)


@dataclass
class ExperimentReport:
    config: dict
    metrics: dict
    artifacts: list
    wall_time_s: float

    def to_json(self) -> str:
        return json.dumps(
            {
                "config": self.config,
                "metrics": self.metrics,
                "artifacts": self.artifacts,
                "wall_time_s": round(self.wall_time_s, 3),
            },
            indent=2,
            sort_keys=True,
        )


def _csv_text(header, rows) -> str:
    buf = _io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([repr(v) if isinstance(v, float) else v for v in row])
    return buf.getvalue()


def _write_artifact(out_dir, name, payload):
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, name)
    if isinstance(payload, np.ndarray):
        write_matrix(path, payload)
    else:
        atomic_write_text(path, payload)
    return path


# ---------------------------------------------------------------------------
# probing pipeline


@dataclass
class BlockProbe:
    position: tuple
    multiplicity: int
    p: int
    q: int
    cond_psi: float
    reconstruction: np.ndarray
    norm_estimate: float
    error_estimate: float  # sqrt(m) ||M - Mt||_F / ||D||_F, randomized
    probe_meta: list = field(default_factory=list)  # per sub-block recovery records


@dataclass
class ProbedDtN:
    medium: Medium
    grid: GridSpec
    ledger: object
    blocks: dict  # position -> BlockProbe
    norm_d_estimate: float
    total_solves: int  # probing + error-check exterior solves
    total_error_estimate: float
    probing_solves: int = 0  # the Q of the reference tables

    def realization(self) -> DtNRealization:
        payloads = {pos: bp.reconstruction for pos, bp in self.blocks.items()}
        return DtNRealization(DtNVariant.PROBED, self.grid.n, self.ledger, payloads)

    def dense(self) -> np.ndarray:
        from .dtn import rebuild_dense_from_ledger

        reps = {pos: bp.reconstruction for pos, bp in self.blocks.items()}
        return rebuild_dense_from_ledger(reps, self.ledger, self.grid.n)


def _split_points(medium: Medium, side: int, n: int):
    """Sub-block index splits where the medium crosses the stored side."""
    slots = boundary_slots(n)
    tvals = slots.tvals[side - 1]
    cuts = []
    for t0 in medium.edge_discontinuities(side):
        # stored index whose coordinate first passes the discontinuity
        if tvals[0] < tvals[-1]:
            cut = int(np.searchsorted(tvals, t0))
        else:
            cut = n - int(np.searchsorted(tvals[::-1], t0))
        if 0 < cut < n:
            cuts.append(cut)
    return sorted(set(cuts))


def _block_plan_p(cfg_p_blocks, position, default_p):
    key = f"{position[0]},{position[1]}"
    return int(cfg_p_blocks.get(key, default_p))


def _default_p_for(position, p_diag):
    i, j = position
    if i == j:
        return p_diag
    if abs(i - j) == 2:
        return 1
    return max(4, p_diag // 3)


def probe_dtn_map(
    medium: Medium,
    grid: GridSpec,
    seed: int,
    p_diag: int = 40,
    q: int = 3,
    two_traveltimes: bool = True,
    p_blocks: dict | None = None,
    n_heldout: int = 15,
    periodic_polynomials: bool = False,
) -> ProbedDtN:
    """Probe every representative block of the DtN map.

    Exterior solves are shared by all blocks drawing on the same column
    range; error-check probes (disjoint substreams) estimate each block's
    Frobenius norm and probing error, and the ledger aggregates them into
    the total map error.

    ``periodic_polynomials`` switches the periodic medium's diagonal
    blocks to the two-direction polynomial family; at desk scales the
    boundary lines run through constant background, so the default
    oscillatory family fits far better and stays on.
    """
    p_blocks = p_blocks or {}
    ledger = ledger_for(medium)
    ext = ExteriorDtN(medium, grid)
    n = grid.n
    periodic = periodic_polynomials and medium.kind is MediumKind.PERIODIC

    # plan every sub-block recovery, grouping solves by (side, column range)
    plans = []
    col_groups = {}
    for entry in ledger.entries:
        (bi, bj) = entry.representative
        p_here = _block_plan_p(p_blocks, (bi, bj), _default_p_for((bi, bj), p_diag))
        cuts = _split_points(medium, bi, n) if bi == bj else []
        row_edges = [0, *cuts, n]
        col_edges = [0, *cuts, n]
        n_subs = (len(row_edges) - 1) * (len(col_edges) - 1)
        subs = []
        for ra, rb in zip(row_edges[:-1], row_edges[1:]):
            for ca, cb in zip(col_edges[:-1], col_edges[1:]):
                split = len(row_edges) > 2
                spec = default_block_spec(
                    (bi, bj),
                    p=max(2, p_here // n_subs),
                    two_traveltimes=two_traveltimes and (bi == bj),
                    periodic=periodic,
                )
                basis = orthonormalize(
                    build_basis(
                        spec,
                        medium,
                        grid,
                        (bi, bj),
                        row_subset=np.arange(ra, rb) if split else None,
                        col_subset=np.arange(ca, cb) if split else None,
                    )
                )
                q_eff = q
                if spec.diagonal_family == "PolynomialBothDirections":
                    # a probe of a degree-d polynomial matrix only spans d+1
                    # directions, so the stacked system needs heavy
                    # oversampling to stay well conditioned
                    q_eff = max(q, min(basis.p, n // 2))
                key = (bj, ca, cb)
                col_groups[key] = max(col_groups.get(key, 0), q_eff)
                subs.append({"rows": (ra, rb), "cols": (ca, cb), "basis": basis, "q": q_eff, "key": key})
        plans.append((entry, p_here, subs))

    # probing solves, one batch per column group, shared across blocks
    responses = {}
    for (bj, ca, cb), q_need in sorted(col_groups.items()):
        rng_col = substream(seed, "probe-col", bj, ca, cb)
        zs = rng_col.standard_normal((cb - ca, q_need))
        ws = []
        for r in range(q_need):
            g = np.zeros(n, dtype=np.complex128)
            g[ca:cb] = zs[:, r]
            ws.append(ext.apply_side(bj, g).reshape(4, n))
        responses[(bj, ca, cb)] = (zs, ws)
    probing_solves = ext.solve_count

    # held-out error-check solves, per column side
    heldout = {}
    for bj in sorted({e.representative[1] for e in ledger.entries}):
        rng_err = substream(seed, "heldout-col", bj)
        zs_err = [rng_err.standard_normal(n) for _ in range(n_heldout)]
        heldout[bj] = [(z, ext.apply_side(bj, z).reshape(4, n)) for z in zs_err]

    blocks = {}
    for entry, p_here, subs in plans:
        (bi, bj) = entry.representative
        recon = np.zeros((n, n), dtype=np.complex128)
        cond_max = 0.0
        meta = []
        for sub in subs:
            (ra, rb), (ca, cb) = sub["rows"], sub["cols"]
            zs, ws_full = responses[sub["key"]]
            ws = [w[bi - 1][ra:rb] for w in ws_full]
            res = probe_block(
                None,
                sub["basis"],
                q=sub["q"],
                rng=None,
                seed_labels=(f"probe-col/{bj}/{ca}/{cb}",),
                zs=zs,
                ws=ws,
            )
            recon[ra:rb, ca:cb] = res.reconstruct()
            cond_max = max(cond_max, res.cond_psi)
            meta.append({"rows": [int(ra), int(rb)], "cols": [int(ca), int(cb)], **res.to_json_dict()})
        # randomized estimates from the held-out solves of this column
        sq_norm = []
        sq_err = []
        for z, w_full in heldout[bj]:
            wb = w_full[bi - 1]
            sq_norm.append(float(np.linalg.norm(wb) ** 2))
            sq_err.append(float(np.linalg.norm(wb - recon @ z) ** 2))
        norm_est = float(np.sqrt(np.mean(sq_norm)))
        err_est = float(np.sqrt(np.mean(sq_err)))
        blocks[(bi, bj)] = BlockProbe(
            position=(bi, bj),
            multiplicity=entry.multiplicity,
            p=p_here,
            q=max(s["q"] for s in subs),
            cond_psi=cond_max,
            reconstruction=recon,
            norm_estimate=norm_est,
            error_estimate=err_est,
            probe_meta=meta,
        )

    norm_d = float(
        np.sqrt(sum(bp.multiplicity * bp.norm_estimate**2 for bp in blocks.values()))
    )
    total_err = float(
        np.sqrt(sum(bp.multiplicity * bp.error_estimate**2 for bp in blocks.values())) / norm_d
    )
    for bp in blocks.values():
        bp.error_estimate = float(np.sqrt(bp.multiplicity) * bp.error_estimate / norm_d)
    return ProbedDtN(
        medium=medium,
        grid=grid,
        ledger=ledger,
        blocks=blocks,
        norm_d_estimate=norm_d,
        total_solves=ext.solve_count,
        probing_solves=probing_solves,
        total_error_estimate=total_err,
    )


_DEFAULT_RMAX = {"diagonal": 8, "adjacent": 4, "opposite": 2}


def _distance_class(position):
    i, j = position
    if i == j:
        return "diagonal"
    if abs(i - j) == 2:
        return "opposite"
    return "adjacent"


def compress_probed_map(
    probed: ProbedDtN,
    eps_divisor: float = 25.0,
    r_max: dict | None = None,
    seed: int = 0,
    auto_rmax: bool = False,
) -> tuple:
    """PLR-compress every probed representative block.

    The per-block tolerance is the block's absolute probing error divided
    by ``eps_divisor``; maximal ranks default to 8/4/2 for diagonal,
    adjacent, and opposite blocks, or are chosen per block by minimizing
    the matvec cost when ``auto_rmax`` is set.  Returns (realization,
    info rows).
    """
    r_max = {**_DEFAULT_RMAX, **(r_max or {})}
    payloads = {}
    rows = []
    for pos, bp in probed.blocks.items():
        cls = _distance_class(pos)
        eps_b = max(bp.error_estimate, 1e-14) * probed.norm_d_estimate / eps_divisor
        if auto_rmax:
            chosen, h, _ = plr.choose_rmax(bp.reconstruction, float(eps_b), seed=seed)
        else:
            chosen = int(r_max[cls])
            h = plr.plr_compress(bp.reconstruction, chosen, float(eps_b), seed=seed)
        payloads[pos] = h
        rows.append(
            {
                "block": pos,
                "class": cls,
                "r_max": chosen,
                "epsilon": float(eps_b),
                "matvec_cost": plr.matvec_cost(h),
                "leaves": len(h.leaves()),
            }
        )
    realization = DtNRealization(DtNVariant.COMPRESSED, probed.grid.n, probed.ledger, payloads)
    return realization, rows


# ---------------------------------------------------------------------------
# experiments


def _run_oracle_check(cfg: ExperimentConfig):
    medium = cfg.make_medium()
    grid = cfg.make_grid()
    d_solve = assemble_dense_dtn(medium, grid).data
    d_schur = eliminate_dtn_oracle(medium, grid).data
    d_layer = eliminate_dtn_layer_by_layer(medium, grid).data
    ref = np.linalg.norm(d_solve)
    pairs = {
        "solve_vs_schur": float(np.linalg.norm(d_solve - d_schur) / ref),
        "solve_vs_layer": float(np.linalg.norm(d_solve - d_layer) / ref),
        "schur_vs_layer": float(np.linalg.norm(d_schur - d_layer) / ref),
        "symmetry": float(np.linalg.norm(d_solve - d_solve.T) / ref),
    }
    rows = [(k, v) for k, v in sorted(pairs.items())]
    metrics = {**pairs, "max_pairwise": max(pairs["solve_vs_schur"], pairs["solve_vs_layer"], pairs["schur_vs_layer"])}
    return metrics, [("oracle_check.csv", _csv_text(["comparison", "relative_frobenius"], rows))]


def _run_probe_blocks(cfg: ExperimentConfig):
    medium = cfg.make_medium()
    grid = cfg.make_grid()
    dense_ok = grid.n <= 256
    d_ref = assemble_dense_dtn(medium, grid).data if dense_ok else None
    norm_ref = np.linalg.norm(d_ref) if dense_ok else None
    rows = []
    extra_artifacts = []
    for p in cfg.p_schedule:
        probed = probe_dtn_map(
            medium,
            grid,
            seed=cfg.seed,
            p_diag=int(p),
            q=cfg.q,
            two_traveltimes=cfg.two_traveltimes,
            p_blocks=cfg.p_blocks,
            periodic_polynomials=cfg.periodic_polynomials,
        )
        total_exact = ""
        sol_err = ""
        if dense_ok:
            d_tilde = probed.dense()
            total_exact = float(np.linalg.norm(d_ref - d_tilde) / norm_ref)
            f = point_source(grid, *cfg.source)
            ref_real = DtNRealization.from_dense(d_ref, probed.ledger)
            u_ref = InteriorDtNSolver(medium, grid, ref_real).solve(f)
            u_t = InteriorDtNSolver(medium, grid, probed.realization()).solve(f)
            sol_err = solution_error(u_t, u_ref)
        p11 = probed.blocks.get((1, 1))
        p21 = probed.blocks.get((2, 1))
        rows.append(
            (
                int(p),
                p11.p if p11 else "",
                p21.p if p21 else "",
                cfg.q,
                probed.probing_solves,
                probed.total_error_estimate,
                total_exact,
                sol_err,
            )
        )
        if p == cfg.p_schedule[-1]:
            # stage isolation: the probed blocks are the PlrCompress inputs
            meta = {
                "n": grid.n,
                "seed": cfg.seed,
                "norm_d_estimate": probed.norm_d_estimate,
                "blocks": {
                    f"{pos[0]},{pos[1]}": {
                        "file": f"probed_block_{pos[0]}{pos[1]}.cabc",
                        "multiplicity": bp.multiplicity,
                        "error_estimate": bp.error_estimate,
                        "recovery": bp.probe_meta,
                    }
                    for pos, bp in probed.blocks.items()
                },
            }
            for pos, bp in probed.blocks.items():
                extra_artifacts.append((f"probed_block_{pos[0]}{pos[1]}.cabc", bp.reconstruction))
            extra_artifacts.append(("probed_blocks.json", json.dumps(meta, indent=2, sort_keys=True)))
    header = ["p_diag", "p_11", "p_21", "q", "Q", "total_probing_error_estimate", "total_probing_error", "solution_error"]
    metrics = {"rows": len(rows), "last_total_error": rows[-1][6] if dense_ok else rows[-1][5]}
    return metrics, [("probe_blocks.csv", _csv_text(header, rows)), *extra_artifacts]


def _run_cond_numbers(cfg: ExperimentConfig):
    medium = cfg.make_medium()
    grid = cfg.make_grid()
    rows = []
    rng = substream(cfg.seed, "cond")
    for p in cfg.p_schedule:
        spec = default_block_spec((1, 1), p=int(p), two_traveltimes=cfg.two_traveltimes)
        basis = orthonormalize(build_basis(spec, medium, grid, (1, 1)))
        zs = rng.standard_normal((grid.n, cfg.q))
        from .probing import _stack_psi

        psi = _stack_psi(basis, zs)
        lam, kappa, cond_psi = condition_numbers(basis, psi)
        rows.append((int(p), basis.p, lam, kappa, cond_psi))
    header = ["p_requested", "p", "lambda", "kappa", "cond_psi"]
    return {"max_cond_psi": max(r[4] for r in rows)}, [("cond_numbers.csv", _csv_text(header, rows))]


def _load_probed(cfg: ExperimentConfig, medium, grid) -> ProbedDtN | None:
    """Reload a ProbeBlocks stage output; no exterior solves involved."""
    from .io import read_matrix

    out_dir = os.environ.get("CABC_OUT", cfg.out_dir)
    meta_path = os.path.join(out_dir, "probed_blocks.json")
    if not os.path.exists(meta_path):
        return None
    with open(meta_path) as fh:
        meta = json.load(fh)
    if meta["n"] != grid.n or meta["seed"] != cfg.seed:
        return None
    ledger = ledger_for(medium)
    blocks = {}
    for key, rec in meta["blocks"].items():
        i, j = (int(v) for v in key.split(","))
        recon = read_matrix(os.path.join(out_dir, rec["file"]))
        blocks[(i, j)] = BlockProbe(
            position=(i, j),
            multiplicity=rec["multiplicity"],
            p=0,
            q=cfg.q,
            cond_psi=float("nan"),
            reconstruction=recon,
            norm_estimate=float("nan"),
            error_estimate=rec["error_estimate"],
        )
    return ProbedDtN(
        medium=medium,
        grid=grid,
        ledger=ledger,
        blocks=blocks,
        norm_d_estimate=meta["norm_d_estimate"],
        total_solves=0,
        total_error_estimate=float(
            np.sqrt(sum(b.error_estimate**2 for b in blocks.values()))
        ),
    )


def _run_plr_compress(cfg: ExperimentConfig):
    medium = cfg.make_medium()
    grid = cfg.make_grid()
    probed = _load_probed(cfg, medium, grid)
    if probed is None:
        probed = probe_dtn_map(
            medium,
            grid,
            seed=cfg.seed,
            p_diag=cfg.p_schedule[-1],
            q=cfg.q,
            two_traveltimes=cfg.two_traveltimes,
            p_blocks=cfg.p_blocks,
            periodic_polynomials=cfg.periodic_polynomials,
        )
    realization, rows = compress_probed_map(
        probed, eps_divisor=cfg.eps_divisor, r_max=cfg.r_max, seed=cfg.seed, auto_rmax=cfg.auto_rmax
    )
    total_cost = realization.matvec_cost()
    dense_cost = 2 * (4 * grid.n) ** 2
    table = [
        (f"{r['block'][0]},{r['block'][1]}", r["class"], r["r_max"], r["epsilon"], r["matvec_cost"], r["leaves"])
        for r in rows
    ]
    header = ["block", "class", "r_max", "epsilon", "matvec_cost", "leaves"]
    metrics = {
        "total_matvec_cost": int(total_cost),
        "dense_cost": int(dense_cost),
        "speedup": float(dense_cost / total_cost),
        "total_probing_error_estimate": probed.total_error_estimate,
    }
    return metrics, [("plr_compress.csv", _csv_text(header, table))]


def _run_compressed_solve(cfg: ExperimentConfig):
    medium = cfg.make_medium()
    grid = cfg.make_grid()
    if grid.n > 256:
        raise ConfigError("CompressedSolve needs the dense reference; use n <= 256")
    d_ref = assemble_dense_dtn(medium, grid).data
    norm_ref = np.linalg.norm(d_ref)
    ledger = ledger_for(medium)
    probed = probe_dtn_map(
        medium,
        grid,
        seed=cfg.seed,
        p_diag=cfg.p_schedule[-1],
        q=cfg.q,
        two_traveltimes=cfg.two_traveltimes,
        p_blocks=cfg.p_blocks,
        periodic_polynomials=cfg.periodic_polynomials,
    )
    compressed, comp_rows = compress_probed_map(
        probed, eps_divisor=cfg.eps_divisor, r_max=cfg.r_max, seed=cfg.seed, auto_rmax=cfg.auto_rmax
    )
    d_tilde = probed.dense()
    from .dtn import rebuild_dense_from_ledger

    d_bar = rebuild_dense_from_ledger(
        {pos: compressed.payloads[pos].to_dense() for pos in compressed.payloads}, ledger, grid.n
    )
    err_probe = float(np.linalg.norm(d_ref - d_tilde) / norm_ref)
    err_comp = float(np.linalg.norm(d_ref - d_bar) / norm_ref)

    f = point_source(grid, *cfg.source)
    u_ref = InteriorDtNSolver(medium, grid, DtNRealization.from_dense(d_ref, ledger)).solve(f)
    u_probe = InteriorDtNSolver(medium, grid, probed.realization()).solve(f)
    u_comp = InteriorDtNSolver(medium, grid, compressed).solve(f)
    sol_probe = solution_error(u_probe, u_ref)
    sol_comp = solution_error(u_comp, u_ref)
    total_cost = compressed.matvec_cost()
    dense_cost = 2 * (4 * grid.n) ** 2
    header = [
        "map_error_probed",
        "map_error_compressed",
        "solution_error_probed",
        "solution_error_compressed",
        "total_matvec_cost",
        "dense_cost",
        "speedup",
    ]
    row = (err_probe, err_comp, sol_probe, sol_comp, int(total_cost), int(dense_cost), float(dense_cost / total_cost))
    metrics = dict(zip(header, row))
    return metrics, [
        ("compressed_solve.csv", _csv_text(header, [row])),
        ("solution_dense.cabc", u_ref.u),
        ("solution_compressed.cabc", u_comp.u),
    ]


def _run_grazing_scan(cfg: ExperimentConfig):
    from .solver import grazing_scan

    medium = cfg.make_medium()
    grid = cfg.make_grid()
    if grid.n > 256:
        raise ConfigError("GrazingScan needs the dense reference; use n <= 256")
    d_ref = assemble_dense_dtn(medium, grid).data
    ledger = ledger_for(medium)
    probed = probe_dtn_map(
        medium,
        grid,
        seed=cfg.seed,
        p_diag=cfg.p_schedule[-1],
        q=cfg.q,
        two_traveltimes=cfg.two_traveltimes,
        p_blocks=cfg.p_blocks,
        periodic_polynomials=cfg.periodic_polynomials,
    )
    wanted = cfg.offsets or [0.25, 0.1, 0.05, 2.0 * grid.h]
    offsets = sorted({max(float(o), 2.0 * grid.h) for o in wanted}, reverse=True)
    curve = grazing_scan(
        medium,
        grid,
        probed.realization(),
        offsets,
        reference=DtNRealization.from_dense(d_ref, ledger),
    )
    header = ["offset", "solution_error"]
    metrics = {
        "max_error": max(e for _, e in curve),
        "min_error": min(e for _, e in curve),
        "inflation": max(e for _, e in curve) / max(min(e for _, e in curve), 1e-300),
    }
    return metrics, [("grazing_scan.csv", _csv_text(header, curve))]


def _run_cheb_convergence(cfg: ExperimentConfig):
    from .analysis import cheb_fit_error

    k = cfg.omega if cfg.omega is not None else OMEGA0
    r0 = 1.0 / k
    ps = cfg.p_schedule if cfg.p_schedule else [10, 20, 40, 60]
    rows = []
    for alpha in cfg.alpha_list:
        for p in ps:
            r = cheb_fit_error(k, r0, float(alpha), int(p))
            rows.append((float(alpha), int(p), r.error, int(r.overflow)))
    header = ["alpha", "p", "sup_error", "overflow"]
    by_alpha = {}
    for alpha, p, err, _ in rows:
        by_alpha.setdefault(alpha, []).append((p, err))
    slopes = {}
    for alpha, pts in by_alpha.items():
        ps_a = np.array([p for p, _ in pts], dtype=float)
        es_a = np.array([e for _, e in pts], dtype=float)
        if np.all(es_a > 0):
            slopes[str(alpha)] = float(-np.polyfit(np.log(ps_a), np.log(es_a), 1)[0])
    return {"slopes": slopes}, [("cheb_convergence.csv", _csv_text(header, rows))]


def _run_sep_expansion(cfg: ExperimentConfig):
    from .analysis import separable_inv_kr

    rows = []
    for k in cfg.k_list:
        ex = separable_inv_kr(float(k), 1.0 / float(k), cfg.eps)
        rows.append((float(k), cfg.eps, ex.j2, ex.measured_error, ex.order_per_interval))
    header = ["k", "eps", "J2", "max_error", "nodes_per_interval"]
    return {"max_error": max(r[3] for r in rows)}, [("sep_expansion.csv", _csv_text(header, rows))]


def _run_rank_scan(cfg: ExperimentConfig):
    from .analysis import offdiag_rank_scan
    from .dtn import layer_strip_halfspace

    medium = cfg.make_medium()
    rows = []
    for k in cfg.k_list:
        n = int(round(N0 * (float(k) / OMEGA0) ** 1.5))
        n += n % 2
        w = max(16, n // 4)
        grid = GridSpec(n=n, omega=float(k), pml_width_w=w, strip_gap=cfg.strip_gap)
        strip = layer_strip_halfspace(medium, grid, depth_layers=max(256, 2 * n), monitor_every=64)
        top = float(np.linalg.svd(strip.dtn, compute_uv=False)[0])
        rank = offdiag_rank_scan(strip.dtn, grid.h, grid.h, cfg.eps * top)
        rows.append((float(k), n, cfg.eps, 1, rank))
    header = ["k", "n", "eps", "r0_in_h", "max_rank"]
    return {"ranks": [r[4] for r in rows]}, [("rank_scan.csv", _csv_text(header, rows))]


def _run_p_vs_n(cfg: ExperimentConfig):
    medium = cfg.make_medium()
    rows = []
    for n in sorted({cfg.n, 2 * cfg.n, 4 * cfg.n}):
        grid = ExperimentConfig(experiment="PvsN", n=n, medium=cfg.medium, pml_width_w=max(8, n // 2)).make_grid()
        d = assemble_dense_dtn(medium, grid).data
        norm_d = np.linalg.norm(d)
        m = block_of(d, 1, 1)
        for p in cfg.p_schedule:
            spec = default_block_spec((1, 1), p=int(p), two_traveltimes=cfg.two_traveltimes)
            basis = orthonormalize(build_basis(spec, medium, grid, (1, 1)))
            err = approximation_errors(m, basis, 4, norm_d, [basis.p])[0]
            rows.append((n, int(p), float(err)))
    header = ["n", "p", "approximation_error"]
    return {"rows": len(rows)}, [("p_vs_n.csv", _csv_text(header, rows))]


EXPERIMENTS = {
    "OracleCheck": _run_oracle_check,
    "ProbeBlocks": _run_probe_blocks,
    "CondNumbers": _run_cond_numbers,
    "PlrCompress": _run_plr_compress,
    "CompressedSolve": _run_compressed_solve,
    "GrazingScan": _run_grazing_scan,
    "ChebConvergence": _run_cheb_convergence,
    "SepExpansion": _run_sep_expansion,
    "RankScan": _run_rank_scan,
    "PvsN": _run_p_vs_n,
}


def run(config) -> ExperimentReport:
    """Execute one experiment; write its CSV artifacts and report JSON."""
    cfg = config if isinstance(config, ExperimentConfig) else ExperimentConfig.from_dict(dict(config))
    cfg.validate()
    out_dir = os.environ.get("CABC_OUT", cfg.out_dir)
    t0 = time.time()
    try:
        metrics, artifacts = EXPERIMENTS[cfg.experiment](cfg)
    except (ConfigError, NumericFailure):
        raise
    except Exception as exc:
        raise NumericFailure(f"stage {cfg.experiment!r} failed: {exc}") from exc
    paths = []
    for name, payload in artifacts:
        paths.append(_write_artifact(out_dir, name, payload))
    echo = dict(cfg.__dict__)
    try:
        echo["resolved_omega"] = cfg.make_grid().omega
    except Exception:
        echo["resolved_omega"] = None
    report = ExperimentReport(
        config=echo,
        metrics=metrics,
        artifacts=paths,
        wall_time_s=time.time() - t0,
    )
    paths.append(_write_artifact(out_dir, "report.json", report.to_json()))
    report.artifacts = paths
    return report
