"""Seeded experiment runners behind the command-line interface.

Each runner rebuilds one evaluation from the configured scenario and
returns a ResultTable. Protocols are the figure protocols: the positioning
maps and CDFs probe the sensing link alone with a steering beamformer at
full-size sensing dimensions, while the design studies (convergence, SE
sweeps) run at the configured scale. Monte-Carlo work derives one child
seed per repetition from (config seed, index), and rows merge in a fixed
order, so outputs are reproducible bit-for-bit regardless of worker count.
"""

from __future__ import annotations

import dataclasses
import os
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .arrays import ArrayGeometry, Direction, SubcarrierGrid, steering_vector
from .channel import (
    comm_channel_realize,
    optimal_digital_beamformer,
    path_parameters,
    spectral_efficiency,
)
from .config import ScenarioConfig
from .digital import rtr_sca_design
from .omp import (
    Dictionary,
    beam_steering_design,
    build_dictionary,
    comm_only_omp,
    norm_bound_check,
    pc_omp_design,
    pc_omp_from_channel,
)
from .peb import kappa_threshold, position_from_aoa_toa, position_jacobian, speb
from .results import ResultTable

__all__ = [
    "child_seed",
    "design_once",
    "run_convergence",
    "run_peb_cdf",
    "run_peb_heatmap",
    "run_se_vs_gamma",
    "run_se_vs_nrf",
    "run_se_vs_snr",
    "self_check",
    "sector_samples",
]

# sensing chain of the positioning maps: full-size receive panel and OFDM
# grid; the desk preset shrinks only the sampling grid of these experiments
_MAP_SUBCARRIERS = 128
_MAP_SPACING_HZ = 240e3
_MAP_RX_SENSE = 100


def child_seed(master: int, index: int) -> int:
    """Independent per-repetition seed derived from (master, index)."""
    return int(np.random.SeedSequence([int(master), int(index)]).generate_state(1)[0])


def _workers() -> int:
    try:
        return max(1, int(os.environ.get("BISAC_WORKERS", "1")))
    except ValueError:
        return 1


def _map_chunks(fn, chunks):
    """fn over chunks, in order; a process pool when BISAC_WORKERS > 1."""
    n = _workers()
    if n <= 1 or len(chunks) <= 1:
        return [fn(chunk) for chunk in chunks]
    with ProcessPoolExecutor(max_workers=min(n, len(chunks))) as pool:
        return list(pool.map(fn, chunks))


def sector_samples(grid_res: int, radius: float):
    """Sample points of the 120 degree sector, row-major and deterministic.

    The sector opens from the sensing receiver toward the transmitter:
    points with hypot(x, y) <= radius and y >= hypot(x, y) / 2, sampled on a
    grid_res x grid_res grid over the sector's bounding box.
    """
    lim = radius * np.sin(np.pi / 3.0)
    pts = []
    for y in np.linspace(0.0, radius, grid_res):
        for x in np.linspace(-lim, lim, grid_res):
            if abs(x) < 1e-9 * radius:
                x = 0.0  # keep the center column exact for ridge extraction
            r = float(np.hypot(x, y))
            if r <= radius and y >= 0.5 * r:
                pts.append((float(x), float(y)))
    return pts


def _map_scene_grid(cfg: ScenarioConfig):
    """Uncompensated sensing scene and full-size grid for the PEB maps."""
    grid = SubcarrierGrid(_MAP_SUBCARRIERS, _MAP_SPACING_HZ, cfg.carrier_hz)
    scene = dataclasses.replace(
        cfg.scene(compensated=False), wavelength=grid.wavelength
    )
    return scene, grid


def _steering_peb_chunk(args):
    """PEB of steered single-stream transmission at each probe point."""
    cfg, z_plane, n_t, points = args
    scene, grid = _map_scene_grid(cfg)
    tx = ArrayGeometry.uspa(n_t, grid.wavelength)
    rx = ArrayGeometry.uspa(_MAP_RX_SENSE, grid.wavelength)
    out = []
    for x, y in points:
        probe = dataclasses.replace(
            scene, scatterers=np.array([[x, y, z_plane]])
        )
        try:
            path = path_parameters(probe, 1, seed=0)
        except ValueError:
            out.append(np.inf)
            continue
        f = steering_vector(tx, path.departure)[:, None]
        beams = np.broadcast_to(f, (grid.num_subcarriers, n_t, 1))
        with np.errstate(invalid="ignore", divide="ignore"):
            _, peb = speb(path, probe, grid, tx, rx, beams,
                          method="closed-form")
        out.append(peb if np.isfinite(peb) else np.inf)
    return out


def _chunked(points, pieces):
    size = max(1, (len(points) + pieces - 1) // pieces)
    return [points[i: i + size] for i in range(0, len(points), size)]


def run_peb_heatmap(cfg: ScenarioConfig, z_plane: float, n_t: int | None = None,
                    grid_res: int | None = None) -> ResultTable:
    """Steering-beamformer PEB over the coverage sector at one height.

    Emits (x, y, peb) rows in row-major sample order; unlocalizable points
    (on the station baseline, or at the receiver itself) carry peb = inf.
    """
    n_t = int(n_t) if n_t else 100
    res = int(grid_res) if grid_res else cfg.grid_points
    points = sector_samples(res, cfg.baseline_m)
    chunks = _chunked(points, max(_workers(), 8))
    pebs = []
    for part in _map_chunks(
        _steering_peb_chunk, [(cfg, z_plane, n_t, c) for c in chunks]
    ):
        pebs.extend(part)
    table = ResultTable(
        ("x", "y", "peb"),
        ("m", "m", "m"),
        metadata={
            "config_hash": cfg.config_hash(),
            "seed": cfg.seed,
            "z_plane_m": format(float(z_plane), "g"),
            "n_tx": n_t,
            "beamformer": "steering",
        },
    )
    for (x, y), peb in zip(points, pebs):
        table.append(x, y, peb)
    return table


def run_peb_cdf(cfg: ScenarioConfig, z_planes=(-10.0, 0.0, 30.0),
                n_t_values=(36, 100), grid_res: int | None = None) -> ResultTable:
    """Empirical CDF of the sector PEB per height and transmit array size.

    Within each (z, n_t) curve the rows are sorted by PEB and cdf is the
    fraction of sector samples at or below that value; unlocalizable
    samples count in the denominator and sit at the curve's tail as inf.
    """
    res = int(grid_res) if grid_res else cfg.grid_points
    points = sector_samples(res, cfg.baseline_m)
    table = ResultTable(
        ("z", "n_tx", "peb", "cdf"),
        ("m", "1", "m", "1"),
        metadata={
            "config_hash": cfg.config_hash(),
            "seed": cfg.seed,
            "sector_samples": len(points),
            "beamformer": "steering",
        },
    )
    for z in z_planes:
        for n_t in n_t_values:
            chunks = _chunked(points, max(_workers(), 8))
            pebs = []
            for part in _map_chunks(
                _steering_peb_chunk, [(cfg, float(z), int(n_t), c) for c in chunks]
            ):
                pebs.extend(part)
            order = np.sort(np.asarray(pebs))
            n = len(order)
            for i, peb in enumerate(order):
                table.append(float(z), int(n_t), float(peb), (i + 1) / n)
    return table


def _design_setup(cfg: ScenarioConfig):
    scene = cfg.scene()
    grid = cfg.grid()
    return scene, grid, cfg.tx_geom(), cfg.rx_sense_geom(), cfg.rx_comm_geom()


def run_convergence(cfg: ScenarioConfig, gammas=(0.1, 0.4)) -> ResultTable:
    """Per-outer-round objective of the alternating designs.

    Runs the trust-region and steepest-descent analog stages on the same
    scenario and channel for each PEB target. Each row carries the round's
    joint objective, whether that round's analog stage established the
    positioning gain floors, and the best objective over the feasible
    rounds so far (inf until the first feasible round); the envelope is
    what a convergence plot of a restarting alternation shows.
    """
    scene, grid, tx, rx_sense, rx_comm = _design_setup(cfg)
    paths = [path_parameters(scene, i, seed=0) for i in cfg.toi_paths]
    channel = comm_channel_realize(
        cfg.channel_params(), grid, tx, rx_comm, seed=cfg.seed
    )
    table = ResultTable(
        ("gamma", "method", "round", "objective", "round_feasible",
         "best_feasible"),
        ("m", "name", "1", "1", "1", "1"),
        metadata={
            "config_hash": cfg.config_hash(),
            "seed": cfg.seed,
            "num_streams": cfg.num_streams,
            "num_rf": cfg.num_rf,
        },
    )
    for gamma in gammas:
        for method in ("rtr-sca", "rsd-sca"):
            result = rtr_sca_design(
                channel.matrices, scene, grid, tx, rx_sense, paths,
                float(gamma), cfg.num_streams, cfg.num_rf, seed=cfg.seed,
                analog=method.split("-")[0],
            )
            best = np.inf
            for rnd, objective, ok in result.history:
                if ok:
                    best = min(best, float(objective))
                table.append(float(gamma), method, int(rnd), float(objective),
                             int(ok), best)
    return table


def _se_methods_for_seed(cfg, scene, grid, tx, rx_sense, rx_comm, paths,
                         gamma, num_streams, num_rf, seed, methods):
    """One channel draw, one design per method; returns beamformer stacks."""
    channel = comm_channel_realize(
        cfg.channel_params(), grid, tx, rx_comm, seed=seed
    )
    f_opt = np.stack(
        [
            optimal_digital_beamformer(channel.matrices[k], num_streams)
            for k in range(grid.num_subcarriers)
        ]
    )
    stacks = {}
    if "omp" in methods:
        stacks["omp"] = comm_only_omp(
            f_opt, build_dictionary(tx, channel), num_rf
        ).beamformer.per_subcarrier()
    if "rtr-sca" in methods:
        stacks["rtr-sca"] = rtr_sca_design(
            channel.matrices, scene, grid, tx, rx_sense, paths, gamma,
            num_streams, num_rf, seed=seed,
        ).beamformer.per_subcarrier()
    if "pc-omp" in methods:
        stacks["pc-omp"] = pc_omp_from_channel(
            channel, scene, grid, tx, rx_sense, paths, gamma,
            num_streams, num_rf,
        ).beamformer.per_subcarrier()
    if "steering" in methods:
        stacks["steering"] = beam_steering_design(
            channel, tx, num_streams, num_rf
        ).per_subcarrier()
    if "digital" in methods:
        stacks["digital"] = f_opt
    return channel, stacks


def _mean_ci(values):
    arr = np.asarray(values, dtype=float)
    mean = float(arr.mean())
    if arr.size < 2:
        return mean, 0.0
    return mean, float(1.96 * arr.std(ddof=1) / np.sqrt(arr.size))


def run_se_vs_snr(cfg: ScenarioConfig, snr_db_values=None,
                  num_seeds: int = 20) -> ResultTable:
    """Spectral efficiency of four designs across the receive SNR sweep.

    Protocol: one target, N_s = N_RF = 3, PEB target 0.4 m; each seed draws
    a fresh communication channel, designs once per method (the designs do
    not depend on SNR), and evaluates SE at every SNR point.
    """
    if snr_db_values is None:
        snr_db_values = tuple(range(-10, 11, 2))
    scene, grid, tx, rx_sense, rx_comm = _design_setup(cfg)
    gamma, num_streams, num_rf = 0.4, 3, 3
    paths = [path_parameters(scene, cfg.toi_paths[0], seed=0)]
    methods = ("omp", "rtr-sca", "pc-omp", "steering")
    per_method = {m: {s: [] for s in snr_db_values} for m in methods}
    for rep in range(num_seeds):
        seed = child_seed(cfg.seed, rep)
        channel, stacks = _se_methods_for_seed(
            cfg, scene, grid, tx, rx_sense, rx_comm, paths, gamma,
            num_streams, num_rf, seed, methods,
        )
        for snr_db in snr_db_values:
            snr = 10.0 ** (snr_db / 10.0)
            for m in methods:
                per_method[m][snr_db].append(
                    spectral_efficiency(channel.matrices, stacks[m], snr,
                                        num_streams)
                )
    table = ResultTable(
        ("snr_db", "method", "se", "ci95", "num_seeds"),
        ("dB", "name", "bit/s/Hz", "bit/s/Hz", "1"),
        metadata={
            "config_hash": cfg.config_hash(),
            "seed": cfg.seed,
            "gamma_m": gamma,
            "num_streams": num_streams,
            "num_rf": num_rf,
        },
    )
    for snr_db in snr_db_values:
        for m in methods:
            mean, ci = _mean_ci(per_method[m][snr_db])
            table.append(float(snr_db), m, mean, ci, num_seeds)
    return table


def run_se_vs_gamma(cfg: ScenarioConfig,
                    gammas=(0.1, 0.2, 0.4, 0.7, 1.0),
                    toi_sets=((1,), (1, 4)),
                    num_seeds: int = 5) -> ResultTable:
    """Positioning-communication tradeoff: SE against the PEB target.

    Protocol: N_s = 2, N_RF = 4, SNR 0 dB; one curve per target set size
    for the trust-region and the matching-pursuit designs.
    """
    scene, grid, tx, rx_sense, rx_comm = _design_setup(cfg)
    num_streams, num_rf = 2, 4
    snr = 10.0 ** (cfg.snr_comm_db / 10.0)
    methods = ("rtr-sca", "pc-omp")
    table = ResultTable(
        ("gamma", "num_targets", "method", "se", "ci95", "num_seeds"),
        ("m", "1", "name", "bit/s/Hz", "bit/s/Hz", "1"),
        metadata={
            "config_hash": cfg.config_hash(),
            "seed": cfg.seed,
            "snr_db": cfg.snr_comm_db,
            "num_streams": num_streams,
            "num_rf": num_rf,
        },
    )
    for toi in toi_sets:
        paths = [path_parameters(scene, i, seed=0) for i in toi]
        for gamma in gammas:
            values = {m: [] for m in methods}
            for rep in range(num_seeds):
                seed = child_seed(cfg.seed, rep)
                channel, stacks = _se_methods_for_seed(
                    cfg, scene, grid, tx, rx_sense, rx_comm, paths,
                    float(gamma), num_streams, num_rf, seed, methods,
                )
                for m in methods:
                    values[m].append(
                        spectral_efficiency(channel.matrices, stacks[m], snr,
                                            num_streams)
                    )
            for m in methods:
                mean, ci = _mean_ci(values[m])
                table.append(float(gamma), len(toi), m, mean, ci, num_seeds)
    return table


def run_se_vs_nrf(cfg: ScenarioConfig, n_rf_values=None,
                  num_seeds: int = 5) -> ResultTable:
    """SE against the analog chain count at a fixed stream count.

    Protocol: N_s = 3, PEB target 0.5 m, one target, SNR 0 dB; the fully
    digital unconstrained optimum rides along as the reference curve.
    """
    num_streams, gamma = 3, 0.5
    if n_rf_values is None:
        n_rf_values = tuple(range(num_streams, 2 * num_streams + 3))
    scene, grid, tx, rx_sense, rx_comm = _design_setup(cfg)
    snr = 10.0 ** (cfg.snr_comm_db / 10.0)
    paths = [path_parameters(scene, cfg.toi_paths[0], seed=0)]
    methods = ("rtr-sca", "pc-omp", "digital")
    table = ResultTable(
        ("n_rf", "method", "se", "ci95", "num_seeds"),
        ("1", "name", "bit/s/Hz", "bit/s/Hz", "1"),
        metadata={
            "config_hash": cfg.config_hash(),
            "seed": cfg.seed,
            "gamma_m": gamma,
            "snr_db": cfg.snr_comm_db,
            "num_streams": num_streams,
        },
    )
    for n_rf in n_rf_values:
        values = {m: [] for m in methods}
        for rep in range(num_seeds):
            seed = child_seed(cfg.seed, rep)
            channel, stacks = _se_methods_for_seed(
                cfg, scene, grid, tx, rx_sense, rx_comm, paths, gamma,
                num_streams, int(n_rf), seed, methods,
            )
            for m in methods:
                values[m].append(
                    spectral_efficiency(channel.matrices, stacks[m], snr,
                                        num_streams)
                )
        for m in methods:
            mean, ci = _mean_ci(values[m])
            table.append(int(n_rf), m, mean, ci, num_seeds)
    return table


def design_once(cfg: ScenarioConfig, method: str = "rtr-sca"):
    """One-shot joint design at the configured scenario.

    Returns a dict with the beamformer, feasibility, the realized PEB per
    target (checked through the Fisher analysis), the SE at the configured
    SNR, and a one-row summary table.
    """
    if method not in ("rtr-sca", "pc-omp"):
        raise ValueError("method must be rtr-sca or pc-omp")
    scene, grid, tx, rx_sense, rx_comm = _design_setup(cfg)
    paths = [path_parameters(scene, i, seed=0) for i in cfg.toi_paths]
    gamma = cfg.gamma_m
    channel = comm_channel_realize(
        cfg.channel_params(), grid, tx, rx_comm, seed=cfg.seed
    )
    if method == "rtr-sca":
        result = rtr_sca_design(
            channel.matrices, scene, grid, tx, rx_sense, paths, gamma,
            cfg.num_streams, cfg.num_rf, seed=cfg.seed,
        )
        beamformer, feasible = result.beamformer, bool(result.feasible)
    else:
        result = pc_omp_from_channel(
            channel, scene, grid, tx, rx_sense, paths, gamma,
            cfg.num_streams, cfg.num_rf,
        )
        beamformer, feasible = result.beamformer, True
    stack = beamformer.per_subcarrier()
    pebs = []
    for path in paths:
        _, peb = speb(path, scene, grid, tx, rx_sense, stack,
                      method="closed-form")
        pebs.append(float(peb))
    if np.isfinite(gamma) and pebs and max(pebs) > 1.05 * gamma:
        feasible = False
    snr = 10.0 ** (cfg.snr_comm_db / 10.0)
    se = spectral_efficiency(channel.matrices, stack, snr, cfg.num_streams)
    power = float(np.max(np.abs(beamformer.power_per_subcarrier()
                                - cfg.num_streams)))
    table = ResultTable(
        ("method", "gamma", "worst_peb", "se", "power_error", "feasible"),
        ("name", "m", "m", "bit/s/Hz", "1", "1"),
        metadata={"config_hash": cfg.config_hash(), "seed": cfg.seed},
    )
    table.append(method, gamma, max(pebs) if pebs else float("inf"), se,
                 power, int(feasible))
    return {
        "beamformer": beamformer,
        "feasible": feasible,
        "pebs": pebs,
        "se": se,
        "summary": table,
    }


def _fd_jacobian(fn, x0, steps):
    cols = []
    for i, h in enumerate(steps):
        e = np.zeros_like(x0)
        e[i] = h
        cols.append((np.asarray(fn(x0 + e)) - np.asarray(fn(x0 - e)))
                    / (2.0 * h))
    return np.stack(cols, axis=-1)


def self_check(cfg: ScenarioConfig | None = None) -> ResultTable:
    """Fast internal consistency battery behind the `check` subcommand.

    Each row reports one probe: closed-form position-error path against its
    slower algebraic twin, the gain-threshold round trip, the geometric
    Jacobian against finite differences, the matching-pursuit power bound,
    and byte-stable CSV serialization.
    """
    cfg = cfg or ScenarioConfig()
    rng = np.random.default_rng(0)
    table = ResultTable(
        ("check", "status", "detail"),
        ("name", "pass/fail", "1"),
        metadata={"config_hash": cfg.config_hash(), "seed": cfg.seed},
    )
    scene, grid, tx, rx_sense, _ = _design_setup(cfg)

    # closed-form SPEB equals the assembled-trace evaluation
    worst = 0.0
    for i in cfg.toi_paths:
        path = path_parameters(scene, i, seed=0)
        f = rng.standard_normal((grid.num_subcarriers, cfg.n_tx, 2)) \
            + 1j * rng.standard_normal((grid.num_subcarriers, cfg.n_tx, 2))
        s1, _ = speb(path, scene, grid, tx, rx_sense, f, method="closed-form")
        s2, _ = speb(path, scene, grid, tx, rx_sense, f, method="trace")
        worst = max(worst, abs(s1 - s2) / abs(s2))
    table.append("speb-two-path", "pass" if worst < 1e-8 else "fail", worst)

    # kappa round trip: a beamformer with gain kappa hits the PEB target
    path = path_parameters(scene, cfg.toi_paths[0], seed=0)
    gamma = 0.5
    kap = kappa_threshold(path, scene, grid, tx, rx_sense, 2, gamma)
    a = steering_vector(tx, path.departure)
    f = np.zeros((grid.num_subcarriers, cfg.n_tx, 2), dtype=complex)
    f[:, :, 0] = np.sqrt(kap) * a
    _, peb = speb(path, scene, grid, tx, rx_sense, f, method="closed-form")
    err = abs(peb - gamma) / gamma
    table.append("kappa-round-trip", "pass" if err < 1e-6 else "fail", err)

    # position Jacobian against central differences
    x0 = np.array([path.arrival.theta, path.arrival.phi, path.delay])
    jac = position_jacobian(path.arrival, path.delay, scene.baseline)
    fd = _fd_jacobian(
        lambda v: position_from_aoa_toa(Direction(v[0], v[1]), v[2],
                                        scene.baseline),
        x0, (1e-6, 1e-6, 1e-12),
    )
    jerr = float(np.max(np.abs(jac - fd) / np.maximum(np.abs(fd), 1e-3)))
    table.append("position-jacobian-fd", "pass" if jerr < 1e-4 else "fail",
                 jerr)

    # matching-pursuit norm bound on random designs
    ok = True
    margin_min = np.inf
    for _ in range(20):
        dirs = [
            Direction(rng.uniform(np.pi / 3, 2 * np.pi / 3),
                      rng.uniform(-np.pi / 3, np.pi / 3))
            for _ in range(12)
        ]
        cols = np.sqrt(cfg.n_tx) * np.stack(
            [steering_vector(tx, d) for d in dirs], axis=1
        )
        d = Dictionary(cols[:, 2:], cols[:, :2])
        f_opt = np.stack([
            np.linalg.qr(rng.standard_normal((cfg.n_tx, 2))
                         + 1j * rng.standard_normal((cfg.n_tx, 2)))[0]
            for _ in range(3)
        ])
        res = pc_omp_design(f_opt, d, rng.uniform(0.05, 0.8, 2), 4)
        margins = norm_bound_check(res.beamformer, f_opt, res.deltas)
        margin_min = min(margin_min, float(margins.min()))
        ok = ok and margins.min() > -1e-9
    table.append("pursuit-power-bound", "pass" if ok else "fail", margin_min)

    # serialization determinism
    t = ResultTable(("a", "b"), ("1", "m"))
    t.append(1, float("inf"))
    t.append(2, 0.25)
    same = t.to_csv() == t.to_csv()
    table.append("csv-determinism", "pass" if same else "fail", int(same))
    return table
