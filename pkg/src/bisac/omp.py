"""Partitioned matching-pursuit hybrid beamforming.

The hybrid precoder is split into a positioning block and a communication
block. One analog column per target is pinned to that target's scaled
transmit steering vector, and the matching digital row is sized so the
transmit gain toward the target clears its floor kappa_n. Under
half-wavelength arrays, steering vectors at distinct angles decorrelate, so
the pinned columns barely disturb the data link and the rest of the design
can ignore them. The remaining analog columns are picked greedily from the
channel's own ray steering vectors to chase the unconstrained optimum
(orthogonal matching pursuit over a finite dictionary).

Compared with the alternating trust-region design this costs one greedy
scan plus a handful of small least-squares solves per subcarrier, at a
modest spectral-efficiency price.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .arrays import ArrayGeometry, SubcarrierGrid, steering_vector
from .channel import (
    CommChannel,
    HybridBeamformer,
    SensingScene,
    optimal_digital_beamformer,
)
from .peb import kappa_threshold

__all__ = [
    "Dictionary",
    "Partition",
    "OmpSelection",
    "OmpDesignResult",
    "build_dictionary",
    "positioning_side_design",
    "omp_select",
    "pc_omp_design",
    "pc_omp_from_channel",
    "comm_only_omp",
    "beam_steering_design",
    "norm_bound_check",
]

# residual treated as numerically zero, relative to the approximation target
_ZERO_RTOL = 1e-14
# near-duplicate dictionary columns tolerated in the least-squares fits
_PINV_RTOL = 1e-12


@dataclass(frozen=True)
class Dictionary:
    """Steering dictionary for the matching-pursuit design.

    Attributes:
        columns: N_t x (N_cl N_ray) matrix whose columns are the transmit
            steering vectors of every communication ray, scaled by
            sqrt(N_t) so entries have unit modulus.
        target_columns: N_t x N matrix of scaled steering vectors toward
            the sensing targets; these become the pinned analog columns.
    """

    columns: np.ndarray
    target_columns: np.ndarray

    def __post_init__(self):
        cols = np.asarray(self.columns, dtype=complex)
        tcols = np.asarray(self.target_columns, dtype=complex)
        if cols.ndim != 2 or cols.shape[1] < 1:
            raise ValueError("dictionary needs at least one column")
        if tcols.ndim != 2 or tcols.shape[0] != cols.shape[0]:
            raise ValueError("target columns must share the element count")
        root = np.sqrt(cols.shape[0])
        for block in (cols, tcols):
            if block.shape[1] and not np.allclose(
                np.linalg.norm(block, axis=0), root, rtol=1e-6, atol=0.0
            ):
                raise ValueError(
                    "columns must be steering vectors scaled to norm sqrt(N_t)"
                )
        object.__setattr__(self, "columns", cols)
        object.__setattr__(self, "target_columns", tcols)

    @property
    def num_elements(self) -> int:
        return self.columns.shape[0]

    @property
    def size(self) -> int:
        return self.columns.shape[1]

    @property
    def num_targets(self) -> int:
        return self.target_columns.shape[1]


def build_dictionary(
    tx_geom: ArrayGeometry, channel: CommChannel, toi_paths=()
) -> Dictionary:
    """Ray-steering dictionary plus pinned target columns.

    Args:
        tx_geom: transmit array.
        channel: realized communication channel; every ray contributes one
            dictionary column, in cluster-major order.
        toi_paths: PathParams of the targets of interest (may be empty).

    Returns:
        Dictionary with sqrt(N_t)-scaled steering columns.
    """
    scale = np.sqrt(tx_geom.num_elements)
    cols = scale * np.stack(
        [steering_vector(tx_geom, ray.departure) for ray in channel.rays], axis=1
    )
    paths = list(toi_paths)
    if paths:
        tcols = scale * np.stack(
            [steering_vector(tx_geom, p.departure) for p in paths], axis=1
        )
    else:
        tcols = np.zeros((tx_geom.num_elements, 0), dtype=complex)
    return Dictionary(cols, tcols)


@dataclass(frozen=True)
class Partition:
    """Positioning and communication blocks of one hybrid design.

    Attributes:
        positioning: (K, N_s, N) digital blocks feeding the pinned columns;
            column n carries squared norm floors[n] on every subcarrier.
        analog_comm: N_t x (N_RF - N) communication analog block.
        digital_comm: (K, N_RF - N, N_s) communication digital blocks.
        floors: per-target transmit power floors v_n = kappa_n / N_t.
    """

    positioning: np.ndarray
    analog_comm: np.ndarray
    digital_comm: np.ndarray
    floors: np.ndarray

    def __post_init__(self):
        pos = np.asarray(self.positioning, dtype=complex)
        ana = np.asarray(self.analog_comm, dtype=complex)
        dig = np.asarray(self.digital_comm, dtype=complex)
        floors = np.atleast_1d(np.asarray(self.floors, dtype=float))
        if pos.ndim != 3 or pos.shape[2] != floors.shape[0]:
            raise ValueError("positioning blocks must be (K, N_s, N)")
        if ana.ndim != 2 or dig.ndim != 3 or dig.shape[1] != ana.shape[1]:
            raise ValueError(
                "communication blocks must be (N_t, C) and (K, C, N_s)"
            )
        if dig.shape[0] != pos.shape[0] or dig.shape[2] != pos.shape[1]:
            raise ValueError("subcarrier or stream counts disagree")
        if floors.size and floors.min() <= 0.0:
            raise ValueError("power floors must be positive")
        power = np.sum(np.abs(pos) ** 2, axis=1)
        if floors.size and not np.allclose(
            power, floors[None, :], rtol=1e-8, atol=0.0
        ):
            raise ValueError("positioning columns must carry power v_n exactly")
        object.__setattr__(self, "positioning", pos)
        object.__setattr__(self, "analog_comm", ana)
        object.__setattr__(self, "digital_comm", dig)
        object.__setattr__(self, "floors", floors)

    def assemble(self, target_columns: np.ndarray) -> HybridBeamformer:
        """Combine both sides: analog [targets, communication], digital rows
        [positioning transposed; communication]."""
        analog = np.concatenate(
            [np.asarray(target_columns, dtype=complex), self.analog_comm], axis=1
        )
        digital = np.concatenate(
            [self.positioning.transpose(0, 2, 1), self.digital_comm], axis=1
        )
        return HybridBeamformer(analog=analog, digital=digital)


def positioning_side_design(f_opt_k, target_columns, floors) -> np.ndarray:
    """Digital block that pins the required transmit gain on each target.

    Column n points along psi = a_n^H F_opt (the data precoder's footprint
    in the target direction, transposed without conjugation) and is scaled
    so its squared norm is exactly the floor v_n. Through the pinned analog
    column this puts a transmit gain of about N_t v_n = kappa_n on target n
    while reusing whatever stream mix the data precoder already sends that
    way.

    Args:
        f_opt_k: N_t x N_s optimal digital precoder at one subcarrier.
        target_columns: N_t x N scaled steering vectors (pinned columns).
        floors: length-N positive power floors v_n.

    Returns:
        N_s x N complex block; column n has squared norm floors[n].

    A target whose steering vector is exactly orthogonal to f_opt_k leaves
    psi = 0 with no preferred stream mix; its power then goes to the first
    stream, with a warning.
    """
    f_opt_k = np.asarray(f_opt_k, dtype=complex)
    tcols = np.asarray(target_columns, dtype=complex)
    floors = np.atleast_1d(np.asarray(floors, dtype=float))
    if f_opt_k.ndim != 2 or tcols.ndim != 2 or tcols.shape[0] != f_opt_k.shape[0]:
        raise ValueError("precoder and target columns must share the element count")
    if floors.shape[0] != tcols.shape[1]:
        raise ValueError("one power floor per target required")
    if floors.size and floors.min() <= 0.0:
        raise ValueError("power floors must be positive")
    block = np.zeros((f_opt_k.shape[1], tcols.shape[1]), dtype=complex)
    for n in range(tcols.shape[1]):
        psi = tcols[:, n].conj() @ f_opt_k
        norm = np.linalg.norm(psi)
        if norm == 0.0:
            warnings.warn(
                "target direction orthogonal to the data precoder; "
                "pinning its power on the first stream"
            )
            block[0, n] = np.sqrt(floors[n])
        else:
            block[:, n] = np.sqrt(floors[n]) * psi / norm
    return block


@dataclass
class OmpSelection:
    """Outcome of the greedy dictionary selection."""

    columns: np.ndarray        # N_t x (number actually selected)
    indices: list
    residual_norms: np.ndarray  # (rounds, K) least-squares residual per subcarrier
    stopped_early: bool = False


def omp_select(residuals, dictionary_columns, count: int) -> OmpSelection:
    """Greedily pick the dictionary columns with the largest summed projection.

    Each round scores every still-available column m by the diagonal entry
    sum_k (P_k P_k^H)_{m,m} with P_k = A^H R_k, appends the winner, and
    refreshes the per-subcarrier least-squares fit of the targets on the
    selected columns. R_k restarts every round as that fit's residual,
    scaled to unit Frobenius norm so all subcarriers vote equally. A column
    is never selected twice; a repeat would add no rank to the fit.

    Args:
        residuals: (K, N_t, N_s) matrices to approximate; they double as the
            first-round residuals.
        dictionary_columns: N_t x L candidate columns.
        count: number of columns to select, 1 <= count <= L.

    Returns:
        OmpSelection. Selection stops early once the residual is numerically
        zero, returning fewer than count columns with stopped_early set.
    """
    targets = np.asarray(residuals, dtype=complex)
    if targets.ndim == 2:
        targets = targets[None]
    adict = np.asarray(dictionary_columns, dtype=complex)
    if targets.ndim != 3 or adict.ndim != 2 or targets.shape[1] != adict.shape[0]:
        raise ValueError("dictionary and residuals must share the element count")
    if not 1 <= count <= adict.shape[1]:
        raise ValueError("count must lie in [1, dictionary size]")

    scale = np.linalg.norm(targets)
    res = targets
    indices = []
    norms_hist = []
    stopped = False
    for _ in range(count):
        proj = np.einsum("tm,ktn->kmn", adict.conj(), res)
        scores = np.sum(np.abs(proj) ** 2, axis=(0, 2))
        if indices:
            scores[np.array(indices)] = -np.inf
        q = int(np.argmax(scores))
        indices.append(q)
        cols = adict[:, indices]
        fit = np.einsum(
            "ct,ktn->kcn", np.linalg.pinv(cols, rcond=_PINV_RTOL), targets
        )
        errs = targets - np.einsum("tc,kcn->ktn", cols, fit)
        norms = np.linalg.norm(errs.reshape(errs.shape[0], -1), axis=1)
        norms_hist.append(norms)
        if norms.max() <= _ZERO_RTOL * scale:
            stopped = len(indices) < count
            break
        res = errs / norms[:, None, None]
    return OmpSelection(
        columns=adict[:, indices].copy(),
        indices=indices,
        residual_norms=np.array(norms_hist),
        stopped_early=stopped,
    )


@dataclass
class OmpDesignResult:
    """Outcome of the partitioned matching-pursuit design."""

    beamformer: HybridBeamformer
    partition: Partition
    deltas: np.ndarray       # (K,) communication-side residual before rescaling
    selected: list
    kappas: np.ndarray
    fit: float               # final squared distance to the optimal precoders


def pc_omp_design(f_opt, dictionary: Dictionary, kappas, num_rf: int) -> OmpDesignResult:
    """Hybrid design from the partition: pin the targets, then pursue.

    The data-optimal precoders are reproduced in two parts. The positioning
    part pins one analog column per target and sizes its digital row for the
    gain floor. The communication part approximates what the positioning
    side leaves over with a greedy column selection and per-subcarrier least
    squares, then rescales each digital block so the communication side
    carries exactly the leftover's power. That rescaling keeps the combined
    per-subcarrier norm within twice the pre-rescaling residual of the
    optimal precoder's norm (see norm_bound_check).

    Args:
        f_opt: (K, N_t, N_s) optimal digital precoders.
        dictionary: candidate ray columns plus pinned target columns.
        kappas: length-N transmit gain floors toward the targets.
        num_rf: total analog columns; must be at least the number of targets,
            and equality leaves no columns for the data link (warned).

    Returns:
        OmpDesignResult with the assembled beamformer, the partition, the
        per-subcarrier pre-rescaling residuals (deltas), and the selected
        dictionary indices in pick order.
    """
    f_opt = np.asarray(f_opt, dtype=complex)
    if f_opt.ndim == 2:
        f_opt = f_opt[None]
    if f_opt.ndim != 3 or f_opt.shape[1] != dictionary.num_elements:
        raise ValueError("f_opt must be (K, N_t, N_s) on the dictionary's array")
    kappas = np.atleast_1d(np.asarray(kappas, dtype=float))
    n_target = dictionary.num_targets
    if kappas.shape[0] != n_target:
        raise ValueError("one kappa per target column required")
    if num_rf < max(1, n_target):
        raise ValueError("num_rf must cover every pinned target column")
    count = num_rf - n_target
    if count > dictionary.size:
        raise ValueError("not enough dictionary columns for num_rf")

    K, n_t, n_s = f_opt.shape
    floors = kappas / n_t
    positioning = np.stack(
        [
            positioning_side_design(f_opt[k], dictionary.target_columns, floors)
            for k in range(K)
        ]
    )
    remainder = f_opt - np.einsum(
        "tn,ksn->kts", dictionary.target_columns, positioning
    )

    if count == 0:
        warnings.warn(
            "no analog columns left for the data link; the design is "
            "positioning only"
        )
        analog_comm = np.zeros((n_t, 0), dtype=complex)
        digital_comm = np.zeros((K, 0, n_s), dtype=complex)
        deltas = np.linalg.norm(remainder.reshape(K, -1), axis=1)
        selected = []
    else:
        sel = omp_select(remainder, dictionary.columns, count)
        selected = list(sel.indices)
        cols = sel.columns
        fit_bb = np.einsum(
            "ct,ktn->kcn", np.linalg.pinv(cols, rcond=_PINV_RTOL), remainder
        )
        synth = np.einsum("tc,kcn->ktn", cols, fit_bb)
        deltas = np.linalg.norm((remainder - synth).reshape(K, -1), axis=1)
        wanted = np.linalg.norm(remainder.reshape(K, -1), axis=1)
        got = np.linalg.norm(synth.reshape(K, -1), axis=1)
        rescale = np.divide(wanted, got, out=np.zeros(K), where=got > 0.0)
        digital_comm = fit_bb * rescale[:, None, None]
        analog_comm = cols
        if len(selected) < count:
            # zero-residual early stop: unused analog slots get the first
            # unselected dictionary columns, with all-zero digital rows
            pad = [m for m in range(dictionary.size) if m not in selected]
            pad = pad[: count - len(selected)]
            analog_comm = np.concatenate(
                [cols, dictionary.columns[:, pad]], axis=1
            )
            digital_comm = np.concatenate(
                [
                    digital_comm,
                    np.zeros((K, count - len(selected), n_s), dtype=complex),
                ],
                axis=1,
            )

    partition = Partition(
        positioning=positioning,
        analog_comm=analog_comm,
        digital_comm=digital_comm,
        floors=floors,
    )
    beamformer = partition.assemble(dictionary.target_columns)
    fit = float(np.sum(np.abs(f_opt - beamformer.per_subcarrier()) ** 2))
    return OmpDesignResult(
        beamformer=beamformer,
        partition=partition,
        deltas=deltas,
        selected=selected,
        kappas=kappas,
        fit=fit,
    )


def pc_omp_from_channel(
    channel: CommChannel,
    scene: SensingScene,
    grid: SubcarrierGrid,
    tx_geom: ArrayGeometry,
    rx_geom: ArrayGeometry,
    toi_paths,
    gamma_peb,
    num_streams: int,
    num_rf: int,
) -> OmpDesignResult:
    """Run the partitioned design straight from a channel realization.

    Builds the per-subcarrier optimal precoders, the ray dictionary, and the
    per-target gain floors for the requested position error target, then
    calls pc_omp_design. Arguments mirror rtr_sca_design; a missing or
    infinite gamma_peb (or an empty target list) drops the positioning side
    and leaves the classical communication-only pursuit.

    Args:
        channel: realized communication channel (provides the matrices and
            the ray dictionary).
        scene: sensing link budget and geometry.
        grid: subcarrier layout.
        tx_geom: transmit array; rx_geom: sensing receive array.
        toi_paths: PathParams of each target of interest.
        gamma_peb: PEB target in meters; None or inf disables positioning.
        num_streams: N_s; num_rf: N_RF.

    Returns:
        OmpDesignResult.
    """
    channels = np.asarray(channel.matrices, dtype=complex)
    K = grid.num_subcarriers
    n_t = tx_geom.num_elements
    if channels.shape[0] != K or channels.shape[2] != n_t:
        raise ValueError("channel stack must be (K, N_r^c, N_t)")
    if not num_streams <= num_rf <= n_t:
        raise ValueError("need N_s <= N_RF <= N_t")
    f_opt = np.stack(
        [optimal_digital_beamformer(channels[k], num_streams) for k in range(K)]
    )
    unconstrained = (
        gamma_peb is None or not np.isfinite(gamma_peb) or not list(toi_paths)
    )
    if unconstrained:
        paths = []
        kappas = np.zeros(0)
    else:
        paths = list(toi_paths)
        kappas = np.array(
            [
                kappa_threshold(p, scene, grid, tx_geom, rx_geom,
                                num_streams, gamma_peb)
                for p in paths
            ]
        )
        if not np.all(np.isfinite(kappas)):
            raise ValueError("PEB target unreachable: singular target geometry")
    dictionary = build_dictionary(tx_geom, channel, paths)
    return pc_omp_design(f_opt, dictionary, kappas, num_rf)


def comm_only_omp(f_opt, dictionary: Dictionary, num_rf: int) -> OmpDesignResult:
    """Matching-pursuit hybrid design with no positioning columns.

    The classical baseline: every analog column comes from the greedy ray
    selection and the digital rescaling lands the per-subcarrier power on
    N_s exactly (the pre-rescaling residual no longer interacts with a
    pinned block).
    """
    bare = Dictionary(
        dictionary.columns,
        np.zeros((dictionary.num_elements, 0), dtype=complex),
    )
    return pc_omp_design(f_opt, bare, np.zeros(0), num_rf)


def beam_steering_design(
    channel: CommChannel, tx_geom: ArrayGeometry, num_streams: int, num_rf: int
) -> HybridBeamformer:
    """Analog-only baseline: steer every chain at the dominant direction.

    All num_rf analog columns point along the channel's strongest ray by
    average power (cluster power times squared ray gain); the digital stage
    routes stream s to analog column s with one common scale chosen so the
    per-subcarrier transmit power is exactly num_streams. Every subcarrier
    gets the same digital stage.

    Args:
        channel: realized communication channel.
        tx_geom: transmit array.
        num_streams: N_s, at most num_rf.
        num_rf: analog columns.

    Returns:
        HybridBeamformer.
    """
    if not 1 <= num_streams <= num_rf:
        raise ValueError("need 1 <= N_s <= N_RF")
    rays = channel.rays
    if not rays:
        raise ValueError("channel has no rays to steer at")
    best = int(np.argmax(channel.ray_powers()))
    scale = np.sqrt(tx_geom.num_elements)
    column = scale * steering_vector(tx_geom, rays[best].departure)
    analog = np.tile(column[:, None], (1, num_rf))
    base = np.zeros((num_rf, num_streams), dtype=complex)
    base[:num_streams, :] = np.eye(num_streams)
    base *= np.sqrt(num_streams) / np.linalg.norm(analog[:, :num_streams])
    K = channel.matrices.shape[0]
    digital = np.broadcast_to(base, (K, num_rf, num_streams)).copy()
    return HybridBeamformer(analog=analog, digital=digital)


def norm_bound_check(
    beamformer: HybridBeamformer, f_opt, deltas, atol: float = 1e-9
) -> np.ndarray:
    """Check the combined power against the rescaling-residual bound.

    Rescaling the communication digital blocks to the leftover's power can
    move the combined Frobenius norm away from the optimal precoder's norm
    by at most twice the pre-rescaling residual:

        | ||F_rf F_bb_k||_F - ||F_opt_k||_F | <= 2 delta_k.

    Both the rescaling error and the dropped residual contribute at most
    delta_k each, hence the factor two.

    Args:
        beamformer: assembled hybrid design.
        f_opt: (K, N_t, N_s) precoders the design approximates.
        deltas: scalar or length-K pre-rescaling residual norms.
        atol: numerical slack added to the bound.

    Returns:
        (K,) margins (bound minus deviation), all >= -atol.

    Raises:
        ValueError: the bound fails on some subcarrier by more than atol.
    """
    f_opt = np.asarray(f_opt, dtype=complex)
    if f_opt.ndim == 2:
        f_opt = f_opt[None]
    K = beamformer.num_subcarriers
    if f_opt.ndim != 3 or f_opt.shape[0] != K:
        raise ValueError("f_opt must cover every subcarrier")
    deltas = np.broadcast_to(np.asarray(deltas, dtype=float), (K,))
    if deltas.min() < 0.0:
        raise ValueError("deltas must be nonnegative")
    norms = np.sqrt(beamformer.power_per_subcarrier())
    target = np.linalg.norm(f_opt.reshape(K, -1), axis=1)
    margins = 2.0 * deltas - np.abs(norms - target)
    if margins.min() < -atol:
        k = int(np.argmin(margins))
        raise ValueError(
            f"combined power off by {abs(norms[k] - target[k]):.3e} at "
            f"subcarrier {k}, beyond its 2 delta = {2.0 * deltas[k]:.3e} bound"
        )
    return margins
