"""Experiment orchestration: FedSGD rounds over the simulated uplink.

Per round every client computes its local gradient, encodes it as float32
bits and sends it with the configured strategy; the server decodes,
aggregates, updates the global model and evaluates it. Airtime is the sum of
channel symbols over all clients (time-division uplink).
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
import logging
from pathlib import Path

from django.conf import settings
import numpy as np
import pandas as pd

from .datasets import load_dataset, split_dataset
from .exceptions import ExperimentAborted, LinkFailure
from .float_codec import encode
from .flcore import (
    aggregate,
    evaluate,
    finite_gradient,
    forward_backward,
    global_update,
    init_params,
    partition_iid,
    partition_noniid,
    select_batch,
)
from .link import decoder_for, send
from .modem import build_constellation, ber_sweep
from .seeding import STREAM_CHANNEL, derive_rng

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.10g"
AIRTIME_COLUMNS = ["strategy", "label", "round", "airtime_symbols", "airtime_seconds", "accuracy", "loss"]
ROUND_COLUMNS = [
    "round",
    "strategy",
    "accuracy",
    "loss",
    "symbols_used",
    "cumulative_airtime",
    "retransmissions",
    "raw_bit_errors",
    "residual_bit_errors",
    "in_unit_fraction",
]
BER_COLUMNS = ["modulation", "snr_db", "ber", "closed_form"]
SAME_SNR_POINTS = (("qpsk", 10.0), ("qam16", 10.0), ("qam256", 10.0))
SAME_BER_POINTS = (("qpsk", 10.0), ("qam16", 16.0), ("qam256", 26.0))
MATCHED_BER = 4e-2
BER_MATCH_TOLERANCE = 0.2
PRECHECK_BITS = 200_000
FINAL_WINDOW = 10
ACCURACY_VS_TIME_CSV = "fig3_accuracy_vs_time.csv"
SAME_SNR_CSV = "fig4a_same_snr.csv"
SAME_BER_CSV = "fig4b_same_ber.csv"
BER_PRECHECK_CSV = "ber_precheck.csv"


@dataclass(frozen=True)
class ClientRoundStats:
    client_id: int
    raw_bit_errors: int
    residual_bit_errors: int
    symbols_used: int
    retransmissions: int
    replaced_values: int = 0


@dataclass(frozen=True)
class RoundReport:
    round: int
    strategy: str
    clients: tuple
    symbols_used: int
    cumulative_airtime: int
    accuracy: float
    loss: float
    in_unit_fraction: float
    airtime_seconds: float | None = None

    @property
    def raw_bit_errors(self) -> int:
        return sum(client.raw_bit_errors for client in self.clients)

    @property
    def residual_bit_errors(self) -> int:
        return sum(client.residual_bit_errors for client in self.clients)

    @property
    def retransmissions(self) -> int:
        return sum(client.retransmissions for client in self.clients)

    def as_row(self) -> dict:
        return {
            "round": self.round,
            "strategy": self.strategy,
            "accuracy": self.accuracy,
            "loss": self.loss,
            "symbols_used": self.symbols_used,
            "cumulative_airtime": self.cumulative_airtime,
            "retransmissions": self.retransmissions,
            "raw_bit_errors": self.raw_bit_errors,
            "residual_bit_errors": self.residual_bit_errors,
            "in_unit_fraction": self.in_unit_fraction,
        }


@dataclass(frozen=True)
class FederatedSetup:
    spec: object
    clients: list
    test: object
    params: object


@dataclass
class SuiteResult:
    same_snr: pd.DataFrame
    same_ber: pd.DataFrame
    precheck: pd.DataFrame
    reports: dict = field(default_factory=dict)


def prepare(cfg) -> FederatedSetup:
    fl = cfg.fl
    dataset = load_dataset(
        fl.dataset, seed=fl.seed, images_path=fl.idx_train_images, labels_path=fl.idx_train_labels
    )
    train, test = split_dataset(dataset, fl.test_fraction, fl.seed)
    if fl.partition == "iid":
        clients = partition_iid(train, fl.clients, fl.seed)
    else:
        clients = partition_noniid(train, fl.clients, fl.shards_per_client, fl.seed)
    spec = fl.model_spec(train.x.shape[1:], train.n_classes)
    params = init_params(spec, fl.seed)
    logger.info(
        "Prepared %d clients on %d training samples; model has %d parameters.",
        len(clients),
        len(train),
        spec.n_params,
    )
    return FederatedSetup(spec=spec, clients=clients, test=test, params=params)


def _client_round(params, client, cfg, strategy, constellation, round_number):
    x, y = select_batch(client, cfg.fl.batch_size, cfg.seed, round_number)
    loss, gradient = forward_backward(params, (x, y))
    gradient, replaced = finite_gradient(gradient)
    if replaced:
        logger.warning(
            "Client %d round %d: replaced %d non-finite gradient values before encoding.",
            client.client_id,
            round_number,
            replaced,
        )
    in_unit = int(np.count_nonzero(np.abs(gradient.values) < 1.0))
    frame = encode(gradient)
    rng = derive_rng(cfg.seed, STREAM_CHANNEL, client.client_id, round_number)
    outcome = send(frame, constellation, cfg.channel, strategy, rng)
    received = decoder_for(strategy.kind)(outcome.delivered)
    stats = ClientRoundStats(
        client_id=client.client_id,
        raw_bit_errors=outcome.raw_bit_errors,
        residual_bit_errors=outcome.residual_bit_errors,
        symbols_used=outcome.symbols_used,
        retransmissions=outcome.retransmissions,
        replaced_values=replaced,
    )
    return loss, received, stats, in_unit


def run_experiment(cfg, strategy=None, *, setup=None, on_round=None, workers=None) -> list:
    """Run every round for one strategy and return the per-round reports.

    An ECRT link failure aborts the run with ExperimentAborted carrying the
    reports of the completed rounds.
    """
    kind = strategy or cfg.strategies[0]
    link = cfg.strategy(kind)
    setup = setup or prepare(cfg)
    workers = int(workers or settings.APPROXFL_WORKERS)
    constellation = build_constellation(cfg.modulation)
    weights = [client.weight for client in setup.clients]
    params = setup.params
    reports = []
    airtime = 0

    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for round_number in range(1, cfg.rounds + 1):

            def run_client(client, params=params, round_number=round_number):
                return _client_round(params, client, cfg, link, constellation, round_number)

            try:
                if pool is not None:
                    results = list(pool.map(run_client, setup.clients))
                else:
                    results = [run_client(client) for client in setup.clients]
            except LinkFailure as exc:
                raise ExperimentAborted(
                    f"Round {round_number} aborted: {exc.detail}", reports=reports, cause=exc
                ) from exc

            losses, gradients, stats, in_unit = zip(*results)
            update = aggregate(list(gradients), weights, round=round_number)
            params = global_update(params, update, lr=cfg.fl.lr)
            symbols = sum(item.symbols_used for item in stats)
            airtime += symbols
            report = RoundReport(
                round=round_number,
                strategy=kind,
                clients=tuple(stats),
                symbols_used=symbols,
                cumulative_airtime=airtime,
                accuracy=evaluate(params, setup.test.x, setup.test.y),
                loss=float(np.dot(weights, losses)),
                in_unit_fraction=sum(in_unit) / (len(gradients) * setup.spec.n_params),
                airtime_seconds=airtime / cfg.symbol_rate_hz if cfg.symbol_rate_hz else None,
            )
            reports.append(report)
            logger.info(
                "round=%d strategy=%s accuracy=%.4f loss=%.4f symbols=%d retransmissions=%d",
                report.round,
                kind,
                report.accuracy,
                report.loss,
                report.symbols_used,
                report.retransmissions,
            )
            if on_round is not None:
                on_round(report)
    finally:
        if pool is not None:
            pool.shutdown()
    return reports


def run_strategies(cfg, *, on_round=None, workers=None) -> dict:
    setup = prepare(cfg)
    return {
        kind: run_experiment(cfg, kind, setup=setup, on_round=on_round, workers=workers)
        for kind in cfg.strategies
    }


def reports_frame(reports) -> pd.DataFrame:
    return pd.DataFrame([report.as_row() for report in reports], columns=ROUND_COLUMNS)


def accuracy_vs_airtime(reports_by_strategy, label="") -> pd.DataFrame:
    rows = [
        {
            "strategy": strategy,
            "label": label,
            "round": report.round,
            "airtime_symbols": report.cumulative_airtime,
            "airtime_seconds": report.airtime_seconds,
            "accuracy": report.accuracy,
            "loss": report.loss,
        }
        for strategy, reports in reports_by_strategy.items()
        for report in reports
    ]
    frame = pd.DataFrame(rows, columns=AIRTIME_COLUMNS)
    return frame.sort_values(["airtime_symbols", "strategy", "round"], kind="mergesort").reset_index(drop=True)


def time_to_target(reports, target):
    for report in reports:
        if report.accuracy >= target:
            return report.cumulative_airtime
    return None


def time_to_target_ratio(ecrt_reports, approx_reports, target):
    slow = time_to_target(ecrt_reports, target)
    fast = time_to_target(approx_reports, target)
    if slow is None or fast is None or fast == 0:
        return None
    return slow / fast


def ber_precheck(points=SAME_BER_POINTS, *, seed=0, n_bits=PRECHECK_BITS, channel_cfg=None) -> pd.DataFrame:
    """Measure BER at each matched point; abort unless all sit near MATCHED_BER."""
    rows, mismatched = [], []
    for index, (modulation, snr_db) in enumerate(points):
        point = ber_sweep(
            build_constellation(modulation), [snr_db], n_bits, seed + index, channel_cfg=channel_cfg
        )[0]
        if abs(point.ber - MATCHED_BER) > BER_MATCH_TOLERANCE * MATCHED_BER:
            mismatched.append(f"{modulation}@{snr_db:g}dB measures {point.ber:.3e}")
        rows.append(
            {"modulation": modulation, "snr_db": snr_db, "ber": point.ber, "closed_form": point.closed_form}
        )
    if mismatched:
        raise ExperimentAborted(
            f"BER is not within {100 * BER_MATCH_TOLERANCE:.0f}% of {MATCHED_BER:.0e}: "
            + "; ".join(mismatched),
            reports=[],
        )
    return pd.DataFrame(rows, columns=BER_COLUMNS)


def _modulation_curves(cfg, points, n_seeds, workers, collected):
    frames = []
    for modulation, snr_db in points:
        label = f"{modulation}@{snr_db:g}dB"
        runs = []
        for offset in range(n_seeds):
            run_cfg = cfg.with_overrides(
                strategies=("approximate",), seed=cfg.seed + offset, snr_db=snr_db, modulation=modulation
            )
            reports = run_experiment(run_cfg, "approximate", workers=workers)
            collected.setdefault(label, []).append(reports)
            runs.append(accuracy_vs_airtime({"approximate": reports}, label=label))
        merged = pd.concat(runs)
        frames.append(
            merged.groupby(["strategy", "label", "round"], as_index=False, sort=False).agg(
                airtime_symbols=("airtime_symbols", "first"),
                airtime_seconds=("airtime_seconds", "first"),
                accuracy=("accuracy", "mean"),
                loss=("loss", "mean"),
            )[AIRTIME_COLUMNS]
        )
    return pd.concat(frames, ignore_index=True)


def same_snr_same_ber_suite(cfg, *, n_seeds=3, workers=None) -> SuiteResult:
    """Approximate-strategy curves for three modulations at equal SNR and at matched BER."""
    if n_seeds < 1:
        n_seeds = 1
    collected = {}
    precheck = ber_precheck(seed=cfg.seed, channel_cfg=cfg.channel)
    same_snr = _modulation_curves(cfg, SAME_SNR_POINTS, n_seeds, workers, collected)
    same_ber = _modulation_curves(cfg, SAME_BER_POINTS, n_seeds, workers, collected)
    return SuiteResult(same_snr=same_snr, same_ber=same_ber, precheck=precheck, reports=collected)


def final_accuracy(frame: pd.DataFrame, window: int = FINAL_WINDOW) -> dict:
    """Mean accuracy over the last `window` rounds of each labelled curve."""
    last = frame.sort_values("round", kind="mergesort").groupby("label", sort=False).tail(max(1, window))
    return last.groupby("label", sort=False)["accuracy"].mean().to_dict()


def write_csv(frame: pd.DataFrame, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    return path


def write_run_csvs(reports_by_strategy, out, label="") -> list:
    """The merged accuracy-vs-airtime CSV, then one per-round CSV per strategy."""
    out = Path(out)
    paths = [write_csv(accuracy_vs_airtime(reports_by_strategy, label=label), out / ACCURACY_VS_TIME_CSV)]
    for kind, reports in reports_by_strategy.items():
        paths.append(write_csv(reports_frame(reports), out / f"rounds_{kind}.csv"))
    return paths