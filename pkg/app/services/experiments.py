"""
Experiment runner behind the `stclab` subcommands and the HTTP API.
Turns a validated ExperimentConfig into simulations, sweeps and audits and
writes the figure-ready CSV files and the verification report.
"""

import logging
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from app.config.settings import Settings
from app.core.errors import (
    EXIT_VIOLATION,
    ConfigurationError,
    DivergenceError,
    OutputError,
    ParameterError,
    UndefinedMetricError,
)
from app.core.functions import sgnpow
from app.schemas.schemas import (
    ControllerVariant,
    ExperimentConfig,
    ExperimentName,
    GainSet,
    PsiResponse,
    RunSummary,
    SimConfig,
    SimTrace,
    SweepAxis,
    SweepTable,
    VerificationSummary,
    VirtualState,
)
from app.services import controllers, disturbances, simulator, verification

logger = logging.getLogger(__name__)

TRACE_CSV_COLUMNS = ["t", "x1", "x2", "u", "nu", "delta_bar"]


def _write_csv(frame: pd.DataFrame, path: Path) -> Path:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(path, index=False, na_rep="", lineterminator="\n")
    except OSError as exc:
        raise OutputError(f"cannot write {path}: {exc}") from exc
    logger.info(f"wrote {path}")
    return path


def _optional_column(values: List[Optional[float]]) -> pd.Series:
    return pd.Series([np.nan if v is None else v for v in values], dtype=float)


class ExperimentRunner:
    """
    Executes the laboratory experiments.
    Every cmd_* method validates nothing itself: it receives a checked
    ExperimentConfig and writes its results below the configured output directory.
    """

    def __init__(self, settings: Settings):
        self.settings = settings

    def run(self, cfg: ExperimentConfig) -> int:
        """
        Dispatch an experiment and return the process exit status.

        Returns:
            int: 0 on success, EXIT_VIOLATION when verify found violations.
        """
        logger.info(f"experiment {cfg.experiment.value} started")
        name = cfg.experiment
        status = 0
        if name is ExperimentName.PLOT_FUNCTIONS:
            self.cmd_plot_functions(cfg)
        elif name in (ExperimentName.SIM_DISTURBED, ExperimentName.SIM_UNDISTURBED):
            self.cmd_sim(cfg)
        elif name in (ExperimentName.SWEEP_TC, ExperimentName.SWEEP_ACCURACY):
            self.cmd_sweep(cfg)
        elif name is ExperimentName.TRAJECTORIES:
            self.cmd_trajectories(cfg)
        else:
            summary, _ = self.cmd_verify(cfg)
            status = 0 if summary.passed else EXIT_VIOLATION
        logger.info(f"experiment {name.value} finished with status {status}")
        return status

    def output_dir(self, cfg: ExperimentConfig) -> Path:
        return Path(cfg.output_dir or self.settings.OUTPUT_DIR)

    def hanan_g(self, cfg: ExperimentConfig) -> float:
        return self.settings.HANAN_G if cfg.hanan_g is None else cfg.hanan_g

    def gains_for(self, variant: ControllerVariant, gains: GainSet, G: float) -> GainSet:
        """Gains of a variant; the Hanan variant gets γ from the rule unless it is set."""
        if variant is ControllerVariant.HANAN and gains.gamma is None:
            return controllers.with_hanan_gamma(gains, G)
        return gains

    # Controller functions
    def psi_samples(
        self, variant: ControllerVariant, x1: np.ndarray, nu: float, gains: GainSet, G: Optional[float] = None
    ) -> PsiResponse:
        gains = self.gains_for(variant, gains, self.settings.HANAN_G if G is None else G)
        x1 = np.asarray(x1, dtype=float)
        psi1, psi2 = controllers.psi_pair(variant, x1, np.full_like(x1, nu), gains)
        return PsiResponse(
            variant=variant,
            x1=x1.tolist(),
            psi1=np.atleast_1d(psi1).tolist(),
            psi2=np.atleast_1d(psi2).tolist(),
        )

    def cmd_plot_functions(self, cfg: ExperimentConfig) -> List[Path]:
        """
        Tabulate Ψ1 and Ψ2 of every selected variant with ν = 0.

        Returns:
            List[Path]: psi1.csv and psi2.csv with columns x1, continuous and one per variant.
        """
        x1 = cfg.function_grid.points()
        psi1 = {"x1": x1, "continuous": sgnpow(x1, 0.5)}
        psi2 = {"x1": x1, "continuous": sgnpow(x1, 0)}
        for variant in cfg.variants:
            samples = self.psi_samples(variant, x1, 0.0, cfg.gains, self.hanan_g(cfg))
            psi1[variant.value] = samples.psi1
            psi2[variant.value] = samples.psi2
        out = self.output_dir(cfg)
        return [
            _write_csv(pd.DataFrame(psi1), out / "psi1.csv"),
            _write_csv(pd.DataFrame(psi2), out / "psi2.csv"),
        ]

    # Closed-loop runs
    def sim_config(self, cfg: ExperimentConfig, variant: ControllerVariant, gains: Optional[GainSet] = None) -> SimConfig:
        return SimConfig(
            variant=variant,
            gains=self.gains_for(variant, gains or cfg.gains, self.hanan_g(cfg)),
            signal=disturbances.signal_from_name(cfg.signal.value),
            x1_0=cfg.x1_0,
            nu_0=cfg.nu_0,
            horizon_T=cfg.horizon_T,
        )

    def simulate(self, sim: SimConfig, tail_start: float) -> Tuple[SimTrace, RunSummary]:
        """
        Run one closed loop and measure it.
        Divergence is reported in the summary and the partial trace is returned.
        """
        try:
            trace = simulator.run_closed_loop(sim)
        except DivergenceError as exc:
            return exc.trace, RunSummary(variant=sim.variant, diverged_at=exc.step)
        summary = RunSummary(variant=sim.variant, final_x1=float(trace.x1[-1]))
        try:
            summary.t_C = simulator.convergence_time(trace)
        except UndefinedMetricError as exc:
            logger.debug(f"{sim.variant.value}: {exc}")
        try:
            summary.e_f = simulator.steady_state_error(trace, tail_start)
        except UndefinedMetricError as exc:
            logger.debug(f"{sim.variant.value}: {exc}")
        return trace, summary

    def cmd_sim(self, cfg: ExperimentConfig) -> List[RunSummary]:
        """
        Simulate every selected variant and write trace_<variant>.csv plus summary.csv.

        Returns:
            List[RunSummary]: One row per variant, in configuration order.
        """
        out = self.output_dir(cfg)
        summaries = []
        for variant in cfg.variants:
            trace, summary = self.simulate(self.sim_config(cfg, variant), cfg.tail_start)
            if summary.diverged_at is not None:
                logger.warning(f"{variant.value} diverged at step {summary.diverged_at}")
            frame = pd.DataFrame({name: getattr(trace, name) for name in TRACE_CSV_COLUMNS})
            _write_csv(frame, out / f"trace_{variant.value}.csv")
            summaries.append(summary)
        table = pd.DataFrame(
            {
                "variant": [s.variant.value for s in summaries],
                "t_C": _optional_column([s.t_C for s in summaries]),
                "e_f": _optional_column([s.e_f for s in summaries]),
                "diverged_at": pd.Series([s.diverged_at for s in summaries], dtype="Int64"),
            }
        )
        _write_csv(table, out / "summary.csv")
        return summaries

    # Sweeps
    def sweep_table(self, cfg: ExperimentConfig) -> SweepTable:
        grid = cfg.grid
        values = grid.points().tolist()
        table: Optional[SweepTable] = None
        for variant in cfg.variants:
            # the swept gains are rewritten per point, h included
            base_gains = cfg.gains if grid.axis is not SweepAxis.H else cfg.gains.replace(h=min(values))
            base = self.sim_config(cfg, variant, base_gains)
            column = simulator.sweep(
                base,
                grid.axis,
                values,
                grid.metric,
                tail_start=cfg.tail_start,
                hanan_G=self.hanan_g(cfg),
                max_workers=self.settings.THREADS,
            )
            if table is None:
                table = column
            else:
                table.results.update(column.results)
        return table

    def cmd_sweep(self, cfg: ExperimentConfig) -> Tuple[Path, SweepTable]:
        """
        Sweep the configured grid for every selected variant.

        Returns:
            Tuple[Path, SweepTable]: sweep_<axis>_<metric>.csv (axis column plus one
                metric column per variant, empty cells for missing metrics) and the table.

        Raises:
            ConfigurationError: If the configuration has no grid.
        """
        if cfg.grid is None:
            raise ConfigurationError(f"experiment {cfg.experiment.value} needs a grid")
        table = self.sweep_table(cfg)
        columns: Dict[str, pd.Series] = {table.axis.value: pd.Series(table.values, dtype=float)}
        for variant, values in table.results.items():
            columns[variant.value] = _optional_column(values)
        path = self.output_dir(cfg) / f"sweep_{table.axis.value}_{table.metric.value}.csv"
        return _write_csv(pd.DataFrame(columns), path), table

    # Trajectories
    def cmd_trajectories(self, cfg: ExperimentConfig) -> Tuple[Path, Dict[str, float]]:
        """
        Coarse trajectories for each h of h_list against the fine-step continuous reference.

        The reference is recorded every reference_record_h seconds. Deviations are
        phase-plane distances to that finely recorded curve, while trajectories.csv
        holds the reference on the grid of the finest h.

        Returns:
            Tuple[Path, Dict[str, float]]: trajectories.csv on the finest grid (empty
                cells where a coarse run has no sample) and the max-norm deviation of
                every coarse run, also written to trajectory_deviation.csv.

        Raises:
            ParameterError: If the finest h is not a multiple of reference_record_h.
        """
        h_list = sorted(cfg.h_list)
        grid_h = h_list[0]
        stride = int(round(grid_h / cfg.reference_record_h))
        if stride < 1 or abs(stride * cfg.reference_record_h - grid_h) > 1e-9 * grid_h:
            raise ParameterError(f"step {grid_h} is not a multiple of the record step {cfg.reference_record_h}")
        signal = disturbances.signal_from_name(cfg.signal.value)
        x2_0 = cfg.nu_0 + signal.phi0
        try:
            reference = simulator.continuous_reference(
                cfg.gains,
                signal,
                VirtualState(x1=cfg.x1_0, x2=x2_0),
                fine_h=cfg.fine_h,
                horizon_T=cfg.horizon_T,
                record_h=cfg.reference_record_h,
            )
        except DivergenceError as exc:
            logger.warning(f"continuous reference diverged at step {exc.step}")
            raise

        rows = (len(reference) - 1) // stride + 1
        columns = {
            "t": np.arange(rows) * grid_h,
            "x1_reference": reference.x1[::stride][:rows],
            "x2_reference": reference.x2[::stride][:rows],
        }
        deviations: Dict[str, float] = {}
        for variant in cfg.variants:
            for h in h_list:
                sim = self.sim_config(cfg, variant, cfg.gains.replace(h=h))
                trace, _ = self.simulate(sim, cfg.tail_start)
                every = int(round(h / grid_h))
                count = min(len(trace), (rows - 1) // every + 1)
                label = f"{variant.value}_h{h:g}"
                for name in ("x1", "x2"):
                    column = np.full(rows, np.nan)
                    column[np.arange(count) * every] = getattr(trace, name)[:count]
                    columns[f"{name}_{label}"] = column
                deviations[label] = simulator.trajectory_deviation(trace, reference)
                logger.info(f"{label}: deviation from reference {deviations[label]:.6g}")

        out = self.output_dir(cfg)
        path = _write_csv(pd.DataFrame(columns), out / "trajectories.csv")
        _write_csv(
            pd.DataFrame({"run": list(deviations), "deviation": list(deviations.values())}),
            out / "trajectory_deviation.csv",
        )
        return path, deviations

    # Verification
    def verification_summary(self, cfg: ExperimentConfig) -> VerificationSummary:
        gains = cfg.gains
        L = gains.lipschitz_L
        decrease = verification.check_decrease(gains, L, cfg.v_budget, cfg.samples, cfg.seed)
        deadbeat = verification.deadbeat_check(
            gains.h, beta=gains.beta, alpha=gains.alpha, n_states=cfg.deadbeat_states, seed=cfg.seed
        )
        invariance_L = gains.beta / 2 if cfg.invariance_L is None else cfg.invariance_L
        invariance = verification.check_forward_invariance(
            gains, invariance_L, cfg.invariance_states, cfg.invariance_steps, cfg.seed
        )
        return VerificationSummary(
            gains=gains,
            lipschitz_L=L,
            v_budget=cfg.v_budget,
            beta_bound=verification.convergence_beta_bound(L, cfg.v_budget, gains.h) if L > 0 else None,
            decrease=decrease,
            deadbeat=deadbeat,
            invariance=invariance,
        )

    def cmd_verify(self, cfg: ExperimentConfig) -> Tuple[VerificationSummary, Path]:
        """
        Run the decrease, dead-beat and forward-invariance audits and write verify_report.json.

        Raises:
            ParameterError: If L > 0 and β does not exceed the convergence bound.
        """
        summary = self.verification_summary(cfg)
        path = self.output_dir(cfg) / "verify_report.json"
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(summary.model_dump_json(indent=2) + "\n")
        except OSError as exc:
            raise OutputError(f"cannot write {path}: {exc}") from exc
        logger.info(f"wrote {path}")
        if not summary.passed:
            logger.warning("verification found violations")
        return summary, path
