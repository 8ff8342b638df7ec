#!/usr/bin/env python3
"""
Experiment Runner - Application Layer
実験シナリオのディスパッチと成果物出力

One ExperimentRunner per run. It owns the output directory exclusively,
records one performance entry for the scenario and always leaves a
manifest.json behind, failed runs included.
"""

from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Union

import numpy as np
import pandas as pd

from ..config.experiment import ExperimentConfig
from ..config.settings import get_compute_settings, get_system_settings
from ..core.clock_analysis import default_delta_grid, power_law_exponent, short_time_shift
from ..core.coupling import build_coupling_matrices
from ..core.errors import CompressionError, FitError, ManifoldError, OutputWriteError, RateModelError
from ..core.jump_dynamics import (
    InitialState,
    ManifoldPopulation,
    NExcited,
    TrajectoryConfig,
    ensemble_observables,
    ramsey_scan,
)
from ..core.liouvillian import (
    MAX_RBODY_ATOMS,
    SpectralLiouvillian,
    build_liouvillian_matrix,
    decompose_fully_inverted,
    heff_difference_spectrum,
    is_waveguide,
    multiset_distance,
    r_body_observable_check,
)
from ..core.master_equation import MAX_SUPEROPERATOR_ATOMS
from ..core.mean_field import CumulantState, evolve_cumulant
from ..core.mps_waveguide import DtSchedule, MpsConfig, MpsDecayResult, MpsRho, bond_convergence, run_mps_decay
from ..core.rate_model import (
    DARK_RATE_TOLERANCE,
    DEFAULT_U,
    RateGraph,
    approximate_transition_rates,
    build_rate_graph,
    estimate_u,
    evolve_rate_equations,
    passage_probabilities,
    superradiant_fraction,
    superradiant_share,
)
from ..core.spectrum import ScalingFit, ScalingModel, compute_spectra, cube_spectrum, fit_scaling, liouvillian_gap
from ..infrastructure.output_writer import OutputWriter, RunManifest
from ..utils.logger import (
    get_performance_logger,
    get_scenario_logger,
    log_component_status,
    log_error_with_context,
    log_performance,
    run_log,
)
from ..utils.performance_monitor import PerformanceMonitor

# documented column order per output file
COLUMNS = {
    "spectrum.csv": ["m_ex", "xi", "gamma", "omega", "k"],
    "decay.csv": ["t", "n_e_mean", "n_e_stderr"],
    "clock_surface.csv": ["delta", "t", "S_mean", "S_stderr"],
    "clock_ridge.csv": ["t", "delta_m", "S_m_abs", "truncated"],
    "rate_model.csv": ["t", "total"],
    "passage.csv": ["m_ex", "xi", "wp"],
    "superradiant_channels.csv": ["m_ex", "predicted", "observed"],
    "rate_comparison.csv": ["m_ex", "xi", "exact_total", "approximate_total", "normalization"],
    "liouvillian.csv": ["re", "im", "m_ex", "l_ex", "xi1", "xi2"],
    "liouvillian_decay.csv": ["t", "n_e", "n_e_single_excitation"],
    "mean_field.csv": ["t", "n_e", "coherence_re", "coherence_im"],
    "mps.csv": ["t", "n_e", "n_e_imag", "trace_drift", "truncation_error"],
    "cube_spectrum.csv": ["side", "n_atoms", "xi", "gamma"],
    "scaling_fits.csv": ["model", "exponent", "window_lo", "window_hi", "residual", "prefactor", "n_points"],
}

DEFAULT_BETA_XI_MAX = 60
U_ESTIMATE_MODES = 5


def _fit_row(fit: ScalingFit) -> Dict[str, Any]:
    return {
        "model": fit.model.value,
        "exponent": fit.exponent,
        "window_lo": fit.window[0],
        "window_hi": fit.window[1],
        "residual": fit.residual,
        "prefactor": fit.prefactor,
        "n_points": fit.n_points,
    }


class ExperimentRunner:
    """
    実験ランナー

    責務:
    - シナリオごとのコアモジュール呼び出し
    - CSV出力（列順固定）
    - マニフェスト出力（失敗時も含む）
    """

    def __init__(self, config: ExperimentConfig, output_dir: Optional[Union[str, Path]] = None,
                 max_workers: Optional[int] = None):
        self.config = config
        self.max_workers = max(1, int(max_workers or get_compute_settings().worker_threads))
        self.directory = Path(output_dir) if output_dir else Path(config.output.directory)
        self.writer = OutputWriter(self.directory)
        self.monitor = PerformanceMonitor()
        self.logger = get_scenario_logger(config.scenario, config.numerical.get("seed"))
        self._handlers: Dict[str, Callable[[], Dict[str, Any]]] = {
            "spectrum": self._run_spectrum,
            "decay": self._run_decay,
            "clock": self._run_clock,
            "rate-model": self._run_rate_model,
            "liouvillian": self._run_liouvillian,
            "mean-field": self._run_mean_field,
            "mps": self._run_mps,
            "3d-spectrum": self._run_cube_spectrum,
        }

    @property
    def numerical(self):
        return self.config.numerical

    def run(self) -> RunManifest:
        """シナリオ実行（マニフェストは必ず書き出す）"""
        scenario = self.config.scenario
        manifest = RunManifest(
            scenario=scenario,
            config=self.config.echo(),
            artifact_version=get_system_settings().artifact_version,
            started_at=RunManifest.now(),
        )
        log_component_status("experiment_runner", "starting", f"{scenario} -> {self.directory}")
        error: Optional[BaseException] = None
        with run_log(self.directory):
            try:
                with self.monitor.measure(f"scenario.{scenario}", threads=self.max_workers):
                    manifest.diagnostics = self._handlers[scenario]()
                manifest.status = "ok"
            except Exception as e:
                error = e
                manifest.record_error(e, module=self._module_of(e))
                log_error_with_context(self.logger, e, {"scenario": scenario, "output": str(self.directory)})

        manifest.finished_at = RunManifest.now()
        if self.monitor.last is not None:
            manifest.performance = self.monitor.last.to_dict()
            log_performance(get_performance_logger("scenarios"), f"scenario {scenario}",
                            self.monitor.last.execution_time_ms / 1000.0, status=manifest.status)
        try:
            self.writer.write_manifest(manifest)
        except OutputWriteError:
            if error is not None:
                self.logger.error("❌ Manifest could not be written after a failed run")
                raise error
            raise
        if error is not None:
            log_component_status("experiment_runner", "error", str(error))
            raise error
        log_component_status("experiment_runner", "ready", f"{len(manifest.outputs)} outputs")
        return manifest

    @staticmethod
    def _module_of(error: BaseException) -> str:
        tb = error.__traceback__
        module = type(error).__module__
        while tb is not None:
            name = tb.tb_frame.f_globals.get("__name__", "")
            if name.startswith("src.core.") and name != "src.core.errors":
                module = name
            tb = tb.tb_next
        return module

    # ------------------------------------------------------------------
    # shared helpers
    # ------------------------------------------------------------------

    def _write(self, name: str, columns: Dict[str, Any]) -> None:
        frame = pd.DataFrame(columns)
        ordered = [c for c in COLUMNS.get(name, []) if c in frame.columns]
        frame = frame[ordered + [c for c in frame.columns if c not in ordered]]
        self.writer.write_table(name, frame)

    def _write_fits(self, fits: List[ScalingFit]) -> None:
        if fits:
            self.writer.write_table("scaling_fits.csv", pd.DataFrame([_fit_row(f) for f in fits],
                                                                     columns=COLUMNS["scaling_fits.csv"]))

    def _chain(self):
        return self.config.geometry.chain()

    def _trajectory_initial(self) -> InitialState:
        if self.numerical.get("initial_state", "fully-inverted") == "clock":
            return InitialState.clock(float(self.numerical.get("phase_per_site", 0.0)))
        return InitialState.fully_inverted()

    def _trajectory_config(self, initial: InitialState) -> TrajectoryConfig:
        return TrajectoryConfig(
            geometry=self._chain(),
            initial_state=initial,
            times=self.numerical.time_grid(),
            detuning=float(self.numerical.get("detuning", 0.0)),
            n_trajectories=int(self.numerical["trajectories"]),
            base_seed=int(self.numerical["seed"]),
            coherent_only=bool(self.numerical.get("coherent_only", False)),
            max_workers=self.max_workers,
        )

    def _power_law(self, times: np.ndarray, values: np.ndarray) -> List[ScalingFit]:
        window = self.numerical.fit_window()
        if window is None:
            return []
        finite = np.isfinite(values) & (values > 0.0)
        fit = power_law_exponent(times[finite], values[finite], window)
        self.logger.info(f"📏 Power-law exponent over {window}: {fit.exponent:+.4f}")
        return [fit]

    # ------------------------------------------------------------------
    # scenarios
    # ------------------------------------------------------------------

    def _run_spectrum(self) -> Dict[str, Any]:
        geometry = self._chain()
        cm = build_coupling_matrices(geometry)
        manifolds = sorted(set(int(m) for m in self.numerical["manifolds"]))
        spectra = compute_spectra(cm, manifolds, geometry, max_workers=self.max_workers)

        rows: Dict[str, List[Any]] = {c: [] for c in COLUMNS["spectrum.csv"]}
        for m_ex in manifolds:
            for mode in spectra[m_ex]:
                rows["m_ex"].append(m_ex)
                rows["xi"].append(mode.xi)
                rows["gamma"].append(mode.gamma)
                rows["omega"].append(mode.omega)
                rows["k"].append(np.nan if mode.k is None else mode.k)
        self._write("spectrum.csv", rows)

        diagnostics: Dict[str, Any] = {
            "n_atoms": geometry.atom_count,
            "completeness_error": {m: spectra[m].completeness_error() for m in manifolds},
        }
        fits: List[ScalingFit] = []
        window = self.numerical.fit_window()
        if 1 in spectra and window is not None:
            rates = spectra[1].rates
            xi = np.arange(1, len(rates) + 1, dtype=float)
            fits.append(fit_scaling(np.column_stack([xi, rates]), ScalingModel.XI_SQUARED, window))
        if any(m > 0 for m in spectra):
            diagnostics["liouvillian_gap"] = liouvillian_gap(spectra)
        self._write_fits(fits)
        self.logger.info(f"🌈 Spectrum written for manifolds {manifolds} (N={geometry.atom_count})")
        return diagnostics

    def _run_decay(self) -> Dict[str, Any]:
        cfg = self._trajectory_config(self._trajectory_initial())
        observables = [NExcited()]
        if self.numerical.get("record_manifolds", False):
            observables += [ManifoldPopulation(m) for m in range(cfg.geometry.atom_count + 1)]
        series = ensemble_observables(cfg, observables, max_workers=self.max_workers)

        columns: Dict[str, Any] = {
            "t": series.times,
            "n_e_mean": series.mean("n_e"),
            "n_e_stderr": series.stderr("n_e"),
        }
        for obs in observables[1:]:
            columns[f"m_{obs.m_ex}_mean"] = series.mean(obs.tag)
            columns[f"m_{obs.m_ex}_stderr"] = series.stderr(obs.tag)
        self._write("decay.csv", columns)
        self._write_fits(self._power_law(series.times, series.mean("n_e")))
        return {
            "n_atoms": cfg.geometry.atom_count,
            "trajectories": series.n_trajectories,
            "n_e_final": float(series.mean("n_e")[-1]),
        }

    def _run_clock(self) -> Dict[str, Any]:
        phase = float(self.numerical.get("phase_per_site", 0.0))
        template = self._trajectory_config(InitialState.clock(phase))
        deltas = default_delta_grid(float(self.numerical.get("delta_span", 3.0)),
                                    int(self.numerical.get("delta_points", 61)))
        surface = ramsey_scan(template, deltas, phase, max_workers=self.max_workers)

        grid_delta, grid_t = np.meshgrid(surface.deltas, surface.times, indexing="ij")
        self._write("clock_surface.csv", {
            "delta": grid_delta.ravel(),
            "t": grid_t.ravel(),
            "S_mean": surface.signal.ravel(),
            "S_stderr": surface.stderr.ravel(),
        })
        cut = surface.truncated_at
        truncated = np.zeros(surface.times.size, dtype=int) if cut is None else (surface.times > cut).astype(int)
        self._write("clock_ridge.csv", {
            "t": surface.times,
            "delta_m": surface.delta_m,
            "S_m_abs": surface.s_m_abs,
            "truncated": truncated,
        })
        self._write_fits(self._power_law(surface.times, surface.s_m_abs))
        return {
            "n_atoms": template.geometry.atom_count,
            "trajectories": template.n_trajectories,
            "truncated_at": cut,
            "extremum_sign": surface.extremum_sign,
            "short_time_shift": short_time_shift(template.geometry, phase),
        }

    def _run_rate_model(self) -> Dict[str, Any]:
        geometry = self._chain()
        n_atoms = geometry.atom_count
        top = int(self.numerical.get("max_manifold", n_atoms))
        if not 1 <= top <= n_atoms:
            raise ManifoldError(f"max_manifold must lie in 1..{n_atoms}, got {top}")
        cm = build_coupling_matrices(geometry)
        spectra = compute_spectra(cm, range(top + 1), geometry, max_workers=self.max_workers)
        graph = build_rate_graph(cm.gamma, spectra, max_workers=self.max_workers)

        # below full inversion the cascade starts in the most subradiant top-manifold state
        start = np.zeros(len(spectra[top]))
        start[0] = 1.0
        result = evolve_rate_equations(graph, {top: start}, self.numerical.time_grid())

        totals = result.manifold_totals()
        columns: Dict[str, Any] = {"t": result.times, "total": result.n_excited()}
        for m in range(1, top + 1):
            columns[f"m_{m}"] = totals[m]
        self._write("rate_model.csv", columns)

        passage = passage_probabilities(graph, start, top)
        rows: Dict[str, List[Any]] = {"m_ex": [], "xi": [], "wp": []}
        for m in sorted(passage, reverse=True):
            for xi, wp in enumerate(passage[m], start=1):
                rows["m_ex"].append(m)
                rows["xi"].append(xi)
                rows["wp"].append(float(wp))
        self._write("passage.csv", rows)

        diagnostics: Dict[str, Any] = {
            "n_atoms": n_atoms,
            "top_manifold": top,
            "n_e_final": float(result.n_excited()[-1]),
        }
        if top >= 2:
            diagnostics.update(self._superradiant_channels(graph, top))
        if self.numerical.get("approximate_rates", False):
            diagnostics["approximate_rate_max_deviation"] = self._compare_approximate_rates(graph, cm.gamma, top)
        return diagnostics

    def _superradiant_channels(self, graph: RateGraph, top: int) -> Dict[str, Any]:
        """Predicted vs observed share of subradiant decay into superradiant lower states."""
        estimate: Optional[float] = None
        try:
            estimate = estimate_u(graph.spectra[2].modes[:U_ESTIMATE_MODES], graph.spectra[1])
            self.logger.info(f"📐 Radiative-excess estimate u={estimate:.3f}")
        except RateModelError as e:
            self.logger.warning(f"⚠️ u estimate unavailable: {e}")

        configured = self.numerical.get("u")
        if configured is not None:
            u, source = float(configured), "config"
        elif estimate is not None:
            u, source = estimate, "estimate"
        else:
            u, source = DEFAULT_U, "default"

        manifolds = list(range(2, top + 1))
        self._write("superradiant_channels.csv", {
            "m_ex": manifolds,
            "predicted": [superradiant_fraction(m, u) for m in manifolds],
            "observed": [superradiant_share(graph, m) for m in manifolds],
        })
        return {"u": u, "u_source": source, "u_estimate": estimate}

    def _compare_approximate_rates(self, graph: RateGraph, gamma: np.ndarray, top: int) -> float:
        """Writes rate_comparison.csv; returns the largest relative total-rate deviation of radiating states."""
        rows: Dict[str, List[Any]] = {c: [] for c in COLUMNS["rate_comparison.csv"]}
        worst = 0.0
        for m in range(1, top + 1):
            approximate = approximate_transition_rates(graph.spectra[m], graph.spectra[m - 1], gamma).sum(axis=1)
            exact = graph.total_rates(m)
            for xi, (a, e, norm) in enumerate(zip(approximate, exact, graph.normalization(m)), start=1):
                rows["m_ex"].append(m)
                rows["xi"].append(xi)
                rows["exact_total"].append(float(e))
                rows["approximate_total"].append(float(a))
                rows["normalization"].append(float(norm))
                if e > DARK_RATE_TOLERANCE:
                    worst = max(worst, abs(a - e) / e)
        self._write("rate_comparison.csv", rows)
        self.logger.info(f"🔍 Approximate rates deviate from exact totals by up to {worst:.2%}")
        return float(worst)

    def _run_liouvillian(self) -> Dict[str, Any]:
        geometry = self._chain()
        n_atoms = geometry.atom_count
        top = self.numerical.get("max_manifold")
        model = SpectralLiouvillian.from_geometry(geometry, max_manifold=top, max_workers=self.max_workers)
        pairs = model.construct_all(0, max_manifold=top, with_adjoint=False, max_workers=self.max_workers)
        self._write("liouvillian.csv", {
            "re": [p.eigenvalue.real for p in pairs],
            "im": [p.eigenvalue.imag for p in pairs],
            "m_ex": [p.sector[0] for p in pairs],
            "l_ex": [p.sector[1] for p in pairs],
            "xi1": [p.sector[2] for p in pairs],
            "xi2": [p.sector[3] for p in pairs],
        })
        diagnostics: Dict[str, Any] = {
            "n_atoms": n_atoms,
            "eigenpairs": len(pairs),
            "liouvillian_gap": liouvillian_gap(model.spectra),
        }

        if n_atoms <= MAX_SUPEROPERATOR_ATOMS and top in (None, n_atoms):
            dense = build_liouvillian_matrix(geometry, cm=model.cm)
            distance = multiset_distance(dense.eigenvalues(), heff_difference_spectrum(model.spectra))
            diagnostics["dense_spectrum_distance"] = distance
            self.logger.info(f"🧮 Dense Liouvillian spectrum distance {distance:.3e}")

        if "t_max" in self.numerical.values and "t_points" in self.numerical.values and top in (None, n_atoms):
            times = self.numerical.time_grid()
            decomposition, _ = decompose_fully_inverted(geometry, max_workers=self.max_workers)
            columns: Dict[str, Any] = {"t": times, "n_e": decomposition.predict(times)}
            if is_waveguide(geometry):
                columns["n_e_single_excitation"] = decomposition.single_excitation_prediction(times)
            self._write("liouvillian_decay.csv", columns)

            r = self.numerical.get("r_body")
            if r is not None and n_atoms <= MAX_RBODY_ATOMS:
                check = r_body_observable_check(geometry, int(r), times, max_workers=self.max_workers)
                diagnostics["r_body_late_time_deviation"] = check.late_time_deviation()
        return diagnostics

    def _run_mean_field(self) -> Dict[str, Any]:
        geometry = self._chain()
        n_atoms = geometry.atom_count
        phase = float(self.numerical.get("phase_per_site", 0.0))
        if self.numerical.get("initial_state", "fully-inverted") == "clock":
            initial = CumulantState.clock(n_atoms, phase)
        else:
            initial = CumulantState.fully_inverted(n_atoms)
        series = evolve_cumulant(geometry, initial, self.numerical.time_grid(),
                                 detuning=float(self.numerical.get("detuning", 0.0)), phase_per_site=phase)
        self._write("mean_field.csv", {
            "t": series.times,
            "n_e": series.n_excited,
            "coherence_re": series.coherence.real,
            "coherence_im": series.coherence.imag,
        })
        return {"n_atoms": n_atoms, "flagged_times": series.flagged_times}

    def _mps_config(self) -> MpsConfig:
        geometry = self.config.geometry
        schedule = self.numerical.dt_schedule()
        phase = self.numerical.get("phase_per_site")
        return MpsConfig(
            n_atoms=int(geometry.n_atoms),
            k0d=geometry.spacing_k0d,
            bond_dimension=int(self.numerical["bond_dimension"]),
            schedule=DtSchedule(schedule) if schedule else DtSchedule(),
            omega0=float(self.numerical.get("omega0", 0.0)),
            truncation_ceiling=float(self.numerical.get("truncation_ceiling", 1e-3)),
            phase_per_site=None if phase is None else float(phase),
        )

    def _write_mps(self, result: MpsDecayResult) -> None:
        self._write("mps.csv", {
            "t": result.times,
            "n_e": np.real(result.n_excited),
            "n_e_imag": np.imag(result.n_excited),
            "trace_drift": result.trace_drift,
            "truncation_error": result.truncation_error,
        })

    def _run_mps(self) -> Dict[str, Any]:
        cfg = self._mps_config()
        if self.numerical.get("initial_state", "fully-inverted") == "clock":
            initial = MpsRho.clock(cfg.n_atoms, float(self.numerical.get("phase_per_site", 0.0)))
        else:
            initial = MpsRho.fully_inverted(cfg.n_atoms)
        try:
            result = run_mps_decay(cfg, self.numerical.time_grid(), initial)
        except CompressionError as e:
            # the steps taken so far stay on disk next to the failure record
            if isinstance(e.partial, MpsDecayResult):
                self._write_mps(e.partial)
            raise
        self._write_mps(result)
        diagnostics: Dict[str, Any] = {
            "n_atoms": cfg.n_atoms,
            "bond_dimension": cfg.bond_dimension,
            "max_bond": result.max_bond,
            "steps": result.steps,
            "accumulated_truncation_error": result.accumulated_error,
            "max_imaginary_n_e": result.max_imaginary,
        }
        at_time = self.numerical.get("convergence_time")
        if at_time is not None:
            diagnostics["bond_convergence"] = bond_convergence(cfg, result.times, float(at_time), initial)
        return diagnostics

    def _run_cube_spectrum(self) -> Dict[str, Any]:
        geometry = self.config.geometry
        k0d = geometry.spacing_k0d
        spectra = [cube_spectrum(int(side), k0d) for side in sorted(set(geometry.sides))]

        rows: Dict[str, List[Any]] = {c: [] for c in COLUMNS["cube_spectrum.csv"]}
        for cube in spectra:
            for xi, gamma in enumerate(cube.rates, start=1):
                rows["side"].append(cube.side)
                rows["n_atoms"].append(cube.n_atoms)
                rows["xi"].append(xi)
                rows["gamma"].append(float(gamma))
        self._write("cube_spectrum.csv", rows)

        fits: List[ScalingFit] = []
        if len(spectra) >= 3:
            # Gamma_1 ~ N^(-alpha), reported as alpha
            points = np.array([[cube.n_atoms, cube.rates[0]] for cube in spectra])
            fits.append(fit_scaling(points, ScalingModel.ALPHA_3D))
        largest = spectra[-1]
        window = self.numerical.fit_window() or (1.0, float(min(DEFAULT_BETA_XI_MAX, largest.n_atoms)))
        xi = np.arange(1, largest.n_atoms + 1, dtype=float)
        try:
            fits.append(fit_scaling(np.column_stack([xi, largest.rates]), ScalingModel.BETA_3D, window))
        except FitError as e:
            self.logger.warning(f"⚠️ Rate-versus-index fit skipped for side={largest.side}: {e}")
        self._write_fits(fits)
        return {
            "sides": [cube.side for cube in spectra],
            "min_rate": {cube.side: float(cube.rates[0]) for cube in spectra},
        }


def create_experiment_runner(config: ExperimentConfig, output_dir: Optional[Union[str, Path]] = None,
                             max_workers: Optional[int] = None) -> ExperimentRunner:
    """ExperimentRunner ファクトリー"""
    return ExperimentRunner(config, output_dir=output_dir, max_workers=max_workers)
