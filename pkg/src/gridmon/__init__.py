"""Distribution-grid monitoring workbench.

Trains neural-network monitors that estimate bus voltages and line loadings
from sparse measurements, and benchmarks them against weighted-least-squares
state estimation over a catalog of normal-operation, bad-data and
topology-error test cases.
"""

from .grid import (Bus, GridModel, GridView, IsolationError, Line, Switch, Unit,
                   apply_switch_config, build_admittance, load_bundled, load_grid)
from .powerflow import InjectionSet, PfSolution, PowerFlowError, solve_pf
from .scenarios import (DEFAULT_AXES, FIVE_AXES, Scenario, ScenarioAxis,
                        enumerate_tuples, expand, generate_set, import_scenarios)
from .measurements import (FaultInjection, MeasurementSet, MeasurementSpec,
                           accuracy_to_sd, inject_fault, make_spec, simulate)
from .ann import (AnnArchitecture, AnnModel, TrainConfig, hidden_size, init_model,
                  predict, train)
from .wls import PseudoMeasurement, WlsConfig, build_pseudo, estimate
from .correction import CorrectionReport, correct_voltages
from .evaluation import (C1, C2, Criterion, EvalResult, TestCase, is_successful,
                         load_catalog, run_test_case, search_measurement_config)
from .tuning import tune_architecture

__version__ = "0.1.0"
