"""Layer-sensitive weight quantization planning.

Group-wise RTN/HQQ quantization, kurtosis and activation-sensitivity
metrics, trimmed z-score outlier detection, boosted and globally optimal
bit allocation, and win-tie-loss reporting.
"""

__version__ = "0.1.0"

from .allocator import (MENU, AllocationPlan, CostTable, boost_stop, build_cost_table, menu_index, plan_ablation,
                        plan_boost, plan_from_layers, plan_uniform, solve_mxq)
from .errors import (CoverageError, DegenerateInputError, FormatError, InfeasibleError, LayerQuantError,
                     NamingError, PairingError, ShapeError)
from .metrics import (SensitivityInput, kurtosis, model_kurtosis, model_sensitivity, sensitivity_score,
                      synthetic_input)
from .outlier_detect import DetectParams, DetectResult, detect_outliers, diff_series, trimmed_stats
from .quant_core import (HqSolverParams, QuantConfig, QuantizedMatrix, dequantize, frobenius_error, hqq_quantize,
                         lp_objective, quantize, quantize_rtn, shrink_lp, storage_bits)
from .report import PplRecord, WtlRecord, ppl_vs_memory, score_wtl
from .tensor_io import (MetricRow, ModelBundle, load_model, read_metrics_csv, save_model, synth_model,
                        write_metrics_csv)
