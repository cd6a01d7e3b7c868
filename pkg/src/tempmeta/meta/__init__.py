"""Meta classifiers and regressors predicting instance IoU from metrics."""

from .dataset import MetaDataset
from .gb import GBModel, fit_gb
from .lasso import LinearModel, fit_lasso, kkt_residual, lambda_max, solve_lasso
from .models import FAMILIES, MetaModel, SchemaError, decision_function, fit_meta, predict
from .nn import DivergenceError, ShallowNet, fit_nn, loss_and_grads
from .protocol import ProtocolError, crossfit_probabilities, run_protocol, split_sizes

__all__ = [
    "MetaDataset",
    "GBModel",
    "fit_gb",
    "LinearModel",
    "fit_lasso",
    "kkt_residual",
    "lambda_max",
    "solve_lasso",
    "FAMILIES",
    "MetaModel",
    "SchemaError",
    "decision_function",
    "fit_meta",
    "predict",
    "DivergenceError",
    "ShallowNet",
    "fit_nn",
    "loss_and_grads",
    "ProtocolError",
    "crossfit_probabilities",
    "run_protocol",
    "split_sizes",
]
