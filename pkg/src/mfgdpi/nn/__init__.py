from .adam import AdamState, adam_step
from .network import (
    Activation,
    Jet2,
    NetParams,
    NetworkSpec,
    NonFiniteLossError,
    OutputTransform,
    activation_derivs,
    forward,
    init_network,
    input_jet,
    jet_backward,
    jet_forward,
    load_params,
    loss_and_param_grad,
    save_params,
)

__all__ = [
    "Activation",
    "AdamState",
    "Jet2",
    "NetParams",
    "NetworkSpec",
    "NonFiniteLossError",
    "OutputTransform",
    "activation_derivs",
    "adam_step",
    "forward",
    "init_network",
    "input_jet",
    "jet_backward",
    "jet_forward",
    "load_params",
    "loss_and_param_grad",
    "save_params",
]
