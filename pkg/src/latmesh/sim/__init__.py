from .awake import keep_cpu_awake
from .harness import (
    DEFAULT_BUDGET_US,
    Calibration,
    SimResult,
    VirtualCluster,
    assign_loopback_ports,
    calibrate_overhead_budget,
    injected_rtt_us,
    injected_rtts,
    local_cluster_config,
    run_virtual_cluster,
)
from .model import (
    LinkModel,
    LinkSpec,
    NoJitter,
    SpikeJitter,
    UniformJitter,
    load_model,
    model_from_dict,
    model_to_dict,
    sample_delay,
)

__all__ = [
    "DEFAULT_BUDGET_US", "Calibration", "LinkModel", "LinkSpec", "NoJitter", "SimResult",
    "SpikeJitter", "UniformJitter", "VirtualCluster", "assign_loopback_ports",
    "calibrate_overhead_budget", "injected_rtt_us", "injected_rtts", "keep_cpu_awake", "load_model",
    "local_cluster_config", "model_from_dict", "model_to_dict", "run_virtual_cluster",
    "sample_delay",
]
