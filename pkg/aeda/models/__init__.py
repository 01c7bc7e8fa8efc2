from aeda.models.composite import (
    COMPONENTS,
    CompositeClassifier,
    LossSpec,
    StandaloneBiasClassifier,
    eval_mode,
    forward_bias,
    forward_target,
    gradient_wrt_input,
    loss_bias,
    loss_target,
)
