from aeda.attacks.ifgsm import (
    AttackConfig,
    AttackPlanEntry,
    AttackResult,
    ifgsm_bias_attack,
    joint_attack,
    plan_balancing_attack,
    plan_batch,
    run_ifgsm,
)
