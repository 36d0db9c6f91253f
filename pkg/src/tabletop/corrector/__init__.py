"""Physics correctors: the learned flow field and the post-hoc optimizer."""

from .flow import (Condition, FlowCorrector, TrainConfig, VelocityField, build_condition, correct, correct_many,
                   integrate_ode, load_checkpoint, save_checkpoint, train)
from .optim import OptimReport, collision_bucket, optimize_many, optimize_poses
