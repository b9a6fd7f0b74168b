"""Multi-robot task and motion planning under localization uncertainty."""
from .belief import Belief, Control, JointBelief, Measurement, NoiseModel, ekf_predict, ekf_update
from .roadmap import CostWeights, MotionResult, PathQuery, Roadmap, build_roadmap, evaluate_goto_cost
from .scenario import Scenario, corridor_scenario, load_scenario, read_scenario
from .taskplan import GroundAction, NoPlan, TaskPlan, search_optimal_plan
from .tmp import MotionOracle, TMPPlan, plan_task_motion
from .world import Landmark, Pose, Rect, Region, ScenarioError, WorldMap, load_map

__version__ = "0.1.0"
