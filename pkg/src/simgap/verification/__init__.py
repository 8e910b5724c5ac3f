from .controller import ControllerConfig, NavigationBatch, NavigationController, navigation_controller
from .harness import (
    DeploymentReport,
    DeployRun,
    SafetyValidation,
    VerificationResult,
    VerificationSetup,
    deploy_run,
    deploy_test,
    simulate_uncertain_batch,
    trial_trajectory,
    validate_verification,
    verify_controller,
)
from .metric import SafetyConfig, SafetyValue, safety_metric, static_crash
from .obstacles import ObstacleConfig, moving_obstacle_step, step_obstacles
from .scenarios import (
    QUADRUPED_THETA,
    ROBOTARIUM_THETA,
    THETA_SPECS,
    InfeasibleScenario,
    Scenario,
    ScenarioSamplingError,
    ThetaSpec,
    goal_distance_oracle,
    sample_scenario,
    scenario_from_ascii,
    shortest_path,
)
