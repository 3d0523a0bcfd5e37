"""Learn how many actions separate states, then navigate with that distance.

The toolkit fits a state embedding whose pairwise norm approximates the
minimum action count between states, using only offline trajectories. On
top of it sit a latent transition model, a random-shooting goal planner,
potential-based reward shaping for tabular Q-learning, and a hindsight
behavioral-cloning baseline, all checked against an exact graph-search
oracle on enumerable environments.
"""

from .embed import EmbedConfig, EmbeddingModel, loss_batch, train_embedding
from .envs import Env, EnvSpec, enumerate_states, load_env_spec, transition
from .errors import (ConfigError, DatasetParseError, EmptyBufferError,
                     MadnavError, UnsupportedEnvError, ValidationError)
from .kernels import active_backend, set_backend
from .latent import (DynConfig, LatentDynamics, PlanConfig, plan_dist_episode,
                     rollout, score_sequence, train_dynamics)
from .oracle_eval import (EvalReport, MadTable, PlanEpisode, compute_mad,
                          evaluate_embedding, evaluate_planner)
from .shaping_rl import (GcslConfig, GcslPolicy, QConfig, QTable, ShapedReward,
                         gcsl_act, gcsl_train, q_learn, shaped_reward)
from .trajdata import (PairSample, PrioritizedBuffer, Trajectory,
                       collect_random_trajectories, extract_pairs,
                       load_dataset, save_dataset)

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "DatasetParseError", "DynConfig", "EmbedConfig",
    "EmbeddingModel", "EmptyBufferError", "Env", "EnvSpec", "EvalReport",
    "GcslConfig", "GcslPolicy", "LatentDynamics", "MadTable", "MadnavError",
    "PairSample", "PlanConfig", "PlanEpisode", "PrioritizedBuffer", "QConfig",
    "QTable", "ShapedReward", "Trajectory", "UnsupportedEnvError",
    "ValidationError", "active_backend", "collect_random_trajectories",
    "compute_mad", "enumerate_states", "evaluate_embedding",
    "evaluate_planner", "extract_pairs", "gcsl_act", "gcsl_train",
    "load_dataset", "load_env_spec", "loss_batch", "plan_dist_episode",
    "q_learn", "rollout", "save_dataset", "score_sequence", "set_backend",
    "shaped_reward", "train_dynamics", "train_embedding", "transition",
]
