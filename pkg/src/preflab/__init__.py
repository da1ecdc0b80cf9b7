"""preflab: a desk-scale laboratory for learning reward functions from
binary preferences over trajectory segment pairs.

Subpackages and modules:

* ``envs``        -- toy environments with known rewards
* ``experience``  -- replay buffer, segments, preference datasets
* ``annotators``  -- oracle and noisy simulated teachers, trap pairs
* ``rewardnet``   -- MLP reward networks and the pairwise predictor
* ``semisup``     -- losses, augmentations, and self-training strategies
* ``sampler``     -- uniform and disagreement query selection
* ``agent``       -- Q-learning on the learned reward, evaluation
* ``harness``     -- experiment loop, config, metrics, service, CLI
"""

__version__ = "0.1.0"
