"""Residual reinforcement learning on top of probabilistic movement primitives.

Library layers, bottom up: quaternion/pose algebra (:mod:`.geometry`), the
trajectory-distribution model (:mod:`.promp`), the impedance-controlled rigid
body (:mod:`.plant`), the block-insertion task (:mod:`.env`), the from-scratch
soft actor-critic (:mod:`.sac`), nominal/residual policy combination
(:mod:`.residual`), synthetic demonstrations (:mod:`.demos`) and the
experiment command line (:mod:`.cli`).
"""

from . import cli, demos, env, geometry, plant, promp, residual, sac

__all__ = ["cli", "demos", "env", "geometry", "plant", "promp", "residual", "sac"]
