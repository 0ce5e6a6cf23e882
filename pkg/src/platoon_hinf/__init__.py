"""H-infinity policy-iteration controller synthesis for mixed CAV/HDV platoons.

Modules:
    polyalg   sparse multivariate polynomials, box integration, 1-D fitting
    sdp       primal-dual interior-point solver for block SDPs
    sosprog   SOS programs translated to SDPs
    traffic   optimal-velocity car-following model and the lumped platoon model
    learner   policy evaluation / improvement and attenuation search
    sim       closed-loop simulation and empirical L2 gain
    cli       command-line entry point
"""

__version__ = "0.1.0"
