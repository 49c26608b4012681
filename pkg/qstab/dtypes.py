"""Structured dtypes for trajectory records and evaluation rows.

Fields are given in the lazy ((comment, name), type) syntax, so the comments travel with the dtype
(as titles) and show up in reports.

"""

import numpy as np

import qstab

__all__ = "trajectory_dtype evaluation_dtype step_fields".split()


step_fields = [
    (("Time since the start of the trajectory [a.u.]", "time"), np.float64),
    (("Distance 1 - Tr(rho_d rho) to the target", "distance"), np.float64),
]


def trajectory_dtype(n_controls=2):
    """Data type for one step of a controlled trajectory."""
    return qstab.to_numpy_dtype(
        step_fields
        + [
            (("Control amplitude per channel, after clamping", "u"), np.float64, n_controls),
            (("Measurement record increment dy", "dy"), np.float64),
            (("Whether the physical repair changed the state", "projected"), np.bool_),
        ]
    )


def evaluation_dtype():
    """Data type for one evaluated trajectory of a benchmark grid."""
    return qstab.to_numpy_dtype([
        (("Index of the initial state in the grid", "initial_state"), np.int32),
        (("Index of the noise realization for this initial state", "noise_realization"), np.int32),
        (("Stabilization time, t_max if never reached [a.u.]", "stabilization_time"), np.float64),
        (("Whether the trajectory stabilized within t_max", "success"), np.bool_),
        (("Whether the integrator diverged", "diverged"), np.bool_),
        (("Distance at the last simulated step", "final_distance"), np.float64),
        (("Number of simulated steps", "n_steps"), np.int64),
    ])
