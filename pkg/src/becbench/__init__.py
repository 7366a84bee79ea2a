"""becbench: synthetic benchmark-probed BEC transition campaigns.

Simulation, dark-field Faraday imaging, profile fitting and
benchmark-conditioned statistics for the determination of the
condensation critical point on synthetic data.
"""

from becbench.physics import (
    PhysicalConstants,
    TrapGeometry,
    CloudState,
    SemiIdealProfile,
    DimpleParams,
    bose_g,
    thermal_de_broglie,
    critical_temperature,
    tf_chemical_potential,
    eta_parameter,
    condensate_fraction,
    semi_ideal_profile,
    phase_space_density,
    critical_dimple_depth,
)

__version__ = "0.1.0"
