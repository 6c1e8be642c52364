from ._ksl import (
    Basis,
    BasisSpec,
    CollisionMatrices,
    CollisionOptions,
    DecayCurve,
    TransportCoefficients,
    assemble_collision,
    build_basis,
    evaluate_criteria,
    fluid_decay,
    format_double,
    kernel_degrees,
    nu,
    run,
    transport_coefficients,
    y2_rates,
)

__all__ = [
    "Basis",
    "BasisSpec",
    "CollisionMatrices",
    "CollisionOptions",
    "DecayCurve",
    "TransportCoefficients",
    "assemble_collision",
    "build_basis",
    "evaluate_criteria",
    "fluid_decay",
    "format_double",
    "kernel_degrees",
    "nu",
    "run",
    "transport_coefficients",
    "y2_rates",
]
