"""Spike sorting by convolutional dictionary learning."""

from .signals import (
    Dictionary,
    EventList,
    Signal,
    WindowedSignal,
    error_distance,
    normalize_template,
    window,
)
from .convops import (
    Correlator,
    ShiftGram,
    correlate_dictionary,
    cross_correlate,
    inner_product_shifted,
    objective,
    reconstruct,
)
from .pursuit import (
    SolverState,
    StoppingRule,
    cmp_encode,
    comp_encode,
    comp_encode_all,
    select_atom,
    update_least_squares,
)
from .errors import (
    ConvsortError,
    FormatError,
    IllConditionedSupportError,
    NoSelectableAtomError,
    NumericalError,
)

__version__ = "0.1.0"
