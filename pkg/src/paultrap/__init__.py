"""Design and analysis tools for rf (Paul) ion traps."""
from .core import CONSTANTS, IonSpecies, Frequency, species, convert_frequency, angular_to_cyclic

__version__ = "0.1.0"

__all__ = ["CONSTANTS", "IonSpecies", "Frequency", "species", "convert_frequency",
           "angular_to_cyclic", "__version__"]
