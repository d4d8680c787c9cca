__version__ = "0.1.0"

from .utils import *

from .numerics import *

from .clock import *

from .boundary import *

from .level_hitting import *

from .bridge_kernel import *

from .gauge import *

from .propagator import *

from .fpt_pipeline import *

from .simulators import *

from .config import *

from .runner import *

from .examples import *
