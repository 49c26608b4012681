# flake8: noqa
__version__ = "0.3.0"

# Glue the package together
# The order of submodules is not invariant, since we use qstab.xxx inside qstab
from .utils import *
from .config import *
from .dtypes import *
from .io import *

from .quantum.qmat import *
from .quantum.noise import *
from .quantum.sme import *
from .catalog import *

from .rewards import *
from .env import *

from .agents.mlp import *
from .agents.ppo import *
from .agents.baseline import *

from .bench import *
from .experiment import *
