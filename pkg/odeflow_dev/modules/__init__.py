from .correlation import *
from .functional import *
from .layers import *
from .rhs import *
