from .adjoint import *
from .problems import *
from .solvers import *
