from .manifest import *
from .synthetic import *
