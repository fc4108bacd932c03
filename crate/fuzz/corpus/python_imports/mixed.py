import a.b as c, d
from . import x
from .m import y
from e.f import (g,
  h)
x = 1; import k
# import no
from z import
