import os, sys
from collections import OrderedDict
import numpy as np  # alias
import json
