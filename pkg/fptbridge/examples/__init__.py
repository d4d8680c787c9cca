from .scenarios import *
