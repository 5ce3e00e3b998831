# routers/__init__.py
from . import ablate, evaluate, features, saliency, scm, synth, train
