# services/__init__.py
from . import scm_service, text_service
