import os

PUBLIC_DIR = os.path.dirname(__file__)
TINY_CONFIG = os.path.join(PUBLIC_DIR, "tiny.yaml")
