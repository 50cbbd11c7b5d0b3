from functools import lru_cache
from pathlib import Path
import os

from dotenv import load_dotenv

OUTPUT_DIR_ENV = "SRNN_OUTPUT_DIR"


class Settings:
    def __init__(self):
        load_dotenv()

        # Output location; the only environment input, recorded in manifests
        self.output_dir_env = os.getenv(OUTPUT_DIR_ENV)
        self.output_dir = Path(self.output_dir_env or "data/runs")

        # Model defaults
        self.hidden = 64
        self.embed = 32
        self.dropout = 0.5

        # Training defaults
        self.epochs = 10
        self.lr = 0.0005
        self.decay = 0.99
        self.grad_clip = 5.0
        self.seq_len = 10
        self.split = 0.75
        self.seed = 0


@lru_cache()
def get_settings():
    return Settings()
