"""
## Global configuration

Reads the global settings file (`egp.default.toml`, overriden by `egp.toml` and `EGP_*` environment variables).
Experiment-level settings live in `lib.experiment`.
"""

import os
from dynaconf import Dynaconf, Validator, validator

from .glob import TEST_INSTANCE, OUTPUT_PATH, LOG_LEVEL, N_JOBS

is_bool = lambda x: type(x) == bool

egp_file = os.path.join(os.path.dirname(__file__), "egp.toml")
egp_default_file = os.path.join(os.path.dirname(__file__), "egp.default.toml")

LOG_LEVELS = ["DEBUG", "INFO", "WARNING", "ERROR"]


class EGPConfig:
    """
    Configuration instance.
    """

    def __init__(self):
        if not TEST_INSTANCE:
            settings = Dynaconf(
                settings_files=[egp_default_file, egp_file],
                envvar_prefix="EGP",
                validators=[
                    Validator("output_path", must_exist=True),
                    Validator("n_jobs", is_type_of=int, default=1),
                    Validator("log_level", is_in=LOG_LEVELS, default="INFO"),
                    Validator("color", condition=is_bool, default=True),
                ],
            )
            try:
                settings.validators.validate()
            except validator.ValidationError as e:
                print("Error in configuration:", e)
                exit(2)

            self.OUTPUT_PATH = settings.output_path
            self.N_JOBS = settings.n_jobs
            self.LOG_LEVEL = settings.log_level
            self.COLOR = settings.color
        else:
            self.OUTPUT_PATH = OUTPUT_PATH
            self.N_JOBS = N_JOBS
            self.LOG_LEVEL = LOG_LEVEL
            self.COLOR = False

    @property
    def OUTPUT_PATH(self):
        return self._OUTPUT_PATH

    @OUTPUT_PATH.setter
    def OUTPUT_PATH(self, value):
        self._OUTPUT_PATH = None if value is None else str(value)
        if self._OUTPUT_PATH is not None:
            os.makedirs(self._OUTPUT_PATH, exist_ok=True)


config = EGPConfig()
