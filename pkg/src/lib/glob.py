"""## Globals that can be overriden for testing purposes"""

TEST_INSTANCE = False
OUTPUT_PATH = None
LOG_LEVEL = "WARNING"
N_JOBS = 1
