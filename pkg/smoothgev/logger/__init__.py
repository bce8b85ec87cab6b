from smoothgev.logger.fit_logger import FitLogger, IterationRecord
from smoothgev.logger.run_logger import RunLogger

__all__ = ["FitLogger", "IterationRecord", "RunLogger"]
