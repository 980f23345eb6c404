"""Exception types raised across the package."""


class UpliftBenchError(Exception):
    pass


class DataError(UpliftBenchError):
    """Unreadable or malformed input data."""


class ParseError(DataError):
    def __init__(self, row: int, column: str, value: str):
        self.row = row
        self.column = column
        self.value = value
        super().__init__(f"cannot parse {value!r} at row {row}, column {column!r}")


class TrainingError(UpliftBenchError):
    def __init__(self, message: str, epoch: int | None = None):
        self.epoch = epoch
        if epoch is not None:
            message = f"{message} (epoch {epoch})"
        super().__init__(message)


class TuningError(UpliftBenchError):
    def __init__(self, model: str, failures: list[str]):
        self.model = model
        self.failures = failures
        super().__init__(f"all tuning trials failed for {model}: " + "; ".join(failures))


class AggregationError(UpliftBenchError):
    pass
