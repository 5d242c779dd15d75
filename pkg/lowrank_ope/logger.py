import csv
from typing import Any, Callable, IO, List, Optional, Sequence, Tuple

from texttable import Texttable  # type: ignore

from lowrank_ope.common import optional_float, Output, VERSION
from lowrank_ope.ope import OPERun, StepDiagnostics

# Column order of experiment CSVs; config_hash and version follow on every row.
CSV_COLUMNS = [
    "experiment", "n", "m", "S", "A", "H", "d", "K", "seed", "mode", "measured_error",
    "bound_inf", "bound_fin", "dis", "emp_dis", "conc_coeff", "runtime_ms", "policy_bound",
]


class ResultCsvLogger(Output):
    """Writes experiment rows to csv.

    The file starts with "# key: value" header lines (version, config hash,
    constant), then the column header, then one line per row.
    """

    def __init__(self, filename: str, config_hash: str, constant: float) -> None:
        self.filename = filename
        self.config_hash = config_hash
        self.constant = constant
        self._file: Optional[IO] = None
        self._writer: Any = None

    def setup(self) -> None:
        if self._file is None:
            self._file = open(self.filename, 'w', newline='')
            self._file.write("# version: {}\n".format(VERSION))
            self._file.write("# config_hash: {}\n".format(self.config_hash))
            self._file.write("# calibrated_constant: {!r}\n".format(float(self.constant)))
            self._writer = csv.writer(self._file, lineterminator='\n')
            self._writer.writerow(CSV_COLUMNS + ["config_hash", "version"])

    def off(self) -> None:
        if self._file is not None:
            self._file.close()
            self._file = None
            self._writer = None

    def output_rows(self, rows: List[Any], force: bool = False) -> None:
        assert self._writer is not None, "must call setup() to initialize"
        for row in rows:
            cells = [_format_cell(getattr(row, column)) for column in CSV_COLUMNS]
            self._writer.writerow(cells + [self.config_hash, VERSION])
        if force:
            assert self._file is not None
            self._file.flush()


def _format_cell(value: Any) -> str:
    if value is None or isinstance(value, float):
        return optional_float(value)
    return str(value)


class ResultPrinter(Output):
    """Prints experiment rows (typically the aggregates) as a table on stdout."""
    FIELDS: List[Tuple[str, Callable[[Any], Any]]] = [
            ("experiment", lambda r: r.experiment),
            ("n", lambda r: r.n),
            ("m", lambda r: r.m),
            ("H", lambda r: r.H),
            ("d", lambda r: r.d),
            ("K", lambda r: r.K),
            ("mode", lambda r: r.mode),
            ("stat", lambda r: r.seed),
            ("error", lambda r: r.measured_error),
            ("bound_inf", lambda r: _or_blank(r.bound_inf)),
            ("bound_fin", lambda r: _or_blank(r.bound_fin)),
            ("dis", lambda r: _or_blank(r.dis)),
            ("conc", lambda r: _or_blank(r.conc_coeff)),
    ]

    def setup(self) -> None:
        pass

    def off(self) -> None:
        pass

    def output_rows(self, rows: List[Any], force: bool = False) -> None:
        print(draw_table(ResultPrinter.FIELDS, rows))


class DiagnosticsPrinter(Output):
    """Prints the per-step diagnostics of an evaluation run."""
    FIELDS: List[Tuple[str, Callable[[StepDiagnostics], Any]]] = [
            ("step", lambda s: s.step),
            ("support", lambda s: s.support_size),
            ("residual", lambda s: s.residual),
            ("max-norm cert", lambda s: s.certificate),
            ("cap", lambda s: s.cap),
            ("slack", lambda s: s.slack),
            ("iterations", lambda s: s.iterations),
            ("emp. discrepancy", lambda s: _or_blank(s.discrepancy)),
    ]

    def setup(self) -> None:
        pass

    def off(self) -> None:
        pass

    def output_rows(self, rows: List[Any], force: bool = False) -> None:
        print(draw_table(DiagnosticsPrinter.FIELDS, rows))

    def output_run(self, run: OPERun) -> None:
        self.output_rows(list(run.diagnostics))
        print("estimate ({} mode): {!r}".format(run.mode.value, run.estimate))


def _or_blank(value: Optional[float]) -> Any:
    return "" if value is None else value


def draw_table(fields: Sequence[Tuple[str, Callable[[Any], Any]]], rows: Sequence[Any]) -> str:
    table = Texttable(max_width=0)
    table.set_deco(Texttable.HEADER)
    table.set_precision(6)
    table.header([field[0] for field in fields])
    for row in rows:
        table.add_row([field[1](row) for field in fields])
    return table.draw()
