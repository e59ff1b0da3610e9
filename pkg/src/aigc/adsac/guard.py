import logging
from contextlib import ContextDecorator
from dataclasses import dataclass
from typing import Optional, Tuple, Type

import click

from aigc.adsac import exceptions

lg = logging.getLogger(__name__)

PASS_THROUGH: Tuple[Type[BaseException], ...] = (
    click.exceptions.Abort,
    click.exceptions.Exit,
    exceptions.Exit,
    StopIteration,
    RuntimeError,
    SystemExit,
    KeyboardInterrupt,
)


@dataclass
class FailureCounter:
    errors: int = 0
    warnings: int = 0

    def counts(self) -> Tuple[int, int]:
        """
        :return: errors, warnings
        """
        return self.errors, self.warnings


class guard(ContextDecorator):
    """
    Context manager and decorator rolled into one, wrapped around every
    harness command and every oracle check.

    Exceptions raised inside are logged, counted (per guard and per process)
    and suppressed, so that a sequence of checks keeps running after one of
    them fails. On exit the guard can report the process-wide error count and
    raise a given exception (typically `Exit(1)`) when errors were counted.
    `PASS_THROUGH` types are re-raised untouched.

        :param label: str = None,               # prefix of every logged failure
        :param report_counts: bool = False,     # on exit log the process-wide error count
        :param on_errors_raise: BaseException = None,
                                                # on exit raise this if errors were counted

    Usage:

        with guard(label="gradients") as g:
            run_gradient_check()
        if g.failed:
            ...

        @guard(on_errors_raise=Exit(1), report_counts=True)
        def command():
            ...
    """

    _kbd_interrupt_msg = "Keyboard interrupt was received. Aborting ..."
    # shared by every guard in the process
    _totals = FailureCounter()

    def __init__(
        self,
        label: Optional[str] = None,
        report_counts: bool = False,
        on_errors_raise: Optional[BaseException] = None,
    ):
        if on_errors_raise is not None and not isinstance(on_errors_raise, BaseException):
            raise TypeError(
                "argument `on_errors_raise` must be an instance of BaseException derived type, "
                f"but `{on_errors_raise!r}` is given."
            )

        self._label = label
        self._report_counts = report_counts
        self._on_errors_raise = on_errors_raise
        self._exception: Optional[BaseException] = None
        self._counter = FailureCounter()
        self._entered = False

    def __repr__(self):
        return f"{self.__class__.__name__}(label={self._label!r})"

    def _recreate_cm(self):
        # a fresh guard per decorated call, so counts do not leak between calls
        return self.__class__(
            label=self._label,
            report_counts=self._report_counts,
            on_errors_raise=self._on_errors_raise,
        )

    def __enter__(self):
        if self._entered:
            raise RuntimeError(f"Cannot enter {self!r} twice.")
        self._entered = True
        return self

    def __exit__(self, e_type, e, e_tb):
        self._exception = e
        try:
            if e is not None:
                self._handle(e)
        finally:
            if self._report_counts:
                lg.info(self.summary())
            self._raise_on_errors()
        return True

    def _handle(self, e: BaseException) -> None:
        if isinstance(e, KeyboardInterrupt):
            lg.fatal(self._kbd_interrupt_msg)
            raise exceptions.Exit(1)
        if isinstance(e, exceptions.Abort):
            lg.fatal(e)
            raise exceptions.Exit(-1)
        if isinstance(e, PASS_THROUGH):
            raise e

        text = str(e) or e.__class__.__name__
        message = f"{self._label}: {text}" if self._label else text
        if isinstance(e, Warning):
            lg.warning(message)
            self._counter.warnings += 1
        else:
            lg.error(message)
            self._counter.errors += 1
            self.__class__._totals.errors += 1

    def _raise_on_errors(self) -> None:
        if self.__class__._totals.errors and self._on_errors_raise is not None:
            raise self._on_errors_raise

    @property
    def exception(self) -> Optional[BaseException]:
        """Last exception seen by this guard, if any."""
        return self._exception

    @property
    def failed(self) -> bool:
        return self._counter.errors > 0

    def counts(self) -> Tuple[int, int]:
        """
        :return: errors, warnings seen by this guard
        """
        return self._counter.counts()

    @classmethod
    def reset_totals(cls) -> None:
        cls._totals = FailureCounter()

    @classmethod
    def summary(cls) -> str:
        n = cls._totals.errors
        return f"encountered {n} total error{'s' if n != 1 else ''}."
