import os

# Pin BLAS thread pools before numpy is first imported anywhere in the run;
# keeps timings stable and results reproducible.
for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(var, "1")

# one line per acceptance criterion, echoed after the test summary so the
# verdicts survive pytest's output capture
acceptance_lines: list = []


def pytest_terminal_summary(terminalreporter):
    if acceptance_lines:
        terminalreporter.write_sep("-", "acceptance criteria")
        for line in acceptance_lines:
            terminalreporter.write_line(line)
