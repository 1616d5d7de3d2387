# Micro versus homogenized solutions: the two error tables and the
# epsilon-sweep rate.
from lscheme_homog import StudySetup, run_corrector_rate, run_table1, run_table2

setup = StudySetup()
tensor = setup.tensor()  # one cell solve serves every run below


def show(report):
    print(", ".join(report.columns))
    for row in report.rows:
        print(", ".join(f"{row[c]:.5g}" for c in report.columns))


# Newton micro solution against the second macro iterate. The L2 error falls
# with eps while the gradient error levels off near 0.18, since no corrector
# term is added.
show(run_table1(setup=setup, tensor=tensor))

# At eps = 0.25: linearized micro iterate against macro iterate, and the
# distance of each iterate to the Newton solution.
show(run_table2(setup=setup, tensor=tensor))

rate = run_corrector_rate((0.5, 0.25, 0.1), setup=setup, tensor=tensor)
print(f"L2 slope {rate.l2_slope:.2f}, gradient slope {rate.h1_slope:.2f}")
