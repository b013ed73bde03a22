import os

# Must happen before numpy is first imported anywhere in the test process;
# the numeric equivalence tests assume a fixed single-threaded reduction
# order (see text2table/__init__.py).
for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")
