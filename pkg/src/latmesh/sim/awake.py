"""Keep idle vCPUs from halting while a virtual cluster runs.

On some VMs a halted vCPU takes milliseconds to wake, which shows up as
timer lateness on every delayed frame. A lowest-priority busy process per CPU
keeps the guest out of idle; it yields to any runnable thread.
"""

from __future__ import annotations

import contextlib
import os
import subprocess
import sys

_SPIN = "import os\nos.nice(19)\nwhile True:\n    pass\n"


@contextlib.contextmanager
def keep_cpu_awake(enabled=True, n_procs=None):
    if not enabled:
        yield []
        return
    procs = [subprocess.Popen([sys.executable, "-c", _SPIN],
                              stdin=subprocess.DEVNULL, stdout=subprocess.DEVNULL)
             for _ in range(n_procs or os.cpu_count() or 1)]
    try:
        yield procs
    finally:
        for p in procs:
            p.kill()
        for p in procs:
            p.wait()
