"""
An external oracle process
==========================

Stand-in for a radiative transfer code wrapped as a child process. It reads
one query per line on stdin (comma-separated inputs ``tau,h``) and prints
one line with the output, flushing after each answer. Use it with::

    physgp emulate --config configs/emulate_external.yaml \\
        --oracle-cmd "python3 demos/atmos_oracle.py"
"""

import sys

from physgp.agape.oracles import pseudo_atmospheric

for line in sys.stdin:
    line = line.strip()
    if not line:
        continue
    y = [float(v) for v in line.split(",")]
    print(",".join(repr(float(v)) for v in pseudo_atmospheric(y)), flush=True)
