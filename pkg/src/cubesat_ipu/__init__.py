"""Image-processing payload software for a CubeSat and its ground segment.

Subpackages:

* :mod:`cubesat_ipu.csp` -- packet codec, KISS framing, routing and parameter tables
* :mod:`cubesat_ipu.services` -- payload services (file transfer, cosmic rays, slots, ...)
* :mod:`cubesat_ipu.ground` -- ground-side client and the ``ipu-ground`` command
"""

__version__ = "0.1.0"
