"""Forward discretely self-similar Navier-Stokes laboratory.

Mild-solution fixed point on the fundamental time strip, plus numerical
audits of the decay and regularity estimates that go with it.
"""

__version__ = "0.1.0"
