"""qbs-audit-core: simulate a noisy count-query system and search for attacks on it.

Attribute- and membership-inference attacks are discovered automatically
on shadow copies of the protected system, then scored in a privacy game.
"""

__version__ = "0.1.0"
