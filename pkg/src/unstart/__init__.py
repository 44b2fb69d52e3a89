"""DG solver, inlet case and flow-control agents for hypersonic inlet unstart."""

__version__ = "0.1.0"
