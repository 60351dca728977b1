# dnpu-forge - off-chip training and evaluation of dopant network processing units
# Package initialization

__version__ = "0.1.0"
