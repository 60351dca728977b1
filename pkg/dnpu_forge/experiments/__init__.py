# Experiments module initialization
# Capacity, ring network, MNIST and device self-check drivers
