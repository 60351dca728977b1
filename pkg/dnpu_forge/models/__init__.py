# Models module initialization
# Differentiable building blocks: dense networks, losses, optimizer, device, surrogate and DNPU nodes
