# Utils module initialization
# Errors, validators, seeding, configuration, datasets, job fan-out and run reports
