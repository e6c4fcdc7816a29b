# Stateful services: datasets, training, evaluation
