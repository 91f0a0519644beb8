"""Client/server protocol, FedAvg, partitioning and communication accounting."""
