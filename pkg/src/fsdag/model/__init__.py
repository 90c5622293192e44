"""The document graph network: configuration, parameters and forward pass."""
