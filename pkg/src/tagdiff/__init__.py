"""Graph diffusion features, shallow prediction heads and ensembling for text-attributed graphs."""
