"""Langevin-proximal posterior sampling over analytic rectified-flow priors."""
