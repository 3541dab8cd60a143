"""Gaussian-process models for hybrid physics/data modelling.

Modules
-------
kernels : squared-exponential kernel and Cholesky helpers
gp : single-output GP regression
jgp : joint GP over real and simulated samples
lfm : multi-output latent force model
agape : active emulation of costly simulators
harness : experiment runners, I/O and the command-line interface
"""

__version__ = "0.1.0"
