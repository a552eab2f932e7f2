"""Spectral densities and reduced dynamics of emitters near dispersive bodies.

Pipeline: closed triangle meshes and an RWG edge basis (`mesh`), Drude
materials and homogeneous-medium kernels (`emcore`), a Galerkin PMCHWT
boundary-element solver (`bem`), pairwise power observables (`power`),
spectral density matrices with thermal dressing (`spectral`), surrogate-bath
quantum dynamics (`dynamics`), and a batch CLI (`cli`).

Natural units: hbar = eps0 = c = mu0 = 1, frequencies in omega_p.
"""

__version__ = "0.1.0"
