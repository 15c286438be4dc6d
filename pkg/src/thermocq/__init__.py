"""Transient thermoelastic-acoustic scattering with FEM-BEM and convolution quadrature."""
