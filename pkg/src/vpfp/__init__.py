"""Fourier-Hermite spectral simulator for the Vlasov-Poisson-Fokker-Planck system near Maxwellian."""

__version__ = "0.1.0"
