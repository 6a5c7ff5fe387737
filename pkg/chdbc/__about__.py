__title__ = "chdbc"
__description__ = "Finite element solver for the Cahn-Hilliard equation with dynamic boundary conditions."
__url__ = 'https://github.com/centreborelli/chdbc'
__version__ = "0.1.0"
__author__ = "Centre Borelli"
