"""Energy-inequality toolkit for the cold-plasma elliptic-hyperbolic equation
(x - y^2) u_xx + u_yy + kappa u_x = f and related Keldysh-type equations."""

__version__ = "0.1.0"
