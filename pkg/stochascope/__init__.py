'''
Stochastic acceleration analysis and proximal solvers for linear inverse
problems.
'''

__version__ = '0.1.0'
