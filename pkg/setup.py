from setuptools import setup, find_packages


setup(name='stochascope',
      version='0.1.0',
      description='Stochastic acceleration analysis and proximal solvers for linear inverse problems',
      license='GPL',
      platforms=[],
      packages=find_packages(exclude=['test', 'test.*']),
      scripts=[],
      python_requires='>=3.8',
      install_requires=['numpy>=1.20', 'scipy>=1.7'],
      extras_require={'test': ['pytest>=6']},
      entry_points={'console_scripts': ['stochascope=stochascope.cli:main']},
      long_description='''Computes the stochastic acceleration factor of a linear forward operator under minibatch partitions, together with its spectral and coherence bounds, and benchmarks deterministic and stochastic proximal solvers on synthesized and ingested problems.''',)
