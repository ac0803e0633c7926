from setuptools import setup, find_packages

setup(
    name='cqedtwin',
    version='0.1',
    packages=find_packages(),
    package_data={'cqedtwin': ['data/*.json']},
    install_requires=[
        'numpy',
        'scipy',
        'networkx',
        'pandas>=1.5',
    ],
    tests_require=[
        'pytest',
        'hypothesis',
    ],
    entry_points={
        'console_scripts': ['cqedtwin=cqedtwin.cli:main'],
    },
    license='GNU GPL v3 (see LICENSE)',
    description="""
                A digital twin of a superconducting circuit QED device and of the experiments used to calibrate it
                """
)
