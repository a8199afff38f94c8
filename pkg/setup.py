"""DRIFT lab setup."""
from setuptools import setup, find_packages

setup(
    name='driftlab',
    version='1.0.0',
    description='Diversity-incentivized group relative policy optimization on toy denoising chains.',
    license='MIT',
    packages=find_packages(exclude=['tests']),
    install_requires=[
        'coloredlogs==10.0',
        'numpy>=1.17',
        'scipy>=1.4'
    ],
    entry_points = {
        'console_scripts': ['driftlab=driftlab.__main__:setup'],
    },
    classifiers=[
        'License :: OSI Approved :: MIT License',
        'Operating System :: OS Independent',
        'Programming Language :: Python :: 3',
    ]
)
