#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""The setup script."""

from setuptools import setup, find_packages

with open('README.md') as readme_file:
    readme = readme_file.read()

requirements = [
    'Click>=7.0',
    'numpy',
    'pandas',
    'pypng',
    'scikit-image',
    'scipy',
    'torch',
    'tqdm',
]

setup_requirements = [ ]

test_requirements = [ ]

setup(
    author="tdodif contributors",
    python_requires='>=3.7',
    classifiers=[
        'Development Status :: 2 - Pre-Alpha',
        'Intended Audience :: Science/Research',
        'License :: OSI Approved :: MIT License',
        'Natural Language :: English',
        'Programming Language :: Python :: 3',
        'Programming Language :: Python :: 3.7',
        'Programming Language :: Python :: 3.8',
        'Programming Language :: Python :: 3.9',
        'Programming Language :: Python :: 3.10',
    ],
    description=(
        'Spatial and temporal pseudo-label diffusion for self-training'
        ' domain adaptation on foggy scenes.'
    ),
    entry_points={
        'console_scripts': [
            'tdodif=tdodif.cli.tdodif:main',
        ],
    },
    install_requires=requirements,
    license="MIT license",
    long_description=readme,
    long_description_content_type='text/markdown',
    include_package_data=True,
    keywords='tdodif',
    name='tdodif',
    packages=find_packages(include=['tdodif', 'tdodif.*']),
    setup_requires=setup_requirements,
    test_suite='tests',
    tests_require=test_requirements,
    version='0.1.0',
    zip_safe=False,
)
