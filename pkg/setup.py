from setuptools import setup

setup(
    name = "pyShiftRisk",
    packages = ["shiftrisk", "shiftrisk.augment", "shiftrisk.data"],
    install_requires=["numpy>=1.24", "scipy>=1.10", "matplotlib>=3.7", "PyYAML>=6.0"],
    extras_require={"test": ["pytest>=7.0"]},
    python_requires=">=3.10",
    entry_points={"console_scripts": ["shiftrisk=shiftrisk.__main__:main"]},
    version = "0.1.0",
    description = "Shifted-population risk, CAN sampling and decomposed training for data augmentation",
    long_description= "Augmentation operators, rejection sampling from the consistency augmentation neighborhood, risk decomposition estimators and lambda-weighted training on desk-scale datasets. Please view readme.",
    license="MIT",
    classifiers=[
        "Development Status :: 3 - Alpha",
        "Environment :: Console",
        "Intended Audience :: Science/Research",
        "Operating System :: OS Independent",
        "Programming Language :: Python",
        "Topic :: Scientific/Engineering :: Artificial Intelligence",
        "Topic :: Software Development :: Libraries :: Python Modules"
        ],
)
