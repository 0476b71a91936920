from pathlib import Path

from setuptools import setup, find_packages

try:
    from sphinx.setup_command import BuildDoc

    cmdclass = {"build_sphinx": BuildDoc}
except ImportError:
    # Skip cmdclass when sphinx is not installed (yet)

    cmdclass = {}

# Read the contents of README.md, for PyPI
LONG_DESCRIPTION = (Path(__file__).parent / "README.md").read_text()

SETUP_REQUIREMENTS = ["setuptools>=28", "setuptools_scm"]
REQUIREMENTS = [
    "numpy>=1.17",
    "pandas",
    "pyyaml>=5.1",
    "scipy",
]

TEST_REQUIREMENTS = Path("test_requirements.txt").read_text().splitlines()

DOCS_REQUIREMENTS = [
    "ipython",
    "rstcheck",
    "sphinx",
    "sphinx-argparse",
    "sphinx_rtd_theme",
]
EXTRAS_REQUIRE = {"tests": TEST_REQUIREMENTS, "docs": DOCS_REQUIREMENTS}

setup(
    name="bamc",
    use_scm_version={"write_to": "bamc/version.py"},
    cmdclass=cmdclass,
    description="Active bandit allocation for learning Markov chain transitions",
    long_description=LONG_DESCRIPTION,
    long_description_content_type="text/markdown",
    license="GPLv3",
    packages=find_packages(include=["bamc*"]),
    package_dir={"bamc": "bamc"},
    zip_safe=False,
    entry_points={
        "console_scripts": [
            "bamc=bamc.bamccli:main",
        ],
    },
    test_suite="tests",
    install_requires=REQUIREMENTS,
    setup_requires=SETUP_REQUIREMENTS,
    extras_require=EXTRAS_REQUIRE,
    python_requires=">=3.8",
)
