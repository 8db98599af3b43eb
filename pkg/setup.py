from setuptools import setup, find_packages

setup(
    name="ponv_tool",
    version="0.1.0",
    packages=find_packages(exclude=["examples", "examples.*"]),
    package_data={"ponv_tool": ["schema.yaml", "default.env"]},
    python_requires=">=3.8",
    install_requires=[
        "python-dotenv",
        "numpy",
        "pandas",
        "scipy",
        "PyYAML",
    ],
    extras_require={
        "plots": ["matplotlib"],
        "test": ["pytest", "hypothesis", "scikit-learn"],
    },
    entry_points={
        "console_scripts": [
            "ponvtool=ponv_tool.main:main",
        ],
    },
)
