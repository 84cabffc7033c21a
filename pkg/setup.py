from setuptools import setup, find_packages

setup(
    name="fincards_backend",
    version="0.1.0",
    packages=find_packages(exclude=["examples", "examples.*"]),
    py_modules=["app"],
    install_requires=[
        "numpy",
        "pandas",
        "httpx",
        "tenacity",
        "pydantic>=2",
        "pydantic-settings",
        "python-dotenv",
    ],
    extras_require={
        "test": [
            "pytest",
            "pytest-asyncio",
            "pytest-mock",
        ]
    },
    entry_points={"console_scripts": ["fincards=app:main"]},
)
