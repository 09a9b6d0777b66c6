from setuptools import find_packages, setup

with open("README.md", "r") as fh:
    long_description = fh.read()

with open("requirements.txt", "r") as fh:
    install_requires = [line.strip() for line in fh if line.strip() and not line.startswith('#')]

setup(name='odeflow-dev',
      version='0.0.1',
      description='neural-ODE refinement for optical flow, trained and evaluated on generated image pairs.',
      long_description=long_description,
      long_description_content_type='text/markdown',
      packages=find_packages(exclude=['tests', 'examples']),
      install_requires=install_requires,
      python_requires='>=3.8',
      entry_points={'console_scripts': ['odeflow=odeflow_dev.cli:main']})
