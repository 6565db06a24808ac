import os
import setuptools

setuptools.setup(
    name='lmj.polyp',
    version='0.2.0',
    packages=setuptools.find_packages(exclude=['tests']),
    scripts=['scripts/rta-former.py'],
    author='The lmj.polyp contributors',
    description='Polyp segmentation with pyramid transformers and reverse attention',
    long_description=open(os.path.join(os.path.dirname(os.path.abspath(__file__)), 'README.md')).read(),
    license='MIT',
    keywords=('segmentation '
              'polyp '
              'transformer '
              'reverse-attention '
              'grad-cam'),
    install_requires=['numpy', 'scipy', 'matplotlib', 'torch', 'timm',
                      'Pillow', 'PyYAML'],
    extras_require={'test': ['pytest']},
    classifiers=[
        'Development Status :: 4 - Beta',
        'Intended Audience :: Science/Research',
        'License :: OSI Approved :: MIT License',
        'Operating System :: OS Independent',
        'Topic :: Scientific/Engineering :: Artificial Intelligence',
        'Topic :: Scientific/Engineering :: Medical Science Apps.',
        ],
    )
