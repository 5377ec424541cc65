"""Semi-structured high-order 2D mesh generation.

Pipeline: boundary shell and medial set (``medial``), block partition
(``partition``), linear near-field mesh (``linmesh``), boundary curving
(``hocurve``), isoparametric boundary-layer splitting (``isosplit``),
far-field triangulation and merge (``farfield``), and file I/O
(``meshio``).  ``pipeline.run`` chains the stages; ``cli`` exposes them.
"""

__version__ = "0.1.0"
