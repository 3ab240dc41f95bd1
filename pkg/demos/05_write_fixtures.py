"""Write the synthetic test matrices as Matrix Market files for the CLI.

    python demos/05_write_fixtures.py data/
    mixedldu --matrix data/kernel6.mtx --tau 0.75 --n-extra 10
"""
import sys
from pathlib import Path

from mixedldu.fixtures import diffusion_contrast, fibonacci_pairs, floating_subdomains
from mixedldu.sparsemat import write_matrix_market

out = Path(sys.argv[1] if len(sys.argv) > 1 else "data")
out.mkdir(parents=True, exist_ok=True)
matrices = {
    "kernel1": floating_subdomains(1, 1200, seed=1),
    "kernel6": floating_subdomains(6, 600, seed=1),
    "fibonacci": fibonacci_pairs(600, 3, 44)[0],
    "diffusion": diffusion_contrast(40, 50, contrast=1e6, seed=0, shift=2e-6),
}
for name, k in matrices.items():
    path = out / f"{name}.mtx"
    write_matrix_market(path, k)
    print(f"{path}: n={k.nrows} nnz={k.nnz}")
