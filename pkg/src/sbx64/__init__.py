"""SBX64: a 32-bit fixed-width model ISA with a sandboxing toolchain.

The package provides the instruction set (isa), the sandbox policy and
instruction whitelist (policy), exhaustive sweep kernels (kernels), dual
concrete/symbolic instruction semantics (semantics, symex), an SMT-backed
per-instruction prover with mutation checks (prover, mutations), a static
image verifier (verifier), a guard-inserting rewriter (rewriter), a trusted
runtime simulator with a differential fuzzer (sandboxsim, fuzz), and a
command line interface (cli).
"""

__version__ = "0.1.0"
