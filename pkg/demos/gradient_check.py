"""Finite-difference check of every learnable family on the seeded 32x32 scene.

    python3 demos/gradient_check.py

Prints the per-family table twice: once for the correct backward pass and
once with a deliberately sign-flipped gradient, which must fail.
"""
from draction.gradcheck import format_table, run_suite


def main():
    print("analytic backward vs central differences (64-bit):")
    print(format_table(run_suite()))
    print()
    print("negative control, sign-flipped gradients:")
    print(format_table(run_suite(["theta_mix", "log_scales", "joints"], fault="sign_flip")))


if __name__ == "__main__":
    main()
