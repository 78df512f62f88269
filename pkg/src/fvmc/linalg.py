"""Dense linear solves for the small systems of policy evaluation."""

from fractions import Fraction

import numpy as np


class SingularSystemError(ArithmeticError):
    pass


def gauss_solve(a, b):
    """Solve ``a @ x = b`` by Gaussian elimination with partial pivoting.

    Works for any field-like scalar (``Fraction`` gives exact answers). The
    pivot is the entry of largest absolute value in the current column.
    """
    n = len(b)
    m = [list(row) + [b[i]] for i, row in enumerate(a)]
    for col in range(n):
        piv = max(range(col, n), key=lambda r: abs(m[r][col]))
        if m[piv][col] == 0:
            raise SingularSystemError(f"zero pivot in column {col}")
        if piv != col:
            m[col], m[piv] = m[piv], m[col]
        pivot_row = m[col]
        for r in range(col + 1, n):
            factor = m[r][col] / pivot_row[col]
            if factor != 0:
                row = m[r]
                for c in range(col, n + 1):
                    row[c] -= factor * pivot_row[c]
    x = [None] * n
    for r in range(n - 1, -1, -1):
        acc = m[r][n]
        for c in range(r + 1, n):
            acc -= m[r][c] * x[c]
        x[r] = acc / m[r][r]
    return x


def solve(a, b):
    """Exact elimination for object (Fraction) arrays, LAPACK otherwise."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.dtype == object or b.dtype == object:
        return np.array(gauss_solve(a.tolist(), b.tolist()), dtype=object)
    try:
        return np.linalg.solve(a.astype(float), b.astype(float))
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError(str(exc)) from exc


def identity(n, exact):
    if exact:
        eye = np.array([[Fraction(0)] * n for _ in range(n)], dtype=object)
        for i in range(n):
            eye[i, i] = Fraction(1)
        return eye
    return np.eye(n)
