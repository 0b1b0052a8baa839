"""Shared finite-difference checking for the test suite."""
import numpy as np


def fd_check(params, grads, total, tol=1e-4, steps=(1e-6, 1e-7)):
    """Count coordinates whose analytic gradient disagrees with central FD.

    Coordinates where the two one-sided slopes disagree sit on an activation
    kink; there the central secant averages the branches and says nothing
    about the (subgradient) analytic value, so they are skipped.
    """
    bad = 0
    for arr, grad in zip(params, grads):
        for idx in np.ndindex(arr.shape):
            an = float(np.asarray(grad)[idx])
            ok = False
            for step in steps:
                orig = arr[idx]
                arr[idx] = orig + step
                fp = total()
                arr[idx] = orig - step
                fm = total()
                arr[idx] = orig
                fd = (fp - fm) / (2 * step)
                if abs(fd - an) / max(abs(fd), abs(an), 1.0) < tol:
                    ok = True
                    break
            if ok:
                continue
            # one-sided slopes at the smallest step
            step = steps[-1]
            orig = arr[idx]
            f0 = total()
            arr[idx] = orig + step
            fp = total()
            arr[idx] = orig - step
            fm = total()
            arr[idx] = orig
            right = (fp - f0) / step
            left = (f0 - fm) / step
            if abs(right - left) > 10 * tol * max(abs(right), abs(left), 1.0):
                continue  # genuine kink, central FD is meaningless here
            bad += 1
    return bad
