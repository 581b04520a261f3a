"""Independent reference implementations used by the tests."""
import numpy as np


def cascade_output(x, masks, transfers):
    """Plain forward propagation with numpy's FFT (no package kernels)."""
    f = np.asarray(x, dtype=complex)
    for m, h in zip(masks, transfers):
        f = f * np.exp(1j * m)
        if h is not None:
            f = np.fft.ifft(np.fft.fft(f) * h)
    return f


def coordinate_descent(x, y, transfers, num_samples, levels=32, passes=50, start=None):
    """Brute-force coordinate ascent of |<out, y>| over discretized per-sample phases.

    Every candidate is scored by a full forward propagation.  ``start`` seeds
    the masks (snapped to the phase grid); zeros by default.  Returns the best
    objective and masks.
    """
    phases = np.linspace(-np.pi, np.pi, levels, endpoint=False)
    if start is None:
        masks = np.zeros((len(transfers), num_samples))
    else:
        step = 2 * np.pi / levels
        idx = np.round((np.angle(np.exp(1j * np.asarray(start))) + np.pi) / step).astype(int) % levels
        masks = phases[idx]

    def score(m):
        return abs(np.vdot(y, cascade_output(x, m, transfers)))

    cur = score(masks)
    for _ in range(passes):
        before = cur
        for k in range(len(transfers)):
            for i in range(num_samples):
                vals = []
                for v in phases:
                    masks[k, i] = v
                    vals.append(score(masks))
                j = int(np.argmax(vals))
                masks[k, i] = phases[j]
                cur = vals[j]
        if cur - before < 1e-12:
            break
    return cur, masks


def nearest_level(values, levels):
    values = np.asarray(values)
    return levels[np.argmin(np.abs(values[:, None] - levels[None, :]), axis=1)]
